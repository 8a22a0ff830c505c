// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include "mpo_over/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "mpo_over/kernels.hpp"
#include "mpo_over/rng.hpp"

namespace mpo_over::train {

namespace {
using ordered_json = nlohmann::ordered_json;
}

Strategy parse_strategy(const std::string& name) {
    if (name == "full-dense-delta") return Strategy::FullDenseDelta;
    if (name == "lora") return Strategy::Lora;
    if (name == "over-all") return Strategy::OverAll;
    if (name == "over-svd") return Strategy::OverSvd;
    if (name == "over-predefined") return Strategy::OverPredefined;
    if (name == "over-runtime") return Strategy::OverRuntime;
    throw BadConfig("unknown strategy: " + name);
}

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::FullDenseDelta: return "full-dense-delta";
        case Strategy::Lora: return "lora";
        case Strategy::OverAll: return "over-all";
        case Strategy::OverSvd: return "over-svd";
        case Strategy::OverPredefined: return "over-predefined";
        case Strategy::OverRuntime: return "over-runtime";
    }
    return "?";
}

double TrainConfig::lr_at(std::int64_t t) const {
    if (schedule == Schedule::Constant || steps <= 0) return lr;
    return lr * 0.5 *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) /
                           static_cast<double>(steps)));
}

mpo::MpoShapePlan MpoPlanSpec::plan_for(std::int64_t rows, std::int64_t cols) const {
    const std::string key = std::to_string(rows) + "x" + std::to_string(cols);
    auto it = explicit_shapes.find(key);
    if (it != explicit_shapes.end())
        return mpo::plan_shapes(rows, cols, it->second.first, it->second.second);
    return mpo::auto_plan(rows, cols, m);
}

void Optimizer::drop(const std::string& slot_id) {
    for (auto it = state_.begin(); it != state_.end();) {
        if (it->first == slot_id || it->first.rfind(slot_id + "#f", 0) == 0)
            it = state_.erase(it);
        else
            ++it;
    }
}

void Optimizer::update(DenseTensor& param, const DenseTensor& grad, double lr,
                       const std::string& key) {
    auto p = param.data();
    auto g = grad.data();
    if (cfg_.optimizer == TrainConfig::Opt::Sgd) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
        return;
    }
    Moments& mom = state_[key];
    if (mom.m.empty()) {
        mom.m = DenseTensor(param.dims());
        mom.v = DenseTensor(param.dims());
        mom.t = 0;
    }
    mom.t += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(mom.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(mom.t));
    auto m = mom.m.data();
    auto v = mom.v.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                      cfg_.weight_decay * p[i]);
    }
}

void Optimizer::apply(Model& model, const GradMap& grads, std::int64_t step_index) {
    const double lr = cfg_.lr_at(step_index);
    for (const auto& id : model.slot_ids) {
        auto& slot = model.slots.at(id);
        if (!slot.trainable) continue;
        auto git = grads.find(id);
        if (git == grads.end()) continue;
        if (slot.form == adapters::SlotForm::Dense) {
            update(slot.dense, git->second.effective, lr, id);
        } else {
            for (std::size_t k = 0; k < slot.chain.factors.size(); ++k)
                update(slot.chain.factors[k], git->second.factors[k], lr,
                       id + "#f" + std::to_string(k));
        }
    }
}

namespace {

struct LoopOutput {
    std::vector<MetricsRow> metrics;
    std::vector<SelectionEvent> events;
    double final_eval = 0.0;
    std::int64_t steps_run = 0;
};

struct LoopOptions {
    bool runtime_selection = false;
    bool early_stop = false;
    bool record_metrics = true;
    std::string batch_stream = "main";
};

double train_probe_loss(const Model& model, const SyntheticTask& task) {
    const std::int64_t n = std::min<std::int64_t>(task.train_x.rows(), 512);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    DenseTensor x = gather_batch(task.train_x, idx);
    DenseTensor y = gather_batch(task.train_y, idx);
    DenseTensor diff = sub(model_forward(model, x), y);
    return kernels::sum_squares(diff.data().data(), diff.size()) /
           static_cast<double>(diff.size());
}

LoopOutput train_loop(Model& model, const SyntheticTask& task,
                      const TrainConfig& tcfg,
                      const selection::SelectionConfig& scfg,
                      const MpoPlanSpec& plans,
                      selection::ImportanceLedger& ledger,
                      const LoopOptions& opts) {
    Optimizer opt(tcfg);
    RngStream batches(tcfg.seed, "train.batches", opts.batch_stream);
    LoopOutput out;

    const auto eval_model = [&]() {
        return dataset_loss(model, task.eval_x, task.eval_y);
    };
    const auto record = [&](std::int64_t step) {
        MetricsRow row;
        row.step = step;
        row.train_loss = train_probe_loss(model, task);
        row.eval_loss = eval_model();
        row.trainable = model.trainable_param_count();
        row.selected = ledger.selected;
        out.metrics.push_back(std::move(row));
        return out.metrics.back().eval_loss;
    };

    double best_eval = record(0);
    std::int64_t stale_evals = 0;

    const std::int64_t n_train = task.train_x.rows();
    for (std::int64_t step = 1; step <= tcfg.steps; ++step) {
        std::vector<std::int64_t> idx(static_cast<std::size_t>(tcfg.batch_size));
        for (auto& i : idx)
            i = static_cast<std::int64_t>(
                batches.next_index(static_cast<std::uint64_t>(n_train)));
        DenseTensor x = gather_batch(task.train_x, idx);
        DenseTensor y = gather_batch(task.train_y, idx);

        ForwardBackward fb;
        try {
            fb = forward_backward(model, x, y);
        } catch (const NonFinite& e) {
            throw NonFinite(std::string(e.what()) + " (training step " +
                            std::to_string(step) + ")");
        }

        const bool selecting = opts.runtime_selection && scfg.top_n > 0 &&
                               !ledger.quotas_filled(scfg.top_n);
        if (selecting) {
            for (const auto& id : model.slot_ids) {
                const auto& slot = model.slots.at(id);
                if (!slot.trainable) continue;
                selection::accumulate(ledger, id, fb.grads.at(id).effective,
                                      scfg.score_mode);
            }
        }

        opt.apply(model, fb.grads, step - 1);

        if (selecting && step % scfg.interval == 0) {
            for (const auto& id : model.slot_ids) {
                const auto& slot = model.slots.at(id);
                if (!slot.trainable || ledger.is_selected(id)) continue;
                ledger.scores[id] = selection::score_runtime(
                    ledger, id, adapters::effective_matrix(slot), scfg.score_mode);
            }
            std::vector<std::string> picked = selection::select_round(ledger, scfg);
            for (const auto& id : picked) {
                auto& slot = model.slots.at(id);
                slot = adapters::over_parameterize(
                    slot, plans.plan_for(slot.rows, slot.cols), model.lora);
                opt.drop(id);
            }
            out.events.push_back({step, ledger.rounds_done, std::move(picked)});
            if (scfg.reset_accum) ledger.reset_accumulators();
        }

        if (step % tcfg.eval_every == 0 || step == tcfg.steps) {
            const double ev = record(step);
            out.steps_run = step;
            if (opts.early_stop) {
                if (ev < best_eval * (1.0 - scfg.plateau_rel)) {
                    best_eval = ev;
                    stale_evals = 0;
                } else {
                    if (++stale_evals >= scfg.patience) break;
                }
            }
        }
    }

    out.final_eval = out.metrics.back().eval_loss;
    if (!opts.record_metrics) out.metrics.clear();
    return out;
}

void factor_every_slot(Model& model, const MpoPlanSpec& plans,
                       std::int64_t forced_m) {
    for (const auto& id : model.slot_ids) {
        auto& slot = model.slots.at(id);
        if (!slot.trainable) continue;
        mpo::MpoShapePlan plan =
            forced_m > 0 ? mpo::auto_plan(slot.rows, slot.cols, forced_m)
                         : plans.plan_for(slot.rows, slot.cols);
        slot = adapters::over_parameterize(slot, plan, model.lora);
    }
}

}  // namespace

RunResult run_training(const SyntheticTask& task, Strategy strategy,
                       const TrainConfig& tcfg, const adapters::LoraConfig& lora,
                       const selection::SelectionConfig& scfg,
                       const MpoPlanSpec& plans) {
    scfg.validate();
    if (tcfg.steps < 0 || tcfg.batch_size < 1 || tcfg.eval_every < 1)
        throw BadConfig("train: steps >= 0, batch_size >= 1, eval_every >= 1");

    RunResult result;
    result.model = make_model(task, lora, strategy == Strategy::FullDenseDelta);

    std::vector<std::string> trainable_ids;
    for (const auto& id : result.model.slot_ids)
        if (result.model.slots.at(id).trainable) trainable_ids.push_back(id);
    result.ledger = selection::make_ledger(trainable_ids, scfg.group_mode);

    switch (strategy) {
        case Strategy::FullDenseDelta:
        case Strategy::Lora:
            break;
        case Strategy::OverAll:
            factor_every_slot(result.model, plans, 0);
            break;
        case Strategy::OverSvd:
            factor_every_slot(result.model, plans, 2);
            break;
        case Strategy::OverRuntime:
            result.importance_mode = "runtime";
            break;
        case Strategy::OverPredefined: {
            result.importance_mode = "predefined";
            // phase 1: vanilla adapters until the eval loss plateaus
            Model phase1 = make_model(task, lora, false);
            selection::ImportanceLedger scratch =
                selection::make_ledger(trainable_ids, scfg.group_mode);
            LoopOptions opts1;
            opts1.runtime_selection = false;
            opts1.early_stop = true;
            opts1.record_metrics = false;
            opts1.batch_stream = "phase1";
            LoopOutput phase1_out =
                train_loop(phase1, task, tcfg, scfg, plans, scratch, opts1);
            result.phase1_steps_run = phase1_out.steps_run;

            std::vector<std::pair<DenseTensor, DenseTensor>> calib;
            for (std::int64_t b = 0; b < scfg.calib_batches; ++b)
                calib.push_back(make_calib_batch(task, tcfg.batch_size, b));
            for (const auto& id : trainable_ids)
                result.ledger.scores[id] =
                    selection::score_predefined(phase1, calib, id);

            selection::SelectionConfig once = scfg;
            once.mode = selection::SelectionMode::Predefined;
            std::vector<std::string> picked =
                scfg.top_n > 0 ? selection::select_round(result.ledger, once)
                               : std::vector<std::string>{};
            for (const auto& id : picked) {
                auto& slot = result.model.slots.at(id);
                slot = adapters::over_parameterize(
                    slot, plans.plan_for(slot.rows, slot.cols), result.model.lora);
            }
            result.events.push_back({0, result.ledger.rounds_done, picked});
            break;
        }
    }

    LoopOptions opts;
    opts.runtime_selection = strategy == Strategy::OverRuntime;
    opts.early_stop = false;
    opts.record_metrics = true;
    opts.batch_stream = "main";
    LoopOutput out =
        train_loop(result.model, task, tcfg, scfg, plans, result.ledger, opts);
    result.metrics = std::move(out.metrics);
    for (auto& e : out.events) result.events.push_back(std::move(e));
    result.final_eval = out.final_eval;
    return result;
}

std::string metrics_to_jsonl(const std::vector<MetricsRow>& rows) {
    std::string out;
    for (const auto& row : rows) {
        ordered_json doc;
        doc["step"] = row.step;
        doc["train_loss"] = row.train_loss;
        doc["eval_loss"] = row.eval_loss;
        doc["trainable"] = row.trainable;
        doc["selected"] = row.selected;
        out += doc.dump();
        out += "\n";
    }
    return out;
}

}  // namespace mpo_over::train
