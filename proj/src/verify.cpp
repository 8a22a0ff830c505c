// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include "mpo_over/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "mpo_over/rng.hpp"
#include "mpo_over/train.hpp"

namespace mpo_over::verify {

namespace {

DenseTensor random_matrix(std::int64_t rows, std::int64_t cols, RngStream& rng) {
    DenseTensor t({rows, cols});
    rng.fill_normal(t.data(), 1.0);
    return t;
}

double fd_max_rel(DenseTensor& param, const std::function<double()>& loss_fn,
                  const DenseTensor& analytic) {
    constexpr double kEps = 1e-5;
    DenseTensor fd(param.dims());
    auto p = param.data();
    auto out = fd.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + kEps;
        const double up = loss_fn();
        p[i] = keep - kEps;
        const double down = loss_fn();
        p[i] = keep;
        out[i] = (up - down) / (2.0 * kEps);
    }
    const double denom =
        std::max({frobenius_norm(fd), frobenius_norm(analytic), 1e-12});
    return frobenius_norm(sub(fd, analytic)) / denom;
}

train::SyntheticTask default_small_task(std::uint64_t seed) {
    train::TaskConfig tc;
    tc.blocks = 2;
    tc.hidden = 16;
    tc.train_samples = 256;
    tc.eval_samples = 64;
    return train::make_task(tc, seed);
}

}  // namespace

PropertyResult check_le(std::string name, double measured, double threshold) {
    return {std::move(name), measured, threshold, "<=", measured <= threshold};
}

PropertyResult check_ge(std::string name, double measured, double threshold) {
    return {std::move(name), measured, threshold, ">=", measured >= threshold};
}

bool all_pass(const std::vector<PropertyResult>& results) {
    for (const auto& r : results)
        if (!r.pass) return false;
    return true;
}

std::vector<PropertyResult> suite_mpo(std::uint64_t seed) {
    std::vector<PropertyResult> out;
    RngStream rng(seed, "verify.mpo");

    double worst_rel = 0.0;
    std::int64_t budget_mismatch = 0;
    const std::vector<std::pair<std::int64_t, std::int64_t>> shapes = {
        {768, 8}, {8, 768}, {64, 64}};
    for (auto [rows, cols] : shapes) {
        for (std::int64_t m : {1, 2, 3}) {
            mpo::MpoShapePlan plan = mpo::auto_plan(rows, cols, m);
            for (int rep = 0; rep < 5; ++rep) {
                DenseTensor w = random_matrix(rows, cols, rng);
                mpo::MpoChain chain = mpo::decompose(w, plan);
                worst_rel = std::max(worst_rel, rel_fro_error(mpo::contract(chain), w));
                if (chain.stored_values() != mpo::budget(plan).n_params_chain)
                    ++budget_mismatch;
            }
        }
    }
    out.push_back(check_le("round_trip_rel_error", worst_rel, 1e-9));
    out.push_back(check_le("budget_vs_stored_mismatches",
                           static_cast<double>(budget_mismatch), 0.0));

    // bond formula vs brute force on random factorizations
    std::int64_t bond_mismatch = 0;
    for (int it = 0; it < 500; ++it) {
        const std::size_t m = 1 + rng.next_index(5);
        std::vector<std::int64_t> in(m), out_dims(m);
        std::int64_t rows = 1, cols = 1;
        for (std::size_t k = 0; k < m; ++k) {
            in[k] = 1 + static_cast<std::int64_t>(rng.next_index(6));
            out_dims[k] = 1 + static_cast<std::int64_t>(rng.next_index(6));
            rows *= in[k];
            cols *= out_dims[k];
        }
        mpo::MpoShapePlan plan = mpo::plan_shapes(rows, cols, in, out_dims);
        for (std::size_t k = 0; k < plan.bond_dims.size(); ++k) {
            long double left = 1, right = 1;
            for (std::size_t p = 0; p < k; ++p)
                left *= static_cast<long double>(in[p] * out_dims[p]);
            for (std::size_t p = k; p < m; ++p)
                right *= static_cast<long double>(in[p] * out_dims[p]);
            if (plan.bond_dims[k] !=
                static_cast<std::int64_t>(left < right ? left : right))
                ++bond_mismatch;
        }
    }
    out.push_back(check_le("bond_formula_mismatches",
                           static_cast<double>(bond_mismatch), 0.0));

    // the published 9-factor split of (4096, 8) is a valid plan
    mpo::MpoShapePlan nine = mpo::plan_shapes(4096, 8, {64, 1, 1, 1, 1, 1, 1, 1, 64},
                                              {2, 1, 1, 1, 1, 1, 1, 1, 4});
    const bool nine_ok = nine.bond_dims.front() == 1 && nine.bond_dims.back() == 1 &&
                         mpo::budget(nine).n_add ==
                             mpo::budget(nine).n_params_chain - 4096 * 8;
    out.push_back(check_ge("published_9_factor_plan_valid", nine_ok ? 1.0 : 0.0, 1.0));
    return out;
}

std::vector<PropertyResult> suite_bound(std::uint64_t seed, int count) {
    RngStream rng(seed, "verify.bound");
    double worst_ratio = 0.0;
    std::int64_t violations = 0;
    for (int it = 0; it < count; ++it) {
        const std::int64_t rows = 8 * (1 + static_cast<std::int64_t>(rng.next_index(4)));
        const std::int64_t cols = 4 * (1 + static_cast<std::int64_t>(rng.next_index(6)));
        const std::int64_t m = 2 + static_cast<std::int64_t>(rng.next_index(2));
        mpo::MpoShapePlan full = mpo::auto_plan(rows, cols, m);
        std::vector<std::int64_t> caps;
        for (std::size_t k = 1; k + 1 < full.bond_dims.size(); ++k)
            caps.push_back(1 + static_cast<std::int64_t>(rng.next_index(
                                   static_cast<std::uint64_t>(full.bond_dims[k]))));
        caps[0] = std::max<std::int64_t>(1, std::min(caps[0], full.bond_dims[1] - 1));
        mpo::MpoShapePlan plan =
            mpo::plan_shapes(rows, cols, full.in_dims, full.out_dims, caps);
        DenseTensor w = random_matrix(rows, cols, rng);
        mpo::MpoChain chain = mpo::decompose(w, plan);
        const double measured = frobenius_norm(sub(mpo::contract(chain), w));
        const double bound = mpo::error_bound(chain);
        if (measured > bound * (1.0 + 1e-8)) ++violations;
        if (bound > 0.0) worst_ratio = std::max(worst_ratio, measured / bound);
    }
    std::vector<PropertyResult> out;
    out.push_back(check_le("bound_violations", static_cast<double>(violations), 0.0));
    out.push_back(check_le("worst_error_over_bound", worst_ratio, 1.0 + 1e-8));
    return out;
}

std::vector<PropertyResult> suite_grad(std::uint64_t seed) {
    RngStream rng(seed, "verify.grad");
    double worst = 0.0;

    {  // elementary ops in one composite graph
        DenseTensor w1 = random_matrix(5, 4, rng);
        DenseTensor w2 = random_matrix(3, 5, rng);
        DenseTensor b = random_matrix(5, 6, rng);
        DenseTensor x = random_matrix(4, 6, rng);
        DenseTensor y = random_matrix(9, 2, rng);
        const auto build = [&](autodiff::Tape& tape, int& w1n, int& w2n, int& bn) {
            w1n = tape.leaf(w1, true);
            w2n = tape.leaf(w2, true);
            bn = tape.leaf(b, true);
            const int h = tape.add(tape.matmul(w1n, tape.leaf(x, false)), bn);
            const int t = tape.tanh(tape.scale(h, 0.7));
            const int r = tape.reshape(tape.matmul(w2n, t), {9, 2});
            return tape.mse_loss(r, tape.leaf(y, false));
        };
        const auto loss_only = [&]() {
            autodiff::Tape tape;
            int a, bb, c;
            return tape.value(build(tape, a, bb, c)).data()[0];
        };
        autodiff::Tape tape;
        int w1n, w2n, bn;
        tape.backward(build(tape, w1n, w2n, bn));
        worst = std::max(worst, fd_max_rel(w1, loss_only, tape.gradient(w1n)));
        worst = std::max(worst, fd_max_rel(w2, loss_only, tape.gradient(w2n)));
        worst = std::max(worst, fd_max_rel(b, loss_only, tape.gradient(bn)));
    }

    for (std::int64_t m : {2, 3, 5}) {  // contraction chains
        mpo::MpoShapePlan plan = mpo::auto_plan(8, 12, m);
        mpo::MpoChain chain = mpo::decompose(random_matrix(8, 12, rng), plan);
        DenseTensor x = random_matrix(12, 3, rng);
        DenseTensor y = random_matrix(8, 3, rng);
        const auto loss_of = [&]() {
            autodiff::Tape tape;
            std::vector<int> leaves;
            for (const auto& f : chain.factors) leaves.push_back(tape.leaf(f, true));
            const int o = tape.matmul(tape.chain_contract(leaves, plan),
                                      tape.leaf(x, false));
            return tape.value(tape.mse_loss(o, tape.leaf(y, false))).data()[0];
        };
        autodiff::Tape tape;
        std::vector<int> leaves;
        for (const auto& f : chain.factors) leaves.push_back(tape.leaf(f, true));
        const int o = tape.matmul(tape.chain_contract(leaves, plan),
                                  tape.leaf(x, false));
        tape.backward(tape.mse_loss(o, tape.leaf(y, false)));
        for (std::size_t k = 0; k < chain.factors.size(); ++k)
            worst = std::max(
                worst, fd_max_rel(chain.factors[k], loss_of, tape.gradient(leaves[k])));
    }

    std::vector<PropertyResult> out;
    out.push_back(check_le("max_rel_grad_error", worst, 1e-6));
    return out;
}

std::vector<PropertyResult> suite_merge(std::uint64_t seed) {
    std::vector<PropertyResult> out;
    train::SyntheticTask task = default_small_task(seed);
    adapters::LoraConfig lora{4, 8.0, seed};
    train::TrainConfig tcfg;
    tcfg.steps = 60;
    tcfg.eval_every = 20;
    tcfg.batch_size = 16;
    tcfg.seed = seed;
    selection::SelectionConfig scfg;
    scfg.interval = 20;
    train::MpoPlanSpec plans;
    plans.m = 3;

    double worst_div = 0.0;
    double worst_swap = 0.0;
    std::int64_t count_mismatch = 0;
    RngStream rng(seed, "verify.merge");
    for (train::Strategy strategy :
         {train::Strategy::Lora, train::Strategy::OverAll,
          train::Strategy::OverRuntime}) {
        train::RunResult run =
            train::run_training(task, strategy, tcfg, lora, scfg, plans);
        std::map<std::string, DenseTensor> merged = train::merged_matrices(run.model);
        std::int64_t merged_count = 0;
        for (const auto& [id, w] : merged) merged_count += w.size();
        if (merged_count != task.base_param_count()) ++count_mismatch;
        DenseTensor x = random_matrix(task.cfg.hidden, 64, rng);
        DenseTensor via_adapters = train::model_forward(run.model, x);
        DenseTensor via_merged = train::merged_forward(task, merged, x);
        worst_div = std::max(worst_div, rel_fro_error(via_merged, via_adapters));
    }

    // function-preserving swap on live models
    for (int it = 0; it < 10; ++it) {
        train::Model model = train::make_model(task, lora);
        RngStream wr(seed + 17 + it, "verify.swapfill");
        for (const auto& id : model.slot_ids) {
            auto& slot = model.slots.at(id);
            slot.dense = random_matrix(slot.rows, slot.cols, wr);
        }
        std::vector<std::int64_t> idx;
        for (std::int64_t i = 0; i < 32; ++i) idx.push_back(i);
        DenseTensor x = train::gather_batch(task.train_x, idx);
        DenseTensor y = train::gather_batch(task.train_y, idx);
        const double before = train::forward_backward(model, x, y).loss;
        const std::string target =
            model.slot_ids[wr.next_index(model.slot_ids.size())];
        auto& slot = model.slots.at(target);
        slot = adapters::over_parameterize(
            slot, mpo::auto_plan(slot.rows, slot.cols,
                                 2 + static_cast<std::int64_t>(wr.next_index(2))),
            lora);
        const double after = train::forward_backward(model, x, y).loss;
        worst_swap = std::max(worst_swap,
                              std::abs(after - before) / std::max(before, 1e-300));
    }

    out.push_back(check_le("merged_vs_factored_rel_divergence", worst_div, 1e-8));
    out.push_back(check_le("merged_param_count_mismatches",
                           static_cast<double>(count_mismatch), 0.0));
    out.push_back(check_le("swap_rel_loss_change", worst_swap, 1e-8));
    return out;
}

std::vector<PropertyResult> suite_selection(std::uint64_t seed) {
    std::vector<PropertyResult> out;

    // cardinality after a full runtime quota loop
    std::vector<std::string> ids;
    for (int l = 0; l < 4; ++l)
        for (const char* role : {"proj", "ffn"})
            for (const char* half : {"A", "B"})
                ids.push_back("layer" + std::to_string(l) + "." + role + "." + half);
    selection::SelectionConfig cfg;
    cfg.top_n = 3;
    cfg.split = 2;
    selection::ImportanceLedger ledger =
        selection::make_ledger(ids, selection::GroupMode::RoleHalf);
    RngStream rng(seed, "verify.sel");
    for (const auto& id : ids) ledger.scores[id] = rng.uniform();
    selection::ImportanceLedger scaled = ledger;
    for (auto& [id, s] : scaled.scores) s *= 1234.5;
    std::vector<std::string> first = selection::select_round(ledger, cfg);
    std::vector<std::string> first_scaled = selection::select_round(scaled, cfg);
    while (!ledger.quotas_filled(cfg.top_n)) selection::select_round(ledger, cfg);
    std::int64_t cardinality_errors = 0;
    for (const auto& [g, members] : ledger.groups)
        if (ledger.selected_in_group(g) !=
            std::min<std::int64_t>(cfg.top_n,
                                   static_cast<std::int64_t>(members.size())))
            ++cardinality_errors;
    out.push_back(check_le("quota_cardinality_errors",
                           static_cast<double>(cardinality_errors), 0.0));
    out.push_back(check_ge("rank_invariance_under_scaling",
                           first == first_scaled ? 1.0 : 0.0, 1.0));

    // planted-structure signal, averaged over seeds
    double proj_total = 0.0, ffn_total = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        train::TaskConfig tc;
        tc.blocks = 2;
        tc.hidden = 16;
        tc.train_samples = 128;
        tc.eval_samples = 32;
        train::SyntheticTask task = train::make_task(tc, seed + 50 + s);
        adapters::LoraConfig lora{4, 8.0, seed + 50 + s};
        train::TrainConfig tcfg;
        tcfg.steps = 30;
        tcfg.eval_every = 30;
        tcfg.batch_size = 16;
        tcfg.seed = seed + 50 + s;
        selection::SelectionConfig scfg;
        scfg.top_n = 0;
        train::MpoPlanSpec plans;
        train::RunResult run =
            train::run_training(task, train::Strategy::Lora, tcfg, lora, scfg, plans);
        selection::ImportanceLedger led = selection::make_ledger(
            run.model.slot_ids, selection::GroupMode::RoleHalf);
        RngStream batches(seed + 99 + s, "verify.signal");
        for (int step = 0; step < 10; ++step) {
            std::vector<std::int64_t> idx(16);
            for (auto& i : idx)
                i = static_cast<std::int64_t>(batches.next_index(
                    static_cast<std::uint64_t>(task.train_x.rows())));
            train::ForwardBackward fb = train::forward_backward(
                run.model, train::gather_batch(task.train_x, idx),
                train::gather_batch(task.train_y, idx));
            for (const auto& id : run.model.slot_ids)
                selection::accumulate(led, id, fb.grads.at(id).effective,
                                      selection::ScoreMode::AbsElementwise);
        }
        for (const auto& id : run.model.slot_ids) {
            if (selection::parse_slot_id(id).half != 'A') continue;
            const double sc = selection::score_runtime(
                led, id, adapters::effective_matrix(run.model.slots.at(id)),
                selection::ScoreMode::AbsElementwise);
            if (selection::parse_slot_id(id).role == "proj")
                proj_total += sc;
            else
                ffn_total += sc;
        }
    }
    out.push_back(check_ge("proj_over_ffn_mean_score_ratio",
                           proj_total / std::max(ffn_total, 1e-300), 1.0));
    return out;
}

}  // namespace mpo_over::verify
