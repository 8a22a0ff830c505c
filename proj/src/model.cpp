// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include "mpo_over/model.hpp"

#include <cmath>

#include "mpo_over/kernels.hpp"
#include "mpo_over/rng.hpp"

namespace mpo_over::train {

namespace {

DenseTensor random_weight(std::int64_t rows, std::int64_t cols, RngStream& rng,
                          double stddev) {
    DenseTensor w({rows, cols});
    rng.fill_normal(w.data(), stddev);
    return w;
}

bool role_perturbed(const TaskConfig& cfg, const std::string& role) {
    for (const auto& r : cfg.teacher_roles)
        if (r == role) return true;
    return false;
}

DenseTensor perturbation(const TaskConfig& cfg, std::uint64_t seed,
                         const std::string& name) {
    RngStream rng(seed, "task.perturb", name);
    const std::int64_t h = cfg.hidden;
    const std::int64_t r = cfg.teacher_rank;
    DenseTensor u = random_weight(h, r, rng, 1.0);
    DenseTensor v = random_weight(r, h, rng, 1.0);
    const double s = cfg.teacher_strength /
                     (std::sqrt(static_cast<double>(r)) * std::sqrt(static_cast<double>(h)));
    return scaled(matmul(u, v), s);
}

// targets for row-major samples: y = stack(x^T)^T + noise
DenseTensor targets_for(const SyntheticTask& task, const DenseTensor& xs,
                        RngStream& noise) {
    DenseTensor out = transpose(
        stack_forward(task.teacher_proj, task.teacher_ffn, transpose(xs)));
    if (task.cfg.noise_std > 0.0) {
        for (auto& v : out.data()) v += noise.normal() * task.cfg.noise_std;
    }
    return out;
}

}  // namespace

SyntheticTask make_task(const TaskConfig& cfg, std::uint64_t seed) {
    if (cfg.blocks < 1 || cfg.hidden < 1 || cfg.teacher_rank < 1)
        throw BadConfig("task: blocks, hidden and teacher_rank must be >= 1");
    SyntheticTask task;
    task.cfg = cfg;
    task.seed = seed;
    const double w_std = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
    for (std::int64_t l = 0; l < cfg.blocks; ++l) {
        const std::string layer = "layer" + std::to_string(l);
        RngStream pr(seed, "task.weights", layer + ".proj");
        RngStream fr(seed, "task.weights", layer + ".ffn");
        task.proj_w.push_back(random_weight(cfg.hidden, cfg.hidden, pr, w_std));
        task.ffn_w.push_back(random_weight(cfg.hidden, cfg.hidden, fr, w_std));
        DenseTensor tp = task.proj_w.back();
        DenseTensor tf = task.ffn_w.back();
        if (role_perturbed(cfg, "proj"))
            tp = add(tp, perturbation(cfg, seed, layer + ".proj"));
        if (role_perturbed(cfg, "ffn"))
            tf = add(tf, perturbation(cfg, seed, layer + ".ffn"));
        task.teacher_proj.push_back(std::move(tp));
        task.teacher_ffn.push_back(std::move(tf));
    }

    RngStream train_x(seed, "task.data", "train_x");
    task.train_x = random_weight(cfg.train_samples, cfg.hidden, train_x, 1.0);
    RngStream train_noise(seed, "task.data", "train_noise");
    task.train_y = targets_for(task, task.train_x, train_noise);

    RngStream eval_x(seed, "task.data", "eval_x");
    task.eval_x = random_weight(cfg.eval_samples, cfg.hidden, eval_x, 1.0);
    RngStream eval_noise(seed, "task.data", "eval_noise");
    task.eval_y = targets_for(task, task.eval_x, eval_noise);
    return task;
}

DenseTensor stack_forward(const std::vector<DenseTensor>& proj,
                          const std::vector<DenseTensor>& ffn,
                          const DenseTensor& x) {
    DenseTensor cur = x;
    for (std::size_t l = 0; l < proj.size(); ++l) {
        DenseTensor h = matmul(proj[l], cur);
        DenseTensor t(h.dims());
        kernels::tanh_map(h.data().data(), t.data().data(), t.size());
        cur = matmul(ffn[l], t);
    }
    return cur;
}

std::pair<DenseTensor, DenseTensor> make_calib_batch(const SyntheticTask& task,
                                                     std::int64_t batch,
                                                     std::int64_t index) {
    RngStream xs(task.seed, "task.calib_x", std::to_string(index));
    DenseTensor x({batch, task.cfg.hidden});
    xs.fill_normal(x.data(), 1.0);
    RngStream noise(task.seed, "task.calib_noise", std::to_string(index));
    DenseTensor y = targets_for(task, x, noise);
    return {std::move(x), std::move(y)};
}

const DenseTensor& Model::base_matrix(const std::string& pair_id) const {
    const auto dot = pair_id.find('.');
    const std::int64_t layer = std::stoll(pair_id.substr(5, dot - 5));
    const std::string role = pair_id.substr(dot + 1);
    if (role == "proj") return task->proj_w[static_cast<std::size_t>(layer)];
    if (role == "ffn") return task->ffn_w[static_cast<std::size_t>(layer)];
    throw BadConfig("unknown role in pair id " + pair_id);
}

std::int64_t Model::trainable_param_count() const {
    std::int64_t n = 0;
    for (const auto& id : slot_ids) {
        const auto& slot = slots.at(id);
        if (slot.trainable) n += slot.param_count();
    }
    return n;
}

std::vector<adapters::AdapterSlot> Model::slot_list() const {
    std::vector<adapters::AdapterSlot> out;
    for (const auto& id : slot_ids) out.push_back(slots.at(id));
    return out;
}

Model make_model(const SyntheticTask& task, const adapters::LoraConfig& lora,
                 bool full_delta) {
    Model model;
    model.task = &task;
    model.lora = lora;
    model.full_delta = full_delta;
    for (std::int64_t l = 0; l < task.cfg.blocks; ++l) {
        for (const char* role : {"proj", "ffn"}) {
            const std::string pair_id =
                "layer" + std::to_string(l) + "." + role;
            model.pair_ids.push_back(pair_id);
            if (full_delta) {
                adapters::AdapterSlot d;
                d.slot_id = pair_id + ".D";
                d.base_ref = pair_id;
                d.rows = task.cfg.hidden;
                d.cols = task.cfg.hidden;
                d.dense = DenseTensor({task.cfg.hidden, task.cfg.hidden});
                model.slot_ids.push_back(d.slot_id);
                model.slots.emplace(d.slot_id, std::move(d));
            } else {
                auto [a, b] = adapters::init_adapter(task.cfg.hidden,
                                                     task.cfg.hidden, lora, pair_id);
                model.slot_ids.push_back(a.slot_id);
                model.slot_ids.push_back(b.slot_id);
                model.slots.emplace(a.slot_id, std::move(a));
                model.slots.emplace(b.slot_id, std::move(b));
            }
        }
    }
    return model;
}

namespace {

// Builds the effective-matrix node for a slot: an override leaf, the dense
// leaf, or the contraction of factor leaves.
int slot_node(autodiff::Tape& tape, const adapters::AdapterSlot& slot,
              const Overrides* overrides, std::map<std::string, int>& slot_nodes,
              std::map<std::string, std::vector<int>>& factor_nodes) {
    if (overrides != nullptr) {
        auto it = overrides->find(slot.slot_id);
        if (it != overrides->end()) {
            const int id = tape.leaf(it->second, true);
            slot_nodes[slot.slot_id] = id;
            return id;
        }
    }
    if (slot.form == adapters::SlotForm::Dense) {
        const int id = tape.leaf(slot.dense, slot.trainable);
        slot_nodes[slot.slot_id] = id;
        return id;
    }
    std::vector<int> leaves;
    for (const auto& f : slot.chain.factors)
        leaves.push_back(tape.leaf(f, slot.trainable));
    const int id = tape.chain_contract(leaves, slot.chain.plan);
    factor_nodes[slot.slot_id] = std::move(leaves);
    slot_nodes[slot.slot_id] = id;
    return id;
}

struct Graph {
    int loss = -1;
    int output = -1;
    std::map<std::string, int> slot_nodes;
    std::map<std::string, std::vector<int>> factor_nodes;
};

Graph build_graph(autodiff::Tape& tape, const Model& model, const DenseTensor& x,
                  const DenseTensor* y, const Overrides* overrides) {
    Graph g;
    int cur = tape.leaf(x, false);
    const auto& task = *model.task;
    for (std::int64_t l = 0; l < task.cfg.blocks; ++l) {
        const std::string layer = "layer" + std::to_string(l);
        for (const char* role : {"proj", "ffn"}) {
            const std::string pair_id = layer + "." + role;
            const int base = tape.leaf(model.base_matrix(pair_id), false);
            int out = tape.matmul(base, cur);
            if (model.full_delta) {
                const auto& d = model.slots.at(pair_id + ".D");
                const int dn = slot_node(tape, d, overrides, g.slot_nodes,
                                         g.factor_nodes);
                out = tape.add(out, tape.matmul(dn, cur));
            } else {
                const auto& a = model.slots.at(pair_id + ".A");
                const auto& b = model.slots.at(pair_id + ".B");
                const int an = slot_node(tape, a, overrides, g.slot_nodes,
                                         g.factor_nodes);
                const int bn = slot_node(tape, b, overrides, g.slot_nodes,
                                         g.factor_nodes);
                const int ax = tape.matmul(an, cur);
                const int bax = tape.matmul(bn, ax);
                out = tape.add(out, tape.scale(bax, model.lora.scaling()));
            }
            cur = out;
            if (std::string(role) == "proj") cur = tape.tanh(cur);
        }
    }
    g.output = cur;
    if (y != nullptr) g.loss = tape.mse_loss(cur, tape.leaf(*y, false));
    return g;
}

}  // namespace

ForwardBackward forward_backward(const Model& model, const DenseTensor& x,
                                 const DenseTensor& y, const Overrides* overrides) {
    autodiff::Tape tape;
    Graph g = build_graph(tape, model, x, &y, overrides);
    ForwardBackward result;
    result.loss = tape.backward(g.loss);
    for (const auto& id : model.slot_ids) {
        const auto& slot = model.slots.at(id);
        const bool overridden =
            overrides != nullptr && overrides->count(id) > 0;
        if (!slot.trainable && !overridden) continue;
        SlotGrad sg;
        sg.effective = tape.gradient(g.slot_nodes.at(id));
        auto fit = g.factor_nodes.find(id);
        if (fit != g.factor_nodes.end())
            for (int fid : fit->second) sg.factors.push_back(tape.gradient(fid));
        result.grads.emplace(id, std::move(sg));
    }
    return result;
}

DenseTensor model_forward(const Model& model, const DenseTensor& x,
                          const Overrides* overrides) {
    // tape reused as a calculator; backward is never invoked
    autodiff::Tape tape;
    Graph g = build_graph(tape, model, x, nullptr, overrides);
    return tape.value(g.output);
}

DenseTensor gather_batch(const DenseTensor& rows,
                         const std::vector<std::int64_t>& indices) {
    const std::int64_t h = rows.cols();
    DenseTensor out({h, static_cast<std::int64_t>(indices.size())});
    for (std::size_t c = 0; c < indices.size(); ++c)
        for (std::int64_t f = 0; f < h; ++f)
            out(f, static_cast<std::int64_t>(c)) = rows(indices[c], f);
    return out;
}

double dataset_loss(const Model& model, const DenseTensor& xs,
                    const DenseTensor& ys, const Overrides* overrides) {
    constexpr std::int64_t kChunk = 256;
    const std::int64_t n = xs.rows();
    const std::int64_t h = xs.cols();
    double sse = 0.0;
    for (std::int64_t lo = 0; lo < n; lo += kChunk) {
        const std::int64_t hi = std::min(n, lo + kChunk);
        std::vector<std::int64_t> idx(static_cast<std::size_t>(hi - lo));
        for (std::int64_t i = lo; i < hi; ++i) idx[static_cast<std::size_t>(i - lo)] = i;
        DenseTensor x = gather_batch(xs, idx);
        DenseTensor y = gather_batch(ys, idx);
        DenseTensor diff = sub(model_forward(model, x, overrides), y);
        sse += kernels::sum_squares(diff.data().data(), diff.size());
    }
    return sse / static_cast<double>(n * h);
}

std::map<std::string, DenseTensor> merged_matrices(const Model& model) {
    std::map<std::string, DenseTensor> out;
    for (const auto& pair_id : model.pair_ids) {
        const DenseTensor& w0 = model.base_matrix(pair_id);
        if (model.full_delta) {
            out.emplace(pair_id,
                        add(w0, adapters::effective_matrix(model.slots.at(pair_id + ".D"))));
        } else {
            out.emplace(pair_id, adapters::merge(model.slots.at(pair_id + ".A"),
                                                 model.slots.at(pair_id + ".B"),
                                                 model.lora, w0));
        }
    }
    return out;
}

DenseTensor merged_forward(const SyntheticTask& task,
                           const std::map<std::string, DenseTensor>& merged,
                           const DenseTensor& x) {
    std::vector<DenseTensor> proj, ffn;
    for (std::int64_t l = 0; l < task.cfg.blocks; ++l) {
        const std::string layer = "layer" + std::to_string(l);
        proj.push_back(merged.at(layer + ".proj"));
        ffn.push_back(merged.at(layer + ".ffn"));
    }
    return stack_forward(proj, ffn, x);
}

}  // namespace mpo_over::train
