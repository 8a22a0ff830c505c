// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include "mpo_over/selection.hpp"

#include <algorithm>
#include <cmath>

namespace mpo_over::selection {

void SelectionConfig::validate() const {
    if (top_n < 0) throw BadConfig("selection: top_n must be >= 0");
    if (top_n > 0) {
        if (split < 1 || split > top_n)
            throw BadConfig("selection: split must be in [1, top_n]");
        if (mode == SelectionMode::Runtime && interval < 1)
            throw BadConfig("selection: interval must be >= 1");
    }
    if (calib_batches < 1) throw BadConfig("selection: calib_batches must be >= 1");
}

SlotKey parse_slot_id(const std::string& slot_id) {
    // "layer{l}.{role}.{half}"
    const auto d1 = slot_id.find('.');
    const auto d2 = slot_id.rfind('.');
    if (d1 == std::string::npos || d2 == d1 || slot_id.rfind("layer", 0) != 0 ||
        d2 + 2 != slot_id.size())
        throw BadConfig("bad slot id: " + slot_id);
    SlotKey key;
    key.layer = std::stoll(slot_id.substr(5, d1 - 5));
    key.role = slot_id.substr(d1 + 1, d2 - d1 - 1);
    key.half = slot_id[d2 + 1];
    return key;
}

std::string group_key(const std::string& slot_id, GroupMode mode) {
    const SlotKey key = parse_slot_id(slot_id);
    switch (mode) {
        case GroupMode::RoleHalf:
            return key.role + "." + key.half;
        case GroupMode::Half:
            return std::string(1, key.half);
        case GroupMode::Single:
            return "all";
    }
    return "all";
}

bool ImportanceLedger::is_selected(const std::string& slot_id) const {
    return std::find(selected.begin(), selected.end(), slot_id) != selected.end();
}

std::int64_t ImportanceLedger::selected_in_group(const std::string& group) const {
    std::int64_t n = 0;
    for (const auto& id : selected)
        if (group_of.at(id) == group) ++n;
    return n;
}

std::int64_t ImportanceLedger::quota(const std::string& group,
                                     std::int64_t top_n) const {
    const auto size = static_cast<std::int64_t>(groups.at(group).size());
    return std::min(top_n, size);
}

bool ImportanceLedger::quotas_filled(std::int64_t top_n) const {
    for (const auto& [g, ids] : groups)
        if (selected_in_group(g) < quota(g, top_n)) return false;
    return true;
}

void ImportanceLedger::reset_accumulators() {
    accum.clear();
    accum_steps.clear();
}

ImportanceLedger make_ledger(const std::vector<std::string>& slot_ids,
                             GroupMode mode) {
    ImportanceLedger ledger;
    ledger.group_mode = mode;
    for (const auto& id : slot_ids) {
        const std::string g = group_key(id, mode);
        ledger.groups[g].push_back(id);
        ledger.group_of[id] = g;
    }
    return ledger;
}

void accumulate(ImportanceLedger& ledger, const std::string& slot_id,
                const DenseTensor& grad, ScoreMode mode) {
    auto it = ledger.accum.find(slot_id);
    if (it == ledger.accum.end()) {
        it = ledger.accum.emplace(slot_id, DenseTensor(grad.dims())).first;
        ledger.accum_steps[slot_id] = 0;
    }
    if (!it->second.same_dims(grad))
        throw ShapeMismatch("accumulate: gradient dims changed for " + slot_id);
    auto acc = it->second.data();
    auto g = grad.data();
    if (mode == ScoreMode::AbsElementwise) {
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += std::abs(g[i]);
    } else {
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
    ledger.accum_steps[slot_id] += 1;
}

double score_runtime(const ImportanceLedger& ledger, const std::string& slot_id,
                     const DenseTensor& current_w, ScoreMode mode) {
    auto it = ledger.accum.find(slot_id);
    if (it == ledger.accum.end() || ledger.accum_steps.at(slot_id) < 1)
        throw MissingAccumulator("score_runtime: no accumulated gradients for " +
                                 slot_id);
    if (!it->second.same_dims(current_w))
        throw ShapeMismatch("score_runtime: accumulator dims differ for " + slot_id);
    auto acc = it->second.data();
    auto w = current_w.data();
    double s = 0.0;
    if (mode == ScoreMode::AbsElementwise) {
        for (std::size_t i = 0; i < acc.size(); ++i) s += acc[i] * std::abs(w[i]);
        return s;
    }
    for (std::size_t i = 0; i < acc.size(); ++i) s += acc[i] * w[i];
    return std::abs(s);
}

double score_predefined(const train::Model& model,
                        const std::vector<std::pair<DenseTensor, DenseTensor>>& calib,
                        const std::string& slot_id) {
    const auto& slot = model.slots.at(slot_id);
    train::Overrides zeroed;
    zeroed.emplace(slot_id, DenseTensor({slot.rows, slot.cols}));
    double l_with = 0.0, l_zero = 0.0;
    for (const auto& [x, y] : calib) {
        l_with += train::dataset_loss(model, x, y, nullptr);
        l_zero += train::dataset_loss(model, x, y, &zeroed);
    }
    const auto n = static_cast<double>(calib.size());
    return std::abs(l_with / n - l_zero / n);
}

std::vector<std::string> select_round(ImportanceLedger& ledger,
                                      const SelectionConfig& cfg) {
    const std::int64_t per_round =
        cfg.mode == SelectionMode::Predefined ? cfg.top_n : cfg.per_round();
    std::vector<std::string> picked;
    for (const auto& [group, ids] : ledger.groups) {
        const std::int64_t quota_left =
            ledger.quota(group, cfg.top_n) - ledger.selected_in_group(group);
        const std::int64_t take = std::min(per_round, quota_left);
        if (take <= 0) continue;
        std::vector<std::string> candidates;
        for (const auto& id : ids)
            if (!ledger.is_selected(id)) candidates.push_back(id);
        std::stable_sort(candidates.begin(), candidates.end(),
                         [&](const std::string& a, const std::string& b) {
                             const double sa = ledger.scores.count(a) ? ledger.scores.at(a) : 0.0;
                             const double sb = ledger.scores.count(b) ? ledger.scores.at(b) : 0.0;
                             if (sa != sb) return sa > sb;
                             const SlotKey ka = parse_slot_id(a);
                             const SlotKey kb = parse_slot_id(b);
                             if (ka.layer != kb.layer) return ka.layer < kb.layer;
                             if (ka.role != kb.role) return ka.role < kb.role;
                             return ka.half < kb.half;
                         });
        for (std::int64_t i = 0; i < take && i < static_cast<std::int64_t>(candidates.size()); ++i)
            picked.push_back(candidates[static_cast<std::size_t>(i)]);
    }
    for (const auto& id : picked) ledger.selected.push_back(id);
    ledger.rounds_done += 1;
    return picked;
}

TaylorProbe taylor_consistency_probe(const train::Model& model,
                                     const DenseTensor& x, const DenseTensor& y,
                                     const std::string& slot_id, double scale_eps) {
    if (scale_eps <= 0.0 || scale_eps > 1.0)
        throw InvalidInput("taylor probe: eps must be in (0, 1]");
    const auto& slot = model.slots.at(slot_id);
    DenseTensor w = adapters::effective_matrix(slot);
    DenseTensor w_eps = scaled(w, scale_eps);

    train::Overrides at_eps;
    at_eps.emplace(slot_id, w_eps);
    train::Overrides at_zero;
    at_zero.emplace(slot_id, DenseTensor({slot.rows, slot.cols}));

    // exact loss delta between slot = eps*W and slot = 0
    train::ForwardBackward fb = train::forward_backward(model, x, y, &at_eps);
    const double l_eps = fb.loss;
    const double l_zero = train::forward_backward(model, x, y, &at_zero).loss;

    TaylorProbe probe;
    probe.exact = std::abs(l_eps - l_zero);
    const DenseTensor& grad = fb.grads.at(slot_id).effective;
    double inner = 0.0;
    auto g = grad.data();
    auto wv = w_eps.data();
    for (std::size_t i = 0; i < g.size(); ++i) inner += g[i] * wv[i];
    probe.firstorder = std::abs(inner);
    return probe;
}

}  // namespace mpo_over::selection
