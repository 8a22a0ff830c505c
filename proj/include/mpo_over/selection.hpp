// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mpo_over/model.hpp"
#include "mpo_over/tensor.hpp"

namespace mpo_over::selection {

enum class SelectionMode { Predefined, Runtime };

// Slot grouping for the per-group top-N quota. RoleHalf mirrors one module
// component per group spanning all layers; Half and Single let roles compete
// within a wider pool.
enum class GroupMode { RoleHalf, Half, Single };

// Reading of the first-order score. AbsElementwise accumulates |grad| and
// scores <accum, |W|>; SignedInner accumulates the raw gradient and scores
// |<accum, W>|.
enum class ScoreMode { AbsElementwise, SignedInner };

struct SelectionConfig {
    std::int64_t top_n = 2;
    std::int64_t split = 2;       // selection rounds (runtime only)
    std::int64_t interval = 25;   // steps between rounds (runtime only)
    SelectionMode mode = SelectionMode::Runtime;
    GroupMode group_mode = GroupMode::RoleHalf;
    ScoreMode score_mode = ScoreMode::AbsElementwise;
    bool reset_accum = true;      // clear accumulators after each round
    std::int64_t calib_batches = 8;
    std::int64_t patience = 5;         // plateau patience, evals
    double plateau_rel = 1e-4;         // relative improvement threshold

    std::int64_t per_round() const {
        return split < 1 ? top_n : (top_n + split - 1) / split;
    }
    void validate() const;
};

struct SlotKey {
    std::int64_t layer = 0;
    std::string role;
    char half = '?';
};

SlotKey parse_slot_id(const std::string& slot_id);
std::string group_key(const std::string& slot_id, GroupMode mode);

// Per-slot scores and selection state, grouped by module component.
struct ImportanceLedger {
    std::map<std::string, std::vector<std::string>> groups;
    std::map<std::string, double> scores;
    std::map<std::string, DenseTensor> accum;
    std::map<std::string, std::int64_t> accum_steps;
    std::vector<std::string> selected;  // selection order
    std::int64_t rounds_done = 0;

    bool is_selected(const std::string& slot_id) const;
    std::int64_t selected_in_group(const std::string& group) const;
    std::int64_t quota(const std::string& group, std::int64_t top_n) const;
    bool quotas_filled(std::int64_t top_n) const;
    void reset_accumulators();

    GroupMode group_mode = GroupMode::RoleHalf;
    std::map<std::string, std::string> group_of;
};

ImportanceLedger make_ledger(const std::vector<std::string>& slot_ids,
                             GroupMode mode);

// One accumulation step with the gradient taken w.r.t. the slot's
// contracted (or dense) matrix.
void accumulate(ImportanceLedger& ledger, const std::string& slot_id,
                const DenseTensor& grad, ScoreMode mode);

// First-order importance from the accumulated gradients and current value.
double score_runtime(const ImportanceLedger& ledger, const std::string& slot_id,
                     const DenseTensor& current_w, ScoreMode mode);

// Exact importance: |loss - loss with the slot zeroed|, averaged over the
// calibration batches. Pure observation, the model is left untouched.
double score_predefined(const train::Model& model,
                        const std::vector<std::pair<DenseTensor, DenseTensor>>& calib,
                        const std::string& slot_id);

// Rank unselected slots per group by (score desc, layer, role, half) and
// take up to per-round quota from each. Appends to ledger.selected.
std::vector<std::string> select_round(ImportanceLedger& ledger,
                                      const SelectionConfig& cfg);

// Validates the first-order reading of the importance score on one slot:
// exact = |L(slot = eps*W) - L(slot = 0)| and firstorder = |<dL/dW, eps*W>|
// with the gradient taken at eps*W. Their relative gap shrinks as O(eps).
struct TaylorProbe {
    double exact = 0.0;
    double firstorder = 0.0;
};

TaylorProbe taylor_consistency_probe(const train::Model& model,
                                     const DenseTensor& x, const DenseTensor& y,
                                     const std::string& slot_id, double scale_eps);

}  // namespace mpo_over::selection
