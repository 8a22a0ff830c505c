// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mpo_over/mpo.hpp"
#include "mpo_over/tensor.hpp"

namespace mpo_over::adapters {

// Low-rank adapter hyper-parameters. The forward scaling is alpha / rank,
// applied once on the B*A product and never folded into factors.
struct LoraConfig {
    std::int64_t rank = 4;
    double alpha = 8.0;
    std::uint64_t seed = 42;

    double scaling() const { return alpha / static_cast<double>(rank); }
};

enum class SlotForm { Dense, Factored };

// One adapter half attached to a frozen base matrix. slot_id follows
// "layer{l}.{role}.{half}" with half in {A, B} (or "D" for a full dense
// delta used by the full-dense-delta baseline).
struct AdapterSlot {
    std::string slot_id;
    std::string base_ref;
    SlotForm form = SlotForm::Dense;
    DenseTensor dense;     // valid when form == Dense
    mpo::MpoChain chain;   // valid when form == Factored
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    bool trainable = true;

    std::int64_t param_count() const;
    char half() const { return slot_id.empty() ? '?' : slot_id.back(); }
};

// A half (rank x d2) gets seeded Kaiming-normal entries, B half (d1 x rank)
// starts at zero, so the adapter contributes nothing until trained.
std::pair<AdapterSlot, AdapterSlot> init_adapter(std::int64_t d1, std::int64_t d2,
                                                 const LoraConfig& cfg,
                                                 const std::string& base_ref);

// Dense slot value, or the contraction of a factored slot.
DenseTensor effective_matrix(const AdapterSlot& slot);

// (alpha/r) * B * A * x, with x laid out [d2, batch].
DenseTensor forward_delta(const AdapterSlot& a, const AdapterSlot& b,
                          const LoraConfig& cfg, const DenseTensor& x);

// Replace a dense slot by its chain without changing the map it represents.
// Exactly-zero slots get seeded random factors with a single zero factor at
// the end, so the product stays zero while every factor receives gradient.
AdapterSlot over_parameterize(const AdapterSlot& slot, const mpo::MpoShapePlan& plan,
                              const LoraConfig& cfg);

// w0 + (alpha/r) * B * A, the inference-time matrix.
DenseTensor merge(const AdapterSlot& a, const AdapterSlot& b,
                  const LoraConfig& cfg, const DenseTensor& w0);

// Checkpoint directory: manifest.json plus one .mpot file (dense) or chain
// subdirectory (factored) per slot.
void write_checkpoint(const std::string& dir,
                      const std::vector<AdapterSlot>& slots,
                      const LoraConfig& cfg);

struct Checkpoint {
    LoraConfig cfg;
    std::vector<AdapterSlot> slots;
};

Checkpoint read_checkpoint(const std::string& dir);

}  // namespace mpo_over::adapters
