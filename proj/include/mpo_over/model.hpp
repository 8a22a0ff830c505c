// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpo_over/adapters.hpp"
#include "mpo_over/tape.hpp"
#include "mpo_over/tensor.hpp"

namespace mpo_over::train {

// Desk-scale regression task. The backbone is a fixed stack of
// proj -> tanh -> ffn blocks; the teacher is the same stack with an
// additive low-rank perturbation planted on a subset of roles, plus
// observation noise on the targets.
struct TaskConfig {
    std::int64_t blocks = 4;
    std::int64_t hidden = 32;
    std::int64_t teacher_rank = 2;
    std::vector<std::string> teacher_roles = {"proj"};
    double teacher_strength = 0.5;
    double noise_std = 0.01;
    std::int64_t train_samples = 4096;
    std::int64_t eval_samples = 1024;
};

struct SyntheticTask {
    TaskConfig cfg;
    std::uint64_t seed = 0;
    std::vector<DenseTensor> proj_w;     // frozen backbone, h x h per block
    std::vector<DenseTensor> ffn_w;
    std::vector<DenseTensor> teacher_proj;
    std::vector<DenseTensor> teacher_ffn;
    DenseTensor train_x;  // [n, h], samples as rows
    DenseTensor train_y;
    DenseTensor eval_x;
    DenseTensor eval_y;

    std::int64_t base_param_count() const {
        return 2 * cfg.blocks * cfg.hidden * cfg.hidden;
    }
};

SyntheticTask make_task(const TaskConfig& cfg, std::uint64_t seed);

// x laid out [h, batch]
DenseTensor stack_forward(const std::vector<DenseTensor>& proj,
                          const std::vector<DenseTensor>& ffn,
                          const DenseTensor& x);

// Fresh x/y drawn from a named stream of the task seed (calibration data
// for importance scoring; disjoint from train and eval by construction).
std::pair<DenseTensor, DenseTensor> make_calib_batch(const SyntheticTask& task,
                                                     std::int64_t batch,
                                                     std::int64_t index);

// Adapter-carrying model over a frozen task backbone. In full-delta mode
// each base matrix gets a single unconstrained additive delta slot ".D"
// instead of a LoRA pair.
struct Model {
    const SyntheticTask* task = nullptr;
    adapters::LoraConfig lora;
    bool full_delta = false;
    std::vector<std::string> pair_ids;  // "layer{l}.{role}" in layer order
    std::vector<std::string> slot_ids;  // deterministic slot order
    std::map<std::string, adapters::AdapterSlot> slots;

    const DenseTensor& base_matrix(const std::string& pair_id) const;
    std::int64_t trainable_param_count() const;
    std::vector<adapters::AdapterSlot> slot_list() const;
};

Model make_model(const SyntheticTask& task, const adapters::LoraConfig& lora,
                 bool full_delta = false);

// Optional replacement of a slot's effective matrix (zeroing for importance
// scores, scaling for the first-order probe). Overridden slots appear in the
// gradient map with the gradient taken at the override value.
using Overrides = std::map<std::string, DenseTensor>;

struct SlotGrad {
    DenseTensor effective;             // d loss / d (contracted or dense matrix)
    std::vector<DenseTensor> factors;  // factored slots only
};
using GradMap = std::map<std::string, SlotGrad>;

struct ForwardBackward {
    double loss = 0.0;
    GradMap grads;
};

ForwardBackward forward_backward(const Model& model, const DenseTensor& x,
                                 const DenseTensor& y,
                                 const Overrides* overrides = nullptr);

// Tape-free forward/loss used by evaluation and scoring.
DenseTensor model_forward(const Model& model, const DenseTensor& x,
                          const Overrides* overrides = nullptr);
double dataset_loss(const Model& model, const DenseTensor& xs,
                    const DenseTensor& ys, const Overrides* overrides = nullptr);

// [h, batch] column-block gathered from row-major sample storage.
DenseTensor gather_batch(const DenseTensor& rows,
                         const std::vector<std::int64_t>& indices);

// base_ref -> w0 + (alpha/r) B A (or w0 + D), the inference-time weights.
std::map<std::string, DenseTensor> merged_matrices(const Model& model);
DenseTensor merged_forward(const SyntheticTask& task,
                           const std::map<std::string, DenseTensor>& merged,
                           const DenseTensor& x);

}  // namespace mpo_over::train
