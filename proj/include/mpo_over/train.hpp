// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "mpo_over/model.hpp"
#include "mpo_over/selection.hpp"

namespace mpo_over::train {

// full-dense-delta: unconstrained additive delta per matrix (upper baseline)
// lora:             vanilla low-rank pairs, never factored
// over-all:         every slot factored at step 0 with the configured m
// over-svd:         every slot factored at step 0 with m = 2
// over-predefined:  converge vanilla, score by loss deltas, retrain with the
//                   per-group top-N factored from step 0
// over-runtime:     factor the top scorers every interval steps until each
//                   group reaches its quota
enum class Strategy {
    FullDenseDelta,
    Lora,
    OverAll,
    OverSvd,
    OverPredefined,
    OverRuntime,
};

Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy s);

struct TrainConfig {
    std::int64_t steps = 400;
    std::int64_t batch_size = 32;
    double lr = 0.01;
    enum class Schedule { Constant, Cosine } schedule = Schedule::Cosine;
    enum class Opt { Sgd, AdamW } optimizer = Opt::AdamW;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::int64_t eval_every = 50;
    std::uint64_t seed = 42;

    // cosine anneal over the full budget; t is the completed-step count
    double lr_at(std::int64_t t) const;
};

// Plan selection for over-parameterization: explicit factor lists per
// "RxC" shape, auto-balanced split of depth m otherwise.
struct MpoPlanSpec {
    std::int64_t m = 2;
    std::map<std::string,
             std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>>
        explicit_shapes;

    mpo::MpoShapePlan plan_for(std::int64_t rows, std::int64_t cols) const;
};

struct MetricsRow {
    std::int64_t step = 0;
    double train_loss = 0.0;
    double eval_loss = 0.0;
    std::int64_t trainable = 0;
    std::vector<std::string> selected;
};

struct SelectionEvent {
    std::int64_t step = 0;
    std::int64_t round = 0;
    std::vector<std::string> picked;
};

struct RunResult {
    std::vector<MetricsRow> metrics;
    std::vector<SelectionEvent> events;
    Model model;
    selection::ImportanceLedger ledger;
    std::string importance_mode;  // "", "runtime" or "predefined"
    double final_eval = 0.0;
    std::int64_t phase1_steps_run = 0;
};

// Per-tensor SGD / AdamW with decoupled weight decay. State is keyed by
// slot id (dense) or slot id + "#f{k}" (factors); swapped slots start fresh.
class Optimizer {
  public:
    explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

    void apply(Model& model, const GradMap& grads, std::int64_t step_index);
    void drop(const std::string& slot_id);

  private:
    struct Moments {
        DenseTensor m;
        DenseTensor v;
        std::int64_t t = 0;
    };
    void update(DenseTensor& param, const DenseTensor& grad, double lr,
                const std::string& key);

    TrainConfig cfg_;
    std::map<std::string, Moments> state_;
};

RunResult run_training(const SyntheticTask& task, Strategy strategy,
                       const TrainConfig& tcfg, const adapters::LoraConfig& lora,
                       const selection::SelectionConfig& scfg,
                       const MpoPlanSpec& plans);

// JSON Lines serialization of the metrics: one object per eval with keys
// step, train_loss, eval_loss, trainable, selected.
std::string metrics_to_jsonl(const std::vector<MetricsRow>& rows);

}  // namespace mpo_over::train
