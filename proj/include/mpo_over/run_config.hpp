// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "mpo_over/train.hpp"

namespace mpo_over {

// One experiment: task, optimization, adapters, selection schedule, plan
// spec, strategy and the single seed every random stream derives from.
// Unknown JSON keys are a hard error (schema/run_config.schema.json).
struct RunConfig {
    std::uint64_t seed = 42;
    train::Strategy strategy = train::Strategy::Lora;
    std::string out_dir;
    train::TaskConfig task;
    train::TrainConfig train_cfg;
    adapters::LoraConfig lora;
    selection::SelectionConfig sel;
    train::MpoPlanSpec mpo_plan;
};

RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);
// Fully resolved form (defaults filled in), written into every run directory.
nlohmann::ordered_json run_config_to_json(const RunConfig& cfg);

}  // namespace mpo_over
