// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include "mpo_over/run_config.hpp"

#include <fstream>
#include <set>

namespace mpo_over {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void expect_keys(const json& doc, const std::string& where,
                 const std::set<std::string>& allowed) {
    if (!doc.is_object()) throw BadConfig(where + ": expected an object");
    for (const auto& [key, value] : doc.items()) {
        if (!allowed.count(key))
            throw BadConfig(where + ": unknown key \"" + key + "\"");
    }
}

template <typename T>
void take(const json& doc, const char* key, T& into) {
    auto it = doc.find(key);
    if (it == doc.end()) return;
    try {
        into = it->get<T>();
    } catch (const json::exception&) {
        throw BadConfig(std::string("bad value for \"") + key + "\"");
    }
}

void parse_task(const json& doc, train::TaskConfig& task) {
    expect_keys(doc, "task",
                {"blocks", "hidden", "teacher_rank", "teacher_roles",
                 "teacher_strength", "noise_std", "train_samples", "eval_samples"});
    take(doc, "blocks", task.blocks);
    take(doc, "hidden", task.hidden);
    take(doc, "teacher_rank", task.teacher_rank);
    take(doc, "teacher_roles", task.teacher_roles);
    take(doc, "teacher_strength", task.teacher_strength);
    take(doc, "noise_std", task.noise_std);
    take(doc, "train_samples", task.train_samples);
    take(doc, "eval_samples", task.eval_samples);
    for (const auto& role : task.teacher_roles)
        if (role != "proj" && role != "ffn")
            throw BadConfig("task.teacher_roles: unknown role \"" + role + "\"");
}

void parse_train(const json& doc, train::TrainConfig& cfg) {
    expect_keys(doc, "train",
                {"steps", "batch_size", "lr", "schedule", "optimizer", "beta1",
                 "beta2", "eps", "weight_decay", "eval_every"});
    take(doc, "steps", cfg.steps);
    take(doc, "batch_size", cfg.batch_size);
    take(doc, "lr", cfg.lr);
    std::string schedule;
    take(doc, "schedule", schedule);
    if (schedule == "constant")
        cfg.schedule = train::TrainConfig::Schedule::Constant;
    else if (schedule == "cosine" || schedule.empty())
        cfg.schedule = train::TrainConfig::Schedule::Cosine;
    else
        throw BadConfig("train.schedule must be \"constant\" or \"cosine\"");
    std::string optimizer;
    take(doc, "optimizer", optimizer);
    if (optimizer == "sgd")
        cfg.optimizer = train::TrainConfig::Opt::Sgd;
    else if (optimizer == "adamw" || optimizer.empty())
        cfg.optimizer = train::TrainConfig::Opt::AdamW;
    else
        throw BadConfig("train.optimizer must be \"sgd\" or \"adamw\"");
    take(doc, "beta1", cfg.beta1);
    take(doc, "beta2", cfg.beta2);
    take(doc, "eps", cfg.eps);
    take(doc, "weight_decay", cfg.weight_decay);
    take(doc, "eval_every", cfg.eval_every);
}

void parse_lora(const json& doc, adapters::LoraConfig& lora) {
    expect_keys(doc, "lora", {"rank", "alpha"});
    take(doc, "rank", lora.rank);
    take(doc, "alpha", lora.alpha);
    if (lora.rank < 1) throw BadConfig("lora.rank must be >= 1");
    if (!(lora.alpha > 0.0)) throw BadConfig("lora.alpha must be > 0");
}

void parse_selection(const json& doc, selection::SelectionConfig& sel) {
    expect_keys(doc, "selection",
                {"top_n", "split", "interval", "mode", "group_mode", "score_mode",
                 "reset_accum", "calib_batches", "patience", "plateau_rel"});
    take(doc, "top_n", sel.top_n);
    take(doc, "split", sel.split);
    take(doc, "interval", sel.interval);
    std::string mode;
    take(doc, "mode", mode);
    if (mode == "predefined")
        sel.mode = selection::SelectionMode::Predefined;
    else if (mode == "runtime" || mode.empty())
        sel.mode = selection::SelectionMode::Runtime;
    else
        throw BadConfig("selection.mode must be \"predefined\" or \"runtime\"");
    std::string group_mode;
    take(doc, "group_mode", group_mode);
    if (group_mode == "half")
        sel.group_mode = selection::GroupMode::Half;
    else if (group_mode == "single")
        sel.group_mode = selection::GroupMode::Single;
    else if (group_mode == "role-half" || group_mode.empty())
        sel.group_mode = selection::GroupMode::RoleHalf;
    else
        throw BadConfig(
            "selection.group_mode must be \"role-half\", \"half\" or \"single\"");
    std::string score_mode;
    take(doc, "score_mode", score_mode);
    if (score_mode == "signed-inner")
        sel.score_mode = selection::ScoreMode::SignedInner;
    else if (score_mode == "abs-elementwise" || score_mode.empty())
        sel.score_mode = selection::ScoreMode::AbsElementwise;
    else
        throw BadConfig(
            "selection.score_mode must be \"abs-elementwise\" or \"signed-inner\"");
    take(doc, "reset_accum", sel.reset_accum);
    take(doc, "calib_batches", sel.calib_batches);
    take(doc, "patience", sel.patience);
    take(doc, "plateau_rel", sel.plateau_rel);
}

void parse_mpo(const json& doc, train::MpoPlanSpec& spec) {
    expect_keys(doc, "mpo", {"m", "shapes"});
    take(doc, "m", spec.m);
    if (spec.m < 1) throw BadConfig("mpo.m must be >= 1");
    auto it = doc.find("shapes");
    if (it == doc.end()) return;
    if (!it->is_object()) throw BadConfig("mpo.shapes: expected an object");
    for (const auto& [key, value] : it->items()) {
        expect_keys(value, "mpo.shapes." + key, {"in", "out"});
        std::vector<std::int64_t> in, out;
        take(value, "in", in);
        take(value, "out", out);
        const auto x = key.find('x');
        if (x == std::string::npos)
            throw BadConfig("mpo.shapes keys must look like \"32x4\"");
        const std::int64_t rows = std::stoll(key.substr(0, x));
        const std::int64_t cols = std::stoll(key.substr(x + 1));
        mpo::plan_shapes(rows, cols, in, out);  // validates the factor lists
        spec.explicit_shapes[key] = {std::move(in), std::move(out)};
    }
}

}  // namespace

RunConfig run_config_from_json(const json& doc) {
    expect_keys(doc, "config",
                {"seed", "strategy", "out_dir", "task", "train", "lora",
                 "selection", "mpo"});
    RunConfig cfg;
    take(doc, "seed", cfg.seed);
    std::string strategy = "lora";
    take(doc, "strategy", strategy);
    cfg.strategy = train::parse_strategy(strategy);
    take(doc, "out_dir", cfg.out_dir);
    if (doc.contains("task")) parse_task(doc.at("task"), cfg.task);
    if (doc.contains("train")) parse_train(doc.at("train"), cfg.train_cfg);
    if (doc.contains("lora")) parse_lora(doc.at("lora"), cfg.lora);
    if (doc.contains("selection")) parse_selection(doc.at("selection"), cfg.sel);
    if (doc.contains("mpo")) parse_mpo(doc.at("mpo"), cfg.mpo_plan);
    cfg.train_cfg.seed = cfg.seed;
    cfg.lora.seed = cfg.seed;
    cfg.sel.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw BadFile("cannot open config " + path);
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw BadConfig("config parse error in " + path + ": " + e.what());
    }
    return run_config_from_json(doc);
}

ordered_json run_config_to_json(const RunConfig& cfg) {
    ordered_json doc;
    doc["seed"] = cfg.seed;
    doc["strategy"] = train::strategy_name(cfg.strategy);
    if (!cfg.out_dir.empty()) doc["out_dir"] = cfg.out_dir;
    doc["task"] = {{"blocks", cfg.task.blocks},
                   {"hidden", cfg.task.hidden},
                   {"teacher_rank", cfg.task.teacher_rank},
                   {"teacher_roles", cfg.task.teacher_roles},
                   {"teacher_strength", cfg.task.teacher_strength},
                   {"noise_std", cfg.task.noise_std},
                   {"train_samples", cfg.task.train_samples},
                   {"eval_samples", cfg.task.eval_samples}};
    doc["train"] = {
        {"steps", cfg.train_cfg.steps},
        {"batch_size", cfg.train_cfg.batch_size},
        {"lr", cfg.train_cfg.lr},
        {"schedule",
         cfg.train_cfg.schedule == train::TrainConfig::Schedule::Cosine ? "cosine"
                                                                        : "constant"},
        {"optimizer",
         cfg.train_cfg.optimizer == train::TrainConfig::Opt::AdamW ? "adamw" : "sgd"},
        {"beta1", cfg.train_cfg.beta1},
        {"beta2", cfg.train_cfg.beta2},
        {"eps", cfg.train_cfg.eps},
        {"weight_decay", cfg.train_cfg.weight_decay},
        {"eval_every", cfg.train_cfg.eval_every}};
    doc["lora"] = {{"rank", cfg.lora.rank}, {"alpha", cfg.lora.alpha}};
    doc["selection"] = {
        {"top_n", cfg.sel.top_n},
        {"split", cfg.sel.split},
        {"interval", cfg.sel.interval},
        {"mode",
         cfg.sel.mode == selection::SelectionMode::Predefined ? "predefined"
                                                              : "runtime"},
        {"group_mode", cfg.sel.group_mode == selection::GroupMode::RoleHalf
                           ? "role-half"
                           : (cfg.sel.group_mode == selection::GroupMode::Half
                                  ? "half"
                                  : "single")},
        {"score_mode",
         cfg.sel.score_mode == selection::ScoreMode::AbsElementwise
             ? "abs-elementwise"
             : "signed-inner"},
        {"reset_accum", cfg.sel.reset_accum},
        {"calib_batches", cfg.sel.calib_batches},
        {"patience", cfg.sel.patience},
        {"plateau_rel", cfg.sel.plateau_rel}};
    ordered_json shapes = ordered_json::object();
    for (const auto& [key, factors] : cfg.mpo_plan.explicit_shapes)
        shapes[key] = {{"in", factors.first}, {"out", factors.second}};
    doc["mpo"] = {{"m", cfg.mpo_plan.m}, {"shapes", std::move(shapes)}};
    return doc;
}

}  // namespace mpo_over
