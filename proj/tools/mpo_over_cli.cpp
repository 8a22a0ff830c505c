// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
//
// mpo-over: plan/decompose MPO chains, train adapter strategies on the
// synthetic task, run the property suites, and sweep hyper-parameters.
// Exit codes: 0 success, 1 runtime failure, 2 invalid input.
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mpo_over/run_config.hpp"
#include "mpo_over/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;
using namespace mpo_over;

namespace {

std::vector<std::int64_t> parse_int_list(const std::string& csv) {
    std::vector<std::int64_t> out;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) {
                try {
                    out.push_back(std::stoll(cur));
                } catch (const std::exception&) {
                    throw BadConfig("not an integer list: " + csv);
                }
            }
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

ordered_json plan_report(const mpo::MpoShapePlan& plan) {
    const mpo::BudgetReport budget = mpo::budget(plan);
    ordered_json doc;
    doc["in_dims"] = plan.in_dims;
    doc["out_dims"] = plan.out_dims;
    doc["bond_dims"] = plan.bond_dims;
    doc["truncated"] = plan.truncated();
    doc["n_params_chain"] = budget.n_params_chain;
    doc["n_params_dense"] = budget.n_params_dense;
    doc["n_add"] = budget.n_add;
    return doc;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path);
    f << text;
    if (!f) throw IoError("write failed for " + path);
}

ordered_json importance_report(const train::RunResult& run) {
    ordered_json doc;
    doc["mode"] = run.importance_mode;
    ordered_json groups = ordered_json::object();
    for (const auto& [group, ids] : run.ledger.groups) {
        ordered_json members = ordered_json::array();
        for (const auto& id : ids) {
            ordered_json entry;
            entry["slot"] = id;
            entry["score"] =
                run.ledger.scores.count(id) ? run.ledger.scores.at(id) : 0.0;
            entry["selected"] = run.ledger.is_selected(id);
            members.push_back(std::move(entry));
        }
        groups[group] = std::move(members);
    }
    doc["groups"] = std::move(groups);
    return doc;
}

// Full run directory: resolved config, metrics, importance dump, selection
// events, checkpoint and merged export. Deterministic overwrite.
void write_run_dir(const std::string& dir, const RunConfig& cfg,
                   const train::RunResult& run) {
    fs::create_directories(dir);
    write_text(dir + "/resolved_config.json", run_config_to_json(cfg).dump(2) + "\n");
    write_text(dir + "/metrics.jsonl", train::metrics_to_jsonl(run.metrics));
    if (!run.importance_mode.empty())
        write_text(dir + "/importance.json", importance_report(run).dump(2) + "\n");
    std::string events;
    for (const auto& e : run.events) {
        ordered_json doc;
        doc["step"] = e.step;
        doc["round"] = e.round;
        doc["picked"] = e.picked;
        events += doc.dump() + "\n";
    }
    write_text(dir + "/selection_events.jsonl", events);
    adapters::write_checkpoint(dir + "/checkpoint", run.model.slot_list(),
                               run.model.lora);
    fs::create_directories(dir + "/merged");
    for (const auto& [base_ref, w] : train::merged_matrices(run.model))
        write_mpot(dir + "/merged/" + base_ref + ".mpot", w);
}

train::RunResult run_one(const RunConfig& cfg, const train::SyntheticTask& task) {
    return train::run_training(task, cfg.strategy, cfg.train_cfg, cfg.lora,
                               cfg.sel, cfg.mpo_plan);
}

int cmd_plan(std::int64_t rows, std::int64_t cols, const std::string& factors_in,
             const std::string& factors_out, std::int64_t m,
             const std::string& bond_cap, const std::string& out_path) {
    mpo::MpoShapePlan plan;
    std::optional<std::vector<std::int64_t>> caps;
    if (!bond_cap.empty()) caps = parse_int_list(bond_cap);
    if (!factors_in.empty() || !factors_out.empty()) {
        if (factors_in.empty() || factors_out.empty())
            throw BadConfig("plan: --factors-in and --factors-out go together");
        plan = mpo::plan_shapes(rows, cols, parse_int_list(factors_in),
                                parse_int_list(factors_out), caps);
    } else if (m >= 1) {
        plan = mpo::auto_plan(rows, cols, m);
        if (caps)
            plan = mpo::plan_shapes(rows, cols, plan.in_dims, plan.out_dims, caps);
    } else {
        throw BadConfig("plan: give either --factors-in/--factors-out or --m");
    }
    const std::string text = plan_report(plan).dump(2) + "\n";
    std::cout << text;
    if (!out_path.empty()) write_text(out_path, text);
    return 0;
}

mpo::MpoShapePlan load_plan_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw BadFile("cannot open plan " + path);
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw BadConfig("plan parse error: " + std::string(e.what()));
    }
    for (const auto& [key, value] : doc.items()) {
        static const std::set<std::string> allowed = {
            "in_dims", "out_dims", "bond_dims", "bond_caps", "truncated",
            "truncation_errors", "n_params_chain", "n_params_dense", "n_add"};
        if (!allowed.count(key))
            throw BadConfig("plan file: unknown key \"" + key + "\"");
    }
    const auto in = doc.at("in_dims").get<std::vector<std::int64_t>>();
    const auto out = doc.at("out_dims").get<std::vector<std::int64_t>>();
    std::optional<std::vector<std::int64_t>> caps;
    if (doc.contains("bond_caps"))
        caps = doc.at("bond_caps").get<std::vector<std::int64_t>>();
    else if (doc.contains("bond_dims"))
        caps = doc.at("bond_dims").get<std::vector<std::int64_t>>();
    return mpo::plan_shapes(checked_product(in), checked_product(out), in, out, caps);
}

int cmd_decompose(const std::string& input, const std::string& plan_path,
                  const std::string& out_dir, bool verify_flag) {
    DenseTensor w = read_mpot(input);
    if (!w.is_matrix()) throw BadFile("decompose: input must be a 2-d tensor");
    mpo::MpoShapePlan plan = load_plan_file(plan_path);
    mpo::MpoChain chain = mpo::decompose(w, plan);
    mpo::write_chain(out_dir, chain);

    ordered_json doc;
    doc["input"] = input;
    doc["out"] = out_dir;
    doc["plan"] = plan_report(plan);
    doc["stored_values"] = chain.stored_values();
    doc["error_bound"] = mpo::error_bound(chain);
    int exit_code = 0;
    if (verify_flag) {
        const double measured = frobenius_norm(sub(mpo::contract(chain), w));
        const double denom = std::max(frobenius_norm(w), 1e-300);
        doc["measured_error"] = measured;
        doc["measured_rel_error"] = measured / denom;
        // untruncated chains have a zero bound; allow the round-trip
        // roundoff floor there
        const double limit =
            std::max(mpo::error_bound(chain) * (1.0 + 1e-8), 1e-9 * denom);
        const bool within = measured <= limit;
        doc["within_bound"] = within;
        if (!within) exit_code = 1;
    }
    std::cout << doc.dump(2) << "\n";
    return exit_code;
}

int cmd_train(const std::string& config_path, const std::string& out_override) {
    RunConfig cfg = load_run_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (cfg.out_dir.empty()) throw BadConfig("train: no out_dir (config or --out)");
    train::SyntheticTask task = train::make_task(cfg.task, cfg.seed);
    train::RunResult run = run_one(cfg, task);
    write_run_dir(cfg.out_dir, cfg, run);
    ordered_json doc;
    doc["out_dir"] = cfg.out_dir;
    doc["strategy"] = train::strategy_name(cfg.strategy);
    doc["final_eval_loss"] = run.final_eval;
    doc["trainable_final"] = run.metrics.back().trainable;
    doc["selection_rounds"] = run.events.size();
    std::cout << doc.dump(2) << "\n";
    return 0;
}

int cmd_verify(const std::string& suite, std::uint64_t seed) {
    std::vector<std::pair<std::string, std::vector<verify::PropertyResult>>> reports;
    const auto want = [&](const char* name) {
        return suite == "all" || suite == name;
    };
    if (want("mpo")) reports.emplace_back("mpo", verify::suite_mpo(seed));
    if (want("bound")) reports.emplace_back("bound", verify::suite_bound(seed, 100));
    if (want("grad")) reports.emplace_back("grad", verify::suite_grad(seed));
    if (want("merge")) reports.emplace_back("merge", verify::suite_merge(seed));
    if (want("selection"))
        reports.emplace_back("selection", verify::suite_selection(seed));
    if (reports.empty())
        throw BadConfig("verify: unknown suite \"" + suite +
                        "\" (all|mpo|grad|merge|bound|selection)");

    bool ok = true;
    ordered_json doc = ordered_json::array();
    for (const auto& [name, results] : reports) {
        ordered_json entry;
        entry["suite"] = name;
        ordered_json props = ordered_json::array();
        for (const auto& r : results) {
            ok = ok && r.pass;
            props.push_back({{"property", r.name},
                             {"measured", r.measured},
                             {"cmp", r.cmp},
                             {"threshold", r.threshold},
                             {"pass", r.pass}});
        }
        entry["properties"] = std::move(props);
        entry["pass"] = verify::all_pass(results);
        doc.push_back(std::move(entry));
    }
    std::cout << doc.dump(2) << "\n";
    return ok ? 0 : 1;
}

int cmd_sweep(const std::string& param, const std::string& values_csv,
              const std::string& config_path, const std::string& seeds_csv,
              const std::string& out_dir) {
    if (param != "topN" && param != "split" && param != "scale")
        throw BadConfig("sweep: --param must be topN, split or scale");
    const std::vector<std::int64_t> values = parse_int_list(values_csv);
    if (values.empty()) throw BadConfig("sweep: no values");
    RunConfig base = load_run_config(config_path);
    std::vector<std::int64_t> seeds;
    if (!seeds_csv.empty())
        seeds = parse_int_list(seeds_csv);
    else
        seeds = {static_cast<std::int64_t>(base.seed)};
    const std::string sweep_dir =
        !out_dir.empty() ? out_dir
                         : (base.out_dir.empty() ? "sweep_out" : base.out_dir);

    ordered_json cells = ordered_json::array();
    std::vector<double> mean_per_value;
    std::vector<std::int64_t> trainable_per_value;
    for (std::int64_t value : values) {
        double sum = 0.0, sum2 = 0.0;
        std::int64_t trainable_final = 0;
        for (std::int64_t seed : seeds) {
            RunConfig cfg = base;
            cfg.seed = static_cast<std::uint64_t>(seed);
            cfg.train_cfg.seed = cfg.seed;
            cfg.lora.seed = cfg.seed;
            if (param == "topN")
                cfg.sel.top_n = value;
            else if (param == "split")
                cfg.sel.split = value;
            else
                cfg.mpo_plan.m = value;  // chain depth drives the added budget
            cfg.sel.validate();
            cfg.out_dir = sweep_dir + "/" + param + "_" + std::to_string(value) +
                          "/seed_" + std::to_string(seed);
            train::SyntheticTask task = train::make_task(cfg.task, cfg.seed);
            train::RunResult run = run_one(cfg, task);
            write_run_dir(cfg.out_dir, cfg, run);
            std::int64_t rounds = 0;
            for (const auto& e : run.events)
                if (!e.picked.empty()) ++rounds;
            ordered_json cell;
            cell["value"] = value;
            cell["seed"] = seed;
            cell["final_eval_loss"] = run.final_eval;
            cell["trainable_final"] = run.metrics.back().trainable;
            cell["selection_rounds"] = rounds;
            cells.push_back(std::move(cell));
            sum += run.final_eval;
            sum2 += run.final_eval * run.final_eval;
            trainable_final = run.metrics.back().trainable;
        }
        mean_per_value.push_back(sum / static_cast<double>(seeds.size()));
        trainable_per_value.push_back(trainable_final);
        (void)sum2;
    }

    ordered_json doc;
    doc["param"] = param;
    doc["values"] = values;
    doc["seeds"] = seeds;
    doc["cells"] = std::move(cells);
    ordered_json aggregates = ordered_json::array();
    for (std::size_t i = 0; i < values.size(); ++i) {
        double sum = 0.0, sum2 = 0.0;
        std::int64_t n = 0;
        for (const auto& cell : doc["cells"]) {
            if (cell["value"].get<std::int64_t>() != values[i]) continue;
            const double v = cell["final_eval_loss"].get<double>();
            sum += v;
            sum2 += v * v;
            ++n;
        }
        const double mean = sum / static_cast<double>(n);
        const double var =
            std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
        aggregates.push_back({{"value", values[i]},
                              {"mean_eval_loss", mean},
                              {"std_eval_loss", std::sqrt(var)},
                              {"trainable_final", trainable_per_value[i]}});
    }
    doc["aggregates"] = std::move(aggregates);

    if (param == "scale") {
        // plateau report: first value whose mean stops improving materially
        constexpr double kPlateauRel = 1e-3;
        bool monotone = true;
        ordered_json plateau_at = nullptr;
        for (std::size_t i = 1; i < mean_per_value.size(); ++i) {
            if (mean_per_value[i] > mean_per_value[i - 1]) monotone = false;
            const bool improved = mean_per_value[i] <
                                  mean_per_value[i - 1] * (1.0 - kPlateauRel);
            if (!improved && plateau_at.is_null()) plateau_at = values[i - 1];
        }
        doc["plateau_report"] = {{"monotone_non_increasing", monotone},
                                 {"plateau_at_value", plateau_at},
                                 {"means", mean_per_value}};
    }

    fs::create_directories(sweep_dir);
    write_text(sweep_dir + "/sweep_results.json", doc.dump(2) + "\n");
    std::cout << doc.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MPO over-parameterized low-rank adapter toolkit"};
    app.require_subcommand(1);
    app.footer("MPO_OVER_THREADS caps internal parallelism (default 1).");

    auto* plan = app.add_subcommand("plan", "compute a chain plan and its budget");
    std::int64_t rows = 0, cols = 0, m = 0;
    std::string factors_in, factors_out, bond_cap, plan_out;
    plan->add_option("--rows", rows, "matrix rows")->required();
    plan->add_option("--cols", cols, "matrix cols")->required();
    plan->add_option("--factors-in", factors_in, "comma list multiplying to rows");
    plan->add_option("--factors-out", factors_out, "comma list multiplying to cols");
    plan->add_option("--m", m, "auto-balanced split into m factors");
    plan->add_option("--bond-cap", bond_cap, "comma list of inner bond caps");
    plan->add_option("--out", plan_out, "also write the plan JSON here");

    auto* dec = app.add_subcommand("decompose", "factor a matrix into a chain");
    std::string dec_input, dec_plan, dec_out;
    bool dec_verify = false;
    dec->add_option("--input", dec_input, "input .mpot matrix")->required();
    dec->add_option("--plan", dec_plan, "plan JSON file")->required();
    dec->add_option("--out", dec_out, "output chain directory")->required();
    dec->add_flag("--verify", dec_verify, "measure reconstruction vs the bound");

    auto* tr = app.add_subcommand("train", "run one training configuration");
    std::string tr_config, tr_out;
    tr->add_option("--config", tr_config, "run config JSON")->required();
    tr->add_option("--out", tr_out, "override out_dir");

    auto* ver = app.add_subcommand("verify", "run the property suites");
    std::string ver_suite = "all";
    std::uint64_t ver_seed = 7;
    ver->add_option("--suite", ver_suite, "all|mpo|grad|merge|bound|selection");
    ver->add_option("--seed", ver_seed, "suite seed");

    auto* sw = app.add_subcommand("sweep", "grid over one hyper-parameter");
    std::string sw_param, sw_values, sw_config, sw_seeds, sw_out;
    sw->add_option("--param", sw_param, "topN|split|scale")->required();
    sw->add_option("--values", sw_values, "comma list of values")->required();
    sw->add_option("--config", sw_config, "base run config JSON")->required();
    sw->add_option("--seeds", sw_seeds, "comma list of seeds (default: config seed)");
    sw->add_option("--out", sw_out, "sweep output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (plan->parsed())
            return cmd_plan(rows, cols, factors_in, factors_out, m, bond_cap,
                            plan_out);
        if (dec->parsed()) return cmd_decompose(dec_input, dec_plan, dec_out, dec_verify);
        if (tr->parsed()) return cmd_train(tr_config, tr_out);
        if (ver->parsed()) return cmd_verify(ver_suite, ver_seed);
        if (sw->parsed()) return cmd_sweep(sw_param, sw_values, sw_config, sw_seeds, sw_out);
    } catch (const InvalidInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
