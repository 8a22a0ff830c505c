// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include "mpo_over/adapters.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mpo_over/rng.hpp"

namespace mpo_over::adapters {

namespace {
using json = nlohmann::json;
}

std::int64_t AdapterSlot::param_count() const {
    return form == SlotForm::Dense ? rows * cols : chain.stored_values();
}

std::pair<AdapterSlot, AdapterSlot> init_adapter(std::int64_t d1, std::int64_t d2,
                                                 const LoraConfig& cfg,
                                                 const std::string& base_ref) {
    if (d1 < 1 || d2 < 1 || cfg.rank < 1)
        throw InvalidInput("init_adapter: dims and rank must be positive");
    AdapterSlot a;
    a.slot_id = base_ref + ".A";
    a.base_ref = base_ref;
    a.rows = cfg.rank;
    a.cols = d2;
    a.dense = DenseTensor({cfg.rank, d2});
    RngStream rng(cfg.seed, "adapter.init", a.slot_id);
    rng.fill_normal(a.dense.data(), std::sqrt(2.0 / static_cast<double>(d2)));

    AdapterSlot b;
    b.slot_id = base_ref + ".B";
    b.base_ref = base_ref;
    b.rows = d1;
    b.cols = cfg.rank;
    b.dense = DenseTensor({d1, cfg.rank});  // zeros: B*A = 0 at init
    return {std::move(a), std::move(b)};
}

DenseTensor effective_matrix(const AdapterSlot& slot) {
    if (slot.form == SlotForm::Dense) return slot.dense;
    return mpo::contract(slot.chain);
}

DenseTensor forward_delta(const AdapterSlot& a, const AdapterSlot& b,
                          const LoraConfig& cfg, const DenseTensor& x) {
    DenseTensor ba = matmul(effective_matrix(b), effective_matrix(a));
    return scaled(matmul(ba, x), cfg.scaling());
}

AdapterSlot over_parameterize(const AdapterSlot& slot, const mpo::MpoShapePlan& plan,
                              const LoraConfig& cfg) {
    if (slot.form == SlotForm::Factored)
        throw AlreadyFactored("over_parameterize: slot " + slot.slot_id +
                              " is already factored");
    if (plan.rows() != slot.rows || plan.cols() != slot.cols)
        throw PlanMismatch("over_parameterize: plan is " + std::to_string(plan.rows()) +
                           "x" + std::to_string(plan.cols()) + ", slot " +
                           slot.slot_id + " is " + std::to_string(slot.rows) + "x" +
                           std::to_string(slot.cols));
    if (plan.truncated())
        throw PlanMismatch("over_parameterize: plan must be untruncated");

    AdapterSlot out = slot;
    out.form = SlotForm::Factored;
    if (slot.dense.all_zero()) {
        // SVD of zeros would zero every factor and kill all gradients through
        // the product. Randomize factors 1..m-1, zero the last one.
        const std::int64_t m = plan.factor_count();
        out.chain.plan = plan;
        out.chain.truncation_errors.assign(static_cast<std::size_t>(m), 0.0);
        RngStream rng(cfg.seed, "adapter.overparam-zero", slot.slot_id);
        for (std::int64_t k = 0; k < m; ++k) {
            const auto uk = static_cast<std::size_t>(k);
            DenseTensor f({plan.bond_dims[uk], plan.in_dims[uk], plan.out_dims[uk],
                           plan.bond_dims[uk + 1]});
            if (k + 1 < m) {
                const double fan = static_cast<double>(
                    plan.bond_dims[uk] * plan.in_dims[uk] * plan.out_dims[uk]);
                rng.fill_normal(f.data(), 1.0 / std::sqrt(fan));
            }
            out.chain.factors.push_back(std::move(f));
        }
    } else {
        out.chain = mpo::decompose(slot.dense, plan);
    }
    out.dense = DenseTensor();
    return out;
}

DenseTensor merge(const AdapterSlot& a, const AdapterSlot& b,
                  const LoraConfig& cfg, const DenseTensor& w0) {
    DenseTensor ba = matmul(effective_matrix(b), effective_matrix(a));
    if (!ba.same_dims(w0))
        throw ShapeMismatch("merge: adapter product dims differ from base matrix");
    return add(w0, scaled(ba, cfg.scaling()));
}

void write_checkpoint(const std::string& dir,
                      const std::vector<AdapterSlot>& slots,
                      const LoraConfig& cfg) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["version"] = 1;
    manifest["lora"] = {{"rank", cfg.rank}, {"alpha", cfg.alpha}, {"seed", cfg.seed}};
    json slot_docs = json::array();
    for (const auto& slot : slots) {
        json doc = {
            {"id", slot.slot_id},
            {"base", slot.base_ref},
            {"rows", slot.rows},
            {"cols", slot.cols},
            {"trainable", slot.trainable},
            {"form", slot.form == SlotForm::Dense ? "dense" : "factored"},
        };
        if (slot.form == SlotForm::Dense) {
            const std::string file = slot.slot_id + ".mpot";
            write_mpot(dir + "/" + file, slot.dense);
            doc["file"] = file;
        } else {
            mpo::write_chain(dir + "/" + slot.slot_id, slot.chain);
            doc["dir"] = slot.slot_id;
        }
        slot_docs.push_back(std::move(doc));
    }
    manifest["slots"] = std::move(slot_docs);
    std::ofstream f(dir + "/manifest.json", std::ios::trunc);
    if (!f) throw IoError("write_checkpoint: cannot open " + dir + "/manifest.json");
    f << manifest.dump(2) << "\n";
}

Checkpoint read_checkpoint(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw BadFile("read_checkpoint: cannot open " + dir + "/manifest.json");
    json manifest;
    try {
        f >> manifest;
    } catch (const json::exception& e) {
        throw BadFile("read_checkpoint: bad manifest: " + std::string(e.what()));
    }
    Checkpoint ckpt;
    try {
        ckpt.cfg.rank = manifest.at("lora").at("rank").get<std::int64_t>();
        ckpt.cfg.alpha = manifest.at("lora").at("alpha").get<double>();
        ckpt.cfg.seed = manifest.at("lora").at("seed").get<std::uint64_t>();
        for (const auto& doc : manifest.at("slots")) {
            AdapterSlot slot;
            slot.slot_id = doc.at("id").get<std::string>();
            slot.base_ref = doc.at("base").get<std::string>();
            slot.rows = doc.at("rows").get<std::int64_t>();
            slot.cols = doc.at("cols").get<std::int64_t>();
            slot.trainable = doc.at("trainable").get<bool>();
            const std::string form = doc.at("form").get<std::string>();
            if (form == "dense") {
                slot.form = SlotForm::Dense;
                slot.dense = read_mpot(dir + "/" + doc.at("file").get<std::string>());
                if (slot.dense.rows() != slot.rows || slot.dense.cols() != slot.cols)
                    throw BadFile("read_checkpoint: slot " + slot.slot_id +
                                  " file dims differ from manifest");
            } else if (form == "factored") {
                slot.form = SlotForm::Factored;
                slot.chain = mpo::read_chain(dir + "/" + doc.at("dir").get<std::string>());
                if (slot.chain.plan.rows() != slot.rows ||
                    slot.chain.plan.cols() != slot.cols)
                    throw BadFile("read_checkpoint: slot " + slot.slot_id +
                                  " chain dims differ from manifest");
            } else {
                throw BadFile("read_checkpoint: unknown slot form " + form);
            }
            ckpt.slots.push_back(std::move(slot));
        }
    } catch (const json::exception& e) {
        throw BadFile("read_checkpoint: bad manifest: " + std::string(e.what()));
    }
    return ckpt;
}

}  // namespace mpo_over::adapters
