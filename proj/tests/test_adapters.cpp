// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mpo_over/adapters.hpp"
#include "mpo_over/rng.hpp"
#include "test_util.hpp"

using namespace mpo_over;
using namespace mpo_over::adapters;
using test_util::random_matrix;

TEST_CASE("init_adapter: A seeded kaiming, B zero, delta exactly zero") {
    LoraConfig cfg{4, 8.0, 42};
    auto [a, b] = init_adapter(16, 8, cfg, "layer0.proj");
    CHECK(a.slot_id == "layer0.proj.A");
    CHECK(b.slot_id == "layer0.proj.B");
    CHECK(a.rows == 4);
    CHECK(a.cols == 8);
    CHECK(b.rows == 16);
    CHECK(b.cols == 4);
    CHECK(b.dense.all_zero());
    CHECK_FALSE(a.dense.all_zero());

    DenseTensor delta = matmul(effective_matrix(b), effective_matrix(a));
    CHECK(delta.all_zero());

    auto [a2, b2] = init_adapter(16, 8, cfg, "layer0.proj");
    CHECK(test_util::bit_equal(a.dense, a2.dense));

    LoraConfig other{4, 8.0, 43};
    auto [a3, b3] = init_adapter(16, 8, other, "layer0.proj");
    CHECK_FALSE(test_util::bit_equal(a.dense, a3.dense));
}

TEST_CASE("init_adapter element std tracks sqrt(2/d2)") {
    LoraConfig cfg{64, 8.0, 7};
    const std::int64_t d2 = 50;
    auto [a, b] = init_adapter(4, d2, cfg, "layer0.big");
    // 64 * 50 = 3200 samples; widen with more adapters
    double sum = 0.0, sum2 = 0.0;
    std::int64_t n = 0;
    for (int l = 0; l < 32; ++l) {
        auto [ai, bi] = init_adapter(4, d2, cfg, "layer" + std::to_string(l) + ".big");
        for (double v : ai.dense.data()) {
            sum += v;
            sum2 += v * v;
            ++n;
        }
    }
    const double var = sum2 / static_cast<double>(n);
    const double want = 2.0 / static_cast<double>(d2);
    CHECK(std::abs(std::sqrt(var) - std::sqrt(want)) <= 0.05 * std::sqrt(want));
    CHECK(std::abs(sum / static_cast<double>(n)) <= 0.01);
}

TEST_CASE("forward_delta hand case and scaling") {
    LoraConfig cfg{2, 2.0, 1};  // alpha == r -> scaling 1
    CHECK(cfg.scaling() == 1.0);
    AdapterSlot a;
    a.slot_id = "layer0.x.A";
    a.rows = 2;
    a.cols = 2;
    a.dense = DenseTensor({2, 2}, {1, 0, 0, 1});
    AdapterSlot b = a;
    b.slot_id = "layer0.x.B";
    b.dense = DenseTensor({2, 2}, {2, 0, 0, 3});
    DenseTensor x({2, 1}, {1, 1});
    DenseTensor y = forward_delta(a, b, cfg, x);
    CHECK(y(0, 0) == 2.0);
    CHECK(y(1, 0) == 3.0);

    // B = 0 -> delta = 0 for any x
    b.dense = DenseTensor({2, 2});
    CHECK(forward_delta(a, b, cfg, x).all_zero());
}

TEST_CASE("over_parameterize preserves the represented map") {
    RngStream rng(211, "test.swap");
    LoraConfig cfg{8, 16.0, 5};
    AdapterSlot slot;
    slot.slot_id = "layer1.proj.A";
    slot.rows = 8;
    slot.cols = 768;
    slot.dense = random_matrix(8, 768, rng);
    mpo::MpoShapePlan plan = mpo::plan_shapes(8, 768, {2, 4}, {24, 32});
    DenseTensor before = effective_matrix(slot);
    AdapterSlot factored = over_parameterize(slot, plan, cfg);
    CHECK(factored.form == SlotForm::Factored);
    DenseTensor after = effective_matrix(factored);
    CHECK(rel_fro_error(after, before) <= 1e-10);
    CHECK(factored.param_count() == slot.param_count() + mpo::budget(plan).n_add);

    CHECK_THROWS_AS(over_parameterize(factored, plan, cfg), AlreadyFactored);
    mpo::MpoShapePlan wrong = mpo::plan_shapes(8, 8, {2, 4}, {2, 4});
    CHECK_THROWS_AS(over_parameterize(slot, wrong, cfg), PlanMismatch);
}

TEST_CASE("over_parameterize of an exactly-zero slot") {
    LoraConfig cfg{4, 8.0, 9};
    AdapterSlot slot;
    slot.slot_id = "layer2.ffn.B";
    slot.rows = 32;
    slot.cols = 4;
    slot.dense = DenseTensor({32, 4});
    mpo::MpoShapePlan plan = mpo::auto_plan(32, 4, 3);
    AdapterSlot factored = over_parameterize(slot, plan, cfg);
    CHECK(effective_matrix(factored).all_zero());
    int zero_factors = 0;
    for (const auto& f : factored.chain.factors)
        if (f.all_zero()) ++zero_factors;
    CHECK(zero_factors == 1);
    CHECK(factored.chain.factors.back().all_zero());
    // deterministic across calls
    AdapterSlot again = over_parameterize(slot, plan, cfg);
    for (std::size_t k = 0; k < factored.chain.factors.size(); ++k)
        CHECK(test_util::bit_equal(again.chain.factors[k], factored.chain.factors[k]));
}

TEST_CASE("merge at init returns w0 exactly, factored merge matches dense merge") {
    RngStream rng(223, "test.merge");
    LoraConfig cfg{4, 8.0, 11};
    DenseTensor w0 = random_matrix(16, 16, rng);
    auto [a, b] = init_adapter(16, 16, cfg, "layer0.proj");
    CHECK(test_util::bit_equal(merge(a, b, cfg, w0), w0));

    // give both halves nonzero values, then factor one of them
    a.dense = random_matrix(4, 16, rng);
    b.dense = random_matrix(16, 4, rng);
    DenseTensor dense_merge = merge(a, b, cfg, w0);
    AdapterSlot a_f = over_parameterize(a, mpo::auto_plan(4, 16, 2), cfg);
    AdapterSlot b_f = over_parameterize(b, mpo::auto_plan(16, 4, 2), cfg);
    DenseTensor fact_merge = merge(a_f, b_f, cfg, w0);
    CHECK(rel_fro_error(fact_merge, dense_merge) <= 1e-9);
}

TEST_CASE("checkpoint round trip with mixed slot forms") {
    const std::string dir =
        std::filesystem::temp_directory_path() / "mpo_over_test_ckpt";
    RngStream rng(227, "test.ckpt");
    LoraConfig cfg{4, 8.0, 13};
    auto [a, b] = init_adapter(12, 10, cfg, "layer0.proj");
    a.dense = random_matrix(4, 10, rng);
    AdapterSlot b_f = over_parameterize(b, mpo::auto_plan(12, 4, 2), cfg);
    write_checkpoint(dir, {a, b_f}, cfg);
    Checkpoint ckpt = read_checkpoint(dir);
    REQUIRE(ckpt.slots.size() == 2);
    CHECK(ckpt.cfg.rank == 4);
    CHECK(ckpt.slots[0].form == SlotForm::Dense);
    CHECK(test_util::bit_equal(ckpt.slots[0].dense, a.dense));
    CHECK(ckpt.slots[1].form == SlotForm::Factored);
    CHECK(test_util::bit_equal(effective_matrix(ckpt.slots[1]), effective_matrix(b_f)));
}

TEST_CASE("dense adapter pair holds r*(d1+d2) trainable values") {
    LoraConfig cfg{4, 8.0, 3};
    auto [a, b] = init_adapter(32, 32, cfg, "layer0.proj");
    CHECK(a.param_count() + b.param_count() == cfg.rank * (32 + 32));
}
