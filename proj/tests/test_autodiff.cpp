// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <functional>

#include "mpo_over/rng.hpp"
#include "mpo_over/tape.hpp"
#include "mpo_over/train.hpp"
#include "test_util.hpp"

using namespace mpo_over;
using namespace mpo_over::autodiff;
using test_util::random_matrix;

namespace {

constexpr double kFdEps = 1e-5;
constexpr double kFdTol = 1e-6;

// Central finite differences against the analytic gradient of one leaf.
// scalar_fn rebuilds the graph from scratch and returns the loss.
double fd_check(DenseTensor& param,
                const std::function<double()>& scalar_fn,
                const DenseTensor& analytic) {
    DenseTensor fd(param.dims());
    auto p = param.data();
    auto out = fd.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + kFdEps;
        const double up = scalar_fn();
        p[i] = keep - kFdEps;
        const double down = scalar_fn();
        p[i] = keep;
        out[i] = (up - down) / (2.0 * kFdEps);
    }
    const double denom = std::max({frobenius_norm(fd), frobenius_norm(analytic), 1e-12});
    return frobenius_norm(sub(fd, analytic)) / denom;
}

}  // namespace

TEST_CASE("gradients of every op kind pass finite differences") {
    RngStream rng(301, "test.fd");
    // graph: mse(reshape(tanh(w2 * (w1 * x + b) * 0.7), ..) , y)
    DenseTensor w1 = random_matrix(5, 4, rng);
    DenseTensor w2 = random_matrix(3, 5, rng);
    DenseTensor b = random_matrix(5, 6, rng);
    DenseTensor x = random_matrix(4, 6, rng);
    DenseTensor y = random_matrix(9, 2, rng);

    const auto run = [&](bool backward_pass) {
        Tape tape;
        const int w1n = tape.leaf(w1, true);
        const int w2n = tape.leaf(w2, true);
        const int bn = tape.leaf(b, true);
        const int xn = tape.leaf(x, false);
        const int h = tape.add(tape.matmul(w1n, xn), bn);
        const int s = tape.scale(h, 0.7);
        const int t = tape.tanh(s);
        const int o = tape.matmul(w2n, t);
        const int r = tape.reshape(o, {9, 2});
        const int loss = tape.mse_loss(r, tape.leaf(y, false));
        if (!backward_pass) {
            return std::tuple{tape.value(loss).data()[0], DenseTensor(),
                              DenseTensor(), DenseTensor()};
        }
        Tape& tp = tape;
        const double lv = tp.backward(loss);
        return std::tuple{lv, tp.gradient(w1n), tp.gradient(w2n), tp.gradient(bn)};
    };

    auto [loss, g1, g2, gb] = run(true);
    CHECK(std::isfinite(loss));
    const auto loss_only = [&]() { return std::get<0>(run(false)); };
    CHECK(fd_check(w1, loss_only, g1) <= kFdTol);
    CHECK(fd_check(w2, loss_only, g2) <= kFdTol);
    CHECK(fd_check(b, loss_only, gb) <= kFdTol);
}

TEST_CASE("chain-contract gradients pass finite differences for m in {2,3,5}") {
    RngStream rng(307, "test.fdchain");
    for (std::int64_t m : {2, 3, 5}) {
        mpo::MpoShapePlan plan = mpo::auto_plan(8, 12, m);
        DenseTensor w = random_matrix(8, 12, rng);
        mpo::MpoChain chain = mpo::decompose(w, plan);
        DenseTensor y = random_matrix(8, 3, rng);
        DenseTensor x = random_matrix(12, 3, rng);

        const auto loss_of = [&]() {
            Tape tape;
            std::vector<int> leaves;
            for (const auto& f : chain.factors) leaves.push_back(tape.leaf(f, true));
            const int c = tape.chain_contract(leaves, plan);
            const int o = tape.matmul(c, tape.leaf(x, false));
            return tape.value(tape.mse_loss(o, tape.leaf(y, false))).data()[0];
        };

        Tape tape;
        std::vector<int> leaves;
        for (const auto& f : chain.factors) leaves.push_back(tape.leaf(f, true));
        const int c = tape.chain_contract(leaves, plan);
        const int o = tape.matmul(c, tape.leaf(x, false));
        tape.backward(tape.mse_loss(o, tape.leaf(y, false)));

        for (std::size_t k = 0; k < chain.factors.size(); ++k) {
            const double rel = fd_check(chain.factors[k], loss_of,
                                        tape.gradient(leaves[k]));
            CHECK(rel <= kFdTol);
        }
    }
}

TEST_CASE("model gradients: full finite-difference sweep on a 1-block model") {
    train::TaskConfig tc;
    tc.blocks = 1;
    tc.hidden = 6;
    tc.train_samples = 16;
    tc.eval_samples = 8;
    tc.noise_std = 0.0;
    train::SyntheticTask task = train::make_task(tc, 5);
    adapters::LoraConfig lora{2, 4.0, 5};
    train::Model model = train::make_model(task, lora);
    // give B nonzero values so gradients flow everywhere
    RngStream rng(311, "test.modelfd");
    for (auto& id : model.slot_ids) {
        auto& slot = model.slots.at(id);
        if (slot.half() == 'B') slot.dense = random_matrix(slot.rows, slot.cols, rng, 0.3);
    }
    // factor one slot to cover the factored path
    auto& fslot = model.slots.at("layer0.ffn.A");
    fslot = adapters::over_parameterize(fslot, mpo::auto_plan(fslot.rows, fslot.cols, 3),
                                        lora);

    std::vector<std::int64_t> idx = {0, 1, 2, 3};
    DenseTensor x = train::gather_batch(task.train_x, idx);
    DenseTensor y = train::gather_batch(task.train_y, idx);
    train::ForwardBackward fb = train::forward_backward(model, x, y);

    const auto loss_of = [&]() {
        return train::forward_backward(model, x, y).loss;
    };
    for (const auto& id : model.slot_ids) {
        auto& slot = model.slots.at(id);
        if (slot.form == adapters::SlotForm::Dense) {
            CHECK(fd_check(slot.dense, loss_of, fb.grads.at(id).effective) <= kFdTol);
        } else {
            for (std::size_t k = 0; k < slot.chain.factors.size(); ++k)
                CHECK(fd_check(slot.chain.factors[k], loss_of,
                               fb.grads.at(id).factors[k]) <= kFdTol);
        }
    }
}

TEST_CASE("gradient of A is exactly zero while B is zero") {
    train::TaskConfig tc;
    tc.blocks = 2;
    tc.hidden = 8;
    tc.train_samples = 8;
    tc.eval_samples = 4;
    train::SyntheticTask task = train::make_task(tc, 6);
    adapters::LoraConfig lora{2, 4.0, 6};
    train::Model model = train::make_model(task, lora);
    std::vector<std::int64_t> idx = {0, 1, 2};
    train::ForwardBackward fb = train::forward_backward(
        model, train::gather_batch(task.train_x, idx),
        train::gather_batch(task.train_y, idx));
    for (const auto& id : model.slot_ids) {
        if (model.slots.at(id).half() == 'A')
            CHECK(fb.grads.at(id).effective.all_zero());
        else
            CHECK_FALSE(fb.grads.at(id).effective.all_zero());
    }
}

TEST_CASE("loss is exactly zero when teacher equals backbone and B = 0") {
    train::TaskConfig tc;
    tc.blocks = 3;
    tc.hidden = 8;
    tc.teacher_strength = 0.0;
    tc.noise_std = 0.0;
    tc.train_samples = 32;
    tc.eval_samples = 16;
    train::SyntheticTask task = train::make_task(tc, 7);
    adapters::LoraConfig lora{2, 4.0, 7};
    train::Model model = train::make_model(task, lora);
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < 32; ++i) idx.push_back(i);
    const double loss = train::forward_backward(
        model, train::gather_batch(task.train_x, idx),
        train::gather_batch(task.train_y, idx)).loss;
    CHECK(loss == 0.0);
}

TEST_CASE("nonfinite loss aborts with a diagnostic") {
    Tape tape;
    DenseTensor huge({1, 1}, {1e308});
    const int a = tape.leaf(huge, true);
    const int b = tape.matmul(a, tape.leaf(huge, false));  // overflows to inf
    const int loss = tape.mse_loss(b, tape.leaf(DenseTensor({1, 1}), false));
    CHECK_THROWS_AS(tape.backward(loss), NonFinite);
}

TEST_CASE("optimizer: sgd and adamw behave as specified") {
    train::TaskConfig tc;
    tc.blocks = 1;
    tc.hidden = 4;
    tc.train_samples = 4;
    tc.eval_samples = 4;
    train::SyntheticTask task = train::make_task(tc, 8);
    adapters::LoraConfig lora{2, 4.0, 8};

    SUBCASE("zero grads leave the model unchanged") {
        train::Model model = train::make_model(task, lora);
        train::TrainConfig cfg;
        cfg.optimizer = train::TrainConfig::Opt::AdamW;
        cfg.weight_decay = 0.0;
        cfg.schedule = train::TrainConfig::Schedule::Constant;
        train::Optimizer opt(cfg);
        train::GradMap grads;
        for (const auto& id : model.slot_ids) {
            train::SlotGrad sg;
            const auto& slot = model.slots.at(id);
            sg.effective = DenseTensor({slot.rows, slot.cols});
            grads.emplace(id, std::move(sg));
        }
        DenseTensor a_before = model.slots.at("layer0.proj.A").dense;
        opt.apply(model, grads, 0);
        CHECK(test_util::bit_equal(model.slots.at("layer0.proj.A").dense, a_before));
    }

    SUBCASE("sgd: lr 0.1 moves 1.0 with grad 0.5 to 0.95") {
        train::Model model = train::make_model(task, lora);
        auto& slot = model.slots.at("layer0.proj.A");
        for (auto& v : slot.dense.data()) v = 1.0;
        train::TrainConfig cfg;
        cfg.optimizer = train::TrainConfig::Opt::Sgd;
        cfg.lr = 0.1;
        cfg.schedule = train::TrainConfig::Schedule::Constant;
        train::Optimizer opt(cfg);
        train::GradMap grads;
        for (const auto& id : model.slot_ids) {
            const auto& s = model.slots.at(id);
            train::SlotGrad sg;
            sg.effective = DenseTensor({s.rows, s.cols});
            if (id == "layer0.proj.A")
                for (auto& v : sg.effective.data()) v = 0.5;
            grads.emplace(id, std::move(sg));
        }
        opt.apply(model, grads, 0);
        for (double v : model.slots.at("layer0.proj.A").dense.data())
            CHECK(v == doctest::Approx(0.95).epsilon(1e-15));
    }

    SUBCASE("adamw first step approaches -lr * sign(g) for small eps") {
        train::Model model = train::make_model(task, lora);
        train::TrainConfig cfg;
        cfg.optimizer = train::TrainConfig::Opt::AdamW;
        cfg.lr = 0.01;
        cfg.eps = 1e-12;
        cfg.schedule = train::TrainConfig::Schedule::Constant;
        train::Optimizer opt(cfg);
        auto& slot = model.slots.at("layer0.proj.A");
        DenseTensor before = slot.dense;
        train::GradMap grads;
        RngStream rng(313, "test.adamw");
        for (const auto& id : model.slot_ids) {
            const auto& s = model.slots.at(id);
            train::SlotGrad sg;
            sg.effective = test_util::random_matrix(s.rows, s.cols, rng);
            grads.emplace(id, std::move(sg));
        }
        const DenseTensor g = grads.at("layer0.proj.A").effective;
        opt.apply(model, grads, 0);
        for (std::int64_t i = 0; i < slot.dense.size(); ++i) {
            const double delta = slot.dense.data()[static_cast<std::size_t>(i)] -
                                 before.data()[static_cast<std::size_t>(i)];
            const double gi = g.data()[static_cast<std::size_t>(i)];
            if (std::abs(gi) > 1e-8)
                CHECK(delta == doctest::Approx(-0.01 * (gi > 0 ? 1.0 : -1.0)).epsilon(1e-6));
        }
    }
}

TEST_CASE("cosine schedule endpoints") {
    train::TrainConfig cfg;
    cfg.lr = 0.4;
    cfg.steps = 100;
    cfg.schedule = train::TrainConfig::Schedule::Cosine;
    CHECK(cfg.lr_at(0) == doctest::Approx(0.4));
    CHECK(cfg.lr_at(50) == doctest::Approx(0.2));
    CHECK(cfg.lr_at(100) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("backbone stays frozen through a training run") {
    train::TaskConfig tc;
    tc.blocks = 2;
    tc.hidden = 8;
    tc.train_samples = 64;
    tc.eval_samples = 16;
    train::SyntheticTask task = train::make_task(tc, 9);
    DenseTensor proj0 = task.proj_w[0];
    DenseTensor ffn1 = task.ffn_w[1];
    adapters::LoraConfig lora{2, 4.0, 9};
    train::TrainConfig tcfg;
    tcfg.steps = 30;
    tcfg.eval_every = 10;
    tcfg.batch_size = 8;
    selection::SelectionConfig scfg;
    train::MpoPlanSpec plans;
    train::RunResult run = train::run_training(task, train::Strategy::OverRuntime,
                                               tcfg, lora, scfg, plans);
    CHECK(test_util::bit_equal(task.proj_w[0], proj0));
    CHECK(test_util::bit_equal(task.ffn_w[1], ffn1));
    CHECK(run.metrics.size() >= 2);
}

TEST_CASE("training runs are deterministic and learn the planted task") {
    train::TaskConfig tc;
    tc.blocks = 2;
    tc.hidden = 16;
    tc.train_samples = 256;
    tc.eval_samples = 64;
    train::SyntheticTask task = train::make_task(tc, 10);
    adapters::LoraConfig lora{4, 8.0, 10};
    train::TrainConfig tcfg;
    tcfg.steps = 80;
    tcfg.eval_every = 20;
    tcfg.batch_size = 16;
    tcfg.lr = 0.02;
    selection::SelectionConfig scfg;
    scfg.interval = 20;
    train::MpoPlanSpec plans;
    plans.m = 2;

    for (train::Strategy strategy :
         {train::Strategy::Lora, train::Strategy::OverAll, train::Strategy::OverSvd,
          train::Strategy::OverRuntime, train::Strategy::FullDenseDelta,
          train::Strategy::OverPredefined}) {
        CAPTURE(train::strategy_name(strategy));
        train::RunResult a = train::run_training(task, strategy, tcfg, lora, scfg, plans);
        CHECK(a.metrics.front().eval_loss > a.metrics.back().eval_loss);
        train::RunResult b = train::run_training(task, strategy, tcfg, lora, scfg, plans);
        CHECK(train::metrics_to_jsonl(a.metrics) == train::metrics_to_jsonl(b.metrics));
    }
}

TEST_CASE("steps=0 yields exactly one eval row at the base loss") {
    train::TaskConfig tc;
    tc.blocks = 1;
    tc.hidden = 8;
    tc.train_samples = 32;
    tc.eval_samples = 16;
    train::SyntheticTask task = train::make_task(tc, 11);
    adapters::LoraConfig lora{2, 4.0, 11};
    train::TrainConfig tcfg;
    tcfg.steps = 0;
    selection::SelectionConfig scfg;
    train::MpoPlanSpec plans;
    train::RunResult run = train::run_training(task, train::Strategy::Lora, tcfg,
                                               lora, scfg, plans);
    REQUIRE(run.metrics.size() == 1);
    train::Model base = train::make_model(task, lora);
    CHECK(run.metrics[0].eval_loss ==
          doctest::Approx(train::dataset_loss(base, task.eval_x, task.eval_y))
              .epsilon(1e-15));
}

TEST_CASE("runtime selection with full quota factors every slot") {
    train::TaskConfig tc;
    tc.blocks = 2;
    tc.hidden = 8;
    tc.train_samples = 64;
    tc.eval_samples = 16;
    train::SyntheticTask task = train::make_task(tc, 12);
    adapters::LoraConfig lora{2, 4.0, 12};
    train::TrainConfig tcfg;
    tcfg.steps = 60;
    tcfg.eval_every = 10;
    tcfg.batch_size = 8;
    selection::SelectionConfig scfg;
    scfg.top_n = 2;  // == group size for role-half grouping with 2 blocks
    scfg.split = 2;
    scfg.interval = 10;
    train::MpoPlanSpec plans;
    train::RunResult run = train::run_training(task, train::Strategy::OverRuntime,
                                               tcfg, lora, scfg, plans);
    std::int64_t dense_total = 0;
    std::int64_t add_total = 0;
    train::Model fresh = train::make_model(task, lora);
    for (const auto& id : fresh.slot_ids) {
        const auto& slot = fresh.slots.at(id);
        dense_total += slot.rows * slot.cols;
        add_total += mpo::budget(plans.plan_for(slot.rows, slot.cols)).n_add;
    }
    for (const auto& id : run.model.slot_ids)
        CHECK(run.model.slots.at(id).form == adapters::SlotForm::Factored);
    // non-decreasing trainable trace ending at dense + sum of n_add
    for (std::size_t i = 1; i < run.metrics.size(); ++i)
        CHECK(run.metrics[i].trainable >= run.metrics[i - 1].trainable);
    CHECK(run.metrics.back().trainable == dense_total + add_total);
    CHECK(run.ledger.quotas_filled(scfg.top_n));
}

TEST_CASE("over-runtime with top_n = 0 degenerates to vanilla lora") {
    train::TaskConfig tc;
    tc.blocks = 2;
    tc.hidden = 8;
    tc.train_samples = 64;
    tc.eval_samples = 16;
    train::SyntheticTask task = train::make_task(tc, 13);
    adapters::LoraConfig lora{2, 4.0, 13};
    train::TrainConfig tcfg;
    tcfg.steps = 40;
    tcfg.eval_every = 10;
    tcfg.batch_size = 8;
    selection::SelectionConfig scfg;
    scfg.top_n = 0;
    train::MpoPlanSpec plans;
    train::RunResult rt = train::run_training(task, train::Strategy::OverRuntime,
                                              tcfg, lora, scfg, plans);
    train::RunResult lo = train::run_training(task, train::Strategy::Lora, tcfg,
                                              lora, scfg, plans);
    CHECK(train::metrics_to_jsonl(rt.metrics) == train::metrics_to_jsonl(lo.metrics));
}
