// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mpo_over/mpo.hpp"
#include "mpo_over/rng.hpp"
#include "test_util.hpp"

using namespace mpo_over;
using namespace mpo_over::mpo;
using test_util::random_matrix;

namespace {

// Brute-force bond dimension: min of the two unfolding sizes, computed
// independently of full_bond_dims.
std::int64_t brute_bond(const std::vector<std::int64_t>& in,
                        const std::vector<std::int64_t>& out, std::size_t k) {
    long double left = 1, right = 1;
    for (std::size_t p = 0; p < k; ++p) left *= static_cast<long double>(in[p] * out[p]);
    for (std::size_t p = k; p < in.size(); ++p)
        right *= static_cast<long double>(in[p] * out[p]);
    return static_cast<std::int64_t>(left < right ? left : right);
}

}  // namespace

TEST_CASE("plan_shapes bond dims for the 768x8 split") {
    MpoShapePlan plan = plan_shapes(768, 8, {24, 32}, {2, 4});
    CHECK(plan.bond_dims == std::vector<std::int64_t>{1, 48, 1});
    CHECK_FALSE(plan.truncated());

    BudgetReport rep = budget(plan);
    CHECK(rep.n_params_chain == 8448);
    CHECK(rep.n_params_dense == 6144);
    CHECK(rep.n_add == 2304);
}

TEST_CASE("plan_shapes degenerate single factor") {
    MpoShapePlan plan = plan_shapes(5, 7, {5}, {7});
    CHECK(plan.bond_dims == std::vector<std::int64_t>{1, 1});
    CHECK(budget(plan).n_add == 0);
}

TEST_CASE("plan_shapes accepts the 9-factor 4096x8 split") {
    MpoShapePlan plan = plan_shapes(4096, 8, {64, 1, 1, 1, 1, 1, 1, 1, 64},
                                    {2, 1, 1, 1, 1, 1, 1, 1, 4});
    REQUIRE(plan.bond_dims.size() == 10);
    CHECK(plan.bond_dims.front() == 1);
    CHECK(plan.bond_dims.back() == 1);
    for (std::size_t k = 1; k < 9; ++k) CHECK(plan.bond_dims[k] == 128);
    // chain params: 128*128 + 7 * 128*128 + 256*128
    CHECK(budget(plan).n_params_chain == 16384 + 7 * 16384 + 32768);
}

TEST_CASE("plan_shapes errors") {
    CHECK_THROWS_AS(plan_shapes(6, 4, {4, 2}, {2, 2}), FactorProductMismatch);
    CHECK_THROWS_AS(plan_shapes(4, 4, {2, 2}, {2}), FactorProductMismatch);
    CHECK_THROWS_AS(plan_shapes(4, 4, {2, 2}, {2, 2},
                                std::vector<std::int64_t>{0}),
                    BadBondCap);
}

TEST_CASE("bond formula matches brute force on random factorizations") {
    RngStream rng(101, "test.bonds");
    for (int it = 0; it < 500; ++it) {
        const std::size_t m = 1 + rng.next_index(5);
        std::vector<std::int64_t> in(m), out(m);
        std::int64_t rows = 1, cols = 1;
        for (std::size_t k = 0; k < m; ++k) {
            in[k] = 1 + static_cast<std::int64_t>(rng.next_index(6));
            out[k] = 1 + static_cast<std::int64_t>(rng.next_index(6));
            rows *= in[k];
            cols *= out[k];
        }
        MpoShapePlan plan = plan_shapes(rows, cols, in, out);
        for (std::size_t k = 0; k < plan.bond_dims.size(); ++k)
            CHECK(plan.bond_dims[k] == brute_bond(in, out, k));
        // non-decreasing then non-increasing along the chain
        std::size_t peak = 0;
        for (std::size_t k = 1; k < plan.bond_dims.size(); ++k)
            if (plan.bond_dims[k] >= plan.bond_dims[peak]) peak = k;
        for (std::size_t k = 1; k <= peak; ++k)
            CHECK(plan.bond_dims[k] >= plan.bond_dims[k - 1]);
        for (std::size_t k = peak + 1; k < plan.bond_dims.size(); ++k)
            CHECK(plan.bond_dims[k] <= plan.bond_dims[k - 1]);
    }
}

TEST_CASE("auto_plan balances factors and pads with ones") {
    MpoShapePlan p2 = auto_plan(768, 8, 2);
    CHECK(p2.in_dims == std::vector<std::int64_t>{24, 32});
    CHECK(p2.out_dims == std::vector<std::int64_t>{2, 4});

    MpoShapePlan p1 = auto_plan(17, 3, 1);
    CHECK(p1.in_dims == std::vector<std::int64_t>{17});

    MpoShapePlan p5 = auto_plan(8, 4, 5);
    CHECK(checked_product(p5.in_dims) == 8);
    CHECK(checked_product(p5.out_dims) == 4);
    CHECK(p5.in_dims.size() == 5);
    // ones in the middle, larger factors at the ends
    CHECK(p5.in_dims[2] == 1);

    MpoShapePlan p11008 = auto_plan(11008, 8, 2);
    CHECK(p11008.in_dims == std::vector<std::int64_t>{86, 128});
}

TEST_CASE("decompose of a zero matrix yields all-zero factors") {
    MpoShapePlan plan = plan_shapes(4, 4, {2, 2}, {2, 2});
    MpoChain chain = decompose(DenseTensor({4, 4}), plan);
    REQUIRE(chain.factors.size() == 2);
    for (const auto& f : chain.factors) CHECK(f.all_zero());
    for (double e : chain.truncation_errors) CHECK(e == 0.0);
    CHECK(contract(chain).all_zero());
}

TEST_CASE("decompose 4x4 round trip and stored-value count") {
    RngStream rng(103, "test.decomp44");
    MpoShapePlan plan = plan_shapes(4, 4, {2, 2}, {2, 2});
    CHECK(plan.bond_dims == std::vector<std::int64_t>{1, 4, 1});
    DenseTensor w = random_matrix(4, 4, rng);
    MpoChain chain = decompose(w, plan);
    CHECK(chain.stored_values() == 32);
    CHECK(budget(plan).n_params_chain == 32);
    CHECK(budget(plan).n_add == 16);
    CHECK(rel_fro_error(contract(chain), w) <= 1e-10);
    for (double e : chain.truncation_errors)
        CHECK(e <= 1e-12 * frobenius_norm(w));
}

TEST_CASE("structured rank-1 matrix survives bond-1 truncation") {
    // Bond 1 represents Kronecker-factorable matrices under the interleaved
    // indexing, so build the outer product from Kronecker-structured vectors:
    // u = a (x) b, v = c (x) d gives u v^T = (a c^T) (x) (b d^T).
    RngStream rng(107, "test.rank1");
    DenseTensor a = random_matrix(2, 1, rng);
    DenseTensor b = random_matrix(4, 1, rng);
    DenseTensor c = random_matrix(1, 2, rng);
    DenseTensor d = random_matrix(1, 4, rng);
    DenseTensor u({8, 1});
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 4; ++j)
            u(i * 4 + j, 0) = a(i, 0) * b(j, 0);
    DenseTensor v({1, 8});
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 4; ++j)
            v(0, i * 4 + j) = c(0, i) * d(0, j);
    DenseTensor w = matmul(u, v);
    MpoShapePlan plan = plan_shapes(8, 8, {2, 4}, {2, 4},
                                    std::vector<std::int64_t>{1});  // cap d_1 = 1
    CHECK(plan.truncated());
    MpoChain chain = decompose(w, plan);
    CHECK(chain.truncation_errors[0] <= 1e-12 * frobenius_norm(w));
    CHECK(rel_fro_error(contract(chain), w) <= 1e-9);
}

TEST_CASE("contract of a single-factor chain is the stored matrix") {
    RngStream rng(109, "test.single");
    DenseTensor w = random_matrix(6, 5, rng);
    MpoShapePlan plan = plan_shapes(6, 5, {6}, {5});
    MpoChain chain = decompose(w, plan);
    CHECK(test_util::bit_equal(contract(chain), w));
}

TEST_CASE("hand-built identity-block chain contracts to the identity") {
    MpoShapePlan plan = plan_shapes(4, 4, {2, 2}, {2, 2});
    MpoChain chain;
    chain.plan = plan;
    chain.truncation_errors = {0.0, 0.0};
    DenseTensor t1({1, 2, 2, 4});
    // slice at bond 0 holds I2, other bonds zero
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 2; ++j)
            t1.data()[static_cast<std::size_t>((i * 2 + j) * 4 + 0)] =
                (i == j) ? 1.0 : 0.0;
    DenseTensor t2({4, 2, 2, 1});
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 2; ++j)
            t2.data()[static_cast<std::size_t>(0 * 4 + i * 2 + j)] =
                (i == j) ? 1.0 : 0.0;
    chain.factors = {t1, t2};
    CHECK(test_util::max_abs_diff(contract(chain), DenseTensor::identity(4)) == 0.0);
}

TEST_CASE("round trip across shapes and chain lengths") {
    RngStream rng(113, "test.roundtrip");
    const std::vector<std::pair<std::int64_t, std::int64_t>> shapes = {
        {768, 8}, {8, 768}, {64, 64}};
    for (auto [rows, cols] : shapes) {
        for (std::int64_t m : {1, 2, 3}) {
            MpoShapePlan plan = auto_plan(rows, cols, m);
            for (int it = 0; it < 3; ++it) {
                DenseTensor w = random_matrix(rows, cols, rng);
                MpoChain chain = decompose(w, plan);
                CHECK(rel_fro_error(contract(chain), w) <= 1e-10);
            }
        }
    }
}

TEST_CASE("contract-decompose is elementwise identity on integer matrices") {
    RngStream rng(127, "test.intperm");
    MpoShapePlan plan = plan_shapes(12, 6, {3, 4}, {2, 3});
    DenseTensor w({12, 6});
    for (auto& v : w.data()) v = static_cast<double>(rng.next_index(17)) - 8.0;
    MpoChain chain = decompose(w, plan);
    DenseTensor back = contract(chain);
    for (std::int64_t i = 0; i < w.size(); ++i) {
        const double r = std::round(back.data()[static_cast<std::size_t>(i)]);
        CHECK(r == w.data()[static_cast<std::size_t>(i)]);
        CHECK(std::abs(back.data()[static_cast<std::size_t>(i)] - r) <= 1e-9);
    }
}

TEST_CASE("error bound: eps {3,4} gives 5 and truncated chains stay within it") {
    MpoChain fake;
    fake.truncation_errors = {3.0, 4.0};
    CHECK(error_bound(fake) == doctest::Approx(5.0).epsilon(1e-15));

    RngStream rng(131, "test.bound");
    int checked = 0;
    for (int it = 0; it < 100; ++it) {
        const std::int64_t rows = 8 * (1 + static_cast<std::int64_t>(rng.next_index(4)));
        const std::int64_t cols = 4 * (1 + static_cast<std::int64_t>(rng.next_index(6)));
        const std::int64_t m = 2 + static_cast<std::int64_t>(rng.next_index(2));
        MpoShapePlan full = auto_plan(rows, cols, m);
        // random caps with at least one bond strictly truncated, so the
        // bound is driven by real discarded energy rather than roundoff
        std::vector<std::int64_t> caps;
        for (std::size_t k = 1; k + 1 < full.bond_dims.size(); ++k)
            caps.push_back(1 + static_cast<std::int64_t>(
                                   rng.next_index(static_cast<std::uint64_t>(full.bond_dims[k]))));
        caps[0] = std::max<std::int64_t>(1, std::min(caps[0], full.bond_dims[1] - 1));
        MpoShapePlan plan = plan_shapes(rows, cols, full.in_dims, full.out_dims, caps);
        REQUIRE(plan.truncated());
        DenseTensor w = random_matrix(rows, cols, rng);
        MpoChain chain = decompose(w, plan);
        const double measured = frobenius_norm(sub(contract(chain), w));
        CHECK(measured <= error_bound(chain) * (1.0 + 1e-8));
        ++checked;
    }
    CHECK(checked == 100);
}

TEST_CASE("budget equals stored floats for random plans") {
    RngStream rng(137, "test.budget");
    for (int it = 0; it < 20; ++it) {
        const std::int64_t rows = 2 + static_cast<std::int64_t>(rng.next_index(30));
        const std::int64_t cols = 2 + static_cast<std::int64_t>(rng.next_index(30));
        const std::int64_t m = 1 + static_cast<std::int64_t>(rng.next_index(3));
        MpoShapePlan plan = auto_plan(rows, cols, m);
        DenseTensor w = random_matrix(rows, cols, rng);
        MpoChain chain = decompose(w, plan);
        CHECK(chain.stored_values() == budget(plan).n_params_chain);
        if (m >= 2) CHECK(budget(plan).n_add >= 0);
    }
}

TEST_CASE("decompose validates the input shape") {
    MpoShapePlan plan = plan_shapes(4, 4, {2, 2}, {2, 2});
    CHECK_THROWS_AS(decompose(DenseTensor({4, 5}), plan), ShapeMismatch);
}

TEST_CASE("chain directory round trip") {
    const std::string dir =
        std::filesystem::temp_directory_path() / "mpo_over_test_chain";
    RngStream rng(139, "test.chainio");
    DenseTensor w = random_matrix(12, 8, rng);
    MpoShapePlan plan = auto_plan(12, 8, 3);
    MpoChain chain = decompose(w, plan);
    write_chain(dir, chain);
    MpoChain back = read_chain(dir);
    CHECK(back.plan.in_dims == chain.plan.in_dims);
    CHECK(back.plan.bond_dims == chain.plan.bond_dims);
    REQUIRE(back.factors.size() == chain.factors.size());
    for (std::size_t k = 0; k < back.factors.size(); ++k)
        CHECK(test_util::bit_equal(back.factors[k], chain.factors[k]));
    CHECK(test_util::bit_equal(contract(back), contract(chain)));
}
