// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mpo_over/tensor.hpp"

namespace mpo_over::mpo {

// Factorization layout for a rows x cols matrix into m local tensors.
// in_dims i_k multiply to rows, out_dims j_k multiply to cols, and
// bond_dims d_0..d_m link adjacent factors (d_0 = d_m = 1). Untruncated
// bonds are d_k = min(prod_{p<=k} i_p*j_p, prod_{p>k} i_p*j_p); caps may
// only lower them.
struct MpoShapePlan {
    std::vector<std::int64_t> in_dims;
    std::vector<std::int64_t> out_dims;
    std::vector<std::int64_t> bond_dims;

    std::int64_t factor_count() const {
        return static_cast<std::int64_t>(in_dims.size());
    }
    std::int64_t rows() const { return checked_product(in_dims); }
    std::int64_t cols() const { return checked_product(out_dims); }
    bool truncated() const;
};

// Untruncated bond dimensions for the given factor lists.
std::vector<std::int64_t> full_bond_dims(const std::vector<std::int64_t>& in_dims,
                                         const std::vector<std::int64_t>& out_dims);

MpoShapePlan plan_shapes(
    std::int64_t rows, std::int64_t cols, std::vector<std::int64_t> in_dims,
    std::vector<std::int64_t> out_dims,
    const std::optional<std::vector<std::int64_t>>& bond_caps = std::nullopt);

// Balanced greedy prime split of rows and cols into m factors each, padded
// with 1s when primes run out; larger factors placed toward the ends.
MpoShapePlan auto_plan(std::int64_t rows, std::int64_t cols, std::int64_t m);

// Chain of m 4th-order factors T_k[d_{k-1}, i_k, j_k, d_k] plus the
// per-step truncation errors eps_k (always stored, zero when lossless).
struct MpoChain {
    MpoShapePlan plan;
    std::vector<DenseTensor> factors;
    std::vector<double> truncation_errors;

    std::int64_t stored_values() const;
};

// Iterative reshape + truncated SVD down the chain. The matrix is first
// permuted from (i_1..i_m, j_1..j_m) index order into interleaved
// ((i_1 j_1), .., (i_m j_m)) order so each step exposes its own index pair.
MpoChain decompose(const DenseTensor& w, const MpoShapePlan& plan);

// Sequential contraction; inverse of decompose for untruncated plans.
DenseTensor contract(const MpoChain& chain);

// sqrt(sum eps_k^2): upper bound on ||W - contract(chain)||_F.
double error_bound(const MpoChain& chain);

struct BudgetReport {
    std::int64_t n_params_chain = 0;  // sum_k i_k j_k d_{k-1} d_k
    std::int64_t n_params_dense = 0;  // prod_k i_k j_k
    std::int64_t n_add = 0;           // chain - dense
};

BudgetReport budget(const MpoShapePlan& plan);

// Gradients of a scalar objective with respect to each factor, given the
// gradient with respect to the contracted matrix.
std::vector<DenseTensor> contract_backward(const MpoShapePlan& plan,
                                           const std::vector<DenseTensor>& factors,
                                           const DenseTensor& out_grad);

// Chain directory: plan.json + factor_1.mpot .. factor_m.mpot.
void write_chain(const std::string& dir, const MpoChain& chain);
MpoChain read_chain(const std::string& dir);

}  // namespace mpo_over::mpo
