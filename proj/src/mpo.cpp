// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include "mpo_over/mpo.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace mpo_over::mpo {

namespace {

using json = nlohmann::json;

void validate_factor_lists(std::int64_t rows, std::int64_t cols,
                           const std::vector<std::int64_t>& in_dims,
                           const std::vector<std::int64_t>& out_dims) {
    if (in_dims.empty() || in_dims.size() != out_dims.size())
        throw FactorProductMismatch("plan: factor lists must be non-empty and equal length");
    for (std::int64_t v : in_dims)
        if (v < 1) throw FactorProductMismatch("plan: factors must be >= 1");
    for (std::int64_t v : out_dims)
        if (v < 1) throw FactorProductMismatch("plan: factors must be >= 1");
    if (checked_product(in_dims) != rows)
        throw FactorProductMismatch("plan: row factors multiply to " +
                                    std::to_string(checked_product(in_dims)) +
                                    ", expected " + std::to_string(rows));
    if (checked_product(out_dims) != cols)
        throw FactorProductMismatch("plan: col factors multiply to " +
                                    std::to_string(checked_product(out_dims)) +
                                    ", expected " + std::to_string(cols));
}

// Permutation taking (i_1..i_m, j_1..j_m) axis order to
// ((i_1,j_1), (i_2,j_2), ..) and its inverse.
std::vector<int> interleave_perm(std::int64_t m) {
    std::vector<int> perm(static_cast<std::size_t>(2 * m));
    for (std::int64_t k = 0; k < m; ++k) {
        perm[static_cast<std::size_t>(2 * k)] = static_cast<int>(k);
        perm[static_cast<std::size_t>(2 * k + 1)] = static_cast<int>(m + k);
    }
    return perm;
}

std::vector<int> invert_perm(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i)
        inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
    return inv;
}

std::vector<std::int64_t> split_axes(const MpoShapePlan& plan) {
    std::vector<std::int64_t> axes;
    axes.insert(axes.end(), plan.in_dims.begin(), plan.in_dims.end());
    axes.insert(axes.end(), plan.out_dims.begin(), plan.out_dims.end());
    return axes;
}

// w[rows, cols] -> [i_1*j_1, rest] in interleaved index order.
DenseTensor interleave(const DenseTensor& w, const MpoShapePlan& plan) {
    const std::int64_t m = plan.factor_count();
    DenseTensor t = reshape(w, split_axes(plan));
    t = permute_axes(t, interleave_perm(m));
    return reshape(t, {plan.in_dims[0] * plan.out_dims[0], -1});
}

// Inverse: flat interleaved data -> [rows, cols].
DenseTensor deinterleave(const DenseTensor& flat, const MpoShapePlan& plan) {
    const std::int64_t m = plan.factor_count();
    std::vector<std::int64_t> inter_axes(static_cast<std::size_t>(2 * m));
    for (std::int64_t k = 0; k < m; ++k) {
        inter_axes[static_cast<std::size_t>(2 * k)] = plan.in_dims[static_cast<std::size_t>(k)];
        inter_axes[static_cast<std::size_t>(2 * k + 1)] = plan.out_dims[static_cast<std::size_t>(k)];
    }
    DenseTensor t = reshape(flat, inter_axes);
    t = permute_axes(t, invert_perm(interleave_perm(m)));
    return reshape(t, {plan.rows(), plan.cols()});
}

// lambda * vt as a [keep, cols] matrix
DenseTensor scaled_rows(const std::vector<double>& sigma, const DenseTensor& vt) {
    DenseTensor out(vt.dims());
    for (std::int64_t i = 0; i < vt.rows(); ++i)
        for (std::int64_t j = 0; j < vt.cols(); ++j)
            out(i, j) = sigma[static_cast<std::size_t>(i)] * vt(i, j);
    return out;
}

std::vector<std::int64_t> prime_factors(std::int64_t n) {
    std::vector<std::int64_t> primes;
    for (std::int64_t p = 2; p * p <= n; ++p) {
        while (n % p == 0) {
            primes.push_back(p);
            n /= p;
        }
    }
    if (n > 1) primes.push_back(n);
    return primes;
}

// Greedy balanced split of n into m factors, larger factors at the ends.
std::vector<std::int64_t> balanced_factors(std::int64_t n, std::int64_t m) {
    std::vector<std::int64_t> primes = prime_factors(n);
    std::sort(primes.rbegin(), primes.rend());
    std::vector<std::int64_t> buckets(static_cast<std::size_t>(m), 1);
    for (std::int64_t p : primes) {
        auto it = std::min_element(buckets.begin(), buckets.end());
        *it *= p;
    }
    std::sort(buckets.rbegin(), buckets.rend());
    // largest to the back, next to the front, alternating inward
    std::vector<std::int64_t> arranged(static_cast<std::size_t>(m), 1);
    std::int64_t front = 0, back = m - 1;
    bool to_back = true;
    for (std::int64_t f : buckets) {
        if (to_back)
            arranged[static_cast<std::size_t>(back--)] = f;
        else
            arranged[static_cast<std::size_t>(front++)] = f;
        to_back = !to_back;
    }
    return arranged;
}

void validate_chain(const MpoChain& chain) {
    const auto& plan = chain.plan;
    const std::int64_t m = plan.factor_count();
    if (static_cast<std::int64_t>(chain.factors.size()) != m)
        throw PlanMismatch("chain: factor count differs from plan");
    if (static_cast<std::int64_t>(chain.truncation_errors.size()) != m)
        throw PlanMismatch("chain: truncation error count differs from plan");
    for (std::int64_t k = 0; k < m; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        const std::vector<std::int64_t> want = {
            plan.bond_dims[uk], plan.in_dims[uk], plan.out_dims[uk],
            plan.bond_dims[uk + 1]};
        if (chain.factors[uk].dims() != want)
            throw PlanMismatch("chain: factor " + std::to_string(k + 1) +
                               " dims differ from plan");
    }
}

}  // namespace

bool MpoShapePlan::truncated() const {
    return bond_dims != full_bond_dims(in_dims, out_dims);
}

std::vector<std::int64_t> full_bond_dims(const std::vector<std::int64_t>& in_dims,
                                         const std::vector<std::int64_t>& out_dims) {
    const std::int64_t m = static_cast<std::int64_t>(in_dims.size());
    std::vector<std::int64_t> bonds(static_cast<std::size_t>(m + 1), 1);
    for (std::int64_t k = 1; k < m; ++k) {
        // min of the two unfolding sizes around bond k; products can be huge,
        // so stop multiplying once both sides pass the other's value
        unsigned __int128 left = 1, right = 1;
        for (std::int64_t p = 0; p < k; ++p)
            left *= static_cast<unsigned __int128>(in_dims[static_cast<std::size_t>(p)] *
                                                   out_dims[static_cast<std::size_t>(p)]);
        for (std::int64_t p = k; p < m; ++p)
            right *= static_cast<unsigned __int128>(in_dims[static_cast<std::size_t>(p)] *
                                                    out_dims[static_cast<std::size_t>(p)]);
        const unsigned __int128 d = left < right ? left : right;
        bonds[static_cast<std::size_t>(k)] = static_cast<std::int64_t>(d);
    }
    return bonds;
}

MpoShapePlan plan_shapes(std::int64_t rows, std::int64_t cols,
                         std::vector<std::int64_t> in_dims,
                         std::vector<std::int64_t> out_dims,
                         const std::optional<std::vector<std::int64_t>>& bond_caps) {
    validate_factor_lists(rows, cols, in_dims, out_dims);
    MpoShapePlan plan;
    plan.in_dims = std::move(in_dims);
    plan.out_dims = std::move(out_dims);
    plan.bond_dims = full_bond_dims(plan.in_dims, plan.out_dims);
    if (bond_caps) {
        const std::int64_t m = plan.factor_count();
        const auto& caps = *bond_caps;
        const bool inner_only = static_cast<std::int64_t>(caps.size()) == m - 1;
        if (!inner_only && static_cast<std::int64_t>(caps.size()) != m + 1)
            throw BadBondCap("plan: bond cap list must cover inner bonds or all bonds");
        for (std::int64_t k = 1; k < m; ++k) {
            const std::int64_t cap =
                inner_only ? caps[static_cast<std::size_t>(k - 1)]
                           : caps[static_cast<std::size_t>(k)];
            if (cap < 1) throw BadBondCap("plan: bond caps must be >= 1");
            auto& d = plan.bond_dims[static_cast<std::size_t>(k)];
            d = std::min(d, cap);
        }
        // A truncated bond limits the rank reachable downstream; clamp so
        // every step of a decomposition can actually emit its planned bond.
        for (std::int64_t k = 1; k < m; ++k) {
            const auto uk = static_cast<std::size_t>(k);
            plan.bond_dims[uk] =
                std::min(plan.bond_dims[uk], plan.bond_dims[uk - 1] *
                                                 plan.in_dims[uk - 1] *
                                                 plan.out_dims[uk - 1]);
        }
    }
    return plan;
}

MpoShapePlan auto_plan(std::int64_t rows, std::int64_t cols, std::int64_t m) {
    if (m < 1) throw InvalidInput("auto_plan: m must be >= 1");
    if (rows < 1 || cols < 1) throw InvalidInput("auto_plan: matrix dims must be >= 1");
    return plan_shapes(rows, cols, balanced_factors(rows, m),
                       balanced_factors(cols, m));
}

std::int64_t MpoChain::stored_values() const {
    std::int64_t n = 0;
    for (const auto& f : factors) n += f.size();
    return n;
}

MpoChain decompose(const DenseTensor& w, const MpoShapePlan& plan) {
    if (!w.is_matrix()) throw ShapeMismatch("decompose: input must be 2-d");
    if (w.rows() != plan.rows() || w.cols() != plan.cols())
        throw ShapeMismatch("decompose: matrix is " + std::to_string(w.rows()) + "x" +
                            std::to_string(w.cols()) + ", plan wants " +
                            std::to_string(plan.rows()) + "x" +
                            std::to_string(plan.cols()));

    const std::int64_t m = plan.factor_count();
    MpoChain chain;
    chain.plan = plan;
    chain.factors.reserve(static_cast<std::size_t>(m));
    chain.truncation_errors.assign(static_cast<std::size_t>(m), 0.0);

    // cur holds [d_{k-1} * i_k * j_k, remaining] in interleaved order
    DenseTensor cur = interleave(w, plan);
    for (std::int64_t k = 0; k + 1 < m; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        const std::int64_t d_prev = plan.bond_dims[uk];
        const std::int64_t d_next = plan.bond_dims[uk + 1];
        const std::int64_t ij_next =
            plan.in_dims[uk + 1] * plan.out_dims[uk + 1];
        if (cur.all_zero()) {
            // zero remainder: emit zero factors, keep the product exactly zero
            chain.factors.push_back(DenseTensor(
                {d_prev, plan.in_dims[uk], plan.out_dims[uk], d_next}));
            cur = DenseTensor({d_next * ij_next, cur.cols() / ij_next});
            continue;
        }
        SvdResult svd = svd_truncated(cur, d_next);
        chain.factors.push_back(reshape(
            svd.u, {d_prev, plan.in_dims[uk], plan.out_dims[uk], d_next}));
        chain.truncation_errors[uk] = std::sqrt(svd.discarded_energy);
        cur = reshape(scaled_rows(svd.sigma, svd.vt), {d_next * ij_next, -1});
    }
    chain.factors.push_back(
        reshape(cur, {plan.bond_dims[static_cast<std::size_t>(m - 1)],
                      plan.in_dims[static_cast<std::size_t>(m - 1)],
                      plan.out_dims[static_cast<std::size_t>(m - 1)], 1}));
    return chain;
}

DenseTensor contract(const MpoChain& chain) {
    validate_chain(chain);
    const auto& plan = chain.plan;
    const std::int64_t m = plan.factor_count();
    DenseTensor cur = reshape(chain.factors[0],
                              {plan.in_dims[0] * plan.out_dims[0], plan.bond_dims[1]});
    for (std::int64_t k = 1; k < m; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        const std::int64_t ij = plan.in_dims[uk] * plan.out_dims[uk];
        DenseTensor rhs = reshape(chain.factors[uk],
                                  {plan.bond_dims[uk], ij * plan.bond_dims[uk + 1]});
        cur = reshape(matmul(cur, rhs), {cur.rows() * ij, plan.bond_dims[uk + 1]});
    }
    return deinterleave(cur, plan);
}

double error_bound(const MpoChain& chain) {
    double acc = 0.0;
    for (double e : chain.truncation_errors) acc += e * e;
    return std::sqrt(acc);
}

BudgetReport budget(const MpoShapePlan& plan) {
    BudgetReport report;
    const std::int64_t m = plan.factor_count();
    for (std::int64_t k = 0; k < m; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        report.n_params_chain += plan.in_dims[uk] * plan.out_dims[uk] *
                                 plan.bond_dims[uk] * plan.bond_dims[uk + 1];
    }
    report.n_params_dense = plan.rows() * plan.cols();
    report.n_add = report.n_params_chain - report.n_params_dense;
    return report;
}

std::vector<DenseTensor> contract_backward(const MpoShapePlan& plan,
                                           const std::vector<DenseTensor>& factors,
                                           const DenseTensor& out_grad) {
    const std::int64_t m = plan.factor_count();
    if (static_cast<std::int64_t>(factors.size()) != m)
        throw PlanMismatch("contract_backward: factor count differs from plan");
    if (out_grad.rows() != plan.rows() || out_grad.cols() != plan.cols())
        throw ShapeMismatch("contract_backward: gradient dims differ from plan");

    // G in interleaved order, flat [prod ij]
    DenseTensor g = interleave(out_grad, plan);

    // lefts[k]: [prod_{p<k} ij_p, d_{k-1}]  (0-based factor index k)
    std::vector<DenseTensor> lefts(static_cast<std::size_t>(m));
    lefts[0] = DenseTensor({1, 1}, {1.0});
    for (std::int64_t k = 1; k < m; ++k) {
        const auto up = static_cast<std::size_t>(k - 1);
        const std::int64_t ij = plan.in_dims[up] * plan.out_dims[up];
        DenseTensor rhs = reshape(factors[up],
                                  {plan.bond_dims[up], ij * plan.bond_dims[up + 1]});
        DenseTensor next = matmul(lefts[up], rhs);
        lefts[static_cast<std::size_t>(k)] =
            reshape(next, {lefts[up].rows() * ij, plan.bond_dims[up + 1]});
    }

    // rights[k]: [d_k, prod_{p>k} ij_p]
    std::vector<DenseTensor> rights(static_cast<std::size_t>(m));
    rights[static_cast<std::size_t>(m - 1)] = DenseTensor({1, 1}, {1.0});
    for (std::int64_t k = m - 2; k >= 0; --k) {
        const auto un = static_cast<std::size_t>(k + 1);
        const std::int64_t ij = plan.in_dims[un] * plan.out_dims[un];
        DenseTensor lhs = reshape(factors[un],
                                  {plan.bond_dims[un] * ij, plan.bond_dims[un + 1]});
        DenseTensor next = matmul(lhs, rights[un]);
        rights[static_cast<std::size_t>(k)] =
            reshape(next, {plan.bond_dims[un], ij * rights[un].cols()});
    }

    std::vector<DenseTensor> grads(static_cast<std::size_t>(m));
    for (std::int64_t k = 0; k < m; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        const std::int64_t ij = plan.in_dims[uk] * plan.out_dims[uk];
        const std::int64_t left_n = lefts[uk].rows();       // prod_{p<k} ij_p
        const std::int64_t right_n = rights[uk].cols();     // prod_{p>k} ij_p
        DenseTensor gview = reshape(g, {left_n, ij * right_n});
        DenseTensor lt = matmul(transpose(lefts[uk]), gview);  // [d_{k-1}, ij*right_n]
        lt = reshape(lt, {plan.bond_dims[uk] * ij, right_n});
        DenseTensor gk = matmul(lt, transpose(rights[uk]));  // [d_{k-1}*ij, d_k]
        grads[uk] = reshape(gk, {plan.bond_dims[uk], plan.in_dims[uk],
                                 plan.out_dims[uk], plan.bond_dims[uk + 1]});
    }
    return grads;
}

void write_chain(const std::string& dir, const MpoChain& chain) {
    validate_chain(chain);
    std::filesystem::create_directories(dir);
    json plan_doc = {
        {"in_dims", chain.plan.in_dims},
        {"out_dims", chain.plan.out_dims},
        {"bond_dims", chain.plan.bond_dims},
        {"truncation_errors", chain.truncation_errors},
    };
    std::ofstream f(dir + "/plan.json", std::ios::trunc);
    if (!f) throw IoError("write_chain: cannot open " + dir + "/plan.json");
    f << plan_doc.dump(2) << "\n";
    for (std::size_t k = 0; k < chain.factors.size(); ++k)
        write_mpot(dir + "/factor_" + std::to_string(k + 1) + ".mpot",
                   chain.factors[k]);
}

MpoChain read_chain(const std::string& dir) {
    std::ifstream f(dir + "/plan.json");
    if (!f) throw BadFile("read_chain: cannot open " + dir + "/plan.json");
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw BadFile("read_chain: bad plan.json: " + std::string(e.what()));
    }
    MpoChain chain;
    try {
        chain.plan.in_dims = doc.at("in_dims").get<std::vector<std::int64_t>>();
        chain.plan.out_dims = doc.at("out_dims").get<std::vector<std::int64_t>>();
        chain.plan.bond_dims = doc.at("bond_dims").get<std::vector<std::int64_t>>();
        chain.truncation_errors =
            doc.at("truncation_errors").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw BadFile("read_chain: bad plan.json: " + std::string(e.what()));
    }
    const std::int64_t m = chain.plan.factor_count();
    for (std::int64_t k = 1; k <= m; ++k)
        chain.factors.push_back(
            read_mpot(dir + "/factor_" + std::to_string(k) + ".mpot"));
    validate_chain(chain);
    return chain;
}

}  // namespace mpo_over::mpo
