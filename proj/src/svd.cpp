// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
//
// One-sided Jacobi SVD. Rotations orthogonalize column pairs of the working
// matrix; the accumulated rotations form V and the normalized columns form U.
// Column dots go through the fixed-order reduction kernel, so results do not
// depend on the thread count.
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mpo_over/kernels.hpp"
#include "mpo_over/tensor.hpp"

namespace mpo_over {

namespace {

constexpr double kPairTol = 1e-12;  // relative off-diagonal threshold
constexpr int kMaxSweeps = 100;

// Column-major factorization state for an R x C matrix, R >= C.
struct Jacobi {
    std::int64_t r = 0, c = 0;
    std::vector<double> a;  // R x C, column j at a[j * r]
    std::vector<double> v;  // C x C, column j at v[j * c]
    std::vector<double> sigma;

    double* col(std::int64_t j) { return a.data() + j * r; }
    double* vcol(std::int64_t j) { return v.data() + j * c; }
};

void rotate(double* x, double* y, std::int64_t n, double cs, double sn) {
    for (std::int64_t i = 0; i < n; ++i) {
        const double xi = x[i];
        const double yi = y[i];
        x[i] = cs * xi - sn * yi;
        y[i] = sn * xi + cs * yi;
    }
}

void one_sided_jacobi(Jacobi& j) {
    const std::int64_t r = j.r;
    const std::int64_t c = j.c;
    // Column squared norms are refreshed once per sweep and maintained
    // through rotations via alpha' = alpha - t*gamma, beta' = beta + t*gamma,
    // which is exact for the annihilating tangent t.
    std::vector<double> sq(static_cast<std::size_t>(c));
    for (int sweep = 0;; ++sweep) {
        if (sweep >= kMaxSweeps)
            throw DidNotConverge("jacobi svd: no convergence after " +
                                 std::to_string(kMaxSweeps) + " sweeps");
        for (std::int64_t jj = 0; jj < c; ++jj)
            sq[static_cast<std::size_t>(jj)] =
                kernels::dot(j.col(jj), j.col(jj), r);
        bool rotated = false;
        for (std::int64_t p = 0; p < c - 1; ++p) {
            for (std::int64_t q = p + 1; q < c; ++q) {
                const double alpha = sq[static_cast<std::size_t>(p)];
                const double beta = sq[static_cast<std::size_t>(q)];
                if (alpha <= 0.0 || beta <= 0.0) continue;
                double* ap = j.col(p);
                double* aq = j.col(q);
                const double gamma = kernels::dot(ap, aq, r);
                if (std::abs(gamma) <= kPairTol * std::sqrt(alpha * beta)) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t =
                    (zeta >= 0.0 ? 1.0 : -1.0) /
                    (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                rotate(ap, aq, r, cs, sn);
                rotate(j.vcol(p), j.vcol(q), c, cs, sn);
                sq[static_cast<std::size_t>(p)] = alpha - t * gamma;
                sq[static_cast<std::size_t>(q)] = beta + t * gamma;
                rotated = true;
            }
        }
        if (!rotated) break;
    }
    j.sigma.resize(static_cast<std::size_t>(c));
    for (std::int64_t jj = 0; jj < c; ++jj)
        j.sigma[static_cast<std::size_t>(jj)] =
            std::sqrt(kernels::dot(j.col(jj), j.col(jj), r));
}

// Orthonormal fill for a zero column: canonical basis vector orthogonalized
// against the columns already emitted.
void fill_orthonormal(std::vector<double>& u, std::int64_t p, std::int64_t filled,
                      double* out) {
    for (std::int64_t cand = 0; cand < p; ++cand) {
        std::vector<double> w(static_cast<std::size_t>(p), 0.0);
        w[static_cast<std::size_t>(cand)] = 1.0;
        for (std::int64_t l = 0; l < filled; ++l) {
            const double* ul = u.data() + l * p;
            const double proj = kernels::dot(ul, w.data(), p);
            for (std::int64_t i = 0; i < p; ++i) w[static_cast<std::size_t>(i)] -= proj * ul[i];
        }
        const double nrm = std::sqrt(kernels::dot(w.data(), w.data(), p));
        if (nrm > 0.5) {
            for (std::int64_t i = 0; i < p; ++i)
                out[i] = w[static_cast<std::size_t>(i)] / nrm;
            return;
        }
    }
    throw DidNotConverge("svd: failed to complete orthonormal basis");
}

}  // namespace

SvdResult svd_truncated(const DenseTensor& m, std::int64_t keep) {
    if (!m.is_matrix()) throw ShapeMismatch("svd: input must be 2-d");
    if (!m.all_finite()) throw NonFinite("svd: input has NaN or Inf");
    const std::int64_t p = m.rows();
    const std::int64_t q = m.cols();
    if (keep < 1 || keep > std::min(p, q))
        throw InvalidInput("svd: keep must be in [1, min(rows, cols)]");

    const bool flipped = p < q;  // work on the transpose so rows >= cols
    Jacobi j;
    j.r = flipped ? q : p;
    j.c = flipped ? p : q;
    j.a.assign(static_cast<std::size_t>(j.r * j.c), 0.0);
    for (std::int64_t i = 0; i < p; ++i)
        for (std::int64_t jj = 0; jj < q; ++jj) {
            const double val = m(i, jj);
            if (flipped)
                j.a[static_cast<std::size_t>(i * j.r + jj)] = val;  // col i, row jj
            else
                j.a[static_cast<std::size_t>(jj * j.r + i)] = val;  // col jj, row i
        }
    j.v.assign(static_cast<std::size_t>(j.c * j.c), 0.0);
    for (std::int64_t jj = 0; jj < j.c; ++jj)
        j.v[static_cast<std::size_t>(jj * j.c + jj)] = 1.0;

    one_sided_jacobi(j);

    // Sort singular values descending; stable so ties keep sweep order.
    std::vector<std::int64_t> order(static_cast<std::size_t>(j.c));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t x, std::int64_t y) {
        return j.sigma[static_cast<std::size_t>(x)] > j.sigma[static_cast<std::size_t>(y)];
    });

    double discarded = 0.0;
    for (std::int64_t rank = keep; rank < j.c; ++rank) {
        const double s = j.sigma[static_cast<std::size_t>(order[static_cast<std::size_t>(rank)])];
        discarded += s * s;
    }

    // left vectors = normalized working columns, right vectors = V columns
    std::vector<double> left(static_cast<std::size_t>(j.r * keep), 0.0);
    std::vector<double> right(static_cast<std::size_t>(j.c * keep), 0.0);
    std::vector<double> sig(static_cast<std::size_t>(keep), 0.0);
    for (std::int64_t l = 0; l < keep; ++l) {
        const std::int64_t src = order[static_cast<std::size_t>(l)];
        const double s = j.sigma[static_cast<std::size_t>(src)];
        sig[static_cast<std::size_t>(l)] = s;
        double* lcol = left.data() + l * j.r;
        if (s == 0.0) {
            fill_orthonormal(left, j.r, l, lcol);
        } else {
            const double* acol = j.col(src);
            for (std::int64_t i = 0; i < j.r; ++i) lcol[i] = acol[i] / s;
        }
        const double* vc = j.vcol(src);
        std::copy(vc, vc + j.c, right.data() + l * j.c);
    }

    // Assemble u (p x keep) and vt (keep x q) in the original orientation.
    DenseTensor u({p, keep});
    DenseTensor vt({keep, q});
    if (!flipped) {
        for (std::int64_t l = 0; l < keep; ++l) {
            for (std::int64_t i = 0; i < p; ++i)
                u(i, l) = left[static_cast<std::size_t>(l * j.r + i)];
            for (std::int64_t jj = 0; jj < q; ++jj)
                vt(l, jj) = right[static_cast<std::size_t>(l * j.c + jj)];
        }
    } else {
        // m = (u' s v'^T)^T = v' s u'^T
        for (std::int64_t l = 0; l < keep; ++l) {
            for (std::int64_t i = 0; i < p; ++i)
                u(i, l) = right[static_cast<std::size_t>(l * j.c + i)];
            for (std::int64_t jj = 0; jj < q; ++jj)
                vt(l, jj) = left[static_cast<std::size_t>(l * j.r + jj)];
        }
    }

    // Sign convention: first nonzero entry of each left singular vector > 0.
    for (std::int64_t l = 0; l < keep; ++l) {
        double lead = 0.0;
        for (std::int64_t i = 0; i < p; ++i) {
            if (u(i, l) != 0.0) {
                lead = u(i, l);
                break;
            }
        }
        if (lead < 0.0) {
            for (std::int64_t i = 0; i < p; ++i) u(i, l) = -u(i, l);
            for (std::int64_t jj = 0; jj < q; ++jj) vt(l, jj) = -vt(l, jj);
        }
    }

    return SvdResult{std::move(u), std::move(sig), std::move(vt), discarded};
}

}  // namespace mpo_over
