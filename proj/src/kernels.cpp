// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include "mpo_over/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <vector>

namespace mpo_over::kernels {

namespace {

// Reduction block size. Fixed so the summation tree never depends on the
// thread count.
constexpr std::int64_t kBlock = 1024;

// Work threshold below which spawning a parallel region is not worth it.
constexpr std::int64_t kParGrain = 16384;

double combine_pairwise(std::vector<double>& s) {
    // In-place binary tree over the block sums. Writes trail reads, so the
    // ascending loop is safe.
    std::size_t n = s.size();
    while (n > 1) {
        std::size_t half = n / 2;
        for (std::size_t i = 0; i < half; ++i) s[i] = s[2 * i] + s[2 * i + 1];
        if (n % 2 != 0) {
            s[half] = s[n - 1];
            ++half;
        }
        n = half;
    }
    return s[0];
}

double block_sum_squares(const double* a, std::int64_t n) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += a[i] * a[i];
    return acc;
}

double block_dot(const double* a, const double* b, std::int64_t n) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

int thread_count() {
    const char* v = std::getenv("MPO_OVER_THREADS");
    if (v == nullptr || *v == '\0') return 1;
    int n = std::atoi(v);
    return n < 1 ? 1 : n;
}

void matmul(const double* a, const double* b, double* c, std::int64_t m,
            std::int64_t k, std::int64_t n) {
    std::fill(c, c + m * n, 0.0);
    const int threads = thread_count();
    const bool par = threads > 1 && m > 1 && m * k * n > kParGrain;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (par)
#endif
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    (void)par;
}

void add(const double* a, const double* b, double* out, std::int64_t n) {
    const int threads = thread_count();
    const bool par = threads > 1 && n > kParGrain;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (par)
#endif
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
    (void)par;
}

void sub(const double* a, const double* b, double* out, std::int64_t n) {
    const int threads = thread_count();
    const bool par = threads > 1 && n > kParGrain;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (par)
#endif
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
    (void)par;
}

void scale(const double* a, double s, double* out, std::int64_t n) {
    const int threads = thread_count();
    const bool par = threads > 1 && n > kParGrain;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (par)
#endif
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * s;
    (void)par;
}

void tanh_map(const double* a, double* out, std::int64_t n) {
    const int threads = thread_count();
    const bool par = threads > 1 && n > kParGrain / 16;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (par)
#endif
    for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(a[i]);
    (void)par;
}

double sum_squares(const double* a, std::int64_t n) {
    if (n == 0) return 0.0;
    if (n <= kBlock) return block_sum_squares(a, n);
    const std::int64_t nblocks = (n + kBlock - 1) / kBlock;
    std::vector<double> partial(static_cast<std::size_t>(nblocks));
    const int threads = thread_count();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
#endif
    for (std::int64_t b = 0; b < nblocks; ++b) {
        const std::int64_t lo = b * kBlock;
        partial[static_cast<std::size_t>(b)] =
            block_sum_squares(a + lo, std::min(kBlock, n - lo));
    }
    return combine_pairwise(partial);
}

double dot(const double* a, const double* b, std::int64_t n) {
    if (n == 0) return 0.0;
    if (n <= kBlock) return block_dot(a, b, n);
    const std::int64_t nblocks = (n + kBlock - 1) / kBlock;
    std::vector<double> partial(static_cast<std::size_t>(nblocks));
    const int threads = thread_count();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
#endif
    for (std::int64_t blk = 0; blk < nblocks; ++blk) {
        const std::int64_t lo = blk * kBlock;
        partial[static_cast<std::size_t>(blk)] =
            block_dot(a + lo, b + lo, std::min(kBlock, n - lo));
    }
    return combine_pairwise(partial);
}

namespace ref {

void matmul(const double* a, const double* b, double* c, std::int64_t m,
            std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::int64_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
    }
}

void add(const double* a, const double* b, double* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void scale(const double* a, double s, double* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void tanh_map(const double* a, double* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(a[i]);
}

double sum_squares(const double* a, std::int64_t n) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += a[i] * a[i];
    return acc;
}

double dot(const double* a, const double* b, std::int64_t n) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace ref

}  // namespace mpo_over::kernels
