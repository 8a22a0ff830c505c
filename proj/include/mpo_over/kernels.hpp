// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

// Flat-array numeric kernels. Two implementations live side by side:
//
//  * mpo_over::kernels       — OpenMP-parallel versions used by the library.
//                              Parallelism is capped by MPO_OVER_THREADS
//                              (default 1). Every reduction runs in a fixed
//                              blocked pairwise order, so results are
//                              bit-identical for any thread count.
//  * mpo_over::kernels::ref  — plain serial loops kept as the reference for
//                              tests and the kernels_bench target.
namespace mpo_over::kernels {

// Thread cap from MPO_OVER_THREADS; 1 when unset or invalid.
int thread_count();

// c[m,n] = a[m,k] * b[k,n], row-major, accumulation over k in index order.
void matmul(const double* a, const double* b, double* c, std::int64_t m,
            std::int64_t k, std::int64_t n);

void add(const double* a, const double* b, double* out, std::int64_t n);
void sub(const double* a, const double* b, double* out, std::int64_t n);
void scale(const double* a, double s, double* out, std::int64_t n);
void tanh_map(const double* a, double* out, std::int64_t n);

// Fixed-order blocked pairwise reductions (thread-count invariant).
double sum_squares(const double* a, std::int64_t n);
double dot(const double* a, const double* b, std::int64_t n);

namespace ref {

void matmul(const double* a, const double* b, double* c, std::int64_t m,
            std::int64_t k, std::int64_t n);
void add(const double* a, const double* b, double* out, std::int64_t n);
void scale(const double* a, double s, double* out, std::int64_t n);
void tanh_map(const double* a, double* out, std::int64_t n);
double sum_squares(const double* a, std::int64_t n);
double dot(const double* a, const double* b, std::int64_t n);

}  // namespace ref

}  // namespace mpo_over::kernels
