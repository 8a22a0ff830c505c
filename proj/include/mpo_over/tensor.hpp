// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpo_over/errors.hpp"

namespace mpo_over {

// Dense n-dimensional array of f64, row-major (last index fastest). The
// universal value carrier: weights, factors, activations, gradients.
// Order-0 tensors are forbidden; scalars are 1-element order-1 tensors.
class DenseTensor {
  public:
    DenseTensor() = default;  // empty placeholder, not a valid value
    explicit DenseTensor(std::vector<std::int64_t> dims);  // zero-filled
    DenseTensor(std::vector<std::int64_t> dims, std::vector<double> data);

    static DenseTensor matrix(std::int64_t rows, std::int64_t cols,
                              std::vector<double> data);
    static DenseTensor identity(std::int64_t n);

    const std::vector<std::int64_t>& dims() const { return dims_; }
    std::int64_t order() const { return static_cast<std::int64_t>(dims_.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return dims_.empty(); }

    std::int64_t rows() const;  // 2-d only
    std::int64_t cols() const;  // 2-d only
    bool is_matrix() const { return dims_.size() == 2; }

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    double operator()(std::int64_t i, std::int64_t j) const {
        return data_[static_cast<std::size_t>(i * dims_[1] + j)];
    }
    double& operator()(std::int64_t i, std::int64_t j) {
        return data_[static_cast<std::size_t>(i * dims_[1] + j)];
    }

    bool same_dims(const DenseTensor& o) const { return dims_ == o.dims_; }
    bool all_zero() const;
    bool all_finite() const;

  private:
    std::vector<std::int64_t> dims_;
    std::vector<double> data_;
};

// Truncated SVD of a matrix: m = u * diag(sigma) * vt, with u (p x k),
// vt (k x q), sigma non-increasing. discarded_energy is the sum of squares
// of the singular values dropped by the truncation.
struct SvdResult {
    DenseTensor u;
    std::vector<double> sigma;
    DenseTensor vt;
    double discarded_energy = 0.0;
};

std::int64_t checked_product(std::span<const std::int64_t> dims);

// Row-major metadata change; one new_dims entry may be -1 (inferred).
DenseTensor reshape(const DenseTensor& t, std::vector<std::int64_t> new_dims);

DenseTensor matmul(const DenseTensor& a, const DenseTensor& b);
DenseTensor transpose(const DenseTensor& m);
// out_dims[ax] = t.dims()[perm[ax]]
DenseTensor permute_axes(const DenseTensor& t, const std::vector<int>& perm);

// One-sided Jacobi. keep in [1, min(rows, cols)]. Deterministic: singular
// values sorted descending, left singular vectors canonicalized so their
// first nonzero entry is positive.
SvdResult svd_truncated(const DenseTensor& m, std::int64_t keep);

double frobenius_norm(const DenseTensor& t);

DenseTensor add(const DenseTensor& a, const DenseTensor& b);
DenseTensor sub(const DenseTensor& a, const DenseTensor& b);
DenseTensor scaled(const DenseTensor& a, double s);

// ||a - b||_F / max(||b||_F, floor)
double rel_fro_error(const DenseTensor& a, const DenseTensor& b,
                     double floor = 1e-300);

// MPOT v1 container: magic "MPOT", u32le version=1, u32le ndim,
// ndim x u64le dims, then product(dims) x f64le row-major.
void write_mpot(const std::string& path, const DenseTensor& t);
DenseTensor read_mpot(const std::string& path);

}  // namespace mpo_over
