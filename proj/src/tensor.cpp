// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include "mpo_over/tensor.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "mpo_over/kernels.hpp"

namespace mpo_over {

namespace {

void validate_dims(std::span<const std::int64_t> dims) {
    if (dims.empty()) throw SizeMismatch("tensor must have at least one axis");
    for (std::int64_t d : dims) {
        if (d < 1) throw SizeMismatch("tensor axes must be >= 1");
    }
}

std::string dims_str(std::span<const std::int64_t> dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

}  // namespace

std::int64_t checked_product(std::span<const std::int64_t> dims) {
    std::int64_t p = 1;
    for (std::int64_t d : dims) {
        if (d > 0 && p > std::numeric_limits<std::int64_t>::max() / d)
            throw SizeMismatch("dimension product overflows int64");
        p *= d;
    }
    return p;
}

DenseTensor::DenseTensor(std::vector<std::int64_t> dims) {
    validate_dims(dims);
    const std::int64_t n = checked_product(dims);
    dims_ = std::move(dims);
    data_.assign(static_cast<std::size_t>(n), 0.0);
}

DenseTensor::DenseTensor(std::vector<std::int64_t> dims,
                         std::vector<double> data) {
    validate_dims(dims);
    const std::int64_t n = checked_product(dims);
    if (n != static_cast<std::int64_t>(data.size()))
        throw SizeMismatch("data length " + std::to_string(data.size()) +
                           " does not match dims " + dims_str(dims));
    dims_ = std::move(dims);
    data_ = std::move(data);
}

DenseTensor DenseTensor::matrix(std::int64_t rows, std::int64_t cols,
                                std::vector<double> data) {
    return DenseTensor({rows, cols}, std::move(data));
}

DenseTensor DenseTensor::identity(std::int64_t n) {
    DenseTensor t({n, n});
    for (std::int64_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

std::int64_t DenseTensor::rows() const {
    if (!is_matrix()) throw ShapeMismatch("rows(): tensor is not 2-d");
    return dims_[0];
}

std::int64_t DenseTensor::cols() const {
    if (!is_matrix()) throw ShapeMismatch("cols(): tensor is not 2-d");
    return dims_[1];
}

bool DenseTensor::all_zero() const {
    for (double v : data_)
        if (v != 0.0) return false;
    return true;
}

bool DenseTensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

DenseTensor reshape(const DenseTensor& t, std::vector<std::int64_t> new_dims) {
    if (new_dims.empty()) throw SizeMismatch("reshape: empty target dims");
    int wildcard = -1;
    std::int64_t known = 1;
    for (std::size_t i = 0; i < new_dims.size(); ++i) {
        if (new_dims[i] == -1) {
            if (wildcard >= 0) throw BadWildcard("reshape: more than one -1");
            wildcard = static_cast<int>(i);
        } else if (new_dims[i] < 1) {
            throw SizeMismatch("reshape: axes must be >= 1 (or one -1)");
        } else {
            known *= new_dims[i];
        }
    }
    const std::int64_t total = t.size();
    if (wildcard >= 0) {
        if (known == 0 || total % known != 0)
            throw BadWildcard("reshape: -1 does not resolve to an integer axis");
        new_dims[static_cast<std::size_t>(wildcard)] = total / known;
        known = total;
    }
    if (known != total)
        throw SizeMismatch("reshape: product mismatch, have " +
                           std::to_string(total) + " want " +
                           std::to_string(known));
    return DenseTensor(std::move(new_dims),
                       std::vector<double>(t.data().begin(), t.data().end()));
}

DenseTensor matmul(const DenseTensor& a, const DenseTensor& b) {
    if (!a.is_matrix() || !b.is_matrix())
        throw ShapeMismatch("matmul: operands must be 2-d");
    if (a.cols() != b.rows())
        throw ShapeMismatch("matmul: inner dims differ, " + std::to_string(a.cols()) +
                            " vs " + std::to_string(b.rows()));
    DenseTensor c({a.rows(), b.cols()});
    kernels::matmul(a.data().data(), b.data().data(), c.data().data(), a.rows(),
                    a.cols(), b.cols());
    return c;
}

DenseTensor transpose(const DenseTensor& m) {
    if (!m.is_matrix()) throw ShapeMismatch("transpose: tensor is not 2-d");
    DenseTensor t({m.cols(), m.rows()});
    for (std::int64_t i = 0; i < m.rows(); ++i)
        for (std::int64_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

DenseTensor permute_axes(const DenseTensor& t, const std::vector<int>& perm) {
    const auto& d = t.dims();
    const int r = static_cast<int>(d.size());
    if (static_cast<int>(perm.size()) != r)
        throw ShapeMismatch("permute_axes: rank mismatch");
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int p : perm) {
        if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)])
            throw ShapeMismatch("permute_axes: not a permutation");
        seen[static_cast<std::size_t>(p)] = true;
    }

    std::vector<std::int64_t> out_dims(static_cast<std::size_t>(r));
    for (int ax = 0; ax < r; ++ax)
        out_dims[static_cast<std::size_t>(ax)] = d[static_cast<std::size_t>(perm[ax])];

    std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
    for (int ax = r - 2; ax >= 0; --ax)
        in_strides[static_cast<std::size_t>(ax)] =
            in_strides[static_cast<std::size_t>(ax + 1)] * d[static_cast<std::size_t>(ax + 1)];

    // stride of output axis ax inside the input buffer
    std::vector<std::int64_t> step(static_cast<std::size_t>(r));
    for (int ax = 0; ax < r; ++ax)
        step[static_cast<std::size_t>(ax)] = in_strides[static_cast<std::size_t>(perm[ax])];

    DenseTensor out(out_dims);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    auto src = t.data();
    auto dst = out.data();
    std::int64_t in_off = 0;
    const std::int64_t total = t.size();
    for (std::int64_t flat = 0; flat < total; ++flat) {
        dst[static_cast<std::size_t>(flat)] = src[static_cast<std::size_t>(in_off)];
        for (int ax = r - 1; ax >= 0; --ax) {
            auto uax = static_cast<std::size_t>(ax);
            if (++idx[uax] < out_dims[uax]) {
                in_off += step[uax];
                break;
            }
            idx[uax] = 0;
            in_off -= step[uax] * (out_dims[uax] - 1);
        }
    }
    return out;
}

double frobenius_norm(const DenseTensor& t) {
    return std::sqrt(kernels::sum_squares(t.data().data(), t.size()));
}

DenseTensor add(const DenseTensor& a, const DenseTensor& b) {
    if (!a.same_dims(b)) throw ShapeMismatch("add: dims differ");
    DenseTensor out(a.dims());
    kernels::add(a.data().data(), b.data().data(), out.data().data(), a.size());
    return out;
}

DenseTensor sub(const DenseTensor& a, const DenseTensor& b) {
    if (!a.same_dims(b)) throw ShapeMismatch("sub: dims differ");
    DenseTensor out(a.dims());
    kernels::sub(a.data().data(), b.data().data(), out.data().data(), a.size());
    return out;
}

DenseTensor scaled(const DenseTensor& a, double s) {
    DenseTensor out(a.dims());
    kernels::scale(a.data().data(), s, out.data().data(), a.size());
    return out;
}

double rel_fro_error(const DenseTensor& a, const DenseTensor& b, double floor) {
    if (!a.same_dims(b)) throw ShapeMismatch("rel_fro_error: dims differ");
    const double ref = frobenius_norm(b);
    return frobenius_norm(sub(a, b)) / std::max(ref, floor);
}

}  // namespace mpo_over
