// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mpo_over/rng.hpp"
#include "mpo_over/tensor.hpp"

namespace test_util {

inline mpo_over::DenseTensor random_matrix(std::int64_t rows, std::int64_t cols,
                                           mpo_over::RngStream& rng,
                                           double stddev = 1.0) {
    mpo_over::DenseTensor t({rows, cols});
    rng.fill_normal(t.data(), stddev);
    return t;
}

// u * diag(sigma) * vt
inline mpo_over::DenseTensor reconstruct(const mpo_over::SvdResult& svd) {
    mpo_over::DenseTensor sv(svd.vt.dims());
    for (std::int64_t i = 0; i < svd.vt.rows(); ++i)
        for (std::int64_t j = 0; j < svd.vt.cols(); ++j)
            sv(i, j) = svd.sigma[static_cast<std::size_t>(i)] * svd.vt(i, j);
    return mpo_over::matmul(svd.u, sv);
}

inline double max_abs_diff(const mpo_over::DenseTensor& a,
                           const mpo_over::DenseTensor& b) {
    double m = 0.0;
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i)
        m = std::max(m, std::abs(da[i] - db[i]));
    return m;
}

inline bool bit_equal(const mpo_over::DenseTensor& a, const mpo_over::DenseTensor& b) {
    if (!a.same_dims(b)) return false;
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i)
        if (da[i] != db[i] || std::signbit(da[i]) != std::signbit(db[i])) return false;
    return true;
}

}  // namespace test_util
