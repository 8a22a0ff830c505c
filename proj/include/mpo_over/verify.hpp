// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mpo_over::verify {

// One measured property: pass iff measured cmp threshold holds.
struct PropertyResult {
    std::string name;
    double measured = 0.0;
    double threshold = 0.0;
    std::string cmp = "<=";
    bool pass = false;
};

PropertyResult check_le(std::string name, double measured, double threshold);
PropertyResult check_ge(std::string name, double measured, double threshold);
bool all_pass(const std::vector<PropertyResult>& results);

// Reconstruction, budget and bond-formula properties of the chain algebra.
std::vector<PropertyResult> suite_mpo(std::uint64_t seed);
// Truncated decompositions stay within sqrt(sum eps_k^2).
std::vector<PropertyResult> suite_bound(std::uint64_t seed, int count = 100);
// Central finite differences over every op kind, chains of length 2/3/5.
std::vector<PropertyResult> suite_grad(std::uint64_t seed);
// Function-preserving swap, merged-model parity and parameter accounting.
std::vector<PropertyResult> suite_merge(std::uint64_t seed);
// Score zero cases, quota cardinality, rank invariance, planted signal.
std::vector<PropertyResult> suite_selection(std::uint64_t seed);

}  // namespace mpo_over::verify
