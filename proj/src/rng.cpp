// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include "mpo_over/rng.hpp"

#include <cmath>
#include <numbers>

namespace mpo_over {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

std::uint64_t fnv1a_u64(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= kFnvPrime;
    }
    return h;
}

std::uint64_t splitmix_step(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::string_view purpose,
                     std::string_view name) {
    std::uint64_t h = fnv1a_u64(kFnvOffset, seed);
    h = fnv1a(h, "\x1f");
    h = fnv1a(h, purpose);
    h = fnv1a(h, "\x1f");
    h = fnv1a(h, name);
    state_ = h;
    // burn two outputs to decorrelate nearby hashes
    splitmix_step(state_);
    splitmix_step(state_);
}

std::uint64_t RngStream::next_u64() { return splitmix_step(state_); }

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));  // log(1-u1), never log(0)
    const double th = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
}

void RngStream::fill_normal(std::span<double> out, double stddev) {
    for (double& v : out) v = normal() * stddev;
}

std::uint64_t RngStream::next_index(std::uint64_t n) {
    // rejection sampling, unbiased
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
}

}  // namespace mpo_over
