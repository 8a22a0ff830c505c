// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace mpo_over {

// Deterministic named random stream. Every consumer derives its own stream
// from (seed, purpose, name), so adding a consumer never shifts the values
// another one sees. Backed by splitmix64; normals via Box-Muller.
class RngStream {
  public:
    RngStream(std::uint64_t seed, std::string_view purpose,
              std::string_view name = {});

    std::uint64_t next_u64();
    double uniform();  // [0, 1)
    double normal();   // N(0, 1)
    void fill_normal(std::span<double> out, double stddev);
    // index in [0, n)
    std::uint64_t next_index(std::uint64_t n);

  private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace mpo_over
