// Copyright (c) 2026 the mpo-over authors
// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cstring>
#include <fstream>

#include "mpo_over/tensor.hpp"

namespace mpo_over {

namespace {

void put_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& f, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::ifstream& f) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void write_mpot(const std::string& path, const DenseTensor& t) {
    if (t.empty()) throw InvalidInput("write_mpot: empty tensor");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("write_mpot: cannot open " + path);
    f.write("MPOT", 4);
    put_u32(f, 1);
    put_u32(f, static_cast<std::uint32_t>(t.order()));
    for (std::int64_t d : t.dims()) put_u64(f, static_cast<std::uint64_t>(d));
    static_assert(std::endian::native == std::endian::little,
                  "f64 payload is written natively; big-endian hosts need a swap");
    f.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f) throw IoError("write_mpot: write failed for " + path);
}

DenseTensor read_mpot(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw BadFile("read_mpot: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "MPOT", 4) != 0)
        throw BadFile("read_mpot: bad magic in " + path);
    const std::uint32_t version = get_u32(f);
    if (version != 1)
        throw BadFile("read_mpot: unsupported version " + std::to_string(version));
    const std::uint32_t ndim = get_u32(f);
    if (!f || ndim == 0 || ndim > 64) throw BadFile("read_mpot: bad ndim in " + path);
    std::vector<std::int64_t> dims(ndim);
    for (auto& d : dims) {
        d = static_cast<std::int64_t>(get_u64(f));
        if (d < 1) throw BadFile("read_mpot: bad axis in " + path);
    }
    const std::int64_t n = checked_product(dims);
    std::vector<double> data(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(n * sizeof(double)));
    if (!f) throw BadFile("read_mpot: truncated payload in " + path);
    return DenseTensor(std::move(dims), std::move(data));
}

}  // namespace mpo_over
