#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "afl/numerics/matrix.hpp"

namespace afl::lm {

/// Little-endian container shared by base models, adapters and routers:
///   "AFL1" | u32 version | u32 kind | u64 fingerprint | u32 n_meta | u64 meta[n_meta]
///   | u32 n_tensors | { u64 rows | u64 cols | f64 data[rows*cols] } * n_tensors
enum class BlobKind : std::uint32_t { base_model = 0, adapter = 1, router = 2, dense_delta = 3 };

inline constexpr std::uint32_t kBlobVersion = 1;

struct Blob {
    BlobKind kind = BlobKind::base_model;
    std::uint64_t fingerprint = 0;
    std::vector<std::uint64_t> meta;
    std::vector<num::Matrix> tensors;
};

void write_blob(const std::filesystem::path& path, const Blob& blob);
Blob read_blob(const std::filesystem::path& path);

std::uint64_t double_bits(double v);
double bits_double(std::uint64_t v);

}  // namespace afl::lm
