#pragma once

#include <cstdint>
#include <filesystem>

#include "ei/tensor.hpp"

namespace ei {

// Single-tensor binary container:
//   "EITF" | u16 version (=1) | u8 dtype (0=f32, 1=f64) | u8 ndim |
//   ndim x u32 dims | row-major payload, all little-endian.
enum class FileDtype : std::uint8_t { f32 = 0, f64 = 1 };

void write_tensor(const std::filesystem::path& path, const Tensor& t, FileDtype dtype);

// Reads any supported dtype, widening to double.
Tensor read_tensor(const std::filesystem::path& path, FileDtype* dtype_out = nullptr);

// Rejects files whose stored dtype differs from `expected`.
Tensor read_tensor_as(const std::filesystem::path& path, FileDtype expected);

}  // namespace ei
