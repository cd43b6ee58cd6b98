#pragma once

// "MGT1" binary tensor files:
//   4 bytes  magic "MGT1"
//   u8       dtype (0 = f64, 1 = f32)
//   u8       ndim
//   ndim x   u32 little-endian extents
//   payload  row-major, little-endian

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "jembed/tensor.hpp"

namespace mg::mgt1 {

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

std::vector<std::uint8_t> encode(const Tensor& t, DType dtype = DType::f64);
/// f32 payloads are widened to double.
Tensor decode(const std::vector<std::uint8_t>& bytes);

void write(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::f64);
Tensor read(const std::filesystem::path& path);

}  // namespace mg::mgt1
