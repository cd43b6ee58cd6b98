#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace mg {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

/// FNV-1a, 64-bit. Chain calls by passing the previous result as `h`.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = kFnvOffset);
std::uint64_t fnv1a(std::string_view text, std::uint64_t h = kFnvOffset);
std::uint64_t fnv1a(std::span<const double> values, std::uint64_t h = kFnvOffset);

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t v);

}  // namespace mg
