#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace bustr {

/// One round of the splitmix64 finalizer; used to derive per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view text);

/// Fixed-point rendering with `digits` decimals ("12.3").
std::string format_fixed(double value, int digits);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

}  // namespace bustr
