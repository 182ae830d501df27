#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace evoforge {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// Stable 64-bit mixing used for counter-based randomness (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x) noexcept;
std::uint64_t hash_combine(std::uint64_t seed, std::string_view text) noexcept;
std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) noexcept;

/// Uniform double in [0, 1) derived from a 64-bit key.
double unit_uniform(std::uint64_t key) noexcept;

}  // namespace evoforge
