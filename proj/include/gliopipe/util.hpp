#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gliopipe {

std::string to_lower(std::string s);
std::string trim(const std::string& s);

// Splits on any of the given separator characters; empty pieces are dropped.
std::vector<std::string> split_tokens(const std::string& s, const std::string& seps);

std::string join(const std::vector<std::string>& parts, const std::string& sep);

// Linear-interpolation percentile over an already sorted, nonempty range.
// q in [0,100]; rank = q/100 * (n-1), value interpolated between neighbors.
double percentile_sorted(std::span<const double> sorted, double q);

// FNV-1a 64-bit; stable across platforms, used for provenance content keys.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64(const std::string& s);
std::string hash_hex(std::uint64_t h);
std::string hash_file(const std::filesystem::path& p);

std::vector<std::uint8_t> read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& p, const std::string& text);
std::string read_text_file(const std::filesystem::path& p);

}  // namespace gliopipe
