#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace ram2c {

/// 64-bit FNV-1a. Stable across platforms and process restarts, which is
/// what the scripted mock backend and seeded sampling rely on.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

std::string to_hex(std::uint64_t value);

/// SplitMix64 step; used to derive independent streams from one seed.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// Random identifier "<prefix>-<16 hex>". Not reproducible; ids are excluded
/// from every determinism contract.
std::string make_id(std::string_view prefix);

/// Current UTC time as ISO-8601 with millisecond precision.
std::string utc_timestamp();

/// Decodes UTF-8 into code points. Invalid sequences decode as U+FFFD.
std::vector<char32_t> utf8_decode(std::string_view text);
std::string utf8_encode(const std::vector<char32_t>& cps, std::size_t begin, std::size_t end);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

/// Writes via a temporary sibling and rename so readers never see a torn file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Runs fn(i) for i in [0, n) on up to `parallelism` threads. The first
/// exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t parallelism,
                  const std::function<void(std::size_t)>& fn);

}  // namespace ram2c
