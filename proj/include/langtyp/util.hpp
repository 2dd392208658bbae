#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace langtyp {

std::vector<std::string> split(std::string_view s, char delim);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string_view trim(std::string_view s);

// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

// 64-bit FNV-1a; stable across platforms, used for artifact provenance.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);
std::uint64_t hash_file(const std::filesystem::path& path);

// Flat "key=value" text with '#' comment lines. Keys are unique.
std::map<std::string, std::string> parse_key_values(std::string_view text, const std::string& source_name);
// Sorted by key, one "key=value" per line.
std::string format_key_values(const std::map<std::string, std::string>& kv);

// Derive an independent 64-bit stream seed from a base seed and an index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace langtyp
