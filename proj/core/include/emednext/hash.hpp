#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

namespace emednext {

/// FNV-1a 64-bit, used for manifest input hashes and blob integrity checks.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ull);

std::uint64_t file_fnv1a64(const std::filesystem::path& path);

std::string hash_to_hex(std::uint64_t h);

}  // namespace emednext
