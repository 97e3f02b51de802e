#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace kcare {

std::array<unsigned char, 32> sha256_bytes(std::string_view data);
std::string sha256_hex(std::string_view data);
std::string sha256_file_hex(const std::filesystem::path& path);

/// First 8 bytes of sha256(data), little-endian.
std::uint64_t hash64(std::string_view data);

std::string to_hex(const unsigned char* data, std::size_t len);

} // namespace kcare
