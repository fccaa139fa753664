#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "premixer/tensor.hpp"

namespace premixer::pmxt {

// Layout, all little-endian:
//   "PMXT" | u16 version | u16 rank | u64 dims[rank] | f32 payload (row-major) | u32 CRC32
// The CRC covers every byte before it.

inline constexpr std::uint16_t kVersion = 1;

std::vector<std::uint8_t> encode(const Tensor& t);
Tensor decode(std::span<const std::uint8_t> bytes);

void write(const std::filesystem::path& path, const Tensor& t);
Tensor read(const std::filesystem::path& path);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);
/// CRC32 of everything before the trailing checksum, i.e. the stored value.
std::uint32_t file_crc32(const std::filesystem::path& path);

}  // namespace premixer::pmxt
