#include "premixer/pmxt.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "premixer/error.hpp"

namespace premixer::pmxt {
namespace {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <class T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes[offset + i]) << (8 * i));
  return v;
}

void need(std::span<const std::uint8_t> bytes, std::size_t offset, std::size_t count, const char* what) {
  if (offset + count > bytes.size())
    throw FormatError(std::string("pmxt: truncated ") + what + " at byte offset " + std::to_string(offset) +
                      " (file has " + std::to_string(bytes.size()) + " bytes)");
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(::crc32(c, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::vector<std::uint8_t> encode(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 8 * t.rank() + 4 * t.size() + 4);
  for (char c : {'P', 'M', 'X', 'T'}) out.push_back(static_cast<std::uint8_t>(c));
  put_le<std::uint16_t>(out, kVersion);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.rank()));
  for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
  for (double v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  put_le<std::uint32_t>(out, crc32(out));
  return out;
}

Tensor decode(std::span<const std::uint8_t> bytes) {
  need(bytes, 0, 4, "magic");
  if (std::memcmp(bytes.data(), "PMXT", 4) != 0) throw FormatError("pmxt: bad magic at byte offset 0");
  need(bytes, 4, 4, "header");
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kVersion)
    throw FormatError("pmxt: unsupported version " + std::to_string(version) + " at byte offset 4");
  const auto rank = get_le<std::uint16_t>(bytes, 6);
  if (rank == 0) throw FormatError("pmxt: rank 0 at byte offset 6");
  std::size_t off = 8;
  need(bytes, off, 8ull * rank, "dims");
  Shape shape(rank);
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i, off += 8) {
    const auto d = get_le<std::uint64_t>(bytes, off);
    if (d == 0) throw FormatError("pmxt: zero extent at byte offset " + std::to_string(off));
    shape[i] = static_cast<std::size_t>(d);
    count *= shape[i];
  }
  need(bytes, off, 4 * count + 4, "payload");
  const std::size_t crc_at = off + 4 * count;
  if (bytes.size() != crc_at + 4)
    throw FormatError("pmxt: " + std::to_string(bytes.size() - crc_at - 4) + " trailing bytes after CRC at byte offset " +
                      std::to_string(crc_at + 4));
  const auto stored = get_le<std::uint32_t>(bytes, crc_at);
  if (stored != crc32(bytes.first(crc_at)))
    throw FormatError("pmxt: CRC mismatch at byte offset " + std::to_string(crc_at));
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i, off += 4)
    values[i] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, off)));
  return Tensor(std::move(shape), std::move(values));
}

void write(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

Tensor read(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  return decode(bytes);
}

std::uint32_t file_crc32(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 4) throw FormatError("pmxt: " + path.string() + " is too short to carry a CRC");
  return crc32(std::span<const std::uint8_t>(bytes).first(bytes.size() - 4));
}

}  // namespace premixer::pmxt
