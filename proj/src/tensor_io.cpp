#include "hfan/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace hfan::io {

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_f32(std::vector<std::uint8_t>& out, float v) { append_u32(out, std::bit_cast<std::uint32_t>(v)); }

void encode_tensor(std::vector<std::uint8_t>& out, const Tensor<float>& t) {
  out.insert(out.end(), kTensorMagic, kTensorMagic + 4);
  append_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) append_u32(out, static_cast<std::uint32_t>(e));
  out.reserve(out.size() + 4 * t.numel());
  for (float v : t.storage()) append_f32(out, v);
}

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  if (bytes.size() < offset + 4) {
    throw FormatError("truncated data at offset " + std::to_string(offset) + ": need 4 bytes, have " +
                      std::to_string(bytes.size() - std::min(bytes.size(), offset)));
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  offset += 4;
  return v;
}

Tensor<float> decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  if (bytes.size() < offset + 4 || std::memcmp(bytes.data() + offset, kTensorMagic, 4) != 0) {
    throw FormatError("bad tensor magic at offset " + std::to_string(offset) + " (expected HFT1)");
  }
  offset += 4;
  const std::uint32_t rank = read_u32(bytes, offset);
  if (rank == 0 || rank > 8) {
    throw FormatError("implausible tensor rank " + std::to_string(rank) + " at offset " +
                      std::to_string(offset - 4));
  }
  Shape shape(rank);
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::size_t at = offset;
    shape[i] = read_u32(bytes, offset);
    if (shape[i] == 0) throw FormatError("zero extent at offset " + std::to_string(at));
    count *= shape[i];
    if (count > (std::uint64_t{1} << 34)) throw FormatError("tensor too large at offset " + std::to_string(at));
  }
  const std::uint64_t need = count * 4;
  if (bytes.size() - offset < need) {
    throw FormatError("truncated tensor data at offset " + std::to_string(offset) + ": need " +
                      std::to_string(need) + " bytes, have " + std::to_string(bytes.size() - offset));
  }
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = std::bit_cast<float>(read_u32(bytes, offset));
  return Tensor<float>(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

void save_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
  std::vector<std::uint8_t> bytes;
  encode_tensor(bytes, t);
  write_file(path, bytes);
}

Tensor<float> load_tensor(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  std::size_t offset = 0;
  try {
    Tensor<float> t = decode_tensor(bytes, offset);
    if (offset != bytes.size()) {
      throw FormatError("trailing bytes at offset " + std::to_string(offset));
    }
    return t;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace hfan::io
