#pragma once

// ".ten" files: "HFT1", u32 LE rank, rank u32 LE extents, then float32 LE values in
// row-major order. No padding.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hfan/tensor.hpp"

namespace hfan::io {

inline constexpr char kTensorMagic[4] = {'H', 'F', 'T', '1'};

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void append_f32(std::vector<std::uint8_t>& out, float v);

/// Serialises a tensor in the .ten layout onto `out`.
void encode_tensor(std::vector<std::uint8_t>& out, const Tensor<float>& t);

/// Reads one tensor starting at `offset`, advancing it. Throws FormatError with the byte offset.
Tensor<float> decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset);

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t& offset);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void save_tensor(const std::filesystem::path& path, const Tensor<float>& t);
/// Whole-file read; trailing bytes are a format error.
Tensor<float> load_tensor(const std::filesystem::path& path);

}  // namespace hfan::io
