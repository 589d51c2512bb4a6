#pragma once

// Checkpoint files: "HFC1", u32 entry count, then per entry a u32 name length, the
// UTF-8 name and one tensor in the .ten layout. Entries hold parameters, batch-norm
// running statistics and, when saved with an optimiser, its moments and step count.

#include <cstdint>
#include <filesystem>

#include "hfan/train.hpp"

namespace hfan {

inline constexpr char kCheckpointMagic[4] = {'H', 'F', 'C', '1'};

/// Writes atomically (temporary file, then rename) so a crash keeps the previous file.
void save_checkpoint(const std::filesystem::path& path, SegNet<float>& model, AdamW<float>* optim = nullptr);

struct CheckpointInfo {
  bool has_optimizer = false;
  std::uint64_t step = 0;
};

/// Restores every entry the model (and optimiser, when given) expects. Missing,
/// extra or mis-shaped entries raise FormatError naming the entry.
CheckpointInfo load_checkpoint(const std::filesystem::path& path, SegNet<float>& model, AdamW<float>* optim = nullptr);

/// Counters are stored as four 16-bit chunks so float32 holds them exactly.
Tensor<float> encode_counter(std::uint64_t v);
std::uint64_t decode_counter(const Tensor<float>& t);

}  // namespace hfan
