#pragma once

// Checkpoint layout, all integers and floats little-endian:
//
//   "TSYNCKPT"            8-byte magic
//   u32 version           kCheckpointVersion
//   u32 frames_per_window, frame_height, frame_width, audio_rows, feature_dim
//   u8  final_activation
//   f64 margin, bn_epsilon, bn_momentum
//   stream spec x2        ultrasound then audio:
//                           u32 n_conv, n_conv x (u32 filters, kernel, pool)
//                           u32 n_fc,   n_fc x u32 units
//   u32 tensor count
//   per tensor            u32 name length, name bytes, u32 n c h w, f32 data
//
// Tensors follow declaration order: every parameter, then every batch-norm
// running statistic.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tonguesync/nn/model.hpp"

namespace tonguesync::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialise_model(TwoStreamModel<float>& model);
/// Throws FormatError on a bad magic, an unknown version, a truncated or
/// oversized buffer, or tensors that do not match the declared architecture.
TwoStreamModel<float> deserialise_model(std::span<const std::uint8_t> bytes);

void save_model(TwoStreamModel<float>& model, const std::filesystem::path& path);
TwoStreamModel<float> load_model(const std::filesystem::path& path);

}  // namespace tonguesync::nn
