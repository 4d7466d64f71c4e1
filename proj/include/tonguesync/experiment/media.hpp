#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tonguesync/data_io.hpp"

namespace tonguesync::experiment {

struct MediaOptions {
  double fps = 24.0;
  std::size_t height = 300;
  std::size_t width = 400;
  FanGeometry geometry;
};

/// One side of a stimulus: fan-rendered frames at a fixed rate plus the
/// matching audio, both cut by apply_offset.
struct RenderedSide {
  double fps = 0.0;
  std::size_t height = 0;
  std::size_t width = 0;
  double duration_s = 0.0;
  std::vector<std::vector<std::uint8_t>> frames_png;
  std::vector<std::uint8_t> wav;
};

/// 8-bit greyscale PNG.
std::vector<std::uint8_t> encode_png(const Matrix<std::uint8_t>& image);

RenderedSide render_side(const UtteranceRecord& rec, double offset_ms, const MediaOptions& options = {});

}  // namespace tonguesync::experiment
