#include "tonguesync/experiment/media.hpp"

#include <png.h>

#include <cstdlib>
#include <memory>

#include "tonguesync/dsp.hpp"
#include "tonguesync/error.hpp"
#include "tonguesync/sync.hpp"

namespace tonguesync::experiment {

std::vector<std::uint8_t> encode_png(const Matrix<std::uint8_t>& image) {
  if (image.rows == 0 || image.cols == 0) throw ValidationError("cannot encode an empty image");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.cols);
  png.height = static_cast<png_uint_32>(image.rows);
  png.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.data.data(), 0, nullptr)) {
    throw IoError(std::string("png encoding failed: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.data.data(), 0, nullptr)) {
    throw IoError(std::string("png encoding failed: ") + png.message);
  }
  out.resize(size);
  return out;
}

RenderedSide render_side(const UtteranceRecord& rec, double offset_ms, const MediaOptions& options) {
  if (!(options.fps > 0.0) || options.height == 0 || options.width == 0) {
    throw ValidationError("media frame rate and size must be positive");
  }
  const UtteranceRecord shifted = apply_offset(rec, offset_ms);
  const RawUltrasoundSequence seq = resample_ultrasound(shifted.ultrasound, options.fps);
  RenderedSide out;
  out.fps = options.fps;
  out.height = options.height;
  out.width = options.width;
  out.duration_s = shifted.audio.duration();
  out.frames_png.reserve(seq.frames.size());
  for (const Frame& f : seq.frames) {
    out.frames_png.push_back(encode_png(fan_transform(f, seq.params, options.height, options.width, options.geometry).pixels));
  }
  out.wav = write_wav(shifted.audio);
  return out;
}

}  // namespace tonguesync::experiment
