#pragma once

// Utterance file sets: <id>.param, <id>.ult, <id>.wav and <id>.txt.
//
// .param  UTF-8, one Key=Value per line. Canonical keys are FramesPerSec,
//         NumVectors, PixPerVector, FieldOfView, SyncOffsetMs and the optional
//         FirstFrameTimeSecs. UtteranceType and ProbeView carry record
//         metadata. Any other key is kept verbatim and written back in order.
// .ult    unsigned 8-bit samples, frames back to back, each frame row-major
//         with the scan line as the major axis.
// .wav    16-bit signed little-endian PCM, mono.
// .txt    prompt on the first line, optional ISO-8601 timestamp on the second.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tonguesync/matrix.hpp"

namespace tonguesync {

struct UltrasoundParams {
  double frame_rate = 0.0;          // frames per second
  std::size_t scan_lines = 0;
  std::size_t echo_returns = 0;
  double field_of_view = 0.0;       // degrees
  double hardware_offset_ms = 0.0;  // positive: audio leads
  std::optional<double> first_frame_time;

  /// Keys outside the canonical set, in file order.
  std::vector<std::pair<std::string, std::string>> extra;

  std::size_t frame_size() const { return scan_lines * echo_returns; }
  /// Throws ValidationError when an invariant is broken.
  void validate() const;

  friend bool operator==(const UltrasoundParams&, const UltrasoundParams&) = default;
};

struct RawUltrasoundSequence {
  UltrasoundParams params;
  std::vector<Frame> frames;

  double duration() const { return static_cast<double>(frames.size()) / params.frame_rate; }
  friend bool operator==(const RawUltrasoundSequence&, const RawUltrasoundSequence&) = default;
};

struct AudioSignal {
  std::vector<float> samples;
  double sample_rate = 0.0;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
  friend bool operator==(const AudioSignal&, const AudioSignal&) = default;
};

enum class UtteranceType { kWords, kNonWords, kSentence, kArticulatory, kNonSpeech, kConversation, kRead, kSpontaneous };
enum class ProbeView { kMidsagittal, kCoronal };

std::string_view to_string(UtteranceType type);
std::string_view to_string(ProbeView view);
UtteranceType parse_utterance_type(std::string_view text);
ProbeView parse_probe_view(std::string_view text);

struct UtteranceRecord {
  std::string id;
  UtteranceType type = UtteranceType::kRead;
  std::string prompt;
  std::optional<std::string> recorded_at;
  AudioSignal audio;
  RawUltrasoundSequence ultrasound;
  ProbeView probe_view = ProbeView::kMidsagittal;

  void validate() const;
  friend bool operator==(const UtteranceRecord&, const UtteranceRecord&) = default;
};

// --- .param ---------------------------------------------------------------

/// Parses .param text. Record-level keys (UtteranceType, ProbeView) stay in
/// `extra`; read_utterance lifts them out.
UltrasoundParams parse_param(std::string_view text);
std::string write_param(const UltrasoundParams& params);

// --- .ult -----------------------------------------------------------------

RawUltrasoundSequence parse_ult(std::span<const std::uint8_t> bytes, const UltrasoundParams& params);
std::vector<std::uint8_t> write_ult(const RawUltrasoundSequence& seq);

// --- .wav -----------------------------------------------------------------

AudioSignal parse_wav(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_wav(const AudioSignal& audio);

/// Nearest 16-bit code for a sample, with the [-1, 1) scaling used by the
/// wav reader.
std::int16_t quantise_sample(float x);

// --- utterance file sets ----------------------------------------------------

void validate_utterance_id(std::string_view id);

/// Writes the four files for `rec` into `directory` (created if absent).
void write_utterance(const UtteranceRecord& rec, const std::filesystem::path& directory);
UtteranceRecord read_utterance(const std::filesystem::path& directory, const std::string& id);
/// Sorted ids of every complete file set (all four files present) in `directory`.
std::vector<std::string> list_utterances(const std::filesystem::path& directory);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_text(const std::filesystem::path& path, std::string_view text);

// --- fan rendering ----------------------------------------------------------

struct FanGeometry {
  /// Radius of echo return 0 as a fraction of the deepest echo's radius.
  double inner_radius = 0.25;
  bool flip_horizontal = false;
  bool flip_vertical = false;
};

/// Where the fan sits in the output image, in pixel coordinates (x right,
/// y down, pixel centres at +0.5). The apex is below the image.
struct FanLayout {
  double apex_x = 0.0;
  double apex_y = 0.0;
  double pixels_per_unit = 0.0;  // outer radius in pixels
  double inner_radius = 0.0;     // world units, outer radius = 1
  double half_angle = 0.0;       // radians
};

struct FanImage {
  Matrix<std::uint8_t> pixels;
  Matrix<std::uint8_t> mask;  // 1 inside the fan
};

FanLayout fan_layout(const UltrasoundParams& params, std::size_t out_height, std::size_t out_width,
                     const FanGeometry& geometry = {});

/// Polar-to-cartesian rendering with bilinear interpolation between scan
/// lines and echo returns. Rows are processed in parallel.
FanImage fan_transform(const Frame& frame, const UltrasoundParams& params, std::size_t out_height,
                       std::size_t out_width, const FanGeometry& geometry = {});

namespace serial {
FanImage fan_transform(const Frame& frame, const UltrasoundParams& params, std::size_t out_height,
                       std::size_t out_width, const FanGeometry& geometry = {});
}  // namespace serial

}  // namespace tonguesync
