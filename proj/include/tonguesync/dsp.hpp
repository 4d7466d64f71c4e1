#pragma once

#include <cstddef>

#include "tonguesync/data_io.hpp"
#include "tonguesync/matrix.hpp"

namespace tonguesync {

inline constexpr double kTargetAudioRate = 22050.0;
inline constexpr double kTargetFrameRate = 24.0;
inline constexpr std::size_t kTargetFrameHeight = 63;
inline constexpr std::size_t kTargetFrameWidth = 138;
inline constexpr std::size_t kFramesPerWindow = 5;

/// Length in seconds of a window of `frames` ultrasound frames at `fps`.
double window_time(std::size_t frames, double fps);

struct MfccConfig {
  std::size_t num_coefficients = 13;
  double window_seconds = 0.0;
  double step_seconds = 0.0;
  std::size_t num_mel_filters = 26;
  std::size_t fft_size = 0;  // 0: next power of two >= window samples
  std::size_t feature_dim = 30;
  double pre_emphasis = 0.97;
  double log_floor = 1e-10;

  /// Window t/(2l) and step t/(4l) for a window of l frames at fps, which
  /// gives 4l feature rows per ultrasound window.
  static MfccConfig for_window(std::size_t frames_per_window, double fps);

  void validate() const;
  friend bool operator==(const MfccConfig&, const MfccConfig&) = default;
};

/// Rows are time frames. Columns: cepstra c0..c{n-1}, their deltas, then
/// four log filterbank band means, then zeros, truncated to feature_dim.
using MfccMatrix = Matrix<float>;

/// Number of delta and band-summary columns in the layout above.
inline constexpr std::size_t kBandSummaries = 4;

/// Windowed-sinc (Kaiser) band-limited resampling. Output length is
/// round(n * target / source).
AudioSignal resample_audio(const AudioSignal& signal, double target_rate);

/// Nearest-frame selection on the uniform target grid (round half up).
RawUltrasoundSequence resample_ultrasound(const RawUltrasoundSequence& seq, double target_fps);

/// Bilinear resize with half-pixel centres.
Frame resize_frame(const Frame& frame, std::size_t out_rows, std::size_t out_cols);

/// Resizes every frame and updates scan_lines/echo_returns.
RawUltrasoundSequence resize_sequence(const RawUltrasoundSequence& seq, std::size_t out_rows, std::size_t out_cols);

/// Number of rows mfcc() emits for `num_samples` samples.
std::size_t mfcc_row_count(std::size_t num_samples, double sample_rate, const MfccConfig& cfg);

/// Frames start at round(k * step * rate); the signal is zero-padded at the
/// tail so a span of t seconds yields round(t / step) rows (at least one).
MfccMatrix mfcc(const AudioSignal& signal, const MfccConfig& cfg);

/// As mfcc() but with an explicit row count (extra rows read zero padding).
MfccMatrix mfcc(const AudioSignal& signal, const MfccConfig& cfg, std::size_t num_rows);

/// Mel filterbank weights, num_filters x (fft_size / 2 + 1), HTK mel scale.
Matrix<double> mel_filterbank(std::size_t num_filters, std::size_t fft_size, double sample_rate);

namespace serial {
AudioSignal resample_audio(const AudioSignal& signal, double target_rate);
}  // namespace serial

}  // namespace tonguesync
