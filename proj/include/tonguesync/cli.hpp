#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "tonguesync/dsp.hpp"
#include "tonguesync/error.hpp"
#include "tonguesync/eval.hpp"
#include "tonguesync/nn/model.hpp"
#include "tonguesync/nn/train.hpp"

namespace tonguesync::cli {

/// Environment variable naming the default config file.
inline constexpr const char* kConfigEnv = "TONGUESYNC_CONFIG";

enum ExitCode : int { kOk = 0, kUsage = 1, kInvalid = 2, kDataError = 3, kNumericFailure = 4 };

int exit_code(ErrorKind kind);

struct PipelineConfig {
  double audio_rate = kTargetAudioRate;
  double frame_rate = kTargetFrameRate;
  std::size_t frame_height = kTargetFrameHeight;
  std::size_t frame_width = kTargetFrameWidth;
  std::size_t frames_per_window = kFramesPerWindow;
  /// Window and step are derived from the frame rate and window length.
  MfccConfig mfcc = MfccConfig::for_window(kFramesPerWindow, kTargetFrameRate);
  nn::ModelConfig model;
  nn::TrainConfig train;
  /// make-samples cuts windows after applying each hardware offset, so true
  /// pairs come from synchronised signals.
  bool align_hardware_offset = true;
  double validation_fraction = 0.1;
  double test_fraction = 0.1;
  std::string grid = "cleft";
  ScoringBoundary hard = ScoringBoundary::hard();
  ScoringBoundary soft = ScoringBoundary::soft();
  std::string group_by = "dataset";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  /// MFCC settings with window and step recomputed for the current frame
  /// rate and window length.
  MfccConfig mfcc_for_window() const;
  /// Model input dimensions follow the preprocessing targets.
  nn::ModelConfig model_config() const;
};

/// Flat "key = value" lines; '#' starts a comment. Unknown keys and bad
/// values throw ValidationError naming the line.
void apply_config(PipelineConfig& cfg, std::string_view text);
std::string format_config(const PipelineConfig& cfg);

/// Runs one command line (args exclude the program name). Usage and help go
/// to the given streams; the return value is the process exit code.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace tonguesync::cli
