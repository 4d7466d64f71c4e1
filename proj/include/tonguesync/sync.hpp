#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "tonguesync/data_io.hpp"
#include "tonguesync/dsp.hpp"
#include "tonguesync/nn/model.hpp"
#include "tonguesync/sampling.hpp"

namespace tonguesync {

/// Candidate offsets in integer milliseconds, strictly increasing.
/// Positive means the audio leads.
struct CandidateGrid {
  std::vector<int> offsets_ms;
  friend bool operator==(const CandidateGrid&, const CandidateGrid&) = default;
};

/// min, min+step, ... up to the largest value <= max. Bounds and step are in
/// seconds and are rounded to whole milliseconds.
CandidateGrid build_grid(double min_s, double max_s, double step_s);
/// [-1.75, 0.75] s in 45 ms steps: 56 candidates.
CandidateGrid cleft_grid();
/// "min:max:step" in seconds, or "cleft".
CandidateGrid parse_grid(std::string_view spec);
/// Accepts any sorted-or-not set of distinct offsets.
CandidateGrid grid_from_offsets(std::vector<int> offsets_ms);

/// Shifts audio against ultrasound by offset_ms. Positive: the first
/// offset_ms of audio is dropped. Negative: the first |offset_ms| of
/// ultrasound is dropped, rounded up to whole frames, and the audio is
/// cropped by the difference so the relative shift stays exact. The longer
/// stream's tail is then trimmed so durations agree within half a frame.
/// Throws RangeError when |offset| is not shorter than both streams.
UtteranceRecord apply_offset(const UtteranceRecord& rec, double offset_ms);

inline constexpr double kUnscored = std::numeric_limits<double>::infinity();

struct SyncPrediction {
  std::string utterance_id;
  std::vector<int> offsets_ms;
  std::vector<double> mean_distance;  // kUnscored when no complete window
  std::vector<std::size_t> windows;
  int predicted_offset_ms = 0;
};

/// Lowest mean distance; ties go to the smallest |offset|, then the
/// earlier grid entry. Throws UnsyncableError when every entry is infinite.
std::size_t select_candidate(const std::vector<int>& offsets_ms, const std::vector<double>& mean_distance);

struct SyncOptions {
  std::size_t frames_per_window = kFramesPerWindow;
  MfccConfig mfcc = MfccConfig::for_window(kFramesPerWindow, kTargetFrameRate);
};

/// Distance per window pair.
using WindowScorer = std::function<std::vector<double>(const std::vector<WindowPair>&)>;

/// Scores window pairs with the model in inference mode, in batches.
WindowScorer model_scorer(const nn::TwoStreamModel<float>& model, std::size_t batch_size = 64);

/// Candidates are scored in parallel; the scorer must be safe to call
/// concurrently.
SyncPrediction synchronise(const UtteranceRecord& rec, const WindowScorer& scorer, const CandidateGrid& grid,
                           const SyncOptions& options = {});
SyncPrediction synchronise(const UtteranceRecord& rec, const nn::TwoStreamModel<float>& model,
                           const CandidateGrid& grid, const SyncOptions& options = {});

namespace serial {
SyncPrediction synchronise(const UtteranceRecord& rec, const WindowScorer& scorer, const CandidateGrid& grid,
                           const SyncOptions& options = {});
}  // namespace serial

/// Extra context written with each prediction line.
struct PredictionContext {
  std::string type;
  std::string dataset;
  std::string speaker;
  double hardware_offset_ms = 0.0;
};

/// One JSON object, no trailing newline. Infinite distances become null.
std::string prediction_to_json(const SyncPrediction& p, const PredictionContext& ctx);

struct PredictionRecord {
  SyncPrediction prediction;
  PredictionContext context;
};

std::vector<PredictionRecord> read_predictions(std::string_view jsonl);

}  // namespace tonguesync
