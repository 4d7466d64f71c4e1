#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tonguesync/data_io.hpp"
#include "tonguesync/dsp.hpp"
#include "tonguesync/nn/train.hpp"

namespace tonguesync {

struct WindowPair {
  std::string utterance_id;
  std::size_t index = 0;
  std::size_t frames = 0, height = 0, width = 0;
  /// frames x height x width, intensities scaled to [0, 1].
  std::vector<float> ultrasound;
  /// rows_per_window(l) x feature_dim.
  MfccMatrix audio;
};

struct WindowSet {
  std::vector<WindowPair> pairs;
  /// The utterance had fewer frames than one window.
  bool too_short = false;
};

/// MFCC rows spanning one window of l frames.
std::size_t rows_per_window(std::size_t frames_per_window, double fps, const MfccConfig& cfg);

/// Cuts a preprocessed record into floor(n / l) non-overlapping windows.
/// Window i holds frames [i·l, (i+1)·l) and the MFCC rows covering the same
/// span; MFCCs are computed once over the whole utterance, zero-padded at
/// the tail if the audio is shorter than the ultrasound.
WindowSet extract_window_pairs(const UtteranceRecord& rec, std::size_t frames_per_window, const MfccConfig& cfg);

struct TrainingSample {
  std::size_t ultrasound = 0;  // index into the window list
  std::size_t audio = 0;       // index into the window list
  int label = 0;               // 1 true pair, 0 false pair
  friend bool operator==(const TrainingSample&, const TrainingSample&) = default;
};

/// Minimal identity of a window for pairing.
struct WindowKey {
  std::string utterance_id;
  std::size_t index = 0;
};

/// One true sample per window, and one false sample per window formed by a
/// random derangement of the audio windows within its utterance. Utterances
/// with a single window produce no false sample; that many true samples are
/// then dropped uniformly at random so the labels stay balanced. Output is
/// ordered by (utterance id, window index).
std::vector<TrainingSample> make_selfsup_set(const std::vector<WindowKey>& windows, std::uint64_t seed);
std::vector<TrainingSample> make_selfsup_set(const std::vector<WindowPair>& pairs, std::uint64_t seed);

enum class Split : std::uint8_t { kTrain = 0, kValidation = 1, kTest = 2 };

/// Windows, the samples drawn from them, and a split per sample.
struct SampleSet {
  std::size_t frames = 0, height = 0, width = 0;
  std::size_t audio_rows = 0, feature_dim = 0;
  std::vector<WindowPair> windows;
  std::vector<TrainingSample> samples;
  std::vector<Split> splits;  // parallel to samples

  /// Samples of one split, as indices into `samples`.
  std::vector<std::size_t> indices(Split split) const;
};

/// Assigns whole utterances to splits: a seeded shuffle of the utterance
/// ids, the first fraction to validation, the next to test, the rest to
/// training. With two or more utterances both training and validation get
/// at least one.
std::vector<Split> split_by_utterance(const std::vector<WindowPair>& windows,
                                      const std::vector<TrainingSample>& samples, double val_fraction,
                                      double test_fraction, std::uint64_t seed);

std::vector<std::uint8_t> write_sample_set(const SampleSet& set);
SampleSet read_sample_set(std::span<const std::uint8_t> bytes);

/// A view of a subset of a SampleSet for training.
class SampleSource final : public nn::PairSource {
 public:
  SampleSource(const SampleSet& set, std::vector<std::size_t> indices)
      : set_(&set), indices_(std::move(indices)) {}

  std::size_t size() const override { return indices_.size(); }
  int label(std::size_t i) const override { return set_->samples[indices_[i]].label; }
  void load(std::size_t i, float* ultrasound, float* audio) const override;

 private:
  const SampleSet* set_;
  std::vector<std::size_t> indices_;
};

}  // namespace tonguesync
