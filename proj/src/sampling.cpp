#include "tonguesync/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "binary_io.hpp"
#include "tonguesync/error.hpp"
#include "tonguesync/rng.hpp"

namespace tonguesync {

std::size_t rows_per_window(std::size_t frames_per_window, double fps, const MfccConfig& cfg) {
  const double rows = window_time(frames_per_window, fps) / cfg.step_seconds;
  return static_cast<std::size_t>(std::max<long long>(1, std::llround(rows)));
}

WindowSet extract_window_pairs(const UtteranceRecord& rec, std::size_t frames_per_window, const MfccConfig& cfg) {
  if (frames_per_window == 0) throw ValidationError("frames per window must be at least 1");
  cfg.validate();
  const auto& seq = rec.ultrasound;
  WindowSet out;
  const std::size_t count = seq.frames.size() / frames_per_window;
  if (count == 0) {
    out.too_short = true;
    return out;
  }
  const std::size_t h = seq.params.scan_lines;
  const std::size_t w = seq.params.echo_returns;
  const std::size_t rows = rows_per_window(frames_per_window, seq.params.frame_rate, cfg);
  const MfccMatrix features = mfcc(rec.audio, cfg, count * rows);

  out.pairs.resize(count);
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    WindowPair& p = out.pairs[i];
    p.utterance_id = rec.id;
    p.index = i;
    p.frames = frames_per_window;
    p.height = h;
    p.width = w;
    p.ultrasound.resize(frames_per_window * h * w);
    for (std::size_t f = 0; f < frames_per_window; ++f) {
      const Frame& frame = seq.frames[i * frames_per_window + f];
      for (std::size_t k = 0; k < h * w; ++k) p.ultrasound[f * h * w + k] = static_cast<float>(frame.data[k]) / 255.0f;
    }
    p.audio = MfccMatrix(rows, features.cols);
    std::copy_n(features.data.begin() + static_cast<std::ptrdiff_t>(i * rows * features.cols), rows * features.cols,
                p.audio.data.begin());
  }
  return out;
}

std::vector<TrainingSample> make_selfsup_set(const std::vector<WindowKey>& windows, std::uint64_t seed) {
  const std::size_t n = windows.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (windows[a].utterance_id != windows[b].utterance_id) return windows[a].utterance_id < windows[b].utterance_id;
    return windows[a].index < windows[b].index;
  });

  Rng rng(seed);
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> false_audio(n, kNone);
  std::size_t singles = 0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start + 1;
    while (end < n && windows[order[end]].utterance_id == windows[order[start]].utterance_id) ++end;
    const std::size_t size = end - start;
    if (size == 1) {
      ++singles;
    } else {
      const std::vector<std::size_t> perm = rng.derangement(size);
      for (std::size_t j = 0; j < size; ++j) false_audio[order[start + j]] = order[start + perm[j]];
    }
    start = end;
  }

  std::vector<bool> dropped(n, false);
  if (singles > 0) {
    std::vector<std::size_t> candidates = order;
    rng.shuffle(candidates);
    for (std::size_t k = 0; k < singles; ++k) dropped[candidates[k]] = true;
  }

  std::vector<TrainingSample> out;
  out.reserve(2 * (n - singles));
  for (std::size_t w : order) {
    if (!dropped[w]) out.push_back({w, w, 1});
    if (false_audio[w] != kNone) out.push_back({w, false_audio[w], 0});
  }
  return out;
}

std::vector<TrainingSample> make_selfsup_set(const std::vector<WindowPair>& pairs, std::uint64_t seed) {
  std::vector<WindowKey> keys;
  keys.reserve(pairs.size());
  for (const WindowPair& p : pairs) keys.push_back({p.utterance_id, p.index});
  return make_selfsup_set(keys, seed);
}

std::vector<std::size_t> SampleSet::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (splits[i] == split) out.push_back(i);
  }
  return out;
}

std::vector<Split> split_by_utterance(const std::vector<WindowPair>& windows,
                                      const std::vector<TrainingSample>& samples, double val_fraction,
                                      double test_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && test_fraction >= 0.0 && val_fraction + test_fraction < 1.0)) {
    throw ValidationError("split fractions must be non-negative and sum to less than 1");
  }
  std::vector<std::string> ids;
  for (const WindowPair& w : windows) ids.push_back(w.utterance_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Rng rng(seed);
  rng.shuffle(ids);

  const std::size_t n = ids.size();
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  if (n >= 2) {
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    n_test = std::min(n_test, n - 1 - n_val);
  } else {
    n_val = 0;
    n_test = 0;
  }
  std::map<std::string, Split> assignment;
  for (std::size_t i = 0; i < n; ++i) {
    assignment[ids[i]] = i < n_val ? Split::kValidation : i < n_val + n_test ? Split::kTest : Split::kTrain;
  }
  std::vector<Split> out;
  out.reserve(samples.size());
  for (const TrainingSample& s : samples) out.push_back(assignment.at(windows[s.ultrasound].utterance_id));
  return out;
}

namespace {
constexpr char kSampleMagic[8] = {'T', 'S', 'Y', 'N', 'S', 'M', 'P', 'L'};
constexpr std::uint32_t kSampleVersion = 1;
}  // namespace

std::vector<std::uint8_t> write_sample_set(const SampleSet& set) {
  binary::Writer w;
  w.bytes(kSampleMagic, sizeof kSampleMagic);
  w.u32(kSampleVersion);
  w.size(set.frames);
  w.size(set.height);
  w.size(set.width);
  w.size(set.audio_rows);
  w.size(set.feature_dim);
  w.size(set.windows.size());
  for (const WindowPair& p : set.windows) {
    if (p.ultrasound.size() != set.frames * set.height * set.width || p.audio.rows != set.audio_rows ||
        p.audio.cols != set.feature_dim) {
      throw ShapeError("window " + p.utterance_id + "#" + std::to_string(p.index) + " does not match the set shape");
    }
    w.size(p.utterance_id.size());
    w.bytes(p.utterance_id.data(), p.utterance_id.size());
    w.size(p.index);
    for (float v : p.ultrasound) w.f32(v);
    for (float v : p.audio.data) w.f32(v);
  }
  w.size(set.samples.size());
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const TrainingSample& s = set.samples[i];
    w.size(s.ultrasound);
    w.size(s.audio);
    w.u8(static_cast<std::uint8_t>(s.label));
    w.u8(static_cast<std::uint8_t>(set.splits.at(i)));
  }
  return w.take();
}

SampleSet read_sample_set(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes, "sample set");
  if (r.str(sizeof kSampleMagic) != std::string(kSampleMagic, sizeof kSampleMagic)) {
    throw FormatError("not a sample set file");
  }
  const std::uint32_t version = r.u32();
  if (version != kSampleVersion) throw FormatError("sample set version " + std::to_string(version) + " is not supported");
  SampleSet set;
  set.frames = r.u32();
  set.height = r.u32();
  set.width = r.u32();
  set.audio_rows = r.u32();
  set.feature_dim = r.u32();
  const std::size_t per_window = (set.frames * set.height * set.width + set.audio_rows * set.feature_dim) * 4;
  const std::uint32_t n_windows = r.u32();
  if (per_window > 0 && n_windows > r.remaining() / per_window) throw FormatError("sample set truncated");
  set.windows.resize(n_windows);
  for (WindowPair& p : set.windows) {
    p.utterance_id = r.str(r.u32());
    p.index = r.u32();
    p.frames = set.frames;
    p.height = set.height;
    p.width = set.width;
    p.ultrasound.resize(set.frames * set.height * set.width);
    for (float& v : p.ultrasound) v = r.f32();
    p.audio = MfccMatrix(set.audio_rows, set.feature_dim);
    for (float& v : p.audio.data) v = r.f32();
  }
  const std::uint32_t n_samples = r.u32();
  if (n_samples > r.remaining() / 10) throw FormatError("sample set truncated");
  for (std::uint32_t i = 0; i < n_samples; ++i) {
    TrainingSample s;
    s.ultrasound = r.u32();
    s.audio = r.u32();
    s.label = r.u8();
    const std::uint8_t split = r.u8();
    if (s.ultrasound >= n_windows || s.audio >= n_windows || s.label > 1 || split > 2) {
      throw FormatError("sample " + std::to_string(i) + " is malformed");
    }
    set.samples.push_back(s);
    set.splits.push_back(static_cast<Split>(split));
  }
  if (!r.done()) throw FormatError("trailing bytes after sample set");
  return set;
}

void SampleSource::load(std::size_t i, float* ultrasound, float* audio) const {
  const TrainingSample& s = set_->samples[indices_[i]];
  const WindowPair& u = set_->windows[s.ultrasound];
  const WindowPair& m = set_->windows[s.audio];
  std::copy(u.ultrasound.begin(), u.ultrasound.end(), ultrasound);
  std::copy(m.audio.data.begin(), m.audio.data.end(), audio);
}

}  // namespace tonguesync
