#include "tonguesync/sync.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <sstream>

#include "json.hpp"
#include "tonguesync/error.hpp"

namespace tonguesync {

CandidateGrid build_grid(double min_s, double max_s, double step_s) {
  if (!std::isfinite(min_s) || !std::isfinite(max_s) || !std::isfinite(step_s)) {
    throw ValidationError("grid bounds and step must be finite");
  }
  const long long lo = std::llround(min_s * 1000.0);
  const long long hi = std::llround(max_s * 1000.0);
  const long long step = std::llround(step_s * 1000.0);
  if (step <= 0) throw ValidationError("grid step must be at least 1 ms");
  if (lo > hi) throw ValidationError("grid minimum exceeds maximum");
  if ((hi - lo) / step >= 1'000'000) throw ValidationError("grid has too many candidates");
  CandidateGrid grid;
  for (long long v = lo; v <= hi; v += step) grid.offsets_ms.push_back(static_cast<int>(v));
  return grid;
}

CandidateGrid cleft_grid() { return build_grid(-1.75, 0.75, 0.045); }

CandidateGrid parse_grid(std::string_view spec) {
  if (spec == "cleft") return cleft_grid();
  const std::string text(spec);
  const auto first = text.find(':');
  const auto second = first == std::string::npos ? std::string::npos : text.find(':', first + 1);
  if (second == std::string::npos || text.find(':', second + 1) != std::string::npos) {
    throw ValidationError("grid must be min:max:step in seconds or 'cleft', got '" + text + "'");
  }
  auto number = [&](std::size_t from, std::size_t to) {
    const std::string part = text.substr(from, to - from);
    char* end = nullptr;
    const double v = std::strtod(part.c_str(), &end);
    if (part.empty() || end != part.c_str() + part.size()) {
      throw ValidationError("grid value '" + part + "' is not a number");
    }
    return v;
  };
  return build_grid(number(0, first), number(first + 1, second), number(second + 1, text.size()));
}

CandidateGrid grid_from_offsets(std::vector<int> offsets_ms) {
  if (offsets_ms.empty()) throw ValidationError("grid is empty");
  std::sort(offsets_ms.begin(), offsets_ms.end());
  if (std::adjacent_find(offsets_ms.begin(), offsets_ms.end()) != offsets_ms.end()) {
    throw ValidationError("grid offsets must be distinct");
  }
  return {std::move(offsets_ms)};
}

UtteranceRecord apply_offset(const UtteranceRecord& rec, double offset_ms) {
  if (!std::isfinite(offset_ms)) throw RangeError("offset must be finite");
  if (offset_ms == 0.0) return rec;
  const double fps = rec.ultrasound.params.frame_rate;
  const double rate = rec.audio.sample_rate;
  const double shift_s = std::abs(offset_ms) / 1000.0;
  if (shift_s >= rec.audio.duration() || shift_s >= rec.ultrasound.duration()) {
    throw RangeError("offset " + std::to_string(offset_ms) + " ms is not shorter than both signals");
  }

  UtteranceRecord out = rec;
  auto& frames = out.ultrasound.frames;
  auto& samples = out.audio.samples;
  if (offset_ms > 0.0) {
    const auto drop = static_cast<std::size_t>(std::llround(shift_s * rate));
    samples.erase(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(std::min(drop, samples.size())));
  } else {
    // Small tolerance so exact frame multiples are not pushed up a frame by
    // floating-point noise.
    const auto k = static_cast<std::size_t>(std::ceil(shift_s * fps - 1e-9));
    if (k >= frames.size()) throw RangeError("offset leaves no ultrasound frames");
    frames.erase(frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(k));
    const auto crop = static_cast<std::size_t>(std::llround((static_cast<double>(k) / fps - shift_s) * rate));
    samples.erase(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(std::min(crop, samples.size())));
  }

  const double audio_s = static_cast<double>(samples.size()) / rate;
  const double ultra_s = static_cast<double>(frames.size()) / fps;
  if (audio_s > ultra_s) {
    samples.resize(std::min(samples.size(), static_cast<std::size_t>(std::llround(ultra_s * rate))));
  } else {
    const auto keep = static_cast<std::size_t>(std::floor(audio_s * fps + 0.5));
    frames.resize(std::min(frames.size(), keep));
  }
  return out;
}

std::size_t select_candidate(const std::vector<int>& offsets_ms, const std::vector<double>& mean_distance) {
  if (offsets_ms.size() != mean_distance.size() || offsets_ms.empty()) {
    throw ValidationError("distance profile does not match the grid");
  }
  std::size_t best = offsets_ms.size();
  for (std::size_t i = 0; i < offsets_ms.size(); ++i) {
    const double d = mean_distance[i];
    if (!std::isfinite(d)) continue;
    if (best == offsets_ms.size() || d < mean_distance[best] ||
        (d == mean_distance[best] && std::abs(offsets_ms[i]) < std::abs(offsets_ms[best]))) {
      best = i;
    }
  }
  if (best == offsets_ms.size()) throw UnsyncableError("no candidate offset leaves a complete window");
  return best;
}

WindowScorer model_scorer(const nn::TwoStreamModel<float>& model, std::size_t batch_size) {
  return [&model, batch_size](const std::vector<WindowPair>& pairs) {
    const nn::ModelConfig& cfg = model.config();
    const std::size_t su = cfg.ultrasound_input(1).size();
    const std::size_t sm = cfg.audio_input(1).size();
    std::vector<double> out;
    out.reserve(pairs.size());
    for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
      const std::size_t n = std::min(batch_size, pairs.size() - start);
      nn::Tensor<float> u(cfg.ultrasound_input(n));
      nn::Tensor<float> m(cfg.audio_input(n));
      for (std::size_t i = 0; i < n; ++i) {
        const WindowPair& p = pairs[start + i];
        if (p.ultrasound.size() != su || p.audio.size() != sm) {
          throw ShapeError("window " + std::to_string(p.index) + " of " + p.utterance_id +
                           " does not match the model input shape");
        }
        std::copy(p.ultrasound.begin(), p.ultrasound.end(), u.data() + i * su);
        std::copy(p.audio.data.begin(), p.audio.data.end(), m.data() + i * sm);
      }
      const nn::Embeddings<float> e = model.infer(u, m);
      for (double d : nn::pair_distances(e.u, e.m)) out.push_back(d);
    }
    return out;
  };
}

namespace {

struct CandidateScore {
  double mean = kUnscored;
  std::size_t windows = 0;
};

CandidateScore score_candidate(const UtteranceRecord& rec, const WindowScorer& scorer, int offset_ms,
                               const SyncOptions& options) {
  UtteranceRecord shifted;
  try {
    shifted = apply_offset(rec, offset_ms);
  } catch (const RangeError&) {
    return {};
  }
  if (shifted.audio.samples.empty()) return {};
  const WindowSet set = extract_window_pairs(shifted, options.frames_per_window, options.mfcc);
  if (set.pairs.empty()) return {};
  const std::vector<double> d = scorer(set.pairs);
  double sum = 0.0;
  for (double v : d) sum += v;
  return {sum / static_cast<double>(d.size()), d.size()};
}

SyncPrediction assemble(const UtteranceRecord& rec, const CandidateGrid& grid, const std::vector<CandidateScore>& s) {
  SyncPrediction p;
  p.utterance_id = rec.id;
  p.offsets_ms = grid.offsets_ms;
  for (const CandidateScore& c : s) {
    p.mean_distance.push_back(c.mean);
    p.windows.push_back(c.windows);
  }
  p.predicted_offset_ms = p.offsets_ms[select_candidate(p.offsets_ms, p.mean_distance)];
  return p;
}

void check_grid(const CandidateGrid& grid) {
  if (grid.offsets_ms.empty()) throw ValidationError("grid is empty");
}

}  // namespace

SyncPrediction synchronise(const UtteranceRecord& rec, const WindowScorer& scorer, const CandidateGrid& grid,
                           const SyncOptions& options) {
  check_grid(grid);
  const auto n = static_cast<std::ptrdiff_t>(grid.offsets_ms.size());
  std::vector<CandidateScore> scores(grid.offsets_ms.size());
  std::vector<std::exception_ptr> errors(grid.offsets_ms.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      scores[k] = score_candidate(rec, scorer, grid.offsets_ms[k], options);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return assemble(rec, grid, scores);
}

SyncPrediction synchronise(const UtteranceRecord& rec, const nn::TwoStreamModel<float>& model,
                           const CandidateGrid& grid, const SyncOptions& options) {
  return synchronise(rec, model_scorer(model), grid, options);
}

namespace serial {
SyncPrediction synchronise(const UtteranceRecord& rec, const WindowScorer& scorer, const CandidateGrid& grid,
                           const SyncOptions& options) {
  check_grid(grid);
  std::vector<CandidateScore> scores;
  for (int offset : grid.offsets_ms) scores.push_back(score_candidate(rec, scorer, offset, options));
  return assemble(rec, grid, scores);
}
}  // namespace serial

std::string prediction_to_json(const SyncPrediction& p, const PredictionContext& ctx) {
  nlohmann::ordered_json j;
  j["utterance_id"] = p.utterance_id;
  j["type"] = ctx.type;
  j["dataset"] = ctx.dataset;
  j["speaker"] = ctx.speaker;
  j["hardware_offset_ms"] = ctx.hardware_offset_ms;
  j["predicted_offset_ms"] = p.predicted_offset_ms;
  auto profile = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < p.offsets_ms.size(); ++i) {
    nlohmann::ordered_json c;
    c["offset_ms"] = p.offsets_ms[i];
    if (std::isfinite(p.mean_distance[i])) {
      c["mean_distance"] = p.mean_distance[i];
    } else {
      c["mean_distance"] = nullptr;
    }
    c["windows"] = p.windows[i];
    profile.push_back(std::move(c));
  }
  j["profile"] = std::move(profile);
  return j.dump();
}

std::vector<PredictionRecord> read_predictions(std::string_view jsonl) {
  std::vector<PredictionRecord> out;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PredictionRecord r;
      r.prediction.utterance_id = j.at("utterance_id").get<std::string>();
      r.prediction.predicted_offset_ms = j.at("predicted_offset_ms").get<int>();
      r.context.type = j.value("type", std::string{});
      r.context.dataset = j.value("dataset", std::string{});
      r.context.speaker = j.value("speaker", std::string{});
      r.context.hardware_offset_ms = j.value("hardware_offset_ms", 0.0);
      if (j.contains("profile")) {
        for (const auto& c : j.at("profile")) {
          r.prediction.offsets_ms.push_back(c.at("offset_ms").get<int>());
          const auto& d = c.at("mean_distance");
          r.prediction.mean_distance.push_back(d.is_null() ? kUnscored : d.get<double>());
          r.prediction.windows.push_back(c.value("windows", std::size_t{0}));
        }
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("prediction line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace tonguesync
