#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "synthetic.hpp"
#include "tonguesync/error.hpp"
#include "tonguesync/rng.hpp"
#include "tonguesync/sync.hpp"

using namespace tonguesync;

namespace {

UtteranceRecord two_second_fixture() {
  UtteranceRecord rec;
  rec.id = "fx";
  rec.ultrasound.params.frame_rate = 24;
  rec.ultrasound.params.scan_lines = 2;
  rec.ultrasound.params.echo_returns = 2;
  rec.ultrasound.params.field_of_view = 90;
  for (int k = 0; k < 48; ++k) rec.ultrasound.frames.push_back(Frame(2, 2, static_cast<std::uint8_t>(k)));
  rec.audio.sample_rate = 22050;
  for (int i = 0; i < 44100; ++i) rec.audio.samples.push_back(static_cast<float>(i) / 65536.0f);
  return rec;
}

SyncOptions options() {
  SyncOptions o;
  o.mfcc = MfccConfig::for_window(5, 24);
  return o;
}

UtteranceRecord synthetic(double offset_ms, std::uint64_t seed, double duration = 4.0) {
  testing::SyntheticSpec spec;
  spec.id = "syn" + std::to_string(seed);
  spec.duration_s = duration;
  spec.audio_rate = 8000;
  spec.offset_ms = offset_ms;
  spec.seed = seed;
  return testing::make_synthetic(spec);
}

// Deterministic stand-in for the model: mismatch between a window's mean
// intensity and its mean first band energy.
std::vector<double> fake_distances(const std::vector<WindowPair>& pairs) {
  std::vector<double> d;
  for (const WindowPair& p : pairs) {
    double u = 0.0, a = 0.0;
    for (float v : p.ultrasound) u += v;
    for (std::size_t r = 0; r < p.audio.rows; ++r) a += p.audio(r, 26);
    d.push_back(std::abs(u / p.ultrasound.size() + 0.01 * a / p.audio.rows + 0.3 * std::sin(p.index)));
  }
  return d;
}

}  // namespace

TEST_CASE("grids") {
  const CandidateGrid g = build_grid(-1.75, 0.75, 0.045);
  REQUIRE(g.offsets_ms.size() == 56);
  CHECK(g.offsets_ms.front() == -1750);
  CHECK(g.offsets_ms.back() == 725);
  CHECK(g == cleft_grid());
  CHECK(parse_grid("cleft") == g);
  CHECK(parse_grid("-1.75:0.75:0.045") == g);
  CHECK(build_grid(0, 0, 0.045).offsets_ms == std::vector<int>{0});
  CHECK_THROWS_AS(build_grid(0.1, -0.1, 0.045), ValidationError);
  CHECK_THROWS_AS(build_grid(0, 1, 0), ValidationError);
  CHECK_THROWS_AS(parse_grid("0.5:-0.5:0.045"), ValidationError);
  CHECK_THROWS_AS(parse_grid("a:b:c"), ValidationError);
  for (std::size_t i = 1; i < g.offsets_ms.size(); ++i) CHECK(g.offsets_ms[i] - g.offsets_ms[i - 1] == 45);
  CHECK(grid_from_offsets({90, -45, 0}).offsets_ms == std::vector<int>{-45, 0, 90});
  CHECK_THROWS_AS(grid_from_offsets({1, 1}), ValidationError);
  CHECK_THROWS_AS(grid_from_offsets({}), ValidationError);
}

TEST_CASE("apply_offset fixture") {
  const UtteranceRecord rec = two_second_fixture();
  CHECK(apply_offset(rec, 0) == rec);

  const UtteranceRecord lead = apply_offset(rec, 500);
  CHECK(lead.audio.samples.front() == rec.audio.samples[11025]);
  CHECK(lead.ultrasound.frames.front() == rec.ultrasound.frames.front());
  CHECK(lead.audio.duration() == doctest::Approx(1.5).epsilon(0.5 / 24 / 1.5));
  CHECK(lead.ultrasound.duration() == doctest::Approx(1.5).epsilon(0.5 / 24 / 1.5));

  const UtteranceRecord lag = apply_offset(rec, -500);
  CHECK(lag.ultrasound.frames.front()(0, 0) == 12);
  CHECK(lag.ultrasound.frames.size() == 36);
  CHECK(lag.audio.samples.front() == rec.audio.samples.front());
  CHECK(std::abs(lag.audio.duration() - lag.ultrasound.duration()) <= 0.5 / 24);

  CHECK_THROWS_AS(apply_offset(rec, 2000), RangeError);
  CHECK_THROWS_AS(apply_offset(rec, -2500), RangeError);
}

TEST_CASE("apply_offset properties") {
  Rng rng(77);
  const UtteranceRecord rec = synthetic(0, 4, 3.0);
  for (int trial = 0; trial < 60; ++trial) {
    const double x = std::round(rng.uniform(-1500, 1500));
    const UtteranceRecord once = apply_offset(rec, x);
    CHECK(apply_offset(once, 0) == once);
    CHECK(std::abs(once.audio.duration() - once.ultrasound.duration()) <= 0.5 / 24 + 1e-9);
    if (x < 0) {
      // Frames dropped are whole; audio dropped is the rounding remainder.
      const auto k = static_cast<std::size_t>(std::ceil(-x * 24 / 1000 - 1e-9));
      CHECK(once.ultrasound.frames.front() == rec.ultrasound.frames[k]);
      const double crop = k / 24.0 + x / 1000.0;
      CHECK(once.audio.samples.front() == rec.audio.samples[std::llround(crop * 8000)]);
    } else {
      CHECK(once.audio.samples.front() == rec.audio.samples[std::llround(x * 8)]);
    }
  }
}

TEST_CASE("candidate selection and ties") {
  const double inf = kUnscored;
  CHECK(select_candidate({-90, -45, 0, 45}, {3, 1, 2, 1}) == 1);
  CHECK(select_candidate({-90, 45, 0}, {1, 1, 1}) == 2);
  CHECK(select_candidate({-45, 45}, {1, 1}) == 0);
  CHECK(select_candidate({-45, 0, 45}, {inf, inf, 5}) == 2);
  CHECK_THROWS_AS(select_candidate({-45, 0}, {inf, inf}), UnsyncableError);
  CHECK_THROWS_AS(select_candidate({0}, {1, 2}), ValidationError);
}

TEST_CASE("a single-candidate grid returns it regardless of scores") {
  const UtteranceRecord rec = synthetic(135, 5);
  const WindowScorer scorer = fake_distances;
  CHECK(synchronise(rec, scorer, grid_from_offsets({0}), options()).predicted_offset_ms == 0);
  CHECK(synchronise(rec, scorer, grid_from_offsets({-180}), options()).predicted_offset_ms == -180);
}

TEST_CASE("synchronise invariants with a stand-in scorer") {
  const UtteranceRecord rec = synthetic(90, 6);
  const CandidateGrid grid = build_grid(-0.36, 0.36, 0.045);
  const SyncPrediction base = synchronise(rec, fake_distances, grid, options());
  CHECK(base.offsets_ms == grid.offsets_ms);
  const auto best = std::min_element(base.mean_distance.begin(), base.mean_distance.end());
  CHECK(base.predicted_offset_ms == base.offsets_ms[best - base.mean_distance.begin()]);

  const SyncPrediction ser = serial::synchronise(rec, fake_distances, grid, options());
  CHECK(ser.mean_distance == base.mean_distance);
  CHECK(ser.windows == base.windows);
  CHECK(ser.predicted_offset_ms == base.predicted_offset_ms);

  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> shuffled = grid.offsets_ms;
    rng.shuffle(shuffled);
    const SyncPrediction p = synchronise(rec, fake_distances, CandidateGrid{shuffled}, options());
    CHECK(p.predicted_offset_ms == base.predicted_offset_ms);
    for (std::size_t i = 0; i < shuffled.size(); ++i) {
      const auto j = std::find(grid.offsets_ms.begin(), grid.offsets_ms.end(), shuffled[i]) - grid.offsets_ms.begin();
      CHECK(p.mean_distance[i] == base.mean_distance[j]);
    }
  }

  for (double c : {0.001, 3.0, 1e4}) {
    const WindowScorer scaled = [c](const std::vector<WindowPair>& pairs) {
      auto d = fake_distances(pairs);
      for (auto& v : d) v *= c;
      return d;
    };
    CHECK(synchronise(rec, scaled, grid, options()).predicted_offset_ms == base.predicted_offset_ms);
  }
}

TEST_CASE("candidates without a window score infinity and all-infinite is unsyncable") {
  const UtteranceRecord rec = synthetic(0, 7, 0.5);  // 12 frames
  const SyncPrediction p = synchronise(rec, fake_distances, grid_from_offsets({-400, 0, 300}), options());
  CHECK(p.mean_distance[0] == kUnscored);
  CHECK(p.windows[0] == 0);
  CHECK(p.windows[1] == 2);
  CHECK(std::isfinite(p.mean_distance[1]));
  CHECK_THROWS_AS(synchronise(rec, fake_distances, grid_from_offsets({-400, 450}), options()), UnsyncableError);
}

TEST_CASE("prediction lines round trip") {
  SyncPrediction p;
  p.utterance_id = "spk1_005";
  p.offsets_ms = {-45, 0, 45};
  p.mean_distance = {0.25, kUnscored, 0.125};
  p.windows = {7, 0, 6};
  p.predicted_offset_ms = 45;
  const PredictionContext ctx{"read", "uxtd", "spk1", 82.5};
  const std::string line = prediction_to_json(p, ctx);
  CHECK(line.find('\n') == std::string::npos);
  CHECK(line.find("null") != std::string::npos);
  const auto back = read_predictions(line + "\n\n" + line + "\n");
  REQUIRE(back.size() == 2);
  CHECK(back[0].prediction.mean_distance == p.mean_distance);
  CHECK(back[0].prediction.windows == p.windows);
  CHECK(back[0].prediction.predicted_offset_ms == 45);
  CHECK(back[0].context.hardware_offset_ms == 82.5);
  CHECK(back[0].context.speaker == "spk1");
  CHECK(prediction_to_json(back[1].prediction, back[1].context) == line);
  CHECK_THROWS_AS(read_predictions("{\"utterance_id\": 3}"), FormatError);
  CHECK_THROWS_AS(read_predictions("not json"), FormatError);
}

TEST_CASE("a trained desk-scale model recovers a +135 ms shift") {
  const MfccConfig mfcc = MfccConfig::for_window(5, 24);
  std::vector<UtteranceRecord> train_recs;
  Rng rng(31);
  for (std::size_t i = 0; i < 24; ++i) {
    train_recs.push_back(synthetic(std::round(rng.uniform(-200, 200)), 200 + i, 6.0));
  }
  const SampleSet set = testing::build_sample_set(train_recs, 5, mfcc, 3, 0.1);
  nn::TwoStreamModel<float> model(
      testing::small_model_config(set.frames, set.height, set.width, set.audio_rows, set.feature_dim), 5);
  SampleSource train_src(set, set.indices(Split::kTrain));
  SampleSource val_src(set, set.indices(Split::kValidation));
  nn::TrainConfig tc;
  tc.epochs = 8;
  tc.batch_size = 32;
  tc.seed = 6;
  nn::train(model, train_src, val_src, tc);

  const CandidateGrid grid = build_grid(-0.36, 0.36, 0.045);
  for (std::uint64_t seed : {900u, 901u, 902u}) {
    const UtteranceRecord rec = synthetic(135, seed, 6.0);
    CHECK(std::abs(synchronise(rec, model, grid, options()).predicted_offset_ms - 135) <= 45);
    CHECK(std::abs(testing::envelope_xcorr_offset(rec, grid) - 135) <= 45);
  }
}
