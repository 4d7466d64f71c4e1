// Serial reference against OpenMP kernel for each parallel hot path.
// OMP_NUM_THREADS sets the thread count of the parallel variants.

#include <benchmark/benchmark.h>

#include <cmath>

#include "tonguesync/data_io.hpp"
#include "tonguesync/dsp.hpp"
#include "tonguesync/nn/kernels.hpp"
#include "tonguesync/rng.hpp"
#include "tonguesync/sync.hpp"

using namespace tonguesync;

namespace {

nn::Tensor<float> random_tensor(nn::Shape s, std::uint64_t seed) {
  Rng rng(seed);
  nn::Tensor<float> t(s);
  for (auto& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

// First ultrasound conv layer at full size, batch of 16.
struct ConvInputs {
  nn::Tensor<float> in = random_tensor({16, 5, 63, 138}, 1);
  nn::Tensor<float> weight = random_tensor({23, 5, 5, 5}, 2);
  nn::Tensor<float> bias = random_tensor({23, 1, 1, 1}, 3);
  nn::Tensor<float> out{nn::conv_output_shape(in.shape(), 23, 5)};
};

void BM_ConvForwardSerial(benchmark::State& state) {
  ConvInputs c;
  for (auto _ : state) {
    nn::serial::conv2d_forward(c.in, c.weight, std::span<const float>(c.bias.span()), c.out);
    benchmark::DoNotOptimize(c.out.data());
  }
}

void BM_ConvForwardParallel(benchmark::State& state) {
  ConvInputs c;
  for (auto _ : state) {
    nn::parallel::conv2d_forward(c.in, c.weight, std::span<const float>(c.bias.span()), c.out);
    benchmark::DoNotOptimize(c.out.data());
  }
}

Frame raw_frame() {
  Frame f(63, 412);
  Rng rng(4);
  for (auto& v : f.data) v = static_cast<std::uint8_t>(rng.index(256));
  return f;
}

UltrasoundParams raw_params() {
  UltrasoundParams p;
  p.frame_rate = 120;
  p.scan_lines = 63;
  p.echo_returns = 412;
  p.field_of_view = 135;
  return p;
}

void BM_FanSerial(benchmark::State& state) {
  const Frame f = raw_frame();
  const UltrasoundParams p = raw_params();
  for (auto _ : state) benchmark::DoNotOptimize(serial::fan_transform(f, p, 300, 400));
}

void BM_FanParallel(benchmark::State& state) {
  const Frame f = raw_frame();
  const UltrasoundParams p = raw_params();
  for (auto _ : state) benchmark::DoNotOptimize(fan_transform(f, p, 300, 400));
}

AudioSignal two_seconds_at_16k() {
  AudioSignal a;
  a.sample_rate = 16000;
  Rng rng(5);
  for (int i = 0; i < 32000; ++i) a.samples.push_back(static_cast<float>(0.3 * rng.normal()));
  return a;
}

void BM_ResampleSerial(benchmark::State& state) {
  const AudioSignal a = two_seconds_at_16k();
  for (auto _ : state) benchmark::DoNotOptimize(serial::resample_audio(a, kTargetAudioRate));
}

void BM_ResampleParallel(benchmark::State& state) {
  const AudioSignal a = two_seconds_at_16k();
  for (auto _ : state) benchmark::DoNotOptimize(resample_audio(a, kTargetAudioRate));
}

// Preprocessed 4 s utterance scored over the 56-candidate grid with a cheap
// stand-in scorer, so the timing is dominated by offsetting, MFCCs and
// window extraction.
UtteranceRecord preprocessed_utterance() {
  UtteranceRecord rec;
  rec.id = "bench";
  rec.ultrasound.params = raw_params();
  rec.ultrasound.params.frame_rate = kTargetFrameRate;
  rec.ultrasound.params.scan_lines = kTargetFrameHeight;
  rec.ultrasound.params.echo_returns = kTargetFrameWidth;
  Rng rng(6);
  for (int k = 0; k < 96; ++k) {
    Frame f(kTargetFrameHeight, kTargetFrameWidth);
    for (auto& v : f.data) v = static_cast<std::uint8_t>(rng.index(256));
    rec.ultrasound.frames.push_back(std::move(f));
  }
  rec.audio.sample_rate = kTargetAudioRate;
  for (int i = 0; i < 4 * 22050; ++i) rec.audio.samples.push_back(static_cast<float>(0.2 * std::sin(i * 0.05)));
  return rec;
}

std::vector<double> mean_intensity(const std::vector<WindowPair>& pairs) {
  std::vector<double> d;
  for (const auto& p : pairs) {
    double s = 0.0;
    for (float v : p.ultrasound) s += v;
    d.push_back(s / static_cast<double>(p.ultrasound.size()));
  }
  return d;
}

void BM_SyncSerial(benchmark::State& state) {
  const UtteranceRecord rec = preprocessed_utterance();
  const CandidateGrid grid = cleft_grid();
  for (auto _ : state) benchmark::DoNotOptimize(serial::synchronise(rec, mean_intensity, grid));
}

void BM_SyncParallel(benchmark::State& state) {
  const UtteranceRecord rec = preprocessed_utterance();
  const CandidateGrid grid = cleft_grid();
  for (auto _ : state) benchmark::DoNotOptimize(synchronise(rec, mean_intensity, grid));
}

}  // namespace

BENCHMARK(BM_ConvForwardSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForwardParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_FanSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FanParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ResampleSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ResampleParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_SyncSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SyncParallel)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
