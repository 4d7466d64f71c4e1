#include "tonguesync/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "tonguesync/error.hpp"

namespace tonguesync {
namespace {

// Windowed-sinc resampler constants.
constexpr double kZeroCrossings = 16.0;
constexpr double kKaiserBeta = 8.6;
constexpr std::size_t kWindowTableSize = 8192;

class KaiserTable {
 public:
  KaiserTable() : table_(kWindowTableSize + 2) {
    const double norm = std::cyl_bessel_i(0.0, kKaiserBeta);
    for (std::size_t i = 0; i < table_.size(); ++i) {
      const double u = std::min(1.0, static_cast<double>(i) / kWindowTableSize);
      table_[i] = std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - u * u)) / norm;
    }
  }

  /// Window value at |u| in [0, 1].
  double operator()(double u) const {
    const double pos = u * kWindowTableSize;
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return table_[i] + frac * (table_[i + 1] - table_[i]);
  }

 private:
  std::vector<double> table_;
};

const KaiserTable& kaiser() {
  static const KaiserTable table;
  return table;
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

struct ResampleKernel {
  double step = 0.0;        // input samples per output sample
  double cutoff = 1.0;      // relative to the input Nyquist
  double half_width = 0.0;  // in input samples
};

ResampleKernel make_kernel(double source_rate, double target_rate) {
  ResampleKernel k;
  k.step = source_rate / target_rate;
  k.cutoff = std::min(1.0, target_rate / source_rate);
  k.half_width = kZeroCrossings / k.cutoff;
  return k;
}

float resample_one(std::span<const float> in, const ResampleKernel& k, std::size_t n) {
  const double t = static_cast<double>(n) * k.step;
  const auto lo = static_cast<std::ptrdiff_t>(std::ceil(t - k.half_width));
  const auto hi = static_cast<std::ptrdiff_t>(std::floor(t + k.half_width));
  const auto last = static_cast<std::ptrdiff_t>(in.size()) - 1;
  const KaiserTable& window = kaiser();
  double acc = 0.0;
  for (std::ptrdiff_t i = std::max<std::ptrdiff_t>(lo, 0); i <= std::min(hi, last); ++i) {
    const double u = t - static_cast<double>(i);
    acc += in[static_cast<std::size_t>(i)] * k.cutoff * sinc(k.cutoff * u) * window(std::abs(u) / k.half_width);
  }
  return static_cast<float>(acc);
}

bool resample_trivial(const AudioSignal& signal, double target_rate, AudioSignal& out) {
  if (!(target_rate > 0.0) || !std::isfinite(target_rate)) throw ValidationError("target rate must be positive");
  if (!(signal.sample_rate > 0.0)) throw ValidationError("source sample rate must be positive");
  out.sample_rate = target_rate;
  if (signal.samples.empty()) return true;
  if (signal.sample_rate == target_rate) {
    out.samples = signal.samples;
    return true;
  }
  return false;
}

std::size_t resampled_length(std::size_t n, double source_rate, double target_rate) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * target_rate / source_rate));
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

struct PlanDeleter {
  void operator()(fftw_plan_s* p) const {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(p);
  }
};

using RealBuffer = std::unique_ptr<double[], FftwDeleter>;
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwDeleter>;
using Plan = std::unique_ptr<fftw_plan_s, PlanDeleter>;

RealBuffer alloc_real(std::size_t n) { return RealBuffer(fftw_alloc_real(n)); }
ComplexBuffer alloc_complex(std::size_t n) { return ComplexBuffer(fftw_alloc_complex(n)); }

}  // namespace

double window_time(std::size_t frames, double fps) {
  if (frames < 1) throw ValidationError("window must contain at least one frame");
  if (!(fps > 0.0)) throw ValidationError("frame rate must be positive");
  return static_cast<double>(frames) / fps;
}

MfccConfig MfccConfig::for_window(std::size_t frames_per_window, double fps) {
  const double t = window_time(frames_per_window, fps);
  MfccConfig cfg;
  cfg.window_seconds = t / (static_cast<double>(frames_per_window) * 2.0);
  cfg.step_seconds = t / (static_cast<double>(frames_per_window) * 4.0);
  return cfg;
}

void MfccConfig::validate() const {
  if (!(step_seconds > 0.0) || !(step_seconds <= window_seconds)) {
    throw ValidationError("mfcc step must satisfy 0 < step <= window");
  }
  if (num_coefficients < 1) throw ValidationError("mfcc needs at least one coefficient");
  if (num_coefficients > num_mel_filters) throw ValidationError("mfcc coefficients exceed mel filter count");
  if (num_mel_filters < kBandSummaries) throw ValidationError("mfcc needs at least four mel filters");
  if (feature_dim < num_coefficients) throw ValidationError("mfcc feature_dim is smaller than the coefficient count");
  if (fft_size != 0 && (fft_size & (fft_size - 1)) != 0) throw ValidationError("mfcc fft_size must be a power of two");
  if (!(log_floor > 0.0)) throw ValidationError("mfcc log floor must be positive");
}

AudioSignal resample_audio(const AudioSignal& signal, double target_rate) {
  AudioSignal out;
  if (resample_trivial(signal, target_rate, out)) return out;
  const ResampleKernel kernel = make_kernel(signal.sample_rate, target_rate);
  const std::size_t n_out = resampled_length(signal.samples.size(), signal.sample_rate, target_rate);
  out.samples.resize(n_out);
  const std::span<const float> in(signal.samples);
  const auto count = static_cast<std::ptrdiff_t>(n_out);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t n = 0; n < count; ++n) {
    out.samples[static_cast<std::size_t>(n)] = resample_one(in, kernel, static_cast<std::size_t>(n));
  }
  return out;
}

namespace serial {
AudioSignal resample_audio(const AudioSignal& signal, double target_rate) {
  AudioSignal out;
  if (resample_trivial(signal, target_rate, out)) return out;
  const ResampleKernel kernel = make_kernel(signal.sample_rate, target_rate);
  const std::size_t n_out = resampled_length(signal.samples.size(), signal.sample_rate, target_rate);
  out.samples.resize(n_out);
  for (std::size_t n = 0; n < n_out; ++n) out.samples[n] = resample_one(signal.samples, kernel, n);
  return out;
}
}  // namespace serial

RawUltrasoundSequence resample_ultrasound(const RawUltrasoundSequence& seq, double target_fps) {
  if (!(target_fps > 0.0) || !std::isfinite(target_fps)) throw ValidationError("target frame rate must be positive");
  seq.params.validate();
  RawUltrasoundSequence out;
  out.params = seq.params;
  out.params.frame_rate = target_fps;
  if (seq.params.frame_rate == target_fps) {
    out.frames = seq.frames;
    if (out.frames.empty()) throw EmptyDataError("ultrasound resampling produced no frames");
    return out;
  }
  const double ratio = seq.params.frame_rate / target_fps;
  const double count = std::floor(static_cast<double>(seq.frames.size()) / ratio + 0.5);
  if (count < 1.0) throw EmptyDataError("ultrasound resampling produced no frames");
  const auto n_out = static_cast<std::size_t>(count);
  out.frames.reserve(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    auto src = static_cast<std::size_t>(std::floor(static_cast<double>(k) * ratio + 0.5));
    src = std::min(src, seq.frames.size() - 1);
    out.frames.push_back(seq.frames[src]);
  }
  return out;
}

Frame resize_frame(const Frame& frame, std::size_t out_rows, std::size_t out_cols) {
  if (out_rows < 1 || out_cols < 1) throw ShapeError("resize target must be at least 1x1");
  if (frame.empty()) throw ShapeError("cannot resize an empty frame");
  if (frame.rows == out_rows && frame.cols == out_cols) return frame;

  const double sy = static_cast<double>(frame.rows) / static_cast<double>(out_rows);
  const double sx = static_cast<double>(frame.cols) / static_cast<double>(out_cols);
  const double max_y = static_cast<double>(frame.rows - 1);
  const double max_x = static_cast<double>(frame.cols - 1);

  // Column taps are shared by every output row.
  std::vector<std::size_t> x0(out_cols), x1(out_cols);
  std::vector<double> ax(out_cols);
  for (std::size_t c = 0; c < out_cols; ++c) {
    const double x = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, max_x);
    x0[c] = static_cast<std::size_t>(x);
    x1[c] = std::min(x0[c] + 1, frame.cols - 1);
    ax[c] = x - static_cast<double>(x0[c]);
  }

  Frame out(out_rows, out_cols);
  for (std::size_t r = 0; r < out_rows; ++r) {
    const double y = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, frame.rows - 1);
    const double ay = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < out_cols; ++c) {
      const double top = (1.0 - ax[c]) * frame(y0, x0[c]) + ax[c] * frame(y0, x1[c]);
      const double bottom = (1.0 - ax[c]) * frame(y1, x0[c]) + ax[c] * frame(y1, x1[c]);
      out(r, c) = static_cast<std::uint8_t>(std::clamp(std::nearbyint((1.0 - ay) * top + ay * bottom), 0.0, 255.0));
    }
  }
  return out;
}

RawUltrasoundSequence resize_sequence(const RawUltrasoundSequence& seq, std::size_t out_rows, std::size_t out_cols) {
  RawUltrasoundSequence out;
  out.params = seq.params;
  out.params.scan_lines = out_rows;
  out.params.echo_returns = out_cols;
  out.frames.resize(seq.frames.size());
  const auto count = static_cast<std::ptrdiff_t>(seq.frames.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    out.frames[static_cast<std::size_t>(i)] = resize_frame(seq.frames[static_cast<std::size_t>(i)], out_rows, out_cols);
  }
  return out;
}

Matrix<double> mel_filterbank(std::size_t num_filters, std::size_t fft_size, double sample_rate) {
  const std::size_t bins = fft_size / 2 + 1;
  Matrix<double> fb(num_filters, bins, 0.0);
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(num_filters + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(num_filters + 1));
  }
  for (std::size_t m = 0; m < num_filters; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    for (std::size_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / static_cast<double>(fft_size);
      if (f > left && f <= centre) {
        fb(m, b) = (f - left) / (centre - left);
      } else if (f > centre && f < right) {
        fb(m, b) = (right - f) / (right - centre);
      }
    }
  }
  return fb;
}

std::size_t mfcc_row_count(std::size_t num_samples, double sample_rate, const MfccConfig& cfg) {
  const double step_samples = cfg.step_seconds * sample_rate;
  const auto rows = static_cast<std::size_t>(std::llround(static_cast<double>(num_samples) / step_samples));
  return std::max<std::size_t>(rows, 1);
}

MfccMatrix mfcc(const AudioSignal& signal, const MfccConfig& cfg) {
  cfg.validate();
  if (!(signal.sample_rate > 0.0)) throw ValidationError("sample rate must be positive");
  return mfcc(signal, cfg, mfcc_row_count(signal.samples.size(), signal.sample_rate, cfg));
}

MfccMatrix mfcc(const AudioSignal& signal, const MfccConfig& cfg, std::size_t num_rows) {
  cfg.validate();
  if (!(signal.sample_rate > 0.0)) throw ValidationError("sample rate must be positive");
  if (num_rows < 1) throw ValidationError("mfcc needs at least one row");

  const double rate = signal.sample_rate;
  const auto window_len =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.window_seconds * rate)));
  const std::size_t nfft = cfg.fft_size != 0 ? cfg.fft_size : next_pow2(window_len);
  if (nfft < window_len) throw ValidationError("mfcc fft_size is shorter than the window");
  const std::size_t bins = nfft / 2 + 1;
  const std::size_t n_mel = cfg.num_mel_filters;
  const std::size_t n_cep = cfg.num_coefficients;

  std::vector<double> emphasised(signal.samples.size());
  for (std::size_t i = 0; i < emphasised.size(); ++i) {
    const double prev = i == 0 ? 0.0 : signal.samples[i - 1];
    emphasised[i] = signal.samples[i] - cfg.pre_emphasis * prev;
  }

  std::vector<double> hamming(window_len);
  for (std::size_t i = 0; i < window_len; ++i) {
    hamming[i] = window_len == 1 ? 1.0
                                 : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                          static_cast<double>(window_len - 1));
  }

  const Matrix<double> fb = mel_filterbank(n_mel, nfft, rate);

  Matrix<double> dct(n_cep, n_mel);
  for (std::size_t k = 0; k < n_cep; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n_mel));
    for (std::size_t m = 0; m < n_mel; ++m) {
      dct(k, m) = scale * std::cos(std::numbers::pi * static_cast<double>(k) * (static_cast<double>(m) + 0.5) /
                                   static_cast<double>(n_mel));
    }
  }

  Plan plan;
  {
    auto in = alloc_real(nfft);
    auto out = alloc_complex(bins);
    std::lock_guard lock(fftw_planner_mutex());
    plan.reset(fftw_plan_dft_r2c_1d(static_cast<int>(nfft), in.get(), out.get(), FFTW_ESTIMATE));
  }
  if (!plan) throw NumericError("fftw planning failed");

  Matrix<double> cepstra(num_rows, n_cep);
  Matrix<double> log_mel(num_rows, n_mel);
  const double step_samples = cfg.step_seconds * rate;
  const auto rows = static_cast<std::ptrdiff_t>(num_rows);

#pragma omp parallel
  {
    auto frame = alloc_real(nfft);
    auto spectrum = alloc_complex(bins);
    std::vector<double> power(bins);
#pragma omp for schedule(static)
    for (std::ptrdiff_t row = 0; row < rows; ++row) {
      const auto start = static_cast<std::size_t>(std::llround(static_cast<double>(row) * step_samples));
      for (std::size_t i = 0; i < nfft; ++i) {
        const std::size_t src = start + i;
        frame[i] = (i < window_len && src < emphasised.size()) ? emphasised[src] * hamming[i] : 0.0;
      }
      fftw_execute_dft_r2c(plan.get(), frame.get(), spectrum.get());
      for (std::size_t b = 0; b < bins; ++b) {
        power[b] = (spectrum[b][0] * spectrum[b][0] + spectrum[b][1] * spectrum[b][1]) / static_cast<double>(nfft);
      }
      const auto r = static_cast<std::size_t>(row);
      for (std::size_t m = 0; m < n_mel; ++m) {
        double e = 0.0;
        for (std::size_t b = 0; b < bins; ++b) e += fb(m, b) * power[b];
        log_mel(r, m) = std::log(std::max(e, cfg.log_floor));
      }
      for (std::size_t k = 0; k < n_cep; ++k) {
        double c = 0.0;
        for (std::size_t m = 0; m < n_mel; ++m) c += dct(k, m) * log_mel(r, m);
        cepstra(r, k) = c;
      }
    }
  }

  // Regression deltas over +-2 frames with edge replication.
  Matrix<double> deltas(num_rows, n_cep);
  const auto clamp_row = [&](std::ptrdiff_t r) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(r, 0, rows - 1));
  };
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < n_cep; ++k) {
      const double d1 = cepstra(clamp_row(r + 1), k) - cepstra(clamp_row(r - 1), k);
      const double d2 = cepstra(clamp_row(r + 2), k) - cepstra(clamp_row(r - 2), k);
      deltas(static_cast<std::size_t>(r), k) = (d1 + 2.0 * d2) / 10.0;
    }
  }

  MfccMatrix out(num_rows, cfg.feature_dim, 0.0f);
  for (std::size_t r = 0; r < num_rows; ++r) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < n_cep && col < cfg.feature_dim; ++k) out(r, col++) = static_cast<float>(cepstra(r, k));
    for (std::size_t k = 0; k < n_cep && col < cfg.feature_dim; ++k) out(r, col++) = static_cast<float>(deltas(r, k));
    for (std::size_t band = 0; band < kBandSummaries && col < cfg.feature_dim; ++band) {
      const std::size_t lo = band * n_mel / kBandSummaries;
      const std::size_t hi = (band + 1) * n_mel / kBandSummaries;
      double sum = 0.0;
      for (std::size_t m = lo; m < hi; ++m) sum += log_mel(r, m);
      out(r, col++) = static_cast<float>(sum / static_cast<double>(hi - lo));
    }
  }
  return out;
}

}  // namespace tonguesync
