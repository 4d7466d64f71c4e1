#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tonguesync/nn/layers.hpp"
#include "tonguesync/nn/tensor.hpp"

namespace tonguesync::nn {

struct ConvSpec {
  std::size_t filters = 0;
  std::size_t kernel = 0;
  std::size_t pool = 1;  // 1 = no pooling
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct StreamSpec {
  std::vector<ConvSpec> convs;
  std::vector<std::size_t> fc;
  friend bool operator==(const StreamSpec&, const StreamSpec&) = default;
};

struct ModelConfig {
  std::size_t frames_per_window = 5;
  std::size_t frame_height = 63;
  std::size_t frame_width = 138;
  std::size_t audio_rows = 20;
  std::size_t feature_dim = 30;
  StreamSpec ultrasound{{{23, 5, 2}, {64, 5, 2}, {128, 5, 2}}, {64, 64}};
  StreamSpec audio{{{23, 3, 1}, {64, 3, 2}, {128, 3, 2}}, {64, 64}};
  /// Batch-norm and ReLU after the last fully-connected layer as well.
  bool final_activation = true;
  double margin = 1.0;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  Shape ultrasound_input(std::size_t n) const { return {n, frames_per_window, frame_height, frame_width}; }
  Shape audio_input(std::size_t n) const { return {n, 1, audio_rows, feature_dim}; }
  std::size_t embedding_dim() const { return ultrasound.fc.empty() ? 0 : ultrasound.fc.back(); }

  /// Checks that both streams reduce their inputs to equal-width embeddings.
  /// Throws ValidationError otherwise.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// The paper-sized network.
ModelConfig default_model_config();

/// A sequential stack: conv blocks, flatten, fully-connected blocks.
template <typename T>
class Stream {
 public:
  Stream(std::string name, const StreamSpec& spec, Shape input_per_sample, const ModelConfig& cfg, Rng& rng);

  const std::string& name() const { return name_; }
  const Shape& input_shape() const { return input_; }

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> infer(const Tensor<T>& x) const;
  /// Throws NumericError naming the first layer to produce a non-finite
  /// gradient.
  void backward(const Tensor<T>& grad_out);

  std::vector<Param<T>*> params();
  std::vector<Tensor<T>*> buffers();
  std::vector<std::unique_ptr<Layer<T>>>& layers() { return layers_; }

 private:
  void check_input(const Shape& s) const;

  std::string name_;
  Shape input_;  // n = 1
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

enum class Mode { kTraining, kInference };

/// Per-sample result of running both streams.
struct EmbeddingPair {
  std::vector<float> v_u;
  std::vector<float> v_m;
  double d = 0.0;
};

template <typename T>
struct Embeddings {
  Tensor<T> u;  // n x dim x 1 x 1
  Tensor<T> m;
};

template <typename T>
class TwoStreamModel {
 public:
  TwoStreamModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  /// Training mode uses batch statistics and caches for backward();
  /// inference mode defers to infer().
  Embeddings<T> forward(const Tensor<T>& ultrasound, const Tensor<T>& audio);
  /// Read-only pass with running statistics; safe for concurrent callers.
  Embeddings<T> infer(const Tensor<T>& ultrasound, const Tensor<T>& audio) const;
  void backward(const Tensor<T>& grad_u, const Tensor<T>& grad_m);

  void zero_grad();
  std::vector<Param<T>*> params();
  std::vector<Tensor<T>*> buffers();

  Stream<T>& ultrasound() { return ultrasound_; }
  Stream<T>& audio() { return audio_; }
  const Stream<T>& ultrasound() const { return ultrasound_; }
  const Stream<T>& audio() const { return audio_; }

  /// Same architecture with every parameter and statistic converted.
  template <typename U>
  TwoStreamModel<U> cast() const {
    TwoStreamModel<U> out(cfg_, 0);
    auto& self = const_cast<TwoStreamModel&>(*this);
    auto src_p = self.params();
    auto dst_p = out.params();
    for (std::size_t i = 0; i < src_p.size(); ++i) dst_p[i]->value = tensor_cast<U>(src_p[i]->value);
    auto src_b = self.buffers();
    auto dst_b = out.buffers();
    for (std::size_t i = 0; i < src_b.size(); ++i) *dst_b[i] = tensor_cast<U>(*src_b[i]);
    out.set_mode(mode_);
    return out;
  }

 private:
  TwoStreamModel(ModelConfig cfg, Rng&& rng);

  ModelConfig cfg_;
  Mode mode_ = Mode::kInference;
  Stream<T> ultrasound_;
  Stream<T> audio_;
};

/// Euclidean distance per sample between two n x dim embeddings.
template <typename T>
std::vector<double> pair_distances(const Tensor<T>& u, const Tensor<T>& m);

enum class PairClass { kTrue, kFalse };

/// True pair iff d < threshold.
inline PairClass classify(double d, double threshold = 0.5) {
  return d < threshold ? PairClass::kTrue : PairClass::kFalse;
}

}  // namespace tonguesync::nn
