#include "tonguesync/nn/model.hpp"

#include <cmath>

#include "tonguesync/error.hpp"
#include "tonguesync/nn/kernels.hpp"

namespace tonguesync::nn {
namespace {

// Walks a stream's layer stack on shapes alone.
Shape propagate(const std::string& name, const StreamSpec& spec, Shape s) {
  if (spec.convs.empty() && spec.fc.empty()) throw ValidationError(name + " stream has no layers");
  if (spec.fc.empty()) throw ValidationError(name + " stream needs at least one fully-connected layer");
  for (std::size_t i = 0; i < spec.convs.size(); ++i) {
    const ConvSpec& c = spec.convs[i];
    const std::string where = name + ".conv" + std::to_string(i + 1);
    if (c.filters == 0 || c.kernel == 0 || c.pool == 0) throw ValidationError(where + ": sizes must be positive");
    if (s.h < c.kernel || s.w < c.kernel) {
      throw ValidationError(where + ": input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                            " smaller than kernel " + std::to_string(c.kernel));
    }
    s = conv_output_shape(s, c.filters, c.kernel);
    if (c.pool > 1) {
      if (s.h < c.pool || s.w < c.pool) throw ValidationError(where + ": output smaller than pool");
      s = pool_output_shape(s, c.pool);
    }
  }
  for (std::size_t units : spec.fc) {
    if (units == 0) throw ValidationError(name + ": fully-connected width must be positive");
  }
  return {s.n, spec.fc.back(), 1, 1};
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

void ModelConfig::validate() const {
  if (frames_per_window == 0) throw ValidationError("frames_per_window must be at least 1");
  if (frame_height == 0 || frame_width == 0) throw ValidationError("frame dimensions must be positive");
  if (audio_rows == 0 || feature_dim == 0) throw ValidationError("audio input dimensions must be positive");
  if (!(margin > 0.0)) throw ValidationError("margin must be positive");
  if (!(bn_epsilon > 0.0)) throw ValidationError("bn_epsilon must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ValidationError("bn_momentum must be in (0, 1]");
  const Shape u = propagate("ultrasound", ultrasound, ultrasound_input(1));
  const Shape m = propagate("audio", audio, audio_input(1));
  if (u.c != m.c) {
    throw ValidationError("embedding widths differ: ultrasound " + std::to_string(u.c) + ", audio " +
                          std::to_string(m.c));
  }
}

ModelConfig default_model_config() { return ModelConfig{}; }

// --- Stream -----------------------------------------------------------------

template <typename T>
Stream<T>::Stream(std::string name, const StreamSpec& spec, Shape input_per_sample, const ModelConfig& cfg, Rng& rng)
    : name_(std::move(name)), input_(input_per_sample) {
  Shape s = input_;
  auto add_norm = [&](const std::string& base, std::size_t channels) {
    layers_.push_back(std::make_unique<BatchNorm<T>>(base + ".bn", channels, cfg.bn_epsilon, cfg.bn_momentum));
    layers_.push_back(std::make_unique<Relu<T>>(base + ".relu"));
  };
  for (std::size_t i = 0; i < spec.convs.size(); ++i) {
    const ConvSpec& c = spec.convs[i];
    const std::string base = name_ + ".conv" + std::to_string(i + 1);
    layers_.push_back(std::make_unique<Conv2d<T>>(base, s.c, c.filters, c.kernel, rng));
    s = conv_output_shape(s, c.filters, c.kernel);
    add_norm(base, c.filters);
    if (c.pool > 1) {
      layers_.push_back(std::make_unique<MaxPool2d<T>>(name_ + ".pool" + std::to_string(i + 1), c.pool));
      s = pool_output_shape(s, c.pool);
    }
  }
  layers_.push_back(std::make_unique<Flatten<T>>(name_ + ".flatten"));
  std::size_t width = s.per_sample();
  for (std::size_t j = 0; j < spec.fc.size(); ++j) {
    const std::string base = name_ + ".fc" + std::to_string(j + 1);
    layers_.push_back(std::make_unique<Linear<T>>(base, width, spec.fc[j], rng));
    width = spec.fc[j];
    if (j + 1 < spec.fc.size() || cfg.final_activation) add_norm(base, width);
  }
}

template <typename T>
void Stream<T>::check_input(const Shape& s) const {
  if (s.n == 0 || s.c != input_.c || s.h != input_.h || s.w != input_.w) {
    throw ShapeError(name_ + " stream: expected input N x " + std::to_string(input_.c) + "x" +
                     std::to_string(input_.h) + "x" + std::to_string(input_.w) + ", got " + s.str());
  }
}

template <typename T>
Tensor<T> Stream<T>::forward(const Tensor<T>& x) {
  check_input(x.shape());
  Tensor<T> h = x;
  for (auto& layer : layers_) h = layer->forward(h);
  return h;
}

template <typename T>
Tensor<T> Stream<T>::infer(const Tensor<T>& x) const {
  check_input(x.shape());
  Tensor<T> h = x;
  for (const auto& layer : layers_) h = layer->infer(h);
  return h;
}

template <typename T>
void Stream<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = (*it)->backward(g);
    bool finite = all_finite(g);
    for (Param<T>* p : (*it)->params()) finite = finite && all_finite(p->grad);
    if (!finite) throw NumericError("non-finite gradient in layer " + (*it)->name());
  }
}

template <typename T>
std::vector<Param<T>*> Stream<T>::params() {
  std::vector<Param<T>*> out;
  for (auto& layer : layers_) {
    for (Param<T>* p : layer->params()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>*> Stream<T>::buffers() {
  std::vector<Tensor<T>*> out;
  for (auto& layer : layers_) {
    for (Tensor<T>* b : layer->buffers()) out.push_back(b);
  }
  return out;
}

// --- TwoStreamModel -----------------------------------------------------------

template <typename T>
TwoStreamModel<T>::TwoStreamModel(ModelConfig cfg, std::uint64_t seed) : TwoStreamModel(std::move(cfg), Rng(seed)) {}

template <typename T>
TwoStreamModel<T>::TwoStreamModel(ModelConfig cfg, Rng&& rng)
    : cfg_((cfg.validate(), std::move(cfg))),
      ultrasound_("ultrasound", cfg_.ultrasound, cfg_.ultrasound_input(1), cfg_, rng),
      audio_("audio", cfg_.audio, cfg_.audio_input(1), cfg_, rng) {}

template <typename T>
Embeddings<T> TwoStreamModel<T>::forward(const Tensor<T>& ultrasound, const Tensor<T>& audio) {
  if (mode_ == Mode::kInference) return infer(ultrasound, audio);
  if (ultrasound.shape().n != audio.shape().n) throw ShapeError("ultrasound and audio batch sizes differ");
  return {ultrasound_.forward(ultrasound), audio_.forward(audio)};
}

template <typename T>
Embeddings<T> TwoStreamModel<T>::infer(const Tensor<T>& ultrasound, const Tensor<T>& audio) const {
  if (ultrasound.shape().n != audio.shape().n) throw ShapeError("ultrasound and audio batch sizes differ");
  return {ultrasound_.infer(ultrasound), audio_.infer(audio)};
}

template <typename T>
void TwoStreamModel<T>::backward(const Tensor<T>& grad_u, const Tensor<T>& grad_m) {
  if (mode_ != Mode::kTraining) throw PreconditionError("backward requires a training-mode forward pass");
  ultrasound_.backward(grad_u);
  audio_.backward(grad_m);
}

template <typename T>
void TwoStreamModel<T>::zero_grad() {
  for (Param<T>* p : params()) p->grad.fill(T(0));
}

template <typename T>
std::vector<Param<T>*> TwoStreamModel<T>::params() {
  auto out = ultrasound_.params();
  for (Param<T>* p : audio_.params()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<Tensor<T>*> TwoStreamModel<T>::buffers() {
  auto out = ultrasound_.buffers();
  for (Tensor<T>* b : audio_.buffers()) out.push_back(b);
  return out;
}

template <typename T>
std::vector<double> pair_distances(const Tensor<T>& u, const Tensor<T>& m) {
  if (!(u.shape() == m.shape())) throw ShapeError("embedding shapes differ: " + u.shape().str() + " vs " + m.shape().str());
  const std::size_t n = u.shape().n;
  const std::size_t dim = u.shape().per_sample();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const double diff = static_cast<double>(u[i * dim + k]) - static_cast<double>(m[i * dim + k]);
      sq += diff * diff;
    }
    d[i] = std::sqrt(sq);
  }
  return d;
}

template class Stream<float>;
template class Stream<double>;
template class TwoStreamModel<float>;
template class TwoStreamModel<double>;
template std::vector<double> pair_distances(const Tensor<float>&, const Tensor<float>&);
template std::vector<double> pair_distances(const Tensor<double>&, const Tensor<double>&);

}  // namespace tonguesync::nn
