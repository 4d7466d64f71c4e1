#include "tonguesync/nn/layers.hpp"

#include <cmath>

#include "tonguesync/error.hpp"
#include "tonguesync/nn/kernels.hpp"

namespace tonguesync::nn {
namespace {

template <typename T>
void init_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
Param<T> make_param(std::string name, Shape shape) {
  return Param<T>{std::move(name), Tensor<T>(shape), Tensor<T>(shape)};
}

}  // namespace

// --- Conv2d -----------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng)
    : Layer<T>(std::move(name)),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      weight_(make_param<T>(this->name() + ".weight", {out_channels, in_channels, kernel, kernel})),
      bias_(make_param<T>(this->name() + ".bias", {out_channels, 1, 1, 1})) {
  init_uniform(weight_.value, in_channels * kernel * kernel, rng);
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& in) const {
  if (in.c != in_channels_ || in.h < kernel_ || in.w < kernel_) {
    throw ShapeError(this->name() + ": input " + in.str() + " does not fit " + std::to_string(in_channels_) +
                     " channels with kernel " + std::to_string(kernel_));
  }
  return conv_output_shape(in, out_channels_, kernel_);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  input_ = x;
  return infer(x);
}

template <typename T>
Tensor<T> Conv2d<T>::infer(const Tensor<T>& x) const {
  Tensor<T> out(output_shape(x.shape()));
  parallel::conv2d_forward(x, weight_.value, bias_.value.span(), out);
  return out;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> grad_in(input_.shape());
  parallel::conv2d_backward_input(grad_out, weight_.value, grad_in);
  parallel::conv2d_backward_params(input_, grad_out, weight_.grad, bias_.grad.span());
  return grad_in;
}

// --- Linear -----------------------------------------------------------------

template <typename T>
Linear<T>::Linear(std::string name, std::size_t inputs, std::size_t outputs, Rng& rng)
    : Layer<T>(std::move(name)),
      inputs_(inputs),
      outputs_(outputs),
      weight_(make_param<T>(this->name() + ".weight", {outputs, inputs, 1, 1})),
      bias_(make_param<T>(this->name() + ".bias", {outputs, 1, 1, 1})) {
  init_uniform(weight_.value, inputs, rng);
}

template <typename T>
Shape Linear<T>::output_shape(const Shape& in) const {
  if (in.per_sample() != inputs_) {
    throw ShapeError(this->name() + ": expected " + std::to_string(inputs_) + " inputs per sample, got " + in.str());
  }
  return {in.n, outputs_, 1, 1};
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  input_ = x;
  return infer(x);
}

template <typename T>
Tensor<T> Linear<T>::infer(const Tensor<T>& x) const {
  Tensor<T> out(output_shape(x.shape()));
  parallel::linear_forward(x, weight_.value, bias_.value.span(), out);
  return out;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> grad_in(input_.shape());
  parallel::linear_backward_input(grad_out, weight_.value, grad_in);
  parallel::linear_backward_params(input_, grad_out, weight_.grad, bias_.grad.span());
  return grad_in;
}

// --- BatchNorm --------------------------------------------------------------

template <typename T>
BatchNorm<T>::BatchNorm(std::string name, std::size_t channels, double epsilon, double momentum)
    : Layer<T>(std::move(name)),
      channels_(channels),
      epsilon_(epsilon),
      momentum_(momentum),
      gamma_(make_param<T>(this->name() + ".gamma", {channels, 1, 1, 1})),
      beta_(make_param<T>(this->name() + ".beta", {channels, 1, 1, 1})),
      running_mean_(Shape{channels, 1, 1, 1}, T(0)),
      running_var_(Shape{channels, 1, 1, 1}, T(1)) {
  gamma_.value.fill(T(1));
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.c != channels_) throw ShapeError(this->name() + ": expected " + std::to_string(channels_) + " channels");
  const std::size_t plane = s.h * s.w;
  const std::size_t count = s.n * plane;
  Tensor<T> out(s);
  normalised_ = Tensor<T>(s);
  inv_std_.assign(channels_, T(0));

  const auto channels = static_cast<std::ptrdiff_t>(channels_);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < channels; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    double sum = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = &x.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = &x.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    const double var = sq / static_cast<double>(count);
    const double inv_std = 1.0 / std::sqrt(var + epsilon_);
    inv_std_[c] = static_cast<T>(inv_std);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = &x.at(n, c, 0, 0);
      T* q = &normalised_.at(n, c, 0, 0);
      T* o = &out.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        q[i] = static_cast<T>((p[i] - mean) * inv_std);
        o[i] = gamma_.value[c] * q[i] + beta_.value[c];
      }
    }
    const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
    running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
    running_var_[c] = static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * unbiased);
  }
  return out;
}

template <typename T>
Tensor<T> BatchNorm<T>::infer(const Tensor<T>& x) const {
  const Shape s = x.shape();
  if (s.c != channels_) throw ShapeError(this->name() + ": expected " + std::to_string(channels_) + " channels");
  const std::size_t plane = s.h * s.w;
  Tensor<T> out(s);
  for (std::size_t c = 0; c < channels_; ++c) {
    const T scale = static_cast<T>(gamma_.value[c] / std::sqrt(static_cast<double>(running_var_[c]) + epsilon_));
    const T shift = beta_.value[c] - scale * running_mean_[c];
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = &x.at(n, c, 0, 0);
      T* o = &out.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) o[i] = scale * p[i] + shift;
    }
  }
  return out;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& grad_out) {
  const Shape s = grad_out.shape();
  const std::size_t plane = s.h * s.w;
  const double count = static_cast<double>(s.n * plane);
  Tensor<T> grad_in(s);
  const auto channels = static_cast<std::ptrdiff_t>(channels_);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ci = 0; ci < channels; ++ci) {
    const auto c = static_cast<std::size_t>(ci);
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* g = &grad_out.at(n, c, 0, 0);
      const T* q = &normalised_.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += g[i];
        sum_gx += g[i] * q[i];
      }
    }
    gamma_.grad[c] += static_cast<T>(sum_gx);
    beta_.grad[c] += static_cast<T>(sum_g);
    const double k = static_cast<double>(gamma_.value[c]) * inv_std_[c] / count;
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* g = &grad_out.at(n, c, 0, 0);
      const T* q = &normalised_.at(n, c, 0, 0);
      T* gi = &grad_in.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) gi[i] = static_cast<T>(k * (count * g[i] - sum_g - q[i] * sum_gx));
    }
  }
  return grad_in;
}

// --- Relu -------------------------------------------------------------------

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x) {
  output_ = infer(x);
  return output_;
}

template <typename T>
Tensor<T> Relu<T>::infer(const Tensor<T>& x) const {
  Tensor<T> out = x;
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> grad_in = grad_out;
  for (std::size_t i = 0; i < grad_in.size(); ++i) {
    if (!(output_[i] > T(0))) grad_in[i] = T(0);
  }
  return grad_in;
}

// --- MaxPool2d --------------------------------------------------------------

template <typename T>
Shape MaxPool2d<T>::output_shape(const Shape& in) const {
  if (in.h < pool_ || in.w < pool_) throw ShapeError(this->name() + ": input " + in.str() + " smaller than pool");
  return pool_output_shape(in, pool_);
}

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x) {
  input_shape_ = x.shape();
  Tensor<T> out(output_shape(x.shape()));
  argmax_.assign(out.size(), 0);
  parallel::maxpool_forward(x, pool_, out, std::span<std::size_t>(argmax_));
  return out;
}

template <typename T>
Tensor<T> MaxPool2d<T>::infer(const Tensor<T>& x) const {
  Tensor<T> out(output_shape(x.shape()));
  std::vector<std::size_t> argmax(out.size());
  parallel::maxpool_forward(x, pool_, out, std::span<std::size_t>(argmax));
  return out;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> grad_in(input_shape_);
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad_in[argmax_[i]] += grad_out[i];
  return grad_in;
}

// --- Flatten ----------------------------------------------------------------

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& x) {
  input_shape_ = x.shape();
  return infer(x);
}

template <typename T>
Tensor<T> Flatten<T>::infer(const Tensor<T>& x) const {
  return x.reshaped(output_shape(x.shape()));
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& grad_out) {
  return grad_out.reshaped(input_shape_);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class Linear<float>;
template class Linear<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class Relu<float>;
template class Relu<double>;
template class MaxPool2d<float>;
template class MaxPool2d<double>;
template class Flatten<float>;
template class Flatten<double>;

}  // namespace tonguesync::nn
