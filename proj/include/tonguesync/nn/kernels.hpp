#pragma once

// Compute kernels for the convolutional streams.
//
// parallel:: kernels split work across OpenMP threads so that every output
// element is owned by exactly one thread and accumulated in a fixed order;
// results do not depend on the thread count. serial:: kernels are the plain
// textbook loop nests, kept as the reference the parallel versions are tested
// and benchmarked against.
//
// Convolutions are "valid" (no padding) with stride 1. Weights are OCKK.
// Gradient kernels accumulate into their outputs.

#include <algorithm>
#include <cstddef>
#include <span>

#include "tonguesync/nn/tensor.hpp"

namespace tonguesync::nn {

inline Shape conv_output_shape(const Shape& in, std::size_t out_channels, std::size_t kernel) {
  return {in.n, out_channels, in.h - kernel + 1, in.w - kernel + 1};
}

inline Shape pool_output_shape(const Shape& in, std::size_t pool) {
  return {in.n, in.c, in.h / pool, in.w / pool};
}

namespace parallel {

template <typename T>
void conv2d_forward(const Tensor<T>& in, const Tensor<T>& weight, std::span<const T> bias, Tensor<T>& out) {
  const Shape is = in.shape();
  const Shape os = out.shape();
  const std::size_t k = weight.shape().h;
  const auto jobs = static_cast<std::ptrdiff_t>(os.n * os.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / os.c;
    const std::size_t o = static_cast<std::size_t>(job) % os.c;
    T* dst = &out.at(n, o, 0, 0);
    std::fill(dst, dst + os.h * os.w, bias[o]);
    for (std::size_t c = 0; c < is.c; ++c) {
      const T* src = &in.at(n, c, 0, 0);
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const T wv = weight.at(o, c, ky, kx);
          for (std::size_t y = 0; y < os.h; ++y) {
            const T* row = src + (y + ky) * is.w + kx;
            T* orow = dst + y * os.w;
            for (std::size_t x = 0; x < os.w; ++x) orow[x] += wv * row[x];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight, Tensor<T>& grad_in) {
  const Shape gs = grad_out.shape();
  const Shape is = grad_in.shape();
  const std::size_t k = weight.shape().h;
  const auto jobs = static_cast<std::ptrdiff_t>(is.n * is.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / is.c;
    const std::size_t c = static_cast<std::size_t>(job) % is.c;
    T* dst = &grad_in.at(n, c, 0, 0);
    for (std::size_t o = 0; o < gs.c; ++o) {
      const T* g = &grad_out.at(n, o, 0, 0);
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const T wv = weight.at(o, c, ky, kx);
          for (std::size_t y = 0; y < gs.h; ++y) {
            T* row = dst + (y + ky) * is.w + kx;
            const T* grow = g + y * gs.w;
            for (std::size_t x = 0; x < gs.w; ++x) row[x] += wv * grow[x];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const Tensor<T>& in, const Tensor<T>& grad_out, Tensor<T>& grad_weight,
                            std::span<T> grad_bias) {
  const Shape is = in.shape();
  const Shape gs = grad_out.shape();
  const std::size_t k = grad_weight.shape().h;
  const auto jobs = static_cast<std::ptrdiff_t>(gs.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const auto o = static_cast<std::size_t>(job);
    for (std::size_t n = 0; n < gs.n; ++n) {
      const T* g = &grad_out.at(n, o, 0, 0);
      T bsum = 0;
      for (std::size_t i = 0; i < gs.h * gs.w; ++i) bsum += g[i];
      grad_bias[o] += bsum;
      for (std::size_t c = 0; c < is.c; ++c) {
        const T* src = &in.at(n, c, 0, 0);
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            T acc = 0;
            for (std::size_t y = 0; y < gs.h; ++y) {
              const T* row = src + (y + ky) * is.w + kx;
              const T* grow = g + y * gs.w;
              for (std::size_t x = 0; x < gs.w; ++x) acc += grow[x] * row[x];
            }
            grad_weight.at(o, c, ky, kx) += acc;
          }
        }
      }
    }
  }
}

/// out[n][o] = bias[o] + sum_i weight[o][i] * in[n][i]. Weight shape {O, I, 1, 1}.
template <typename T>
void linear_forward(const Tensor<T>& in, const Tensor<T>& weight, std::span<const T> bias, Tensor<T>& out) {
  const std::size_t inputs = in.shape().per_sample();
  const std::size_t outputs = weight.shape().n;
  const auto jobs = static_cast<std::ptrdiff_t>(in.shape().n * outputs);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / outputs;
    const std::size_t o = static_cast<std::size_t>(job) % outputs;
    const T* x = in.data() + n * inputs;
    const T* wrow = weight.data() + o * inputs;
    T acc = bias[o];
    for (std::size_t i = 0; i < inputs; ++i) acc += wrow[i] * x[i];
    out[n * outputs + o] = acc;
  }
}

template <typename T>
void linear_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight, Tensor<T>& grad_in) {
  const std::size_t inputs = grad_in.shape().per_sample();
  const std::size_t outputs = weight.shape().n;
  const auto jobs = static_cast<std::ptrdiff_t>(grad_in.shape().n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const auto n = static_cast<std::size_t>(job);
    T* gx = grad_in.data() + n * inputs;
    for (std::size_t o = 0; o < outputs; ++o) {
      const T g = grad_out[n * outputs + o];
      const T* wrow = weight.data() + o * inputs;
      for (std::size_t i = 0; i < inputs; ++i) gx[i] += g * wrow[i];
    }
  }
}

template <typename T>
void linear_backward_params(const Tensor<T>& in, const Tensor<T>& grad_out, Tensor<T>& grad_weight,
                            std::span<T> grad_bias) {
  const std::size_t inputs = in.shape().per_sample();
  const std::size_t outputs = grad_weight.shape().n;
  const std::size_t batch = in.shape().n;
  const auto jobs = static_cast<std::ptrdiff_t>(outputs);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const auto o = static_cast<std::size_t>(job);
    T* gw = grad_weight.data() + o * inputs;
    for (std::size_t n = 0; n < batch; ++n) {
      const T g = grad_out[n * outputs + o];
      grad_bias[o] += g;
      const T* x = in.data() + n * inputs;
      for (std::size_t i = 0; i < inputs; ++i) gw[i] += g * x[i];
    }
  }
}

/// Max pooling with a square window and equal stride. `argmax` receives the
/// flat input index of each winning element.
template <typename T>
void maxpool_forward(const Tensor<T>& in, std::size_t pool, Tensor<T>& out, std::span<std::size_t> argmax) {
  const Shape is = in.shape();
  const Shape os = out.shape();
  const auto planes = static_cast<std::ptrdiff_t>(os.n * os.c);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t plane = 0; plane < planes; ++plane) {
    const std::size_t n = static_cast<std::size_t>(plane) / os.c;
    const std::size_t c = static_cast<std::size_t>(plane) % os.c;
    for (std::size_t y = 0; y < os.h; ++y) {
      for (std::size_t x = 0; x < os.w; ++x) {
        std::size_t best_index = ((n * is.c + c) * is.h + y * pool) * is.w + x * pool;
        T best = in[best_index];
        for (std::size_t py = 0; py < pool; ++py) {
          for (std::size_t px = 0; px < pool; ++px) {
            const std::size_t idx = ((n * is.c + c) * is.h + y * pool + py) * is.w + x * pool + px;
            if (in[idx] > best) {
              best = in[idx];
              best_index = idx;
            }
          }
        }
        const std::size_t o = ((n * os.c + c) * os.h + y) * os.w + x;
        out[o] = best;
        argmax[o] = best_index;
      }
    }
  }
}

}  // namespace parallel

namespace serial {

template <typename T>
void conv2d_forward(const Tensor<T>& in, const Tensor<T>& weight, std::span<const T> bias, Tensor<T>& out) {
  const Shape os = out.shape();
  const Shape ws = weight.shape();
  for (std::size_t n = 0; n < os.n; ++n)
    for (std::size_t o = 0; o < os.c; ++o)
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t x = 0; x < os.w; ++x) {
          T acc = bias[o];
          for (std::size_t c = 0; c < ws.c; ++c)
            for (std::size_t ky = 0; ky < ws.h; ++ky)
              for (std::size_t kx = 0; kx < ws.w; ++kx) acc += weight.at(o, c, ky, kx) * in.at(n, c, y + ky, x + kx);
          out.at(n, o, y, x) = acc;
        }
}

template <typename T>
void conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight, Tensor<T>& grad_in) {
  const Shape gs = grad_out.shape();
  const Shape ws = weight.shape();
  for (std::size_t n = 0; n < gs.n; ++n)
    for (std::size_t o = 0; o < gs.c; ++o)
      for (std::size_t y = 0; y < gs.h; ++y)
        for (std::size_t x = 0; x < gs.w; ++x)
          for (std::size_t c = 0; c < ws.c; ++c)
            for (std::size_t ky = 0; ky < ws.h; ++ky)
              for (std::size_t kx = 0; kx < ws.w; ++kx)
                grad_in.at(n, c, y + ky, x + kx) += weight.at(o, c, ky, kx) * grad_out.at(n, o, y, x);
}

template <typename T>
void conv2d_backward_params(const Tensor<T>& in, const Tensor<T>& grad_out, Tensor<T>& grad_weight,
                            std::span<T> grad_bias) {
  const Shape gs = grad_out.shape();
  const Shape ws = grad_weight.shape();
  for (std::size_t n = 0; n < gs.n; ++n)
    for (std::size_t o = 0; o < gs.c; ++o)
      for (std::size_t y = 0; y < gs.h; ++y)
        for (std::size_t x = 0; x < gs.w; ++x) {
          const T g = grad_out.at(n, o, y, x);
          grad_bias[o] += g;
          for (std::size_t c = 0; c < ws.c; ++c)
            for (std::size_t ky = 0; ky < ws.h; ++ky)
              for (std::size_t kx = 0; kx < ws.w; ++kx) grad_weight.at(o, c, ky, kx) += g * in.at(n, c, y + ky, x + kx);
        }
}

template <typename T>
void linear_forward(const Tensor<T>& in, const Tensor<T>& weight, std::span<const T> bias, Tensor<T>& out) {
  const std::size_t inputs = in.shape().per_sample();
  const std::size_t outputs = weight.shape().n;
  for (std::size_t n = 0; n < in.shape().n; ++n)
    for (std::size_t o = 0; o < outputs; ++o) {
      T acc = bias[o];
      for (std::size_t i = 0; i < inputs; ++i) acc += weight[o * inputs + i] * in[n * inputs + i];
      out[n * outputs + o] = acc;
    }
}

template <typename T>
void linear_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight, Tensor<T>& grad_in) {
  const std::size_t inputs = grad_in.shape().per_sample();
  const std::size_t outputs = weight.shape().n;
  for (std::size_t n = 0; n < grad_in.shape().n; ++n)
    for (std::size_t i = 0; i < inputs; ++i)
      for (std::size_t o = 0; o < outputs; ++o)
        grad_in[n * inputs + i] += weight[o * inputs + i] * grad_out[n * outputs + o];
}

template <typename T>
void linear_backward_params(const Tensor<T>& in, const Tensor<T>& grad_out, Tensor<T>& grad_weight,
                            std::span<T> grad_bias) {
  const std::size_t inputs = in.shape().per_sample();
  const std::size_t outputs = grad_weight.shape().n;
  for (std::size_t n = 0; n < in.shape().n; ++n)
    for (std::size_t o = 0; o < outputs; ++o) {
      grad_bias[o] += grad_out[n * outputs + o];
      for (std::size_t i = 0; i < inputs; ++i)
        grad_weight[o * inputs + i] += grad_out[n * outputs + o] * in[n * inputs + i];
    }
}

template <typename T>
void maxpool_forward(const Tensor<T>& in, std::size_t pool, Tensor<T>& out, std::span<std::size_t> argmax) {
  const Shape is = in.shape();
  const Shape os = out.shape();
  for (std::size_t n = 0; n < os.n; ++n)
    for (std::size_t c = 0; c < os.c; ++c)
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t x = 0; x < os.w; ++x) {
          std::size_t best = ((n * is.c + c) * is.h + y * pool) * is.w + x * pool;
          for (std::size_t py = 0; py < pool; ++py)
            for (std::size_t px = 0; px < pool; ++px) {
              const std::size_t idx = ((n * is.c + c) * is.h + y * pool + py) * is.w + x * pool + px;
              if (in[idx] > in[best]) best = idx;
            }
          const std::size_t o = ((n * os.c + c) * os.h + y) * os.w + x;
          out[o] = in[best];
          argmax[o] = best;
        }
}

}  // namespace serial
}  // namespace tonguesync::nn
