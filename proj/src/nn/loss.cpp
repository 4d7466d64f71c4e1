#include "tonguesync/nn/loss.hpp"

#include <algorithm>

#include "tonguesync/error.hpp"

namespace tonguesync::nn {

double contrastive_loss(std::span<const double> d, std::span<const int> y, double margin) {
  if (d.empty()) throw ValidationError("contrastive loss of an empty batch");
  if (d.size() != y.size()) throw ValidationError("distance and label counts differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double hinge = std::max(margin - d[i], 0.0);
    sum += y[i] ? d[i] * d[i] : hinge * hinge;
  }
  return sum / static_cast<double>(d.size());
}

template <typename T>
LossGradient<T> contrastive_loss_gradient(const Embeddings<T>& e, std::span<const int> y, double margin) {
  LossGradient<T> out;
  out.d = pair_distances(e.u, e.m);
  out.loss = contrastive_loss(out.d, y, margin);
  out.grad_u = Tensor<T>(e.u.shape());
  out.grad_m = Tensor<T>(e.m.shape());
  const std::size_t n = e.u.shape().n;
  const std::size_t dim = e.u.shape().per_sample();
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    // coefficient c with dL/dv_u = c·(v_u − v_m)
    double c = 0.0;
    if (y[i]) {
      c = 2.0 * scale;
    } else if (out.d[i] > 0.0 && out.d[i] < margin) {
      c = -2.0 * scale * (margin - out.d[i]) / out.d[i];
    }
    for (std::size_t k = 0; k < dim; ++k) {
      const std::size_t j = i * dim + k;
      const double g = c * (static_cast<double>(e.u[j]) - static_cast<double>(e.m[j]));
      out.grad_u[j] = static_cast<T>(g);
      out.grad_m[j] = static_cast<T>(-g);
    }
  }
  return out;
}

template LossGradient<float> contrastive_loss_gradient(const Embeddings<float>&, std::span<const int>, double);
template LossGradient<double> contrastive_loss_gradient(const Embeddings<double>&, std::span<const int>, double);

}  // namespace tonguesync::nn
