#pragma once

#include <span>
#include <vector>

#include "tonguesync/nn/model.hpp"

namespace tonguesync::nn {

/// Mean over the batch of y·d² + (1−y)·max(margin − d, 0)².
/// Throws ValidationError on an empty batch or mismatched lengths.
double contrastive_loss(std::span<const double> d, std::span<const int> y, double margin = 1.0);

template <typename T>
struct LossGradient {
  double loss = 0.0;
  std::vector<double> d;
  Tensor<T> grad_u;
  Tensor<T> grad_m;
};

/// Loss and its gradient with respect to both embedding batches.
/// For y = 1 the gradient of d² is taken directly so d = 0 is smooth; for
/// y = 0 at d = 0 the direction is undefined and the gradient is set to 0.
template <typename T>
LossGradient<T> contrastive_loss_gradient(const Embeddings<T>& e, std::span<const int> y, double margin = 1.0);

}  // namespace tonguesync::nn
