#include "tonguesync/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tonguesync/error.hpp"
#include "tonguesync/nn/loss.hpp"
#include "tonguesync/rng.hpp"

namespace tonguesync::nn {
namespace {

struct Batch {
  Tensor<float> u, m;
  std::vector<int> y;
};

Batch load_batch(const ModelConfig& cfg, const PairSource& data, std::span<const std::size_t> idx) {
  Batch b{Tensor<float>(cfg.ultrasound_input(idx.size())), Tensor<float>(cfg.audio_input(idx.size())),
          std::vector<int>(idx.size())};
  const std::size_t su = cfg.ultrasound_input(1).size();
  const std::size_t sm = cfg.audio_input(1).size();
  const auto n = static_cast<std::ptrdiff_t>(idx.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    data.load(idx[k], b.u.data() + k * su, b.m.data() + k * sm);
    b.y[k] = data.label(idx[k]);
  }
  return b;
}

struct Snapshot {
  std::vector<Tensor<float>> params, buffers;
};

Snapshot take_snapshot(TwoStreamModel<float>& model) {
  Snapshot s;
  for (auto* p : model.params()) s.params.push_back(p->value);
  for (auto* b : model.buffers()) s.buffers.push_back(*b);
  return s;
}

void restore(TwoStreamModel<float>& model, const Snapshot& s) {
  auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = s.params[i];
  auto buffers = model.buffers();
  for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i] = s.buffers[i];
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (epochs == 0) throw ValidationError("epochs must be positive");
  if (plateau_patience == 0) throw ValidationError("plateau_patience must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ValidationError("plateau_factor must be in (0, 1)");
  if (!(plateau_min_delta >= 0.0)) throw ValidationError("plateau_min_delta must be non-negative");
  if (!(threshold > 0.0)) throw ValidationError("threshold must be positive");
}

double PlateauScheduler::step(double loss) {
  if (!has_best_ || loss < best_ - min_delta_) {
    best_ = loss;
    has_best_ = true;
    bad_epochs_ = 0;
  } else if (++bad_epochs_ >= patience_) {
    lr_ *= factor_;
    ++reductions_;
    bad_epochs_ = 0;
  }
  return lr_;
}

void Adam::step(const std::vector<Param<float>*>& params, double lr) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param<float>& p = *params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    const auto n = static_cast<std::ptrdiff_t>(p.value.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon_);
      p.value[i] = static_cast<float>(p.value[i] - update);
    }
  }
}

Evaluation evaluate_pairs(const TwoStreamModel<float>& model, const PairSource& data, double threshold,
                          std::size_t batch_size) {
  if (data.size() == 0) throw EmptyDataError("no samples to evaluate");
  const std::size_t n = data.size();
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    idx.resize(std::min(batch_size, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = load_batch(model.config(), data, idx);
    const Embeddings<float> e = model.infer(b.u, b.m);
    const std::vector<double> d = pair_distances(e.u, e.m);
    loss_sum += contrastive_loss(d, b.y, model.config().margin) * static_cast<double>(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const bool predicted_true = classify(d[i], threshold) == PairClass::kTrue;
      if (predicted_true == (b.y[i] != 0)) ++correct;
    }
  }
  return {loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
}

TrainReport train(TwoStreamModel<float>& model, const PairSource& train_set, const PairSource& val_set,
                  const TrainConfig& cfg, const PairSource* test_set, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.size() == 0) throw EmptyDataError("training set is empty");
  if (val_set.size() == 0) throw EmptyDataError("validation set is empty");

  TrainReport report;
  Rng rng(cfg.seed);
  Adam adam;
  PlateauScheduler scheduler(cfg.learning_rate, cfg.plateau_patience, cfg.plateau_factor, cfg.plateau_min_delta);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Snapshot good = take_snapshot(model);
  const double margin = model.config().margin;

  for (std::size_t epoch = 0; epoch < cfg.epochs && !report.diverged; ++epoch) {
    const double lr = scheduler.lr();
    rng.shuffle(order);
    model.set_mode(Mode::kTraining);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      // Batch statistics are undefined for a single sample.
      if (count < 2) continue;
      const Batch b = load_batch(model.config(), train_set, std::span(order).subspan(start, count));
      model.zero_grad();
      const Embeddings<float> e = model.forward(b.u, b.m);
      const LossGradient<float> lg = contrastive_loss_gradient(e, b.y, margin);
      if (!std::isfinite(lg.loss)) {
        report.diverged = true;
        break;
      }
      try {
        model.backward(lg.grad_u, lg.grad_m);
      } catch (const NumericError&) {
        report.diverged = true;
        break;
      }
      adam.step(model.params(), lr);
      loss_sum += lg.loss * static_cast<double>(count);
      seen += count;
    }
    model.set_mode(Mode::kInference);
    if (report.diverged) break;
    if (seen == 0) throw EmptyDataError("training set too small for a batch of two");

    const double val_loss = evaluate_pairs(model, val_set, cfg.threshold, cfg.batch_size).loss;
    if (!std::isfinite(val_loss)) {
      report.diverged = true;
      break;
    }
    report.train_loss.push_back(loss_sum / static_cast<double>(seen));
    report.val_loss.push_back(val_loss);
    report.learning_rate.push_back(lr);
    scheduler.step(val_loss);
    report.lr_reductions = scheduler.reductions();
    good = take_snapshot(model);
    if (on_epoch) on_epoch(epoch, report);
  }
  if (report.diverged) restore(model, good);
  model.set_mode(Mode::kInference);

  report.train_accuracy = evaluate_pairs(model, train_set, cfg.threshold, cfg.batch_size).accuracy;
  report.val_accuracy = evaluate_pairs(model, val_set, cfg.threshold, cfg.batch_size).accuracy;
  if (test_set && test_set->size() > 0) {
    report.test_accuracy = evaluate_pairs(model, *test_set, cfg.threshold, cfg.batch_size).accuracy;
  }
  return report;
}

}  // namespace tonguesync::nn
