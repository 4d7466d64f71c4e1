#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "tonguesync/nn/model.hpp"

namespace tonguesync::nn {

/// Random-access labelled pairs. load() writes one sample's ultrasound
/// window (frames_per_window x H x W) and audio window (rows x feature_dim).
class PairSource {
 public:
  virtual ~PairSource() = default;
  virtual std::size_t size() const = 0;
  virtual int label(std::size_t i) const = 0;
  virtual void load(std::size_t i, float* ultrasound, float* audio) const = 0;
};

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 64;
  std::size_t epochs = 20;
  std::size_t plateau_patience = 2;
  double plateau_factor = 0.1;
  /// Validation loss must drop by at least this much to count as progress.
  double plateau_min_delta = 1e-4;
  double threshold = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Multiplies the learning rate by `factor` once the monitored loss has
/// failed to improve for `patience` consecutive epochs, then starts counting
/// again.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, std::size_t patience, double factor, double min_delta)
      : lr_(lr), patience_(patience), factor_(factor), min_delta_(min_delta) {}

  double lr() const { return lr_; }
  std::size_t reductions() const { return reductions_; }
  /// Feeds one epoch's loss; returns the learning rate for the next epoch.
  double step(double loss);

 private:
  double lr_;
  std::size_t patience_;
  double factor_;
  double min_delta_;
  double best_ = 0.0;
  bool has_best_ = false;
  std::size_t bad_epochs_ = 0;
  std::size_t reductions_ = 0;
};

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  void step(const std::vector<Param<float>*>& params, double lr);

 private:
  double beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> learning_rate;  // rate used during each epoch
  std::size_t lr_reductions = 0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  std::optional<double> test_accuracy;
  /// Set when a non-finite loss or gradient stopped training; the model
  /// then holds the parameters from the last finite epoch.
  bool diverged = false;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Inference-mode loss and accuracy at the threshold over a whole source.
Evaluation evaluate_pairs(const TwoStreamModel<float>& model, const PairSource& data, double threshold = 0.5,
                          std::size_t batch_size = 64);

using EpochCallback = std::function<void(std::size_t epoch, const TrainReport&)>;

TrainReport train(TwoStreamModel<float>& model, const PairSource& train_set, const PairSource& val_set,
                  const TrainConfig& cfg, const PairSource* test_set = nullptr, const EpochCallback& on_epoch = {});

}  // namespace tonguesync::nn
