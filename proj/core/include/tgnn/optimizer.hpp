#pragma once

#include <cstddef>
#include <vector>

#include "tgnn/tensor.hpp"

namespace tgnn {

struct AdamConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 5e-5;  // coupled L2, added to the gradient
};

/// Per-parameter first/second moment state plus the shared step counter.
struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;
  AdamConfig config;
};

class Adam {
 public:
  Adam(std::vector<ad::Tensor> params, AdamConfig config);

  /// Bias-corrected update from the accumulated gradients. Gradients are
  /// consumed (zeroed). Throws Error("optimizer", ...) on non-finite
  /// gradients so the caller can abort the epoch.
  void step();
  /// Like step() but divides accumulated gradients by `scale` first
  /// (gradient accumulation over several samples).
  void step_scaled(double scale);
  void zero_grad();

  double learning_rate() const { return state_.config.learning_rate; }
  void set_learning_rate(double lr) { state_.config.learning_rate = lr; }
  const AdamState& state() const { return state_; }

 private:
  std::vector<ad::Tensor> params_;
  AdamState state_;
};

/// Multiplies the learning rate by `factor` each time the best observed value
/// has not improved (relative decrease > threshold) for `patience` epochs.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor, std::size_t patience, double threshold = 1e-4);

  /// Feeds one validation loss; returns true when the rate should be reduced
  /// this epoch.
  bool observe(double validation_loss);
  double factor() const { return factor_; }

 private:
  double factor_;
  std::size_t patience_;
  double threshold_;
  double best_;
  std::size_t stale_ = 0;
};

class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double threshold = 1e-4);

  /// Feeds one validation loss; returns true when training should stop.
  bool observe(double validation_loss);
  bool improved_last() const { return improved_last_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  double threshold_;
  double best_;
  std::size_t stale_ = 0;
  bool improved_last_ = false;
};

}  // namespace tgnn
