#include "tgnn/optimizer.hpp"

#include <cmath>
#include <limits>

#include "tgnn/error.hpp"

namespace tgnn {

Adam::Adam(std::vector<ad::Tensor> params, AdamConfig config) : params_(std::move(params)) {
  state_.config = config;
  state_.first_moment.reserve(params_.size());
  state_.second_moment.reserve(params_.size());
  for (const auto& p : params_) {
    state_.first_moment.emplace_back(p.numel(), 0.0);
    state_.second_moment.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() { step_scaled(1.0); }

void Adam::step_scaled(double scale) {
  const AdamConfig& c = state_.config;
  state_.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state_.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state_.step));
  const double inv_scale = 1.0 / scale;

  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto value = params_[p].mutable_value();
    auto grad = params_[p].mutable_grad();
    auto& m = state_.first_moment[p];
    auto& v = state_.second_moment[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      double g = grad[i] * inv_scale;
      if (!std::isfinite(g)) {
        throw Error("optimizer", "non-finite gradient encountered");
      }
      g += c.weight_decay * value[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
    params_[p].zero_grad();
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

PlateauScheduler::PlateauScheduler(double factor, std::size_t patience, double threshold)
    : factor_(factor),
      patience_(patience),
      threshold_(threshold),
      best_(std::numeric_limits<double>::infinity()) {
  if (factor <= 0.0 || factor >= 1.0) throw Error("optimizer", "plateau factor must be in (0,1)");
}

bool PlateauScheduler::observe(double validation_loss) {
  const bool improved = validation_loss < best_ * (1.0 - threshold_);
  if (improved) {
    best_ = validation_loss;
    stale_ = 0;
    return false;
  }
  stale_ += 1;
  if (stale_ >= patience_) {
    stale_ = 0;
    return true;
  }
  return false;
}

EarlyStopping::EarlyStopping(std::size_t patience, double threshold)
    : patience_(patience),
      threshold_(threshold),
      best_(std::numeric_limits<double>::infinity()) {}

bool EarlyStopping::observe(double validation_loss) {
  improved_last_ = validation_loss < best_ * (1.0 - threshold_);
  if (improved_last_) {
    best_ = validation_loss;
    stale_ = 0;
    return false;
  }
  stale_ += 1;
  return stale_ >= patience_;
}

}  // namespace tgnn
