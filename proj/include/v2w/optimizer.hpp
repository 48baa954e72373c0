#pragma once

// AdamW with decoupled weight decay and a linear warmup / linear decay
// learning-rate schedule.

#include <cmath>
#include <vector>

#include "v2w/autodiff.hpp"
#include "v2w/common.hpp"

namespace v2w {

struct OptimizerConfig {
  double lr = 2e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long total_steps = 0;   // schedule disabled when 0
  long warmup_steps = 0;
};

// lr * min(step/warmup, (total-step)/(total-warmup)), clamped to [0, lr].
inline double scheduled_lr(const OptimizerConfig& cfg, long step) {
  if (cfg.total_steps <= 0) return cfg.lr;
  double ramp = cfg.warmup_steps > 0
                    ? static_cast<double>(step) / static_cast<double>(cfg.warmup_steps)
                    : 1.0;
  double decay = cfg.total_steps > cfg.warmup_steps
                     ? static_cast<double>(cfg.total_steps - step) /
                           static_cast<double>(cfg.total_steps - cfg.warmup_steps)
                     : 0.0;
  double f = std::min(ramp, decay);
  if (f < 0.0) f = 0.0;
  if (f > 1.0) f = 1.0;
  return cfg.lr * f;
}

// Scales all gradients so the global norm does not exceed max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(GradStore& grads, double max_norm) {
  double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

class AdamW {
 public:
  AdamW(ParamSet& params, const OptimizerConfig& cfg) : params_(&params), cfg_(cfg) {
    m_.resize(params.size());
    v_.resize(params.size());
  }

  long step_index() const { return step_; }
  const OptimizerConfig& config() const { return cfg_; }
  double current_lr() const { return scheduled_lr(cfg_, step_); }

  // One update over every trainable parameter that received gradient.
  // Frozen parameters and parameters absent from the batch graph stay
  // bit-identical (no decay, no moment update).
  void step(const GradStore& grads) {
    const double lr_t = scheduled_lr(cfg_, step_);
    const double t = static_cast<double>(step_ + 1);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t i = 0; i < params_->size(); ++i) {
      Param& p = params_->at(i);
      if (!p.trainable || !grads.has(p)) continue;
      const Mat& g = grads.grad(p);
      Mat& m = m_[i];
      Mat& v = v_[i];
      if (m.size() == 0) {
        m = Mat::Zero(g.rows(), g.cols());
        v = Mat::Zero(g.rows(), g.cols());
      }
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      Mat m_hat = m / bc1;
      Mat v_hat = v / bc2;
      Mat update = m_hat.array() / (v_hat.array().sqrt() + cfg_.eps);
      p.value -= lr_t * update + (lr_t * cfg_.weight_decay) * p.value;
    }
    ++step_;
  }

 private:
  ParamSet* params_;
  OptimizerConfig cfg_;
  std::vector<Mat> m_, v_;
  long step_ = 0;
};

}  // namespace v2w
