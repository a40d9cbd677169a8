#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "m3v/error.hpp"
#include "m3v/model/layers.hpp"

namespace m3v::model {

struct TrainConfig {
  double lr = 1.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
  int batch_size = 8;
  int epochs = 30;
  int warmup_epochs = 0;
  bool cosine = true;
  double min_lr = 0.0;
  // Draw a fresh mask for every clip each epoch instead of a fixed one.
  bool resample_masks = false;
  std::uint64_t data_seed = 0;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidArgument("learning rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw InvalidArgument("adam betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw InvalidArgument("adam eps must be > 0");
    if (weight_decay < 0.0) throw InvalidArgument("weight decay must be >= 0");
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
    if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs > epochs) {
      throw InvalidArgument("warmup epochs must lie in [0, epochs]");
    }
    if (min_lr < 0.0 || min_lr > lr) throw InvalidArgument("min_lr must lie in [0, lr]");
  }
};

// Linear warmup over `warmup_steps`, then cosine decay to min_lr at
// `total_steps` (or constant when cosine is off).
inline double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t warmup_steps,
                            std::size_t total_steps) {
  if (step < warmup_steps) {
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  if (!cfg.cosine || total_steps <= warmup_steps) return cfg.lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return cfg.min_lr + (cfg.lr - cfg.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// Adam with decoupled weight decay on matrix parameters.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Param<T>*> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      const double wd = p.decays() ? cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i];
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g;
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g * g;
        const double mh = m_[k][i] / c1;
        const double vh = v_[k][i] / c2;
        const double w = p.value[i];
        p.value[i] = static_cast<T>(w - lr * (mh / (std::sqrt(vh) + cfg_.eps) + wd * w));
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<Param<T>*> params_;
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace m3v::model
