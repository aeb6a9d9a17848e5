#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "prospec/tensor.hpp"

namespace prospec {

// Adam with per-parameter learning-rate groups. Moment buffers shape-match
// the parameters; the step counter advances by exactly one per step().
class Adam {
 public:
  explicit Adam(double lr = 3e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void add(Tensor& p) { add(p, lr_); }

  void add(Tensor& p, double lr) {
    Slot s;
    s.p = &p;
    s.lr = lr;
    s.m.assign(p.size(), 0.0);
    s.v.assign(p.size(), 0.0);
    slots_.push_back(std::move(s));
  }

  void add_all(std::vector<std::pair<std::string, Tensor*>> params) {
    for (auto& [name, p] : params) add(*p);
  }

  void step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (auto& s : slots_) {
      if (s.p->size() != s.m.size()) throw std::invalid_argument("Adam::step: parameter shape changed");
      if (!s.p->has_grad()) continue;  // never touched by backward this round
      const auto& g = s.p->grad();
      auto& d = s.p->vec();
      for (size_t i = 0; i < d.size(); ++i) {
        s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g[i];
        s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        d[i] -= s.lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& s : slots_) s.p->zero_grad();
  }

  long step_count() const { return step_count_; }
  size_t slot_count() const { return slots_.size(); }

 private:
  struct Slot {
    Tensor* p = nullptr;
    double lr = 0.0;
    std::vector<double> m, v;
  };

  double lr_, beta1_, beta2_, eps_;
  long step_count_ = 0;
  std::vector<Slot> slots_;
};

// Soft update: target <- tau * online + (1 - tau) * target. tau in (0, 1].
inline void soft_update(Tensor& target, const Tensor& online, double tau) {
  if (tau <= 0.0 || tau > 1.0) throw std::invalid_argument("soft_update: tau must be in (0, 1]");
  if (!target.same_shape(online)) throw std::invalid_argument("soft_update: shape mismatch");
  for (size_t i = 0; i < target.size(); ++i)
    target[i] = tau * online[i] + (1.0 - tau) * target[i];
}

// EMA form used by the target encoder; tau = 0 freezes the target.
inline void ema_update(Tensor& target, const Tensor& online, double tau) {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("ema_update: tau must be in [0, 1]");
  if (!target.same_shape(online)) throw std::invalid_argument("ema_update: shape mismatch");
  for (size_t i = 0; i < target.size(); ++i)
    target[i] = tau * online[i] + (1.0 - tau) * target[i];
}

}  // namespace prospec
