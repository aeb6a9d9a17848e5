#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "prospec/tape.hpp"

namespace prospec {

// Central-difference gradient check. `build` must construct the loss on the
// given tape from the current contents of `params` (pure in the parameters).
// Returns max over all parameter entries of
//   |autodiff - central_difference| / max(1, |central_difference|).
inline double grad_check(const std::function<Tape::Val(Tape&)>& build, std::span<Tensor*> params,
                         double h = 1e-5) {
  const auto eval = [&]() -> double {
    Tape tape;
    const double v = tape.scalar(build(tape));
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: function produced non-finite value");
    return v;
  };

  // Autodiff pass.
  std::vector<std::vector<double>> auto_grads;
  {
    Tape tape;
    for (Tensor* p : params) p->zero_grad();
    const Tape::Val loss = build(tape);
    if (!std::isfinite(tape.scalar(loss)))
      throw std::runtime_error("grad_check: function produced non-finite value");
    tape.backward(loss);
    for (Tensor* p : params) auto_grads.push_back(p->grad());
  }

  double max_rel_err = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    for (size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double fp = eval();
      p[i] = saved - h;
      const double fm = eval();
      p[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = auto_grads[pi][i];
      const double rel = std::abs(ad - fd) / std::max(1.0, std::abs(fd));
      max_rel_err = std::max(max_rel_err, rel);
    }
  }
  return max_rel_err;
}

}  // namespace prospec
