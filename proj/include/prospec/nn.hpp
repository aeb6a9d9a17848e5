#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "prospec/rng.hpp"
#include "prospec/tape.hpp"
#include "prospec/tensor.hpp"

namespace prospec {

using ParamList = std::vector<std::pair<std::string, Tensor*>>;

inline void append_params(ParamList& out, const std::string& prefix, ParamList items) {
  for (auto& [name, p] : items) out.emplace_back(prefix + "." + name, p);
}

// y = x W + b, weights stored [in, out].
struct Linear {
  Tensor w;  // [in, out]
  Tensor b;  // [1, out]

  Linear() = default;
  Linear(int in, int out, Rng& rng) { init(in, out, rng); }

  void init(int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, in)));
    w = Tensor::uniform(in, out, rng, -bound, bound);
    b = Tensor::zeros(1, out);
    w.requires_grad = true;
    b.requires_grad = true;
  }

  Tape::Val apply(Tape& t, Tape::Val x, bool trainable = true) const {
    // The tape mutates nothing; const_cast confines the cast to one place.
    Tensor& wref = const_cast<Tensor&>(w);
    Tensor& bref = const_cast<Tensor&>(b);
    return t.add(t.matmul(x, t.use(wref, trainable)), t.use(bref, trainable));
  }

  Tensor eval(const Tensor& x) const {
    Tensor out = matmul_plain(x, w);
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out.at(i, j) += b.at(0, j);
    return out;
  }

  ParamList params() { return {{"w", &w}, {"b", &b}}; }
};

enum class Activation { Tanh, Identity };

// Plain fully connected stack; hidden layers share one activation, the last
// layer is linear.
struct Mlp {
  std::vector<Linear> layers;
  Activation hidden_act = Activation::Tanh;

  Mlp() = default;
  Mlp(const std::vector<int>& dims, Rng& rng, Activation act = Activation::Tanh) : hidden_act(act) {
    for (size_t i = 0; i + 1 < dims.size(); ++i) layers.emplace_back(dims[i], dims[i + 1], rng);
  }

  Tape::Val apply(Tape& t, Tape::Val x, bool trainable = true) const {
    Tape::Val h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].apply(t, h, trainable);
      if (i + 1 < layers.size() && hidden_act == Activation::Tanh) h = t.tanh(h);
    }
    return h;
  }

  Tensor eval(const Tensor& x) const {
    Tensor h = x;
    for (size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].eval(h);
      if (i + 1 < layers.size() && hidden_act == Activation::Tanh)
        for (auto& v : h.vec()) v = std::tanh(v);
    }
    return h;
  }

  int out_dim() const { return layers.empty() ? 0 : layers.back().w.cols(); }

  ParamList params() {
    ParamList out;
    for (size_t i = 0; i < layers.size(); ++i)
      append_params(out, "layer" + std::to_string(i), layers[i].params());
    return out;
  }
};

inline void copy_params_from(ParamList dst, ParamList src) {
  for (size_t i = 0; i < dst.size(); ++i) *dst[i].second = *src[i].second;
}

}  // namespace prospec
