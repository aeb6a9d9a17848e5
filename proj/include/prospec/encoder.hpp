#pragma once

#include <stdexcept>
#include <vector>

#include "prospec/nn.hpp"
#include "prospec/optim.hpp"
#include "prospec/rng.hpp"
#include "prospec/tape.hpp"
#include "prospec/tensor.hpp"

namespace prospec {

enum class ObsKind { Vector, Pixels };
enum class TargetPolicy { StopGrad, Ema };

struct EncoderConfig {
  ObsKind obs = ObsKind::Vector;
  int obs_dim = 4;       // vector variant input width
  int image_size = 24;   // pixels variant: single-channel image_size x image_size
  int latent_dim = 50;   // D_z
  int proj_dim = 32;
  int hidden = 256;
  TargetPolicy target_policy = TargetPolicy::StopGrad;
  double ema_tau = 0.01;

  int input_dim() const { return obs == ObsKind::Vector ? obs_dim : image_size * image_size; }
};

struct EmbeddingBatch {
  enum class Source { Online, Target, Predicted };
  Tensor values;
  Source source = Source::Online;
  bool finite() const { return values.all_finite(); }
};

// Observation -> latent map with a projection head and a target view.
// Target policy "stop-grad" shares the online weights (target_encode equals
// encode numerically but never contributes gradients); "ema" keeps a slow
// copy updated by ema_update.
class Encoder {
 public:
  Encoder() = default;

  Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.obs == ObsKind::Vector) {
      mlp_ = Mlp({cfg.obs_dim, cfg.hidden, cfg.hidden, cfg.latent_dim}, rng);
    } else {
      conv1_.in_c = 1;
      conv1_.h = conv1_.w = cfg.image_size;
      conv1_.out_c = 8;
      conv1_.kh = conv1_.kw = 3;
      conv1_.stride = 2;
      conv2_.in_c = 8;
      conv2_.h = conv2_.w = conv1_.out_h();
      conv2_.out_c = 8;
      conv2_.kh = conv2_.kw = 3;
      conv2_.stride = 2;
      const double s1 = 1.0 / std::sqrt(9.0);
      conv1_w_ = Tensor::uniform(conv1_.out_c, conv1_.in_c * 9, rng, -s1, s1);
      conv1_b_ = Tensor::zeros(1, conv1_.out_c);
      const double s2 = 1.0 / std::sqrt(8.0 * 9.0);
      conv2_w_ = Tensor::uniform(conv2_.out_c, conv2_.in_c * 9, rng, -s2, s2);
      conv2_b_ = Tensor::zeros(1, conv2_.out_c);
      for (Tensor* t : {&conv1_w_, &conv1_b_, &conv2_w_, &conv2_b_}) t->requires_grad = true;
      const int flat = conv2_.out_c * conv2_.out_h() * conv2_.out_w();
      head_.init(flat, cfg.latent_dim, rng);
    }
    proj_.init(cfg.latent_dim, cfg.proj_dim, rng);
    if (cfg.target_policy == TargetPolicy::Ema) init_target_copies();
  }

  const EncoderConfig& config() const { return cfg_; }
  int latent_dim() const { return cfg_.latent_dim; }
  int proj_dim() const { return cfg_.proj_dim; }

  // ---- online paths ----

  Tape::Val encode(Tape& t, Tape::Val obs, bool trainable = true) const {
    check_obs(t.value(obs));
    if (cfg_.obs == ObsKind::Vector) return mlp_.apply(t, obs, trainable);
    auto h = t.tanh(t.conv2d(obs, use(t, conv1_w_, trainable), use(t, conv1_b_, trainable), conv1_));
    h = t.tanh(t.conv2d(h, use(t, conv2_w_, trainable), use(t, conv2_b_, trainable), conv2_));
    return head_.apply(t, h, trainable);
  }

  Tensor encode(const Tensor& obs) const {
    check_obs(obs);
    if (cfg_.obs == ObsKind::Vector) return mlp_.eval(obs);
    Tape t;  // scratch, constants only: shares the exact conv kernels with the tape path
    return t.value(encode_with(t, t.constant(obs), mlp_, conv1_w_, conv1_b_, conv2_w_, conv2_b_, head_));
  }

  Tape::Val project(Tape& t, Tape::Val z, bool trainable = true) const {
    return proj_.apply(t, z, trainable);
  }

  Tensor project(const Tensor& z) const { return proj_.eval(z); }

  // ---- target paths (never produce gradients) ----

  Tensor target_encode(const Tensor& obs) const {
    check_obs(obs);
    if (cfg_.target_policy == TargetPolicy::StopGrad) return encode(obs);
    Tape t;
    return t.value(encode_with(t, t.constant(obs), mlp_t_, conv1_w_t_, conv1_b_t_, conv2_w_t_, conv2_b_t_, head_t_));
  }

  Tensor target_project(const Tensor& z) const {
    if (cfg_.target_policy == TargetPolicy::StopGrad) return proj_.eval(z);
    return proj_t_.eval(z);
  }

  // EMA step; no-op under the stop-grad policy.
  void update_target() {
    if (cfg_.target_policy != TargetPolicy::Ema) return;
    auto online = online_params_internal();
    auto target = target_params_internal();
    for (size_t i = 0; i < online.size(); ++i)
      ema_update(*target[i].second, *online[i].second, cfg_.ema_tau);
  }

  ParamList params() {
    ParamList out;
    if (cfg_.obs == ObsKind::Vector) {
      append_params(out, "encoder.mlp", mlp_.params());
    } else {
      out.emplace_back("encoder.conv1.w", &conv1_w_);
      out.emplace_back("encoder.conv1.b", &conv1_b_);
      out.emplace_back("encoder.conv2.w", &conv2_w_);
      out.emplace_back("encoder.conv2.b", &conv2_b_);
      append_params(out, "encoder.head", head_.params());
    }
    append_params(out, "encoder.proj", proj_.params());
    if (cfg_.target_policy == TargetPolicy::Ema) {
      for (auto& [name, p] : target_params_internal()) out.emplace_back("encoder.target." + name, p);
    }
    return out;
  }

  // Test hooks.
  Mlp& mlp() { return mlp_; }
  Linear& projection() { return proj_; }

 private:
  static Tape::Val use(Tape& t, const Tensor& p, bool trainable) {
    return t.use(const_cast<Tensor&>(p), trainable);
  }

  Tape::Val encode_with(Tape& t, Tape::Val obs, const Mlp& mlp, const Tensor& c1w, const Tensor& c1b,
                        const Tensor& c2w, const Tensor& c2b, const Linear& head) const {
    if (cfg_.obs == ObsKind::Vector) return mlp.apply(t, obs, false);
    auto h = t.tanh(t.conv2d(obs, use(t, c1w, false), use(t, c1b, false), conv1_));
    h = t.tanh(t.conv2d(h, use(t, c2w, false), use(t, c2b, false), conv2_));
    return head.apply(t, h, false);
  }

  void check_obs(const Tensor& obs) const {
    if (obs.cols() != cfg_.input_dim())
      throw std::invalid_argument("encoder: observation width " + std::to_string(obs.cols()) +
                                  " does not match configured " + std::to_string(cfg_.input_dim()));
  }

  ParamList online_params_internal() {
    ParamList out;
    if (cfg_.obs == ObsKind::Vector) {
      append_params(out, "mlp", mlp_.params());
    } else {
      out.emplace_back("conv1.w", &conv1_w_);
      out.emplace_back("conv1.b", &conv1_b_);
      out.emplace_back("conv2.w", &conv2_w_);
      out.emplace_back("conv2.b", &conv2_b_);
      append_params(out, "head", head_.params());
    }
    append_params(out, "proj", proj_.params());
    return out;
  }

  ParamList target_params_internal() {
    ParamList out;
    if (cfg_.obs == ObsKind::Vector) {
      append_params(out, "mlp", mlp_t_.params());
    } else {
      out.emplace_back("conv1.w", &conv1_w_t_);
      out.emplace_back("conv1.b", &conv1_b_t_);
      out.emplace_back("conv2.w", &conv2_w_t_);
      out.emplace_back("conv2.b", &conv2_b_t_);
      append_params(out, "head", head_t_.params());
    }
    append_params(out, "proj", proj_t_.params());
    return out;
  }

  void init_target_copies() {
    mlp_t_ = mlp_;
    conv1_w_t_ = conv1_w_;
    conv1_b_t_ = conv1_b_;
    conv2_w_t_ = conv2_w_;
    conv2_b_t_ = conv2_b_;
    head_t_ = head_;
    proj_t_ = proj_;
    for (auto& [name, p] : target_params_internal()) p->requires_grad = false;
  }

  EncoderConfig cfg_;
  Mlp mlp_;
  Tape::ConvMeta conv1_, conv2_;
  Tensor conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  Linear head_;
  Linear proj_;
  // EMA target copies.
  Mlp mlp_t_;
  Tensor conv1_w_t_, conv1_b_t_, conv2_w_t_, conv2_b_t_;
  Linear head_t_;
  Linear proj_t_;
};

// -sum_k mean_batch cos(predicted_k, target_k). Predictions are tape values,
// targets are gradient-free tensors; both sides are expected to be projected
// embeddings. The eps guard keeps zero-norm rows finite.
inline Tape::Val prediction_loss(Tape& t, const std::vector<Tape::Val>& predicted,
                                 const std::vector<Tensor>& targets, double eps = 1e-8) {
  if (predicted.empty() || predicted.size() != targets.size())
    throw std::invalid_argument("prediction_loss: needs K >= 1 matched prediction/target pairs");
  Tape::Val total = t.constant(Tensor::scalar(0.0));
  for (size_t k = 0; k < predicted.size(); ++k) {
    const auto pn = t.l2_normalize_rows(predicted[k], eps);
    const auto tn = t.l2_normalize_rows(t.constant(targets[k]), eps);
    const auto cos_per_row = t.row_sum(t.mul(pn, tn));
    total = t.add(total, t.mean(cos_per_row));
  }
  return t.neg(total);
}

inline Tape::Val prediction_loss(Tape& t, const std::vector<Tape::Val>& predicted,
                                 const std::vector<EmbeddingBatch>& targets, double eps = 1e-8) {
  std::vector<Tensor> values;
  values.reserve(targets.size());
  for (const auto& e : targets) {
    if (e.source != EmbeddingBatch::Source::Target)
      throw std::invalid_argument("prediction_loss: targets must come from the target encoder");
    if (!e.finite()) throw std::invalid_argument("prediction_loss: non-finite target embedding");
    values.push_back(e.values);
  }
  return prediction_loss(t, predicted, values, eps);
}

}  // namespace prospec
