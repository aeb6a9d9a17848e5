#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <utility>

#include "prospec/encoder.hpp"
#include "prospec/nn.hpp"
#include "prospec/optim.hpp"
#include "prospec/replay.hpp"
#include "prospec/rng.hpp"
#include "prospec/tape.hpp"

namespace prospec {

struct SacConfig {
  int latent_dim = 50;
  int action_dim = 2;
  int hidden = 128;
  double gamma = 0.99;
  double tau = 0.005;
  double lr = 3e-4;
  double alpha_lr = 1e-4;
  double init_alpha = 1.0;
  std::optional<double> target_entropy;  // defaults to -action_dim
  double logstd_min = -10.0;
  double logstd_max = 2.0;
  double action_low = -1.0;
  double action_high = 1.0;

  double resolved_target_entropy() const {
    return target_entropy.value_or(-static_cast<double>(action_dim));
  }
  double action_scale() const { return 0.5 * (action_high - action_low); }
  double action_center() const { return 0.5 * (action_high + action_low); }
};

// Soft actor-critic over encoder latents: squashed-Gaussian actor, twin Q
// critics with soft-updated targets, and a learned temperature stored as
// log(alpha) so it stays positive.
class Sac {
 public:
  Sac() = default;

  Sac(const SacConfig& cfg, Rng& rng) : cfg_(cfg) {
    actor_ = Mlp({cfg.latent_dim, cfg.hidden, cfg.hidden, 2 * cfg.action_dim}, rng);
    {
      // Bias the log-sigma half of the head so the initial policy starts at
      // sigma = 1 instead of the bound midpoint.
      const double half = 0.5 * (cfg.logstd_max - cfg.logstd_min);
      const double center = cfg.logstd_min + half;
      const double raw = std::atanh(std::clamp((0.0 - center) / half, -0.999, 0.999));
      Tensor& b = actor_.layers.back().b;
      for (int j = cfg.action_dim; j < 2 * cfg.action_dim; ++j) b.at(0, j) = raw;
    }
    const int qin = cfg.latent_dim + cfg.action_dim;
    q1_ = Mlp({qin, cfg.hidden, cfg.hidden, 1}, rng);
    q2_ = Mlp({qin, cfg.hidden, cfg.hidden, 1}, rng);
    tq1_ = q1_;
    tq2_ = q2_;
    for (auto& [name, p] : tq1_.params()) p->requires_grad = false;
    for (auto& [name, p] : tq2_.params()) p->requires_grad = false;
    log_alpha_ = Tensor::scalar(std::log(cfg.init_alpha));
    log_alpha_.requires_grad = true;
  }

  const SacConfig& config() const { return cfg_; }
  double alpha() const { return std::exp(log_alpha_.item()); }
  Tensor& log_alpha() { return log_alpha_; }

  // ---- actor ----

  struct TapeSample {
    Tape::Val action;  // [B, D_a], within action bounds
    Tape::Val logp;    // [B, 1]
  };

  // Reparameterized sample with the tanh Jacobian correction. `noise` holds
  // the standard-normal draws, one row per latent row.
  TapeSample sample_on_tape(Tape& t, Tape::Val z, const Tensor& noise, bool trainable = true) const {
    const int da = cfg_.action_dim;
    const auto out = actor_.apply(t, z, trainable);
    const auto mu = t.slice_cols(out, 0, da);
    const auto raw = t.slice_cols(out, da, 2 * da);
    // log sigma bounded smoothly into [logstd_min, logstd_max]
    const double half_span = 0.5 * (cfg_.logstd_max - cfg_.logstd_min);
    const auto logstd = t.affine(t.tanh(raw), half_span, cfg_.logstd_min + half_span);
    const auto eps = t.constant(noise);
    const auto pre = t.add(mu, t.mul(t.exp(logstd), eps));
    const auto squashed = t.tanh(pre);
    const auto action = t.affine(squashed, cfg_.action_scale(), cfg_.action_center());

    // Gaussian log density at pre: -((pre-mu)/sigma)^2 / 2 - logstd - log(2 pi)/2
    const auto unit = t.mul(t.sub(pre, mu), t.exp(t.neg(logstd)));
    const auto gauss = t.sub(t.affine(t.mul(unit, unit), -0.5, -0.5 * std::log(2.0 * std::numbers::pi)),
                             logstd);
    // log(1 - tanh(x)^2) = 2 (log 2 - x - softplus(-2x)), stable at large |x|
    const auto corr = t.affine(t.add(pre, t.softplus(t.affine(pre, -2.0, 0.0))), -2.0,
                               2.0 * std::log(2.0));
    auto logp = t.row_sum(t.sub(gauss, corr));
    if (cfg_.action_scale() != 1.0)
      logp = t.affine(logp, 1.0, -static_cast<double>(da) * std::log(cfg_.action_scale()));
    return {action, logp};
  }

  // Stochastic draw on plain tensors; shares the tape math via a scratch tape.
  struct PlainSample {
    Tensor action;  // [B, D_a]
    Tensor logp;    // [B, 1]
  };

  PlainSample sample(const Tensor& z, Rng& rng) const {
    Tensor noise(z.rows(), cfg_.action_dim);
    for (auto& v : noise.vec()) v = rng.normal();
    Tape t;
    const auto s = sample_on_tape(t, t.constant(z), noise, false);
    return {t.value(s.action), t.value(s.logp)};
  }

  // Deterministic action: squashed mean. sigma plays no role, matching the
  // clamped-floor limit.
  Tensor act_mean(const Tensor& z) const {
    const Tensor out = actor_.eval(z);
    Tensor a(z.rows(), cfg_.action_dim);
    for (int i = 0; i < z.rows(); ++i)
      for (int j = 0; j < cfg_.action_dim; ++j)
        a.at(i, j) = cfg_.action_center() + cfg_.action_scale() * std::tanh(out.at(i, j));
    return a;
  }

  // ---- critics ----

  std::pair<Tape::Val, Tape::Val> critic_on_tape(Tape& t, Tape::Val z, Tape::Val a,
                                                 bool trainable = true) const {
    const auto za = t.concat_cols(z, a);
    return {q1_.apply(t, za, trainable), q2_.apply(t, za, trainable)};
  }

  std::pair<Tensor, Tensor> critic_eval(const Tensor& z, const Tensor& a) const {
    const Tensor za = hcat(z, a);
    return {q1_.eval(za), q2_.eval(za)};
  }

  std::pair<Tensor, Tensor> target_critic_eval(const Tensor& z, const Tensor& a) const {
    const Tensor za = hcat(z, a);
    return {tq1_.eval(za), tq2_.eval(za)};
  }

  double q_min(const Tensor& z_row, const Tensor& a_row) const {
    const auto [q1, q2] = critic_eval(z_row, a_row);
    return std::min(q1.item(), q2.item());
  }

  // ---- losses ----

  // Entropy-regularized bootstrap targets
  //   y = r + gamma (1 - done) (min(Q'_1, Q'_2)(z', a') - alpha log pi(a'|z'))
  // with a' drawn fresh from the current policy. Computed off-tape: the
  // target path never carries gradient.
  Tensor bootstrap_targets(const Encoder& enc, const Batch& batch, Rng& rng) const {
    if (batch.size() == 0) throw std::invalid_argument("bootstrap_targets: empty batch");
    const Tensor z_next = enc.target_encode(batch.next_obs);
    const PlainSample next = sample(z_next, rng);
    const auto [tq1, tq2] = target_critic_eval(z_next, next.action);
    Tensor y(batch.size(), 1);
    const double a = alpha();
    for (int i = 0; i < batch.size(); ++i) {
      const double tmin = std::min(tq1.at(i, 0), tq2.at(i, 0));
      y.at(i, 0) = batch.reward.at(i, 0) + cfg_.gamma * (1.0 - batch.done.at(i, 0)) *
                                               (tmin - a * next.logp.at(i, 0));
    }
    return y;
  }

  // MSE of both critics against fixed targets y.
  Tape::Val critic_loss_against(Tape& t, const Encoder& enc, const Batch& batch, const Tensor& y,
                                bool train_encoder = true) const {
    if (batch.size() == 0) throw std::invalid_argument("critic_loss: empty batch");
    const auto z = enc.encode(t, t.constant(batch.obs), train_encoder);
    const auto [q1, q2] = critic_on_tape(t, z, t.constant(batch.action), true);
    const auto ty = t.constant(y);
    const auto d1 = t.sub(q1, ty);
    const auto d2 = t.sub(q2, ty);
    return t.add(t.mean(t.mul(d1, d1)), t.mean(t.mul(d2, d2)));
  }

  Tape::Val critic_loss(Tape& t, const Encoder& enc, const Batch& batch, Rng& rng,
                        bool train_encoder = true) const {
    return critic_loss_against(t, enc, batch, bootstrap_targets(enc, batch, rng), train_encoder);
  }

  struct ActorAlphaLoss {
    Tape::Val actor;
    Tape::Val alpha;
    double mean_logp = 0.0;
  };

  // Actor: E[alpha * logp - min Q] with reparameterized actions; critic and
  // encoder weights are frozen on this path. Alpha: E[-alpha (logp + H_t)]
  // with logp detached.
  ActorAlphaLoss actor_and_alpha_loss(Tape& t, const Encoder& enc, const Batch& batch, Rng& rng) const {
    if (batch.size() == 0) throw std::invalid_argument("actor_and_alpha_loss: empty batch");
    const auto z = t.constant(enc.encode(batch.obs));  // actor gradients do not reach the encoder
    Tensor noise(batch.size(), cfg_.action_dim);
    for (auto& v : noise.vec()) v = rng.normal();
    const auto s = sample_on_tape(t, z, noise, true);
    const auto [q1, q2] = critic_on_tape(t, z, s.action, false);  // frozen critic weights
    const auto qmin = t.min(q1, q2);
    const auto alpha_const = t.constant(Tensor::scalar(alpha()));
    const auto actor = t.mean(t.sub(t.mul_scalar(s.logp, alpha_const), qmin));

    const auto logp_det = t.detach(s.logp);
    const auto alpha_node = t.exp(t.use(const_cast<Tensor&>(log_alpha_), true));
    const auto alpha_loss =
        t.neg(t.mean(t.mul_scalar(t.affine(logp_det, 1.0, cfg_.resolved_target_entropy()), alpha_node)));

    double mean_logp = 0.0;
    for (int i = 0; i < batch.size(); ++i) mean_logp += t.value(s.logp).at(i, 0);
    mean_logp /= batch.size();
    return {actor, alpha_loss, mean_logp};
  }

  // target <- tau * online + (1 - tau) * target for both critic pairs.
  void soft_update_targets(std::optional<double> tau_override = std::nullopt) {
    const double tau = tau_override.value_or(cfg_.tau);
    auto o1 = q1_.params(), t1 = tq1_.params();
    auto o2 = q2_.params(), t2 = tq2_.params();
    for (size_t i = 0; i < o1.size(); ++i) soft_update(*t1[i].second, *o1[i].second, tau);
    for (size_t i = 0; i < o2.size(); ++i) soft_update(*t2[i].second, *o2[i].second, tau);
  }

  // ---- parameter access ----

  ParamList trainable_params() {
    ParamList out;
    append_params(out, "sac.actor", actor_.params());
    append_params(out, "sac.q1", q1_.params());
    append_params(out, "sac.q2", q2_.params());
    out.emplace_back("sac.log_alpha", &log_alpha_);
    return out;
  }

  ParamList params() {
    ParamList out = trainable_params();
    append_params(out, "sac.target_q1", tq1_.params());
    append_params(out, "sac.target_q2", tq2_.params());
    return out;
  }

  Mlp& actor_net() { return actor_; }
  Mlp& q1_net() { return q1_; }
  Mlp& q2_net() { return q2_; }
  Mlp& target_q1_net() { return tq1_; }
  Mlp& target_q2_net() { return tq2_; }

 private:
  SacConfig cfg_;
  Mlp actor_;
  Mlp q1_, q2_;
  Mlp tq1_, tq2_;
  Tensor log_alpha_;
};

}  // namespace prospec
