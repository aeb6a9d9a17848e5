#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "prospec/nn.hpp"
#include "prospec/ortho.hpp"
#include "prospec/rng.hpp"
#include "prospec/tape.hpp"
#include "prospec/tensor.hpp"

namespace prospec {

struct FdmConfig {
  int action_dim = 2;   // D_a; 0 selects the square exact-inversion configuration
  int latent_dim = 50;  // D_z
  int cond_hidden = 64;
  double scale_max = 5.0;  // log-scale outputs bounded to [-scale_max, scale_max]
  int depth = 1;           // coupling blocks per dynamics step

  int joint_dim() const { return action_dim + latent_dim; }
};

// Ordered latent states with the actions that connect them.
// Forward trajectories run z_0 .. z_t; backward trajectories run z_K .. z_0.
struct LatentTrajectory {
  enum class Direction { Forward, Backward };
  std::vector<Tensor> latents;
  std::vector<Tensor> actions;
  Direction direction = Direction::Forward;

  bool consistent() const { return latents.size() == actions.size() + 1; }
};

// Samples one step worth of actions for cycle rollouts: (rng, rows) -> [rows, D_a].
using ActionSampler = std::function<Tensor(Rng&, int)>;

inline ActionSampler uniform_action_sampler(int action_dim, double lo = -1.0, double hi = 1.0) {
  return [action_dim, lo, hi](Rng& rng, int rows) {
    return Tensor::uniform(rows, action_dim, rng, lo, hi);
  };
}

// Reversible latent dynamics: an affine coupling bijection over the
// (action, latent) pair followed by a row-orthonormal linear head.
//
//   forward:  y = couple(a, z);  z' = y W^T + B
//   backward: y = (z' - B) W;    (a, z) = couple^{-1}(y)
//
// W has orthonormal rows, so W^T is its pseudo-inverse: inversion is exact on
// the row space of W and the cycle loss drives coupling outputs toward it.
// With action_dim == 0, W is square orthogonal and inversion is exact.
//
// Each coupling block updates the action slot from the latent slot, then the
// latent slot from the *updated* action slot, which is what makes the closed
// form inverse below exact.
class Fdm {
 public:
  Fdm() = default;

  Fdm(const FdmConfig& cfg, Rng& rng) : cfg_(cfg) {
    blocks_.resize(cfg.depth);
    for (auto& blk : blocks_) {
      blk.sc1 = Mlp({cfg.action_dim, cfg.cond_hidden, cfg.latent_dim}, rng);
      blk.t1 = Mlp({cfg.action_dim, cfg.cond_hidden, cfg.latent_dim}, rng);
      blk.sc2 = Mlp({cfg.latent_dim, cfg.cond_hidden, cfg.action_dim}, rng);
      blk.t2 = Mlp({cfg.latent_dim, cfg.cond_hidden, cfg.action_dim}, rng);
    }
    head_w_ = Tensor::randn(cfg.latent_dim, cfg.joint_dim(), rng);
    orthonormalize_rows(head_w_);
    head_b_ = Tensor::zeros(1, cfg.latent_dim);
    head_w_.requires_grad = true;
    head_b_.requires_grad = true;
  }

  const FdmConfig& config() const { return cfg_; }

  // ---- plain batch paths ([B, D_a], [B, D_z]) ----

  Tensor couple_forward(const Tensor& a, const Tensor& z) const {
    check_pair(a, z);
    Tensor slot_a = a, slot_z = z;
    for (const auto& blk : blocks_) {
      Tensor y1 = combine(slot_a, bounded_scale(blk.sc2.eval(slot_z)), blk.t2.eval(slot_z));
      Tensor y2 = combine(slot_z, bounded_scale(blk.sc1.eval(y1)), blk.t1.eval(y1));
      slot_a = std::move(y1);
      slot_z = std::move(y2);
    }
    return hcat(slot_a, slot_z);
  }

  std::pair<Tensor, Tensor> couple_inverse(const Tensor& y) const {
    if (y.cols() != cfg_.joint_dim()) throw std::invalid_argument("couple_inverse: width mismatch");
    if (!y.all_finite()) throw std::invalid_argument("couple_inverse: non-finite input");
    Tensor slot_a(y.rows(), cfg_.action_dim);
    Tensor slot_z(y.rows(), cfg_.latent_dim);
    split(y, slot_a, slot_z);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      Tensor z = uncombine(slot_z, bounded_scale(it->sc1.eval(slot_a)), it->t1.eval(slot_a));
      Tensor a = uncombine(slot_a, bounded_scale(it->sc2.eval(z)), it->t2.eval(z));
      slot_a = std::move(a);
      slot_z = std::move(z);
    }
    return {slot_a, slot_z};
  }

  Tensor forward(const Tensor& a, const Tensor& z) const {
    const Tensor y = couple_forward(a, z);
    Tensor out = matmul_plain(y, head_w_.transposed());
    for (int i = 0; i < out.rows(); ++i)
      for (int j = 0; j < out.cols(); ++j) out.at(i, j) += head_b_.at(0, j);
    return out;
  }

  // Returns the recovered previous latent; the action recovered from the
  // coupling inverse is diagnostic only (the given action is authoritative).
  Tensor backward(const Tensor& a, const Tensor& z_next, Tensor* recovered_action = nullptr) const {
    if (!z_next.all_finite()) throw std::invalid_argument("fdm backward: non-finite input");
    (void)a;  // the inverse coupling reconstructs its own action estimate
    Tensor centered = z_next;
    for (int i = 0; i < centered.rows(); ++i)
      for (int j = 0; j < centered.cols(); ++j) centered.at(i, j) -= head_b_.at(0, j);
    const Tensor y = matmul_plain(centered, head_w_);
    auto [a_rec, z_prev] = couple_inverse(y);
    if (recovered_action != nullptr) *recovered_action = std::move(a_rec);
    return z_prev;
  }

  LatentTrajectory rollout_forward(const Tensor& z0, std::span<const Tensor> actions) const {
    if (actions.empty()) throw std::invalid_argument("rollout_forward: needs at least one action");
    LatentTrajectory traj;
    traj.direction = LatentTrajectory::Direction::Forward;
    traj.latents.push_back(z0);
    for (const Tensor& a : actions) {
      traj.latents.push_back(forward(a, traj.latents.back()));
      traj.actions.push_back(a);
    }
    return traj;
  }

  // actions_reversed holds the forward actions in reverse order; the result
  // runs z_K, z_{K-1}, ..., z_0.
  LatentTrajectory rollout_backward(const Tensor& z_last, std::span<const Tensor> actions_reversed) const {
    if (actions_reversed.empty()) throw std::invalid_argument("rollout_backward: needs at least one action");
    LatentTrajectory traj;
    traj.direction = LatentTrajectory::Direction::Backward;
    traj.latents.push_back(z_last);
    for (const Tensor& a : actions_reversed) {
      traj.latents.push_back(backward(a, traj.latents.back()));
      traj.actions.push_back(a);
    }
    return traj;
  }

  // ---- tape paths ----

  Tape::Val couple_forward(Tape& t, Tape::Val a, Tape::Val z, bool trainable = true) const {
    Tape::Val slot_a = a, slot_z = z;
    for (const auto& blk : blocks_) {
      const auto y1 = t.add(t.mul(slot_a, t.exp(bounded_scale(t, blk.sc2.apply(t, slot_z, trainable)))),
                            blk.t2.apply(t, slot_z, trainable));
      const auto y2 = t.add(t.mul(slot_z, t.exp(bounded_scale(t, blk.sc1.apply(t, y1, trainable)))),
                            blk.t1.apply(t, y1, trainable));
      slot_a = y1;
      slot_z = y2;
    }
    return t.concat_cols(slot_a, slot_z);
  }

  std::pair<Tape::Val, Tape::Val> couple_inverse(Tape& t, Tape::Val y, bool trainable = true) const {
    Tape::Val slot_a = t.slice_cols(y, 0, cfg_.action_dim);
    Tape::Val slot_z = t.slice_cols(y, cfg_.action_dim, cfg_.joint_dim());
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      const auto z = t.mul(t.sub(slot_z, it->t1.apply(t, slot_a, trainable)),
                           t.exp(t.neg(bounded_scale(t, it->sc1.apply(t, slot_a, trainable)))));
      const auto a = t.mul(t.sub(slot_a, it->t2.apply(t, z, trainable)),
                           t.exp(t.neg(bounded_scale(t, it->sc2.apply(t, z, trainable)))));
      slot_a = a;
      slot_z = z;
    }
    return {slot_a, slot_z};
  }

  Tape::Val forward(Tape& t, Tape::Val a, Tape::Val z, bool trainable = true) const {
    const auto y = couple_forward(t, a, z, trainable);
    const auto w = t.use(const_cast<Tensor&>(head_w_), trainable);
    return t.add(t.matmul(y, t.transpose(w)), t.use(const_cast<Tensor&>(head_b_), trainable));
  }

  Tape::Val backward(Tape& t, Tape::Val a, Tape::Val z_next, bool trainable = true) const {
    (void)a;
    const auto w = t.use(const_cast<Tensor&>(head_w_), trainable);
    const auto b = t.use(const_cast<Tensor&>(head_b_), trainable);
    const auto centered = t.add(z_next, t.neg(b));  // row broadcast
    const auto y = t.matmul(centered, w);
    return couple_inverse(t, y, trainable).second;
  }

  // Mean over M action sequences of the normalized squared distance between
  // the start latent and the K-step forward/backward round trip.
  Tape::Val cycle_loss(Tape& t, Tape::Val z0, int m_sequences, int k_steps, const ActionSampler& sample,
                       Rng& rng, bool trainable = true) const {
    if (m_sequences < 1 || k_steps < 1)
      throw std::invalid_argument("cycle_loss: M and K must be >= 1");
    const int rows = t.value(z0).rows();
    Tape::Val total = t.constant(Tensor::scalar(0.0));
    for (int m = 0; m < m_sequences; ++m) {
      std::vector<Tape::Val> actions;
      actions.reserve(k_steps);
      for (int k = 0; k < k_steps; ++k) actions.push_back(t.constant(sample(rng, rows)));
      Tape::Val z = z0;
      for (int k = 0; k < k_steps; ++k) z = forward(t, actions[k], z, trainable);
      for (int k = k_steps - 1; k >= 0; --k) z = backward(t, actions[k], z, trainable);
      total = t.add(total, t.mean(latent_cycle_distance(t, z0, z)));
    }
    return t.affine(total, 1.0 / static_cast<double>(m_sequences), 0.0);
  }

  // Row-wise squared L2 distance between L2-normalized latents; 4.0 for
  // antipodal directions, 0 for coincident ones.
  static Tape::Val latent_cycle_distance(Tape& t, Tape::Val z_ref, Tape::Val z_cycled, double eps = 1e-8) {
    const auto d = t.sub(t.l2_normalize_rows(z_ref, eps), t.l2_normalize_rows(z_cycled, eps));
    return t.row_sum(t.mul(d, d));
  }

  // ---- head maintenance and inspection ----

  void reproject_head() { orthonormalize_rows(head_w_); }

  double head_orthonormality_residual() const { return row_orthonormality_residual(head_w_); }

  Tensor& head_w() { return head_w_; }
  const Tensor& head_w() const { return head_w_; }
  Tensor& head_b() { return head_b_; }
  const Tensor& head_b() const { return head_b_; }

  ParamList params() {
    ParamList out;
    for (size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = "fdm.block" + std::to_string(i);
      append_params(out, p + ".sc1", blocks_[i].sc1.params());
      append_params(out, p + ".t1", blocks_[i].t1.params());
      append_params(out, p + ".sc2", blocks_[i].sc2.params());
      append_params(out, p + ".t2", blocks_[i].t2.params());
    }
    out.emplace_back("fdm.head.w", &head_w_);
    out.emplace_back("fdm.head.b", &head_b_);
    return out;
  }

  struct Block {
    Mlp sc1, t1;  // D_a -> D_z conditioners
    Mlp sc2, t2;  // D_z -> D_a conditioners
  };

  std::vector<Block>& coupling_blocks() { return blocks_; }

 private:
  Tensor bounded_scale(Tensor raw) const {
    for (auto& v : raw.vec()) v = cfg_.scale_max * std::tanh(v);
    return raw;
  }

  Tape::Val bounded_scale(Tape& t, Tape::Val raw) const {
    return t.affine(t.tanh(raw), cfg_.scale_max, 0.0);
  }

  // x * exp(scale) + shift, elementwise.
  static Tensor combine(const Tensor& x, const Tensor& scale, const Tensor& shift) {
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) out[i] = out[i] * std::exp(scale[i]) + shift[i];
    return out;
  }

  // (y - shift) * exp(-scale).
  static Tensor uncombine(const Tensor& y, const Tensor& scale, const Tensor& shift) {
    Tensor out = y;
    for (size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - shift[i]) * std::exp(-scale[i]);
    return out;
  }

  void split(const Tensor& y, Tensor& a, Tensor& z) const {
    for (int i = 0; i < y.rows(); ++i) {
      for (int j = 0; j < cfg_.action_dim; ++j) a.at(i, j) = y.at(i, j);
      for (int j = 0; j < cfg_.latent_dim; ++j) z.at(i, j) = y.at(i, cfg_.action_dim + j);
    }
  }

  void check_pair(const Tensor& a, const Tensor& z) const {
    if (a.cols() != cfg_.action_dim || z.cols() != cfg_.latent_dim || a.rows() != z.rows())
      throw std::invalid_argument("fdm: action/latent shape mismatch");
    if (!a.all_finite() || !z.all_finite()) throw std::invalid_argument("fdm: non-finite input");
  }

  FdmConfig cfg_;
  std::vector<Block> blocks_;
  Tensor head_w_;  // [D_z, D_a + D_z], rows orthonormal
  Tensor head_b_;  // [1, D_z]
};

}  // namespace prospec
