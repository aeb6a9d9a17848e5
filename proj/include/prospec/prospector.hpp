#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "prospec/fdm.hpp"
#include "prospec/rng.hpp"
#include "prospec/sac.hpp"
#include "prospec/tensor.hpp"

namespace prospec {

enum class ActionSource { Uniform, Policy, Mixed };

struct PlanConfig {
  int candidates = 3;  // perspective count k
  int horizon = 6;     // imagined steps t
  double gamma = 0.99;
  ActionSource source = ActionSource::Uniform;
  // Ties break toward the lowest candidate index.

  void validate() const {
    if (candidates < 1 || horizon < 1 || gamma <= 0.0 || gamma > 1.0)
      throw std::invalid_argument("plan config: need k >= 1, t >= 1, gamma in (0, 1]");
  }
};

struct PlanResult {
  std::vector<std::vector<Tensor>> candidates;  // k sequences of t actions
  std::vector<LatentTrajectory> trajectories;   // one imagined rollout per candidate
  std::vector<double> scores;                   // cumulative discounted Q per candidate
  int chosen = -1;
  Tensor chosen_action;
};

enum class ActMode { Plan, Policy };

// Sample-score-argmax planner: imagines k candidate action sequences of
// length t through the dynamics model, scores each by cumulative discounted
// Q, and executes the argmax candidate's first action. Everything here is
// gradient-free; the model snapshots are read-only.
class Prospector {
 public:
  using DynamicsFn = std::function<Tensor(const Tensor& action, const Tensor& z)>;
  using ValueFn = std::function<double(const Tensor& z, const Tensor& action)>;
  using PolicyMeanFn = std::function<Tensor(const Tensor& z)>;
  using PolicySampleFn = std::function<Tensor(const Tensor& z, Rng& rng)>;

  Prospector(DynamicsFn dynamics, ValueFn q_min, PolicyMeanFn policy_mean, PolicySampleFn policy_sample,
             int action_dim, double action_low = -1.0, double action_high = 1.0)
      : dynamics_(std::move(dynamics)),
        q_min_(std::move(q_min)),
        policy_mean_(std::move(policy_mean)),
        policy_sample_(std::move(policy_sample)),
        action_dim_(action_dim),
        action_low_(action_low),
        action_high_(action_high) {}

  // Wires the learned components. References must outlive the planner.
  static Prospector over_models(const Fdm& fdm, const Sac& sac) {
    return Prospector(
        [&fdm](const Tensor& a, const Tensor& z) { return fdm.forward(a, z); },
        [&sac](const Tensor& z, const Tensor& a) { return sac.q_min(z, a); },
        [&sac](const Tensor& z) { return sac.act_mean(z); },
        [&sac](const Tensor& z, Rng& rng) { return sac.sample(z, rng).action; },
        sac.config().action_dim, sac.config().action_low, sac.config().action_high);
  }

  // k x t candidate actions. Uniform: i.i.d. over the action box. Policy:
  // sampled from the policy along each imagined rollout. Mixed: candidate 0
  // is the policy rollout, the rest are uniform.
  std::vector<std::vector<Tensor>> sample_action_sequences(const Tensor& z0, const PlanConfig& cfg,
                                                           Rng& rng) const {
    cfg.validate();
    std::vector<std::vector<Tensor>> out(cfg.candidates);
    for (int c = 0; c < cfg.candidates; ++c) {
      const bool policy_rollout = cfg.source == ActionSource::Policy ||
                                  (cfg.source == ActionSource::Mixed && c == 0);
      out[c].reserve(cfg.horizon);
      if (policy_rollout) {
        Tensor z = z0;
        for (int j = 0; j < cfg.horizon; ++j) {
          Tensor a = policy_sample_(z, rng);
          if (j + 1 < cfg.horizon) z = dynamics_(a, z);
          out[c].push_back(std::move(a));
        }
      } else {
        for (int j = 0; j < cfg.horizon; ++j)
          out[c].push_back(Tensor::uniform(1, action_dim_, rng, action_low_, action_high_));
      }
    }
    return out;
  }

  // CQ = sum_{j=0..t} gamma^j Qmin(z_j, a_j), where a_t (the terminal index)
  // is the policy mean at the final imagined state.
  double score_trajectory(const Tensor& z0, std::span<const Tensor> actions, double gamma,
                          LatentTrajectory* out_traj = nullptr) const {
    if (actions.empty()) throw std::invalid_argument("score_trajectory: empty action sequence");
    LatentTrajectory traj;
    traj.direction = LatentTrajectory::Direction::Forward;
    traj.latents.push_back(z0);
    double score = 0.0;
    double disc = 1.0;
    Tensor z = z0;
    for (const Tensor& a : actions) {
      score += disc * q_min_(z, a);
      disc *= gamma;
      z = dynamics_(a, z);
      traj.latents.push_back(z);
      traj.actions.push_back(a);
    }
    const Tensor terminal_action = policy_mean_(z);
    score += disc * q_min_(z, terminal_action);
    if (out_traj != nullptr) *out_traj = std::move(traj);
    return score;
  }

  PlanResult select_action(const Tensor& z0, const PlanConfig& cfg, Rng& rng) const {
    return select_action_over(z0, cfg, sample_action_sequences(z0, cfg, rng));
  }

  // Scores a caller-provided candidate set (shared with oracles in tests).
  PlanResult select_action_over(const Tensor& z0, const PlanConfig& cfg,
                                std::vector<std::vector<Tensor>> candidates) const {
    cfg.validate();
    if (candidates.empty()) throw std::invalid_argument("select_action: no candidates");
    PlanResult result;
    result.candidates = std::move(candidates);
    result.trajectories.resize(result.candidates.size());
    result.scores.resize(result.candidates.size());
    for (size_t c = 0; c < result.candidates.size(); ++c)
      result.scores[c] =
          score_trajectory(z0, result.candidates[c], cfg.gamma, &result.trajectories[c]);
    result.chosen = 0;
    for (size_t c = 1; c < result.scores.size(); ++c)
      if (result.scores[c] > result.scores[result.chosen]) result.chosen = static_cast<int>(c);
    result.chosen_action = result.candidates[result.chosen].front();
    return result;
  }

  struct Decision {
    Tensor action;
    bool planned = false;
  };

  Decision act(const Tensor& z0, ActMode mode, const PlanConfig& cfg, Rng& rng,
               bool deterministic = false) const {
    if (mode == ActMode::Plan) return {select_action(z0, cfg, rng).chosen_action, true};
    if (deterministic) return {policy_mean_(z0), false};
    return {policy_sample_(z0, rng), false};
  }

 private:
  DynamicsFn dynamics_;
  ValueFn q_min_;
  PolicyMeanFn policy_mean_;
  PolicySampleFn policy_sample_;
  int action_dim_;
  double action_low_, action_high_;
};

}  // namespace prospec
