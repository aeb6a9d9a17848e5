#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

#include "prospec/rng.hpp"
#include "prospec/tensor.hpp"

namespace prospec {

struct EnvSpec {
  std::string name;
  int obs_dim = 0;
  int action_dim = 0;
  double action_low = -1.0;
  double action_high = 1.0;
  int max_steps = 200;
  double dt = 0.05;
};

struct StepResult {
  Tensor obs;
  double reward = 0.0;
  bool done = false;
};

// Deterministic toy environments: identical (seed, action stream) pairs give
// bitwise-identical observation/reward streams. Rewards are <= 0 for both.
class Env {
 public:
  virtual ~Env() = default;
  virtual EnvSpec spec() const = 0;
  virtual Tensor reset(uint64_t seed) = 0;
  virtual Tensor reset() = 0;  // next episode from the internal stream
  virtual StepResult step(const Tensor& action) = 0;
  virtual Tensor render_pixels() const {
    throw std::runtime_error("render_pixels: unsupported environment");
  }
  virtual Tensor observation() const = 0;

 protected:
  // Clamp into bounds; counts violations instead of failing.
  double clamp_action(double a) {
    const double lo = spec().action_low, hi = spec().action_high;
    if (a < lo || a > hi) {
      ++clamped_actions_;
      return std::clamp(a, lo, hi);
    }
    return a;
  }

 public:
  long clamped_action_count() const { return clamped_actions_; }

 private:
  long clamped_actions_ = 0;
};

// Planar point mass pushed toward the origin. State is (pos, vel) in R^2 x R^2;
// position clamps to [-2, 2]^2; reward = -|pos| - 0.01 |a|^2.
class PointMassEnv final : public Env {
 public:
  static constexpr double kDrag = 0.1;
  static constexpr double kActionCost = 0.01;
  static constexpr double kPosLimit = 2.0;

  explicit PointMassEnv(double dt = 0.05, int max_steps = 200) : dt_(dt), max_steps_(max_steps), rng_(0) {}

  EnvSpec spec() const override {
    return {"point_mass", 4, 2, -1.0, 1.0, max_steps_, dt_};
  }

  Tensor reset(uint64_t seed) override {
    rng_ = Rng(seed);
    return reset();
  }

  Tensor reset() override {
    state_ = Tensor::zeros(1, 4);
    state_[0] = rng_.uniform(-1.0, 1.0);
    state_[1] = rng_.uniform(-1.0, 1.0);
    steps_ = 0;
    return state_;
  }

  StepResult step(const Tensor& action) override {
    if (!action.all_finite()) throw std::invalid_argument("point_mass: non-finite action");
    const double ax = clamp_action(action[0]);
    const double ay = clamp_action(action[1]);
    state_ = dynamics(state_, ax, ay, dt_);
    ++steps_;
    const double reward = reward_of(state_, ax, ay);
    return {state_, reward, steps_ >= max_steps_};
  }

  Tensor observation() const override { return state_; }

  // Pure transition, usable as a planner oracle. obs = [px, py, vx, vy].
  static Tensor dynamics(const Tensor& obs, double ax, double ay, double dt) {
    Tensor next = obs;
    next[0] = std::clamp(obs[0] + obs[2] * dt, -kPosLimit, kPosLimit);
    next[1] = std::clamp(obs[1] + obs[3] * dt, -kPosLimit, kPosLimit);
    next[2] = obs[2] + (ax - kDrag * obs[2]) * dt;
    next[3] = obs[3] + (ay - kDrag * obs[3]) * dt;
    return next;
  }

  static double reward_of(const Tensor& obs, double ax, double ay) {
    const double dist = std::sqrt(obs[0] * obs[0] + obs[1] * obs[1]);
    return -dist - kActionCost * (ax * ax + ay * ay);
  }

  // 24x24 grayscale: bright blob at the agent, dim marker at the goal.
  Tensor render_pixels() const override { return render(state_); }

  static Tensor render(const Tensor& obs, int size = 24) {
    Tensor img(1, size * size);
    const auto splat = [&](double wx, double wy, double intensity, double sigma) {
      const double px = (wx + kPosLimit) / (2.0 * kPosLimit) * (size - 1);
      const double py = (wy + kPosLimit) / (2.0 * kPosLimit) * (size - 1);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
          img[static_cast<size_t>(y) * size + x] =
              std::min(1.0, img[static_cast<size_t>(y) * size + x] +
                                intensity * std::exp(-d2 / (2.0 * sigma * sigma)));
        }
    };
    splat(0.0, 0.0, 0.4, 1.0);          // goal marker
    splat(obs[0], obs[1], 1.0, 1.2);    // agent
    return img;
  }

 private:
  double dt_;
  int max_steps_;
  Rng rng_;
  Tensor state_ = Tensor::zeros(1, 4);
  int steps_ = 0;
};

// Rigid pendulum, torque-controlled, theta = 0 upright. Observation is
// [cos(theta), sin(theta), theta_dot]; reward uses theta wrapped to (-pi, pi].
class PendulumEnv final : public Env {
 public:
  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  static constexpr double kMaxTorque = 2.0;
  static constexpr double kMaxSpeed = 8.0;

  explicit PendulumEnv(double dt = 0.05, int max_steps = 200) : dt_(dt), max_steps_(max_steps), rng_(0) {}

  EnvSpec spec() const override {
    return {"pendulum", 3, 1, -1.0, 1.0, max_steps_, dt_};
  }

  Tensor reset(uint64_t seed) override {
    rng_ = Rng(seed);
    return reset();
  }

  Tensor reset() override {
    theta_ = rng_.uniform(-std::numbers::pi, std::numbers::pi);
    theta_dot_ = rng_.uniform(-1.0, 1.0);
    steps_ = 0;
    return observation();
  }

  StepResult step(const Tensor& action) override {
    if (!action.all_finite()) throw std::invalid_argument("pendulum: non-finite action");
    const double a = clamp_action(action[0]);
    const double torque = kMaxTorque * a;
    theta_dot_ += (3.0 * kGravity / (2.0 * kLength) * std::sin(theta_) +
                   3.0 / (kMass * kLength * kLength) * torque) *
                  dt_;
    theta_dot_ = std::clamp(theta_dot_, -kMaxSpeed, kMaxSpeed);
    theta_ = wrap_angle(theta_ + theta_dot_ * dt_);
    ++steps_;
    const double reward = -(theta_ * theta_ + 0.1 * theta_dot_ * theta_dot_ + 0.001 * a * a);
    return {observation(), reward, steps_ >= max_steps_};
  }

  Tensor observation() const override {
    Tensor obs(1, 3);
    obs[0] = std::cos(theta_);
    obs[1] = std::sin(theta_);
    obs[2] = theta_dot_;
    return obs;
  }

  static double wrap_angle(double theta) {
    while (theta <= -std::numbers::pi) theta += 2.0 * std::numbers::pi;
    while (theta > std::numbers::pi) theta -= 2.0 * std::numbers::pi;
    return theta;
  }

  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }
  void set_state(double theta, double theta_dot) {
    theta_ = wrap_angle(theta);
    theta_dot_ = theta_dot;
  }

 private:
  double dt_;
  int max_steps_;
  Rng rng_;
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
  int steps_ = 0;
};

inline std::unique_ptr<Env> make_env(const std::string& name, double dt = 0.05, int max_steps = 200) {
  if (name == "point_mass") return std::make_unique<PointMassEnv>(dt, max_steps);
  if (name == "pendulum") return std::make_unique<PendulumEnv>(dt, max_steps);
  throw std::invalid_argument("unknown environment: " + name);
}

}  // namespace prospec
