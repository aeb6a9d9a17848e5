#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "golden_util.hpp"
#include "prospec/envs.hpp"
#include "prospec/replay.hpp"

using namespace prospec;

TEST_CASE("point_mass: seeded resets are reproducible and seeds differ") {
  PointMassEnv env;
  const Tensor a = env.reset(7);
  const Tensor b = env.reset(7);
  for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
  const Tensor c = env.reset(8);
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i) differs |= a[i] != c[i];
  REQUIRE(differs);
}

TEST_CASE("point_mass: golden initial observation for seed 0") {
  PointMassEnv env;
  golden::compare("pointmass_reset_seed0", env.reset(0));
}

TEST_CASE("point_mass: dynamics and reward match the hand-stepped case") {
  PointMassEnv env;
  env.reset(0);
  // Place the state directly through the pure dynamics to check one step:
  // from pos (1, 0), vel (0, 0), action (-1, 0), dt 0.05.
  Tensor s = Tensor::from_row({1.0, 0.0, 0.0, 0.0});
  const Tensor next = PointMassEnv::dynamics(s, -1.0, 0.0, 0.05);
  REQUIRE(next[0] == Catch::Approx(1.0).margin(1e-15));   // position uses the old velocity
  REQUIRE(next[1] == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(next[2] == Catch::Approx(-0.05).margin(1e-15));  // vel += (a - 0.1 v) dt
  REQUIRE(next[3] == Catch::Approx(0.0).margin(1e-15));
  const double r = PointMassEnv::reward_of(next, -1.0, 0.0);
  REQUIRE(r == Catch::Approx(-1.0 - 0.01).margin(1e-12));
}

TEST_CASE("point_mass: at the goal with zero action and velocity the reward is zero") {
  const Tensor s = Tensor::from_row({0.0, 0.0, 0.0, 0.0});
  const Tensor next = PointMassEnv::dynamics(s, 0.0, 0.0, 0.05);
  REQUIRE(PointMassEnv::reward_of(next, 0.0, 0.0) == 0.0);
}

TEST_CASE("point_mass: stream determinism and episode termination") {
  const auto run = [] {
    PointMassEnv env;
    env.reset(3);
    Rng arng(11);
    std::vector<double> rewards;
    bool done = false;
    int steps = 0;
    while (!done) {
      Tensor a(1, 2);
      a[0] = arng.uniform(-1.0, 1.0);
      a[1] = arng.uniform(-1.0, 1.0);
      const auto res = env.step(a);
      rewards.push_back(res.reward);
      done = res.done;
      ++steps;
    }
    REQUIRE(steps == 200);
    return rewards;
  };
  const auto r1 = run();
  const auto r2 = run();
  REQUIRE(r1.size() == r2.size());
  for (size_t i = 0; i < r1.size(); ++i) REQUIRE(r1[i] == r2[i]);
  for (const double r : r1) REQUIRE(r <= 0.0);
}

TEST_CASE("point_mass: NaN action raises without mutating state") {
  PointMassEnv env;
  env.reset(5);
  const Tensor before = env.observation();
  Tensor bad(1, 2);
  bad[0] = std::nan("");
  REQUIRE_THROWS_AS(env.step(bad), std::invalid_argument);
  const Tensor after = env.observation();
  for (size_t i = 0; i < before.size(); ++i) REQUIRE(before[i] == after[i]);
}

TEST_CASE("point_mass: out-of-bounds actions are clamped and counted") {
  PointMassEnv env;
  env.reset(5);
  Tensor big = Tensor::from_row({4.0, -3.0});
  env.step(big);
  REQUIRE(env.clamped_action_count() == 2);
}

TEST_CASE("point_mass: rendering is deterministic with a centered bright blob") {
  const Tensor center = Tensor::from_row({0.0, 0.0, 0.0, 0.0});
  const Tensor img1 = PointMassEnv::render(center);
  const Tensor img2 = PointMassEnv::render(center);
  for (size_t i = 0; i < img1.size(); ++i) REQUIRE(img1[i] == img2[i]);
  // Brightest pixel sits at the image center.
  size_t best = 0;
  for (size_t i = 0; i < img1.size(); ++i)
    if (img1[i] > img1[best]) best = i;
  const int y = static_cast<int>(best) / 24, x = static_cast<int>(best) % 24;
  REQUIRE(std::abs(y - 11.5) <= 1.0);
  REQUIRE(std::abs(x - 11.5) <= 1.0);

  PointMassEnv env;
  env.reset(0);
  golden::compare("pointmass_render_seed0", env.render_pixels());
}

TEST_CASE("pendulum: upright at rest stays at zero reward without torque") {
  PendulumEnv env;
  env.reset(0);
  env.set_state(0.0, 0.0);
  const auto res = env.step(Tensor::from_row({0.0}));
  REQUIRE(res.reward == 0.0);
}

TEST_CASE("pendulum: angle wraps into (-pi, pi] and rewards stay non-positive") {
  PendulumEnv env;
  env.reset(9);
  Rng arng(13);
  for (int i = 0; i < 300; ++i) {
    Tensor a(1, 1);
    a[0] = arng.uniform(-1.0, 1.0);
    const auto res = env.step(a);
    REQUIRE(res.reward <= 0.0);
    REQUIRE(env.theta() > -std::numbers::pi);
    REQUIRE(env.theta() <= std::numbers::pi);
    if (res.done) env.reset();
  }
}

TEST_CASE("pendulum: rendering is unsupported") {
  PendulumEnv env;
  env.reset(0);
  REQUIRE_THROWS_AS(env.render_pixels(), std::runtime_error);
}

TEST_CASE("make_env: name dispatch") {
  REQUIRE(make_env("point_mass")->spec().obs_dim == 4);
  REQUIRE(make_env("pendulum")->spec().action_dim == 1);
  REQUIRE_THROWS_AS(make_env("cartpole"), std::invalid_argument);
}

TEST_CASE("replay: FIFO eviction overwrites the oldest entry") {
  ReplayBuffer buf(4, 2, 1);
  for (int i = 0; i < 5; ++i) {
    Tensor obs = Tensor::from_row({static_cast<double>(i), 0.0});
    Tensor act = Tensor::from_row({0.0});
    buf.add(obs, act, 0.0, obs, false, 0);
  }
  REQUIRE(buf.size() == 4);
  REQUIRE(buf.total_added() == 5);
  // Physical slot 0 now holds the 5th insertion (value 4).
  REQUIRE(buf.row_obs(0)[0] == 4.0);
  REQUIRE(buf.row_obs(1)[0] == 1.0);
}

TEST_CASE("replay: sampling is bitwise reproducible under a fixed seed") {
  ReplayBuffer buf(32, 3, 2);
  Rng frng(1);
  for (int i = 0; i < 20; ++i)
    buf.add(Tensor::randn(1, 3, frng), Tensor::randn(1, 2, frng), frng.normal(),
            Tensor::randn(1, 3, frng), false, i / 5);
  Rng s1(42), s2(42);
  const Batch b1 = buf.sample(8, s1);
  const Batch b2 = buf.sample(8, s2);
  for (size_t i = 0; i < b1.obs.size(); ++i) REQUIRE(b1.obs[i] == b2.obs[i]);
  for (size_t i = 0; i < b1.reward.size(); ++i) REQUIRE(b1.reward[i] == b2.reward[i]);
}

TEST_CASE("replay: sampling an empty buffer is an error") {
  ReplayBuffer buf(8, 2, 1);
  Rng rng(0);
  REQUIRE_THROWS_AS(buf.sample(4, rng), std::invalid_argument);
}

TEST_CASE("replay: segments stay inside one episode") {
  ReplayBuffer buf(64, 1, 1);
  // Two episodes of 6 steps each; obs encodes (episode * 10 + step).
  for (int ep = 0; ep < 2; ++ep)
    for (int s = 0; s < 6; ++s)
      buf.add(Tensor::from_row({ep * 10.0 + s}), Tensor::from_row({0.0}), 0.0,
              Tensor::from_row({ep * 10.0 + s + 1}), s == 5, ep);
  Rng rng(3);
  const SegmentBatch seg = buf.sample_segments(16, 3, rng);
  REQUIRE(seg.steps() == 3);
  for (int i = 0; i < 16; ++i) {
    const double start = seg.obs0.at(i, 0);
    // All three successor observations follow consecutively in the episode.
    for (int k = 0; k < 3; ++k)
      REQUIRE(seg.next_obs[k].at(i, 0) == Catch::Approx(start + k + 1).margin(1e-12));
  }
}

TEST_CASE("replay: an impossible segment length is an error") {
  ReplayBuffer buf(16, 1, 1);
  for (int s = 0; s < 4; ++s)
    buf.add(Tensor::from_row({double(s)}), Tensor::from_row({0.0}), 0.0,
            Tensor::from_row({double(s + 1)}), s == 3, 0);
  Rng rng(5);
  REQUIRE_THROWS_AS(buf.sample_segments(2, 10, rng), std::runtime_error);
}

TEST_CASE("replay: segments respect the cursor after wraparound") {
  ReplayBuffer buf(8, 1, 1);
  // 12 single-episode steps into capacity 8: slots 0..3 rewritten.
  for (int s = 0; s < 12; ++s)
    buf.add(Tensor::from_row({double(s)}), Tensor::from_row({0.0}), 0.0,
            Tensor::from_row({double(s + 1)}), false, 0);
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const SegmentBatch seg = buf.sample_segments(4, 3, rng);
    for (int i = 0; i < 4; ++i) {
      const double start = seg.obs0.at(i, 0);
      for (int k = 0; k < 3; ++k)
        REQUIRE(seg.next_obs[k].at(i, 0) == Catch::Approx(start + k + 1).margin(1e-12));
    }
  }
}
