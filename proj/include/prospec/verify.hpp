#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "prospec/gradcheck.hpp"
#include "prospec/harness.hpp"

namespace prospec {

struct PropertyResult {
  std::string name;
  bool pass = false;
  double residual = 0.0;
  double threshold = 0.0;
  std::string details;
};

struct VerifyReport {
  std::vector<PropertyResult> properties;
  double elapsed_s = 0.0;
  bool all_pass() const {
    for (const auto& p : properties)
      if (!p.pass) return false;
    return true;
  }
};

struct VerifyOptions {
  std::filesystem::path residual_csv;  // when set, dump round-trip residual histograms
  bool corrupt_head_for_test = false;  // fault injection: breaks the orthogonality property
  int coupling_trials = 1000;
  int argmax_trials = 100;
  int gradcheck_draws = 10;
};

namespace verify_detail {

inline void log_histogram(std::ofstream& out, const std::string& metric,
                          const std::vector<double>& values) {
  // log10 bins from 1e-18 up to 1e+2.
  constexpr int kBins = 21;
  std::vector<long> counts(kBins, 0);
  for (const double v : values) {
    const double lv = v <= 0.0 ? -18.0 : std::log10(v);
    int bin = static_cast<int>(std::floor(lv)) + 18;
    bin = std::clamp(bin, 0, kBins - 1);
    ++counts[bin];
  }
  for (int b = 0; b < kBins; ++b) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s,1e%+03d,1e%+03d,%ld", metric.c_str(), b - 18, b - 17,
                  counts[b]);
    out << buf << "\n";
  }
}

inline TrainConfig verify_train_cfg(uint64_t seed) {
  TomlTable t;
  t["harness"]["total_steps"] = TomlValue{int64_t{1100}};
  t["harness"]["warmup_steps"] = TomlValue{int64_t{100}};
  t["harness"]["batch_size"] = TomlValue{int64_t{16}};
  t["harness"]["segment_batch"] = TomlValue{int64_t{8}};
  t["harness"]["metrics_interval"] = TomlValue{int64_t{100}};
  t["harness"]["cycle_steps"] = TomlValue{int64_t{3}};
  t["harness"]["cycle_actions"] = TomlValue{int64_t{2}};
  t["harness"]["seed"] = TomlValue{static_cast<int64_t>(seed)};
  t["encoder"]["latent_dim"] = TomlValue{int64_t{16}};
  t["encoder"]["proj_dim"] = TomlValue{int64_t{8}};
  t["encoder"]["hidden"] = TomlValue{int64_t{32}};
  t["fdm"]["cond_hidden"] = TomlValue{int64_t{16}};
  t["sac"]["hidden"] = TomlValue{int64_t{32}};
  t["plan"]["k"] = TomlValue{int64_t{2}};
  t["plan"]["t"] = TomlValue{int64_t{2}};
  t["env"]["max_steps"] = TomlValue{int64_t{100}};
  return resolve_config(t);
}

}  // namespace verify_detail

// Runs the numeric property suite and reports one residual per property.
inline VerifyReport run_verification(const VerifyOptions& opts = {}) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  VerifyReport report;
  std::vector<double> coupling_residuals, inversion_residuals;

  const auto add = [&](const std::string& name, double residual, double threshold,
                       const std::string& details = "") {
    report.properties.push_back({name, residual < threshold, residual, threshold, details});
  };

  // Coupling bijection round trip over random draws and parameter sets.
  {
    Rng drng(101);
    double worst = 0.0;
    Fdm fdm;
    for (int trial = 0; trial < opts.coupling_trials; ++trial) {
      if (trial % 50 == 0) {
        FdmConfig fc;
        fc.action_dim = 1 + static_cast<int>(drng.next_below(3));
        fc.latent_dim = 4 + static_cast<int>(drng.next_below(8));
        fc.cond_hidden = 8;
        Rng prng(1000 + trial);
        fdm = Fdm(fc, prng);
      }
      const Tensor a = Tensor::randn(1, fdm.config().action_dim, drng);
      const Tensor z = Tensor::randn(1, fdm.config().latent_dim, drng);
      const auto [a2, z2] = fdm.couple_inverse(fdm.couple_forward(a, z));
      double err = 0.0;
      for (int j = 0; j < a.cols(); ++j) err = std::max(err, std::abs(a2[j] - a[j]));
      for (int j = 0; j < z.cols(); ++j) err = std::max(err, std::abs(z2[j] - z[j]));
      coupling_residuals.push_back(err);
      worst = std::max(worst, err);
    }
    add("coupling_round_trip", worst, 1e-5,
        std::to_string(opts.coupling_trials) + " random draws");
  }

  // Head orthonormality after 1000 real training updates.
  {
    Trainer trainer(verify_detail::verify_train_cfg(202));
    const auto tmp = std::filesystem::temp_directory_path() / "prospec_verify_run";
    std::filesystem::remove_all(tmp);
    trainer.train(tmp);
    if (opts.corrupt_head_for_test) trainer.system().fdm.head_w()[1] += 0.05;
    add("head_orthonormality_after_training", trainer.system().fdm.head_orthonormality_residual(),
        1e-6, std::to_string(trainer.update_count()) + " optimizer steps");
  }

  // Gradient checks: every loss against the parameters it trains.
  {
    double worst = 0.0;
    std::string worst_name = "none";
    const auto record = [&](const std::string& name, double err) {
      if (err > worst) {
        worst = err;
        worst_name = name;
      }
    };
    for (int draw = 0; draw < opts.gradcheck_draws; ++draw) {
      const uint64_t ds = 7000 + static_cast<uint64_t>(draw);
      Rng mrng(ds);
      EncoderConfig ec;
      ec.obs_dim = 4;
      ec.latent_dim = 4;
      ec.proj_dim = 3;
      ec.hidden = 6;
      Encoder enc(ec, mrng);
      SacConfig sc;
      sc.latent_dim = 4;
      sc.action_dim = 2;
      sc.hidden = 6;
      Sac sac(sc, mrng);
      FdmConfig fc;
      fc.action_dim = 2;
      fc.latent_dim = 4;
      fc.cond_hidden = 6;
      Fdm fdm(fc, mrng);

      Rng brng(ds + 50);
      Batch b;
      b.obs = Tensor::randn(3, 4, brng);
      b.action = Tensor::uniform(3, 2, brng, -1.0, 1.0);
      b.reward = Tensor::randn(3, 1, brng);
      b.next_obs = Tensor::randn(3, 4, brng);
      b.done = Tensor::zeros(3, 1);

      {
        Rng trng(ds + 60);
        const Tensor y = sac.bootstrap_targets(enc, b, trng);
        std::vector<Tensor*> params;
        for (auto& [n, p] : sac.q1_net().params()) params.push_back(p);
        for (auto& [n, p] : sac.q2_net().params()) params.push_back(p);
        for (auto& [n, p] : enc.params()) params.push_back(p);
        record("critic", grad_check([&](Tape& t) { return sac.critic_loss_against(t, enc, b, y); },
                                    params, 1e-6));
      }
      {
        std::vector<Tensor*> params;
        for (auto& [n, p] : sac.actor_net().params()) params.push_back(p);
        record("actor", grad_check(
                            [&](Tape& t) {
                              Rng lrng(ds + 70);
                              return sac.actor_and_alpha_loss(t, enc, b, lrng).actor;
                            },
                            params, 1e-6));
      }
      {
        std::vector<Tensor*> params = {&sac.log_alpha()};
        record("alpha", grad_check(
                            [&](Tape& t) {
                              Rng lrng(ds + 70);
                              return sac.actor_and_alpha_loss(t, enc, b, lrng).alpha;
                            },
                            params, 1e-6));
      }
      {
        std::vector<Tensor*> params;
        for (auto& [n, p] : enc.params()) params.push_back(p);
        for (auto& [n, p] : fdm.params()) params.push_back(p);
        std::vector<Tensor> targets = {Tensor::randn(3, 3, brng), Tensor::randn(3, 3, brng)};
        record("pred", grad_check(
                           [&](Tape& t) {
                             const auto z0 = enc.encode(t, t.constant(b.obs), true);
                             std::vector<Tape::Val> preds;
                             Tape::Val z = z0;
                             for (int k = 0; k < 2; ++k) {
                               z = fdm.forward(t, t.constant(b.action), z, true);
                               preds.push_back(enc.project(t, z, true));
                             }
                             return prediction_loss(t, preds, targets);
                           },
                           params, 1e-6));
      }
      {
        std::vector<Tensor*> params;
        for (auto& [n, p] : enc.params()) params.push_back(p);
        for (auto& [n, p] : fdm.params()) params.push_back(p);
        record("cycle", grad_check(
                            [&](Tape& t) {
                              const auto z0 = enc.encode(t, t.constant(b.obs), true);
                              Rng arng(ds + 80);
                              return fdm.cycle_loss(t, z0, 2, 2, uniform_action_sampler(2), arng);
                            },
                            params, 1e-6));
      }
      if (draw < 2) {  // pixel encoder path, a couple of draws is plenty
        EncoderConfig pc;
        pc.obs = ObsKind::Pixels;
        pc.image_size = 12;
        pc.latent_dim = 4;
        pc.proj_dim = 3;
        pc.hidden = 6;
        Rng prng(ds + 90);
        Encoder penc(pc, prng);
        Tensor img = Tensor::uniform(1, 12 * 12, prng, 0.0, 1.0);
        std::vector<Tensor*> params;
        for (auto& [n, p] : penc.params()) params.push_back(p);
        record("pixel_encoder", grad_check(
                                    [&](Tape& t) {
                                      const auto z = penc.encode(t, t.constant(img), true);
                                      return t.mean(t.mul(z, z));
                                    },
                                    params, 1e-6));
      }
    }
    add("gradient_checks", worst, 1e-4, "worst loss family: " + worst_name);
  }

  // Planner argmax invariance under Q + c and positive scaling.
  {
    Rng rng(303);
    int mismatches = 0;
    for (int trial = 0; trial < opts.argmax_trials; ++trial) {
      const double w0 = rng.normal(), w1 = rng.normal(), w2 = rng.normal();
      const auto q = [w0, w1, w2](const Tensor& z, const Tensor& a) {
        return w0 * z[0] + w1 * a[0] + w2 * a[0] * a[0];
      };
      const double shift = rng.normal(0.0, 10.0);
      const double scale = std::exp(rng.normal());
      const auto make_planner = [&](Prospector::ValueFn v) {
        return Prospector(
            [](const Tensor& a, const Tensor& z) {
              Tensor out = z;
              out[0] += 0.3 * a[0];
              return out;
            },
            std::move(v), [](const Tensor& z) { return Tensor::from_row({0.1 * z[0]}); },
            [](const Tensor& z, Rng& r) { return Tensor::from_row({r.uniform(-1.0, 1.0) + 0.0 * z[0]}); },
            1);
      };
      auto base = make_planner(q);
      auto shifted = make_planner([q, shift](const Tensor& z, const Tensor& a) { return q(z, a) + shift; });
      auto scaled = make_planner([q, scale](const Tensor& z, const Tensor& a) { return scale * q(z, a); });
      PlanConfig pc;
      pc.candidates = 2 + static_cast<int>(rng.next_below(6));
      pc.horizon = 1 + static_cast<int>(rng.next_below(5));
      pc.gamma = 0.9;
      const Tensor z0 = Tensor::from_row({rng.normal()});
      Rng r1(900 + trial), r2(900 + trial), r3(900 + trial);
      const int c0 = base.select_action(z0, pc, r1).chosen;
      const int c1 = shifted.select_action(z0, pc, r2).chosen;
      const int c2 = scaled.select_action(z0, pc, r3).chosen;
      if (c0 != c1 || c0 != c2) ++mismatches;
    }
    add("planner_argmax_invariance", static_cast<double>(mismatches), 0.5,
        std::to_string(opts.argmax_trials) + " stub-critic trials");
  }

  // QR re-projection idempotence under the positive-diagonal convention.
  {
    Rng rng(404);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      Tensor w = Tensor::randn(4 + static_cast<int>(rng.next_below(4)), 12, rng);
      orthonormalize_rows(w);
      Tensor w2 = w;
      orthonormalize_rows(w2);
      for (size_t i = 0; i < w.size(); ++i) worst = std::max(worst, std::abs(w[i] - w2[i]));
    }
    add("orthonormalize_idempotence", worst, 1e-9);
  }

  // W^T W is a projector and the head round-trip error equals the null-space
  // residual of the coupling output.
  {
    Rng rng(505);
    FdmConfig fc;
    fc.action_dim = 3;
    fc.latent_dim = 6;
    fc.cond_hidden = 8;
    Rng prng(506);
    Fdm fdm(fc, prng);
    const Tensor& w = fdm.head_w();
    const int d = fc.joint_dim();
    Tensor p(d, d);
    gemm(true, false, d, d, fc.latent_dim, 1.0, w.data(), d, w.data(), d, 0.0, p.data(), d);
    Tensor p2(d, d);
    gemm(false, false, d, d, d, 1.0, p.data(), d, p.data(), d, 0.0, p2.data(), d);
    double worst = 0.0;
    for (size_t i = 0; i < p.size(); ++i) worst = std::max(worst, std::abs(p2[i] - p[i]));
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor a = Tensor::randn(1, 3, rng);
      const Tensor z = Tensor::randn(1, 6, rng);
      const Tensor y = fdm.couple_forward(a, z);
      const Tensor zn = fdm.forward(a, z);
      Tensor centered = zn;
      for (int j = 0; j < 6; ++j) centered[j] -= fdm.head_b()[j];
      const Tensor yb = matmul_plain(centered, w);
      double direct = 0.0;
      for (int j = 0; j < d; ++j) direct += (yb[j] - y[j]) * (yb[j] - y[j]);
      Tensor py = matmul_plain(y, p);
      double nullspace = 0.0;
      for (int j = 0; j < d; ++j) nullspace += (y[j] - py[j]) * (y[j] - py[j]);
      worst = std::max(worst, std::abs(std::sqrt(direct) - std::sqrt(nullspace)));
    }
    add("pseudo_inverse_consistency", worst, 1e-6);
  }

  // Exact-inversion configuration: K = 6 round trip and cycle loss.
  {
    FdmConfig fc;
    fc.action_dim = 0;
    fc.latent_dim = 8;
    fc.cond_hidden = 8;
    Rng prng(606);
    Fdm fdm(fc, prng);
    Rng rng(607);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor z0 = Tensor::randn(1, 8, rng);
      std::vector<Tensor> actions(6, Tensor::zeros(1, 0));
      const auto fwd = fdm.rollout_forward(z0, actions);
      std::vector<Tensor> rev(actions.rbegin(), actions.rend());
      const auto bwd = fdm.rollout_backward(fwd.latents.back(), rev);
      double err = 0.0;
      for (int j = 0; j < 8; ++j) err = std::max(err, std::abs(bwd.latents.back()[j] - z0[j]));
      inversion_residuals.push_back(err);
      worst = std::max(worst, err);
    }
    add("exact_inversion_round_trip", worst, 1e-4, "D_a = 0, K = 6, 100 draws");
    Tape t;
    Rng arng(608);
    const Tensor z0 = Tensor::randn(4, 8, rng);
    const double cl =
        t.scalar(fdm.cycle_loss(t, t.constant(z0), 4, 6, uniform_action_sampler(0), arng, false));
    add("exact_inversion_cycle_loss", cl, 1e-8);
  }

  // End-to-end determinism of a short training run.
  {
    const auto cfg = verify_detail::verify_train_cfg(707);
    const auto base = std::filesystem::temp_directory_path() / "prospec_verify_det";
    std::filesystem::remove_all(base);
    Trainer(cfg).train(base / "a");
    Trainer(cfg).train(base / "b");
    const auto read = [](const std::filesystem::path& p) {
      std::ifstream in(p, std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };
    const bool same_metrics = read(base / "a" / "metrics.csv") == read(base / "b" / "metrics.csv");
    const bool same_ckpt =
        read(base / "a" / "checkpoint_final.pspc") == read(base / "b" / "checkpoint_final.pspc");
    add("run_determinism", same_metrics && same_ckpt ? 0.0 : 1.0, 0.5,
        "two identical seeded runs compared bytewise");
  }

  if (!opts.residual_csv.empty()) {
    if (opts.residual_csv.has_parent_path())
      std::filesystem::create_directories(opts.residual_csv.parent_path());
    std::ofstream csv(opts.residual_csv, std::ios::trunc);
    csv << "metric,bin_low,bin_high,count\n";
    verify_detail::log_histogram(csv, "coupling_round_trip", coupling_residuals);
    verify_detail::log_histogram(csv, "exact_inversion_round_trip", inversion_residuals);
  }

  report.elapsed_s = std::chrono::duration<double>(clock::now() - t0).count();
  return report;
}

inline void print_report(const VerifyReport& report, std::FILE* out = stdout) {
  for (const auto& p : report.properties)
    std::fprintf(out, "[%s] %-36s residual %.3e (threshold %.1e)%s%s\n", p.pass ? "PASS" : "FAIL",
                 p.name.c_str(), p.residual, p.threshold, p.details.empty() ? "" : "  ",
                 p.details.c_str());
  std::fprintf(out, "verification %s in %.1f s\n", report.all_pass() ? "passed" : "FAILED",
               report.elapsed_s);
}

}  // namespace prospec
