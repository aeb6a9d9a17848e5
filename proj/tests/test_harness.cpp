#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "prospec/harness.hpp"

using namespace prospec;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small-everything config for fast loop tests.
TrainConfig tiny_cfg(uint64_t seed = 0) {
  TomlTable t;
  t["harness"]["total_steps"] = TomlValue{int64_t{300}};
  t["harness"]["warmup_steps"] = TomlValue{int64_t{200}};
  t["harness"]["batch_size"] = TomlValue{int64_t{16}};
  t["harness"]["segment_batch"] = TomlValue{int64_t{8}};
  t["harness"]["replay_capacity"] = TomlValue{int64_t{1000}};
  t["harness"]["metrics_interval"] = TomlValue{int64_t{50}};
  t["harness"]["cycle_steps"] = TomlValue{int64_t{2}};
  t["harness"]["cycle_actions"] = TomlValue{int64_t{2}};
  t["harness"]["seed"] = TomlValue{static_cast<int64_t>(seed)};
  t["encoder"]["latent_dim"] = TomlValue{int64_t{8}};
  t["encoder"]["proj_dim"] = TomlValue{int64_t{6}};
  t["encoder"]["hidden"] = TomlValue{int64_t{16}};
  t["fdm"]["cond_hidden"] = TomlValue{int64_t{8}};
  t["sac"]["hidden"] = TomlValue{int64_t{16}};
  t["plan"]["k"] = TomlValue{int64_t{2}};
  t["plan"]["t"] = TomlValue{int64_t{2}};
  t["env"]["max_steps"] = TomlValue{int64_t{50}};
  return resolve_config(t);
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "prospec_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("toml: sections, comments, value kinds") {
  const std::string text = R"(# experiment
[env]
name = "pendulum"   # trailing comment
max_steps = 120

[harness]
lambda_pred = 0.5
include_replay = true
seed = 7
)";
  const TomlTable t = parse_toml(text);
  REQUIRE(t.at("env").at("name").as_string() == "pendulum");
  REQUIRE(t.at("env").at("max_steps").as_int() == 120);
  REQUIRE(t.at("harness").at("lambda_pred").as_double() == 0.5);
  REQUIRE(t.at("harness").at("include_replay").as_bool());
  REQUIRE(t.at("harness").at("seed").as_int() == 7);
}

TEST_CASE("toml: malformed lines are rejected") {
  REQUIRE_THROWS_AS(parse_toml("[env\nname = \"x\""), std::invalid_argument);
  REQUIRE_THROWS_AS(parse_toml("keyvalue"), std::invalid_argument);
  REQUIRE_THROWS_AS(parse_toml("k = \"unterminated"), std::invalid_argument);
  REQUIRE_THROWS_AS(parse_toml("k = 12abc"), std::invalid_argument);
}

TEST_CASE("config: overrides via dotted paths and unknown keys") {
  TomlTable t = parse_toml("[sac]\ngamma = 0.9\n");
  apply_override(t, "sac.gamma=0.95");
  apply_override(t, "harness.total_steps=5000");
  const TrainConfig cfg = resolve_config(t);
  REQUIRE(cfg.sac.gamma == 0.95);
  REQUIRE(cfg.total_steps == 5000);
  REQUIRE(cfg.plan.gamma == 0.95);  // inherits the RL discount

  TomlTable bad = parse_toml("[sac]\nlearning_rate = 0.01\n");
  REQUIRE_THROWS_AS(resolve_config(bad), std::invalid_argument);
}

TEST_CASE("config: validation rejects bad settings") {
  TomlTable t;
  t["harness"]["warmup_steps"] = TomlValue{int64_t{500}};
  t["harness"]["total_steps"] = TomlValue{int64_t{100}};
  REQUIRE_THROWS_AS(resolve_config(t), std::invalid_argument);
  t["harness"]["total_steps"] = TomlValue{int64_t{500}};
  REQUIRE_NOTHROW(resolve_config(t));  // warmup-only runs are allowed

  TomlTable neg;
  neg["harness"]["lambda_pred"] = TomlValue{-1.0};
  REQUIRE_THROWS_AS(resolve_config(neg), std::invalid_argument);

  TomlTable pix;
  pix["env"]["name"] = TomlValue{std::string("pendulum")};
  pix["env"]["obs"] = TomlValue{std::string("pixels")};
  REQUIRE_THROWS_AS(resolve_config(pix), std::invalid_argument);
}

TEST_CASE("checkpoint: round trip is exact and byte-stable") {
  const auto dir = fresh_dir("ckpt");
  TrainConfig cfg = tiny_cfg(3);
  System sys = System::from_config(cfg);
  sys.save(dir / "a.pspc", 42);
  sys.save(dir / "b.pspc", 42);
  REQUIRE(slurp(dir / "a.pspc") == slurp(dir / "b.pspc"));

  System restored = System::from_checkpoint(dir / "a.pspc");
  auto orig = sys.all_params();
  auto back = restored.all_params();
  REQUIRE(orig.size() == back.size());
  for (size_t i = 0; i < orig.size(); ++i) {
    REQUIRE(orig[i].first == back[i].first);
    REQUIRE(orig[i].second->size() == back[i].second->size());
    for (size_t j = 0; j < orig[i].second->size(); ++j)
      REQUIRE((*orig[i].second)[j] == (*back[i].second)[j]);
  }
}

TEST_CASE("checkpoint: corrupt files raise") {
  const auto dir = fresh_dir("ckpt_bad");
  {
    std::ofstream out(dir / "bad.pspc", std::ios::binary);
    out << "garbage bytes that are not a checkpoint";
  }
  REQUIRE_THROWS_AS(load_checkpoint(dir / "bad.pspc"), std::runtime_error);
  // Truncated payload.
  TrainConfig cfg = tiny_cfg(1);
  System sys = System::from_config(cfg);
  sys.save(dir / "ok.pspc", 1);
  const std::string bytes = slurp(dir / "ok.pspc");
  {
    std::ofstream out(dir / "trunc.pspc", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  REQUIRE_THROWS_AS(load_checkpoint(dir / "trunc.pspc"), std::runtime_error);
}

TEST_CASE("metrics: decomposition identity is enforced at write time") {
  const auto dir = fresh_dir("metrics");
  MetricsWriter w(dir / "m.csv", dir / "m.jsonl", 1.0, 1.0);
  MetricsRecord r;
  r.loss_critic = 1.0;
  r.loss_actor = 0.5;
  r.loss_alpha = 0.25;
  r.loss_pred = 0.1;
  r.loss_cycle = 0.2;
  r.loss_total = 2.05;
  w.append(r);  // exact
  r.loss_total = 2.06;
  REQUIRE_THROWS_AS(w.append(r), std::logic_error);
  const std::string csv = slurp(dir / "m.csv");
  REQUIRE(csv.rfind(MetricsWriter::header(), 0) == 0);
}

TEST_CASE("trainer: pure SAC configuration reduces the objective to the RL loss") {
  TrainConfig cfg = tiny_cfg(5);
  cfg.lambda_pred = 0.0;
  cfg.lambda_cycle = 0.0;
  cfg.plan_at_collect = false;
  Trainer trainer(cfg);
  // Fill some experience.
  const auto dir = fresh_dir("sac_identity");
  TrainConfig small = cfg;
  Trainer t2(small);
  (void)t2;
  Rng frng(9);
  auto env = make_env(cfg.env_name, cfg.env_dt, cfg.env_max_steps);
  env->reset(1);
  Tensor obs = env->observation();
  for (int i = 0; i < 64; ++i) {
    Tensor a = Tensor::uniform(1, 2, frng, -1.0, 1.0);
    const auto res = env->step(a);
    trainer.replay().add(obs, a, res.reward, res.obs, res.done, 0);
    obs = res.obs;
    if (res.done) env->reset();
  }
  const Batch batch = trainer.replay().sample(cfg.batch_size, frng);
  Tape t;
  Trainer::LossBreakdown bd;
  trainer.build_total_loss(t, batch, nullptr, &bd);
  REQUIRE(bd.pred == 0.0);
  REQUIRE(bd.cycle == 0.0);
  REQUIRE(bd.total == Catch::Approx(bd.critic + bd.actor + bd.alpha).margin(1e-12));
}

TEST_CASE("trainer: short full-system run emits metrics and a loadable checkpoint") {
  TrainConfig cfg = tiny_cfg(7);
  const auto dir = fresh_dir("full_run");
  Trainer trainer(cfg);
  const auto summary = trainer.train(dir);
  REQUIRE(summary.steps == 300);
  REQUIRE(summary.updates == 100);  // one update per post-warmup step
  REQUIRE(fs::exists(summary.checkpoint));
  REQUIRE(fs::exists(summary.metrics_csv));

  // 300 steps, interval 50: exactly 6 data rows after the header.
  std::ifstream csv(summary.metrics_csv);
  std::string line;
  int rows = -1;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 6);

  // Decomposition identity holds at every logged row.
  std::ifstream csv2(summary.metrics_csv);
  std::getline(csv2, line);  // header
  while (std::getline(csv2, line)) {
    std::vector<double> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',') && f.size() < 10) f.push_back(std::stod(cell.empty() ? "0" : cell));
    const double recomposed = f[2] + f[3] + f[4] + cfg.lambda_pred * f[5] + cfg.lambda_cycle * f[6];
    REQUIRE(std::abs(recomposed - f[7]) <= 1e-9);
  }

  // Head stays row-orthonormal through training.
  REQUIRE(trainer.system().fdm.head_orthonormality_residual() < 1e-6);

  System restored = System::from_checkpoint(summary.checkpoint);
  REQUIRE(restored.cfg.total_steps == cfg.total_steps);
}

TEST_CASE("trainer: a warmup-only run fills the buffer without gradient updates") {
  TrainConfig cfg = tiny_cfg(19);
  cfg.total_steps = 250;
  cfg.warmup_steps = 250;
  Trainer trainer(cfg);
  const auto summary = trainer.train(fresh_dir("warmup_only"));
  REQUIRE(summary.updates == 0);
  REQUIRE(trainer.replay().size() == 250);
}

TEST_CASE("trainer: identical configs produce bitwise-identical metrics") {
  const auto d1 = fresh_dir("det_a");
  const auto d2 = fresh_dir("det_b");
  TrainConfig cfg = tiny_cfg(11);
  Trainer(cfg).train(d1);
  Trainer(cfg).train(d2);
  REQUIRE(slurp(d1 / "metrics.csv") == slurp(d2 / "metrics.csv"));
  REQUIRE(slurp(d1 / "checkpoint_final.pspc") == slurp(d2 / "checkpoint_final.pspc"));
}

TEST_CASE("evaluate: zero-action policy matches a direct rollout oracle") {
  TrainConfig cfg = tiny_cfg(13);
  cfg.plan_at_eval = false;
  System sys = System::from_config(cfg);
  auto& last = sys.sac.actor_net().layers.back();
  last.w.fill(0.0);
  last.b.fill(0.0);  // squashed mean action is exactly zero
  const EvalResult ev = evaluate(sys, 1, /*plan_mode=*/false, /*seed=*/21);
  REQUIRE(ev.stddev == 0.0);

  auto env = make_env(cfg.env_name, cfg.env_dt, cfg.env_max_steps);
  env->reset(Rng(21).derive("env0").next_u64());
  double oracle = 0.0;
  bool done = false;
  while (!done) {
    const auto res = env->step(Tensor::zeros(1, 2));
    oracle += res.reward;
    done = res.done;
  }
  REQUIRE(ev.mean == Catch::Approx(oracle).margin(1e-12));

  const EvalResult again = evaluate(sys, 1, false, 21);
  REQUIRE(again.mean == ev.mean);  // bitwise repeatable
}

TEST_CASE("ablate: a 1x1 grid equals a plain train + evaluate and the CSV matches the schema") {
  TrainConfig cfg = tiny_cfg(17);
  cfg.total_steps = 260;
  cfg.warmup_steps = 200;
  const auto dir = fresh_dir("ablate");
  const auto cells = ablate(cfg, {2}, {2}, 1, dir, 1);
  REQUIRE(cells.size() == 1);
  REQUIRE(cells[0].k == 2);
  REQUIRE(cells[0].t == 2);
  REQUIRE(std::isfinite(cells[0].mean_return));
  REQUIRE(cells[0].mean_return == cells[0].median_return);  // single seed

  // Direct run with the same settings.
  TrainConfig direct = cfg;
  direct.plan.candidates = 2;
  direct.plan.horizon = 2;
  Trainer trainer(direct);
  trainer.train(fresh_dir("ablate_direct"));
  const EvalResult ev = evaluate(trainer.system(), cfg.eval_episodes, cfg.plan_at_eval, cfg.seed + 1000);
  REQUIRE(cells[0].mean_return == Catch::Approx(ev.mean).margin(1e-12));

  std::ifstream csv(dir / "ablation.csv");
  std::string header;
  std::getline(csv, header);
  REQUIRE(header == kAblationCsvHeader);
  std::string row;
  REQUIRE(std::getline(csv, row));
  REQUIRE(row.rfind("2,2,1,", 0) == 0);
}
