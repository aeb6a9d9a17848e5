#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "prospec/checkpoint.hpp"
#include "prospec/config.hpp"
#include "prospec/encoder.hpp"
#include "prospec/envs.hpp"
#include "prospec/fdm.hpp"
#include "prospec/metrics.hpp"
#include "prospec/optim.hpp"
#include "prospec/prospector.hpp"
#include "prospec/replay.hpp"
#include "prospec/sac.hpp"

namespace prospec {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvariantFailure = 2;
inline constexpr int kExitNanAbort = 3;

struct NanAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The learned components as one unit, seeded or restored together.
struct System {
  TrainConfig cfg;
  Encoder encoder;
  Sac sac;
  Fdm fdm;

  static System from_config(const TrainConfig& cfg) {
    System sys;
    sys.cfg = cfg;
    Rng init(Rng(cfg.seed).derive("init").next_u64());
    sys.encoder = Encoder(cfg.encoder, init);
    sys.sac = Sac(cfg.sac, init);
    sys.fdm = Fdm(cfg.fdm, init);
    return sys;
  }

  static System from_checkpoint(const std::filesystem::path& path) {
    const LoadedCheckpoint ck = load_checkpoint(path);
    if (!ck.meta.contains("config")) throw std::runtime_error("checkpoint: missing config block");
    TomlTable table;  // rebuild the resolved config from its JSON echo
    const auto& j = ck.meta["config"];
    for (const auto& [section, body] : j.items())
      for (const auto& [key, value] : body.items()) {
        TomlValue v;
        if (value.is_boolean())
          v.v = value.get<bool>();
        else if (value.is_number_integer() || value.is_number_unsigned())
          v.v = value.get<int64_t>();
        else if (value.is_number_float())
          v.v = value.get<double>();
        else
          v.v = value.get<std::string>();
        table[section][key] = v;
      }
    System sys = from_config(resolve_config(table));
    restore_into(ck, sys.all_params());
    return sys;
  }

  ParamList all_params() {
    ParamList out = encoder.params();
    for (auto& [name, p] : sac.params()) out.emplace_back(name, p);
    for (auto& [name, p] : fdm.params()) out.emplace_back(name, p);
    return out;
  }

  void save(const std::filesystem::path& path, long step, const ReplayBuffer* replay = nullptr) {
    nlohmann::json meta;
    meta["config"] = cfg.to_json();
    meta["step"] = step;
    ParamList tensors = all_params();
    ReplayBuffer::Snapshot snap;
    Tensor replay_counters;
    std::vector<Tensor> episode_rows;
    Tensor episode_tensor;
    if (replay != nullptr && cfg.include_replay_in_checkpoint) {
      snap = replay->snapshot();
      tensors.emplace_back("replay.obs", &snap.obs);
      tensors.emplace_back("replay.action", &snap.action);
      tensors.emplace_back("replay.reward", &snap.reward);
      tensors.emplace_back("replay.next_obs", &snap.next_obs);
      tensors.emplace_back("replay.done", &snap.done);
      episode_tensor = Tensor(1, static_cast<int>(snap.episode.size()));
      for (size_t i = 0; i < snap.episode.size(); ++i)
        episode_tensor[i] = static_cast<double>(snap.episode[i]);
      tensors.emplace_back("replay.episode", &episode_tensor);
      replay_counters = Tensor::from_row({static_cast<double>(snap.cursor),
                                          static_cast<double>(snap.size),
                                          static_cast<double>(snap.total_added)});
      tensors.emplace_back("replay.counters", &replay_counters);
      meta["replay_included"] = true;
    }
    save_checkpoint(path, tensors, meta);
  }

  // Resolves the current observation for the configured observation kind.
  Tensor observe(const Env& env) const {
    if (cfg.encoder.obs == ObsKind::Pixels) return env.render_pixels();
    return env.observation();
  }

  Prospector planner() const { return Prospector::over_models(fdm, sac); }
};

struct EvalResult {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> episode_returns;
};

// Deterministic evaluation: seeded episodes, squashed-mean acting in policy
// mode, sample-score-argmax acting in plan mode.
inline EvalResult evaluate(System& sys, int episodes, bool plan_mode, uint64_t seed,
                           const std::filesystem::path& trajectory_csv = {}) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
  auto env = make_env(sys.cfg.env_name, sys.cfg.env_dt, sys.cfg.env_max_steps);
  Prospector planner = sys.planner();
  EvalResult out;
  std::ofstream traj;
  if (!trajectory_csv.empty()) {
    if (trajectory_csv.has_parent_path()) std::filesystem::create_directories(trajectory_csv.parent_path());
    traj.open(trajectory_csv, std::ios::trunc);
    traj << "episode,step";
    const auto spec = env->spec();
    for (int i = 0; i < spec.obs_dim; ++i) traj << ",obs" << i;
    for (int i = 0; i < spec.action_dim; ++i) traj << ",action" << i;
    traj << ",reward\n";
  }
  for (int ep = 0; ep < episodes; ++ep) {
    Rng ep_rng(Rng(seed).derive("eval" + std::to_string(ep)).next_u64());
    Tensor raw_obs = env->reset(Rng(seed).derive("env" + std::to_string(ep)).next_u64());
    Tensor obs = sys.observe(*env);
    double ret = 0.0;
    bool done = false;
    int step = 0;
    while (!done) {
      const Tensor z = sys.encoder.encode(obs);
      const auto decision = planner.act(z, plan_mode ? ActMode::Plan : ActMode::Policy,
                                        sys.cfg.plan, ep_rng, /*deterministic=*/true);
      const auto res = env->step(decision.action);
      if (traj.is_open()) {
        traj << ep << ',' << step;
        for (int i = 0; i < raw_obs.cols(); ++i) traj << ',' << raw_obs[i];
        for (int i = 0; i < decision.action.cols(); ++i) traj << ',' << decision.action[i];
        traj << ',' << res.reward << "\n";
      }
      raw_obs = res.obs;
      obs = sys.observe(*env);
      ret += res.reward;
      done = res.done;
      ++step;
    }
    out.episode_returns.push_back(ret);
  }
  for (const double r : out.episode_returns) out.mean += r;
  out.mean /= episodes;
  double var = 0.0;
  for (const double r : out.episode_returns) var += (r - out.mean) * (r - out.mean);
  out.stddev = std::sqrt(var / episodes);
  return out;
}

// Config-driven training: collect with the planner or the policy, store
// transitions, and after warmup take one combined gradient step per update:
//   total = (critic + actor + alpha) + lambda_pred * L_pred + lambda_c * L_c
// followed by head re-orthonormalization and target soft updates.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg)
      : sys_(System::from_config(cfg)),
        cfg_(sys_.cfg),
        env_(make_env(cfg.env_name, cfg.env_dt, cfg.env_max_steps)),
        replay_(static_cast<int>(cfg.replay_capacity), cfg.encoder.input_dim(), cfg.sac.action_dim),
        opt_(cfg.sac.lr),
        root_rng_(cfg.seed) {
    for (auto& [name, p] : sys_.encoder.params())
      if (p->requires_grad) opt_.add(*p);
    for (auto& [name, p] : sys_.sac.trainable_params())
      if (name == "sac.log_alpha")
        opt_.add(*p, cfg.sac.alpha_lr);
      else
        opt_.add(*p);
    for (auto& [name, p] : sys_.fdm.params()) opt_.add(*p);

    env_rng_ = Rng(root_rng_.derive("env").next_u64());
    collect_rng_ = Rng(root_rng_.derive("collect").next_u64());
    plan_rng_ = Rng(root_rng_.derive("plan").next_u64());
    replay_rng_ = Rng(root_rng_.derive("replay").next_u64());
    target_rng_ = Rng(root_rng_.derive("target").next_u64());
    actor_rng_ = Rng(root_rng_.derive("actor").next_u64());
    cycle_rng_ = Rng(root_rng_.derive("cycle").next_u64());
  }

  System& system() { return sys_; }
  ReplayBuffer& replay() { return replay_; }

  struct LossBreakdown {
    double critic = 0.0, actor = 0.0, alpha = 0.0, pred = 0.0, cycle = 0.0, total = 0.0;
  };

  struct Summary {
    long steps = 0;
    long updates = 0;
    int episodes = 0;
    double last_episode_return = 0.0;
    std::filesystem::path checkpoint;
    std::filesystem::path metrics_csv;
    std::filesystem::path metrics_jsonl;
  };

  Summary train(const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    nan_dump_dir_ = out_dir;
    {
      std::ofstream cfg_echo(out_dir / "config.json");
      cfg_echo << sys_.cfg.to_json().dump(1) << "\n";
    }
    MetricsWriter metrics(out_dir / "metrics.csv", out_dir / "metrics.jsonl", cfg_.lambda_pred,
                          cfg_.lambda_cycle);
    const auto t0 = std::chrono::steady_clock::now();

    Prospector planner = sys_.planner();
    env_->reset(env_rng_.next_u64());
    Tensor obs = sys_.observe(*env_);
    double episode_return = 0.0;
    double last_episode_return = 0.0;
    int episodes = 0;
    long episode_id = 0;
    LossBreakdown last_losses;
    PlanStats plan_stats(cfg_.plan.candidates);

    const auto spec = env_->spec();
    for (long step = 1; step <= cfg_.total_steps; ++step) {
      Tensor action;
      if (step <= cfg_.warmup_steps) {
        action = Tensor::uniform(1, spec.action_dim, collect_rng_, spec.action_low, spec.action_high);
      } else if (cfg_.plan_at_collect) {
        const Tensor z = sys_.encoder.encode(obs);
        const PlanResult plan = planner.select_action(z, cfg_.plan, plan_rng_);
        action = plan.chosen_action;
        plan_stats.record(plan);
      } else {
        const Tensor z = sys_.encoder.encode(obs);
        action = sys_.sac.sample(z, plan_rng_).action;
      }

      const auto res = env_->step(action);
      const Tensor next_obs = sys_.observe(*env_);
      replay_.add(obs, action, res.reward, next_obs, res.done, episode_id);
      episode_return += res.reward;
      obs = next_obs;
      if (res.done) {
        env_->reset();
        obs = sys_.observe(*env_);
        last_episode_return = episode_return;
        episode_return = 0.0;
        ++episodes;
        ++episode_id;
      }

      if (step > cfg_.warmup_steps)
        for (int u = 0; u < cfg_.updates_per_step; ++u) last_losses = update_once();

      if (cfg_.metrics_interval > 0 && step % cfg_.metrics_interval == 0) {
        MetricsRecord rec;
        rec.step = step;
        rec.episode_return = last_episode_return;
        rec.loss_critic = last_losses.critic;
        rec.loss_actor = last_losses.actor;
        rec.loss_alpha = last_losses.alpha;
        rec.loss_pred = last_losses.pred;
        rec.loss_cycle = last_losses.cycle;
        rec.loss_total = last_losses.total;
        rec.cq_mean = plan_stats.mean();
        rec.cq_max = plan_stats.max();
        rec.chosen_hist = plan_stats.hist;
        rec.wall_clock_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        metrics.append(rec);
        plan_stats.reset();
      }
      if (cfg_.checkpoint_interval > 0 && step % cfg_.checkpoint_interval == 0)
        sys_.save(out_dir / ("checkpoint_" + std::to_string(step) + ".pspc"), step, &replay_);
    }

    Summary summary;
    summary.steps = cfg_.total_steps;
    summary.updates = updates_;
    summary.episodes = episodes;
    summary.last_episode_return = last_episode_return;
    summary.checkpoint = out_dir / "checkpoint_final.pspc";
    summary.metrics_csv = out_dir / "metrics.csv";
    summary.metrics_jsonl = out_dir / "metrics.jsonl";
    sys_.save(summary.checkpoint, cfg_.total_steps, &replay_);
    return summary;
  }

  // One gradient step: single backward through the combined objective.
  LossBreakdown update_once() {
    const Batch batch = replay_.sample(cfg_.batch_size, replay_rng_);
    const bool aux = cfg_.lambda_pred > 0.0 || cfg_.lambda_cycle > 0.0;
    SegmentBatch segs;
    if (aux) segs = replay_.sample_segments(cfg_.segment_batch, cfg_.cycle_steps, replay_rng_);

    Tape t;
    LossBreakdown out;
    const auto total = build_total_loss(t, batch, aux ? &segs : nullptr, &out);
    if (!std::isfinite(out.total)) {
      dump_nan_batch(batch);
      throw NanAbort("training aborted: non-finite total loss at update " + std::to_string(updates_));
    }
    opt_.zero_grad();
    t.backward(total);
    opt_.step();
    sys_.fdm.reproject_head();
    sys_.sac.soft_update_targets();
    sys_.encoder.update_target();
    ++updates_;
    return out;
  }

  // Builds the combined objective on the tape. Exposed for tests; pass a
  // null segment batch to drop the auxiliary terms.
  Tape::Val build_total_loss(Tape& t, const Batch& batch, const SegmentBatch* segs,
                             LossBreakdown* breakdown) {
    const Tensor y = sys_.sac.bootstrap_targets(sys_.encoder, batch, target_rng_);
    const auto critic = sys_.sac.critic_loss_against(t, sys_.encoder, batch, y);
    const auto aa = sys_.sac.actor_and_alpha_loss(t, sys_.encoder, batch, actor_rng_);
    Tape::Val total = t.add(t.add(critic, aa.actor), aa.alpha);

    Tape::Val pred = t.constant(Tensor::scalar(0.0));
    Tape::Val cycle = t.constant(Tensor::scalar(0.0));
    if (segs != nullptr) {
      if (segs->steps() != cfg_.cycle_steps)
        throw std::invalid_argument("total_loss: segment batch shorter than K");
      const auto z0 = sys_.encoder.encode(t, t.constant(segs->obs0), true);
      if (cfg_.lambda_pred > 0.0) {
        std::vector<Tape::Val> predicted;
        std::vector<EmbeddingBatch> targets;
        Tape::Val z = z0;
        for (int k = 0; k < cfg_.cycle_steps; ++k) {
          z = sys_.fdm.forward(t, t.constant(segs->actions[k]), z, true);
          predicted.push_back(sys_.encoder.project(t, z, true));
          targets.push_back(
              {sys_.encoder.target_project(sys_.encoder.target_encode(segs->next_obs[k])),
               EmbeddingBatch::Source::Target});
        }
        pred = prediction_loss(t, predicted, targets);
        total = t.add(total, t.affine(pred, cfg_.lambda_pred, 0.0));
      }
      if (cfg_.lambda_cycle > 0.0) {
        cycle = sys_.fdm.cycle_loss(t, z0, cfg_.cycle_actions, cfg_.cycle_steps,
                                    uniform_action_sampler(cfg_.sac.action_dim, cfg_.sac.action_low,
                                                           cfg_.sac.action_high),
                                    cycle_rng_, true);
        total = t.add(total, t.affine(cycle, cfg_.lambda_cycle, 0.0));
      }
    }
    if (breakdown != nullptr) {
      breakdown->critic = t.scalar(critic);
      breakdown->actor = t.scalar(aa.actor);
      breakdown->alpha = t.scalar(aa.alpha);
      breakdown->pred = t.scalar(pred);
      breakdown->cycle = t.scalar(cycle);
      breakdown->total = t.scalar(total);
    }
    return total;
  }

  long update_count() const { return updates_; }

 private:
  struct PlanStats {
    explicit PlanStats(int k) : hist(k, 0) {}
    std::vector<long> hist;
    double sum = 0.0, best = 0.0;
    long n = 0;
    void record(const PlanResult& p) {
      for (const double s : p.scores) {
        best = n == 0 ? s : std::max(best, s);
        sum += s;
        ++n;
      }
      if (p.chosen >= 0 && p.chosen < static_cast<int>(hist.size())) ++hist[p.chosen];
    }
    double mean() const { return n > 0 ? sum / static_cast<double>(n) : 0.0; }
    double max() const { return n > 0 ? best : 0.0; }
    void reset() {
      std::fill(hist.begin(), hist.end(), 0);
      sum = 0.0;
      best = 0.0;
      n = 0;
    }
  };

  void dump_nan_batch(const Batch& batch) const {
    nlohmann::json j;
    j["obs"] = batch.obs.vec();
    j["action"] = batch.action.vec();
    j["reward"] = batch.reward.vec();
    j["next_obs"] = batch.next_obs.vec();
    j["done"] = batch.done.vec();
    std::ofstream out(nan_dump_dir_ / "nan_batch_dump.json");
    out << j.dump() << "\n";
  }

  System sys_;
  const TrainConfig& cfg_;  // alias of sys_.cfg
  std::unique_ptr<Env> env_;
  ReplayBuffer replay_;
  Adam opt_;
  Rng root_rng_;
  Rng env_rng_{0}, collect_rng_{0}, plan_rng_{0}, replay_rng_{0}, target_rng_{0}, actor_rng_{0},
      cycle_rng_{0};
  std::filesystem::path nan_dump_dir_ = ".";
  long updates_ = 0;
};

// One ablation cell: train per seed, evaluate the final checkpoint, report
// mean and median return across seeds.
struct AblationCell {
  int k = 0, t = 0;
  int seeds = 0;
  double mean_return = 0.0;
  double median_return = 0.0;
};

inline constexpr const char* kAblationCsvHeader = "k,t,seeds,mean_return,median_return";

inline std::vector<AblationCell> ablate(const TrainConfig& base, const std::vector<int>& k_list,
                                        const std::vector<int>& t_list, int seeds,
                                        const std::filesystem::path& out_dir, int jobs = 1) {
  if (k_list.empty() || t_list.empty() || seeds < 1)
    throw std::invalid_argument("ablate: k list, t list, and seeds must be non-empty");
  struct Job {
    int k, t;
  };
  std::vector<Job> cells;
  for (const int k : k_list)
    for (const int t : t_list) cells.push_back({k, t});
  std::vector<AblationCell> results(cells.size());

  std::atomic<size_t> next{0};
  const auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const Job job = cells[i];
      std::vector<double> returns;
      for (int s = 0; s < seeds; ++s) {
        TrainConfig cfg = base;
        cfg.plan.candidates = job.k;
        cfg.plan.horizon = job.t;
        cfg.seed = base.seed + static_cast<uint64_t>(s);
        Trainer trainer(cfg);
        const auto run_dir =
            out_dir / ("cell_k" + std::to_string(job.k) + "_t" + std::to_string(job.t) + "_s" +
                       std::to_string(s));
        trainer.train(run_dir);
        EvalResult ev = evaluate(trainer.system(), cfg.eval_episodes, cfg.plan_at_eval,
                                 cfg.seed + 1000);
        returns.push_back(ev.mean);
      }
      AblationCell cell;
      cell.k = job.k;
      cell.t = job.t;
      cell.seeds = seeds;
      for (const double r : returns) cell.mean_return += r;
      cell.mean_return /= returns.size();
      std::sort(returns.begin(), returns.end());
      cell.median_return = returns.size() % 2 == 1
                               ? returns[returns.size() / 2]
                               : 0.5 * (returns[returns.size() / 2 - 1] + returns[returns.size() / 2]);
      results[i] = cell;
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < std::max(1, jobs); ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir / "ablation.csv", std::ios::trunc);
  csv << kAblationCsvHeader << "\n";
  for (const auto& cell : results) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.17g,%.17g", cell.k, cell.t, cell.seeds,
                  cell.mean_return, cell.median_return);
    csv << buf << "\n";
  }
  return results;
}

}  // namespace prospec
