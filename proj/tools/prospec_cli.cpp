#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prospec/harness.hpp"
#include "prospec/verify.hpp"

namespace fs = std::filesystem;
using namespace prospec;

namespace {

fs::path output_base() {
  if (const char* env = std::getenv("PROSPEC_OUT_DIR")) return fs::path(env);
  return fs::path("runs");
}

fs::path resolve_out(const std::string& out, const std::string& fallback_name) {
  fs::path p = out.empty() ? output_base() / fallback_name : fs::path(out);
  if (p.is_relative() && !out.empty()) p = output_base() / p;
  return p;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

Tensor parse_obs(const std::string& s) {
  std::vector<double> vals;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) vals.push_back(std::stod(item));
  return Tensor::from_row(vals);
}

}  // namespace

int main(int argc, char** argv) {
  ensure_blas_single_threaded();
  CLI::App app{"prospective-planning reinforcement learning toolkit"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train = app.add_subcommand("train", "train an agent from a TOML config");
  std::string train_config, train_out;
  std::vector<std::string> train_sets;
  train->add_option("--config", train_config, "TOML config file (defaults apply when omitted)");
  train->add_option("--set", train_sets, "override config keys, e.g. --set sac.gamma=0.95");
  train->add_option("--out", train_out, "output directory (default $PROSPEC_OUT_DIR/run)");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint deterministically");
  std::string eval_ckpt, eval_mode = "plan", eval_traj;
  int eval_episodes = 10;
  uint64_t eval_seed = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--episodes", eval_episodes, "episodes to run");
  eval_cmd->add_option("--mode", eval_mode, "plan | policy")->check(CLI::IsMember({"plan", "policy"}));
  eval_cmd->add_option("--seed", eval_seed, "evaluation seed");
  eval_cmd->add_option("--dump-traj", eval_traj, "write trajectories to this CSV");

  // ---- plan-demo ----
  auto* demo = app.add_subcommand("plan-demo", "score candidate plans for one observation");
  std::string demo_ckpt, demo_obs;
  uint64_t demo_seed = 0;
  int demo_k = 0, demo_t = 0;
  demo->add_option("--checkpoint", demo_ckpt, "checkpoint file")->required();
  demo->add_option("--obs", demo_obs, "comma-separated observation")->required();
  demo->add_option("--seed", demo_seed, "candidate sampling seed");
  demo->add_option("--k", demo_k, "override candidate count");
  demo->add_option("--t", demo_t, "override horizon");

  // ---- ablate ----
  auto* abl = app.add_subcommand("ablate", "sweep the k x t planning grid");
  std::string abl_config, abl_out, abl_k = "1,3,9", abl_t = "1,6,15";
  std::vector<std::string> abl_sets;
  int abl_seeds = 3, abl_jobs = 1;
  abl->add_option("--config", abl_config, "TOML config file");
  abl->add_option("--set", abl_sets, "override config keys");
  abl->add_option("--k", abl_k, "comma-separated candidate counts");
  abl->add_option("--t", abl_t, "comma-separated horizons");
  abl->add_option("--seeds", abl_seeds, "seeds per cell");
  abl->add_option("--jobs", abl_jobs, "parallel cells");
  abl->add_option("--out", abl_out, "output directory");

  // ---- verify ----
  auto* ver = app.add_subcommand("verify", "run the numeric invariant suite");
  std::string ver_csv;
  ver->add_option("--residual-csv", ver_csv, "dump round-trip residual histograms to this CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const TrainConfig cfg = load_config(train_config, train_sets);
      const fs::path out =
          resolve_out(train_out, cfg.env_name + "-s" + std::to_string(cfg.seed));
      Trainer trainer(cfg);
      const auto summary = trainer.train(out);
      EvalResult ev = evaluate(trainer.system(), cfg.eval_episodes, cfg.plan_at_eval, cfg.seed + 1);
      std::cout << "trained " << summary.steps << " steps (" << summary.updates << " updates, "
                << summary.episodes << " episodes)\n"
                << "final eval return " << ev.mean << " +- " << ev.stddev << " over "
                << cfg.eval_episodes << " episodes\n"
                << "checkpoint: " << summary.checkpoint.string() << "\n"
                << "metrics:    " << summary.metrics_csv.string() << "\n";
      return kExitOk;
    }
    if (*eval_cmd) {
      System sys = System::from_checkpoint(eval_ckpt);
      const EvalResult ev =
          evaluate(sys, eval_episodes, eval_mode == "plan", eval_seed, eval_traj);
      std::cout << "mean_return " << ev.mean << "\nstd_return " << ev.stddev << "\n";
      return kExitOk;
    }
    if (*demo) {
      System sys = System::from_checkpoint(demo_ckpt);
      PlanConfig pc = sys.cfg.plan;
      if (demo_k > 0) pc.candidates = demo_k;
      if (demo_t > 0) pc.horizon = demo_t;
      const Tensor obs = parse_obs(demo_obs);
      const Tensor z = sys.encoder.encode(obs);
      Rng rng(demo_seed);
      Prospector planner = sys.planner();
      const PlanResult plan = planner.select_action(z, pc, rng);
      for (size_t c = 0; c < plan.scores.size(); ++c) {
        nlohmann::json j;
        j["candidate"] = c;
        j["cq"] = plan.scores[c];
        j["first_action"] = plan.candidates[c].front().vec();
        std::cout << j.dump() << "\n";
      }
      nlohmann::json chosen;
      chosen["chosen_index"] = plan.chosen;
      chosen["chosen_action"] = plan.chosen_action.vec();
      chosen["cq"] = plan.scores[plan.chosen];
      std::cout << chosen.dump() << "\n";
      return kExitOk;
    }
    if (*abl) {
      const TrainConfig cfg = load_config(abl_config, abl_sets);
      const fs::path out = resolve_out(abl_out, "ablation");
      const auto cells = ablate(cfg, parse_int_list(abl_k), parse_int_list(abl_t), abl_seeds, out,
                                abl_jobs);
      std::cout << kAblationCsvHeader << "\n";
      for (const auto& cell : cells)
        std::cout << cell.k << ',' << cell.t << ',' << cell.seeds << ',' << cell.mean_return << ','
                  << cell.median_return << "\n";
      std::cout << "csv: " << (out / "ablation.csv").string() << "\n";
      return kExitOk;
    }
    if (*ver) {
      VerifyOptions opts;
      if (!ver_csv.empty()) opts.residual_csv = ver_csv;
      const VerifyReport report = run_verification(opts);
      print_report(report);
      return report.all_pass() ? kExitOk : kExitInvariantFailure;
    }
  } catch (const NanAbort& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return kExitNanAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
