#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace prospec {

struct MetricsRecord {
  long step = 0;
  double episode_return = 0.0;  // last completed episode
  double loss_critic = 0.0;
  double loss_actor = 0.0;
  double loss_alpha = 0.0;
  double loss_pred = 0.0;
  double loss_cycle = 0.0;
  double loss_total = 0.0;
  double cq_mean = 0.0;
  double cq_max = 0.0;
  std::vector<long> chosen_hist;  // per-candidate pick counts since last row
  double wall_clock_s = 0.0;      // JSONL only; kept out of the CSV so runs diff clean
};

// Append-only CSV with a JSONL mirror. Every row re-checks the total-loss
// decomposition before it is written.
class MetricsWriter {
 public:
  static constexpr const char* kCsvSchemaVersion = "1";

  MetricsWriter(const std::filesystem::path& csv_path, const std::filesystem::path& jsonl_path,
                double lambda_pred, double lambda_cycle)
      : lambda_pred_(lambda_pred), lambda_cycle_(lambda_cycle) {
    if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
    csv_.open(csv_path, std::ios::trunc);
    jsonl_.open(jsonl_path, std::ios::trunc);
    if (!csv_ || !jsonl_) throw std::runtime_error("metrics: cannot open output files");
    csv_ << header() << "\n";
  }

  static std::string header() {
    return "step,episode_return,loss_critic,loss_actor,loss_alpha,loss_pred,loss_cycle,loss_total,"
           "cq_mean,cq_max,chosen_hist";
  }

  void append(const MetricsRecord& r) {
    const double rl = r.loss_critic + r.loss_actor + r.loss_alpha;
    const double recomposed = rl + lambda_pred_ * r.loss_pred + lambda_cycle_ * r.loss_cycle;
    if (std::abs(recomposed - r.loss_total) > 1e-9)
      throw std::logic_error("metrics: total loss does not decompose into its components");

    csv_ << r.step << ',' << fmt(r.episode_return) << ',' << fmt(r.loss_critic) << ','
         << fmt(r.loss_actor) << ',' << fmt(r.loss_alpha) << ',' << fmt(r.loss_pred) << ','
         << fmt(r.loss_cycle) << ',' << fmt(r.loss_total) << ',' << fmt(r.cq_mean) << ','
         << fmt(r.cq_max) << ',' << hist(r.chosen_hist) << "\n";
    csv_.flush();

    nlohmann::json j;
    j["step"] = r.step;
    j["episode_return"] = r.episode_return;
    j["loss"] = {{"critic", r.loss_critic}, {"actor", r.loss_actor}, {"alpha", r.loss_alpha},
                 {"pred", r.loss_pred},     {"cycle", r.loss_cycle}, {"total", r.loss_total}};
    j["plan"] = {{"cq_mean", r.cq_mean}, {"cq_max", r.cq_max}, {"chosen_hist", r.chosen_hist}};
    j["wall_clock_s"] = r.wall_clock_s;
    jsonl_ << j.dump() << "\n";
    jsonl_.flush();
  }

 private:
  static std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  }

  static std::string hist(const std::vector<long>& h) {
    std::string out;
    for (size_t i = 0; i < h.size(); ++i) {
      if (i > 0) out += '|';
      out += std::to_string(h[i]);
    }
    return out;
  }

  double lambda_pred_, lambda_cycle_;
  std::ofstream csv_, jsonl_;
};

}  // namespace prospec
