#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "falcon/envs.h"
#include "falcon/falcon.h"
#include "falcon/samplers.h"
#include "falcon/schedule.h"

namespace falcon {

struct RunConfig {
  EnvSpec env;
  SamplerKind backend = SamplerKind::kDdpm;
  ScheduleKind schedule = ScheduleKind::kCosine;
  SigmaRule sigma = SigmaRule::kPosterior;
  int levels = 100;  // K
  int steps = 16;    // solver steps for ddim / dpmsolver; ddpm always uses K
  bool falcon_enabled = false;
  FalconConfig falcon;
  int episodes = 200;
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  void validate() const;
  nlohmann::json to_json() const;
  // Grid the backend runs on: every level for ddpm, `steps` levels otherwise.
  StepGrid grid() const;
};

struct EpisodeRecord {
  int index = 0;
  std::uint64_t seed = 0;
  double score = 0.0;
  int mode = -1;
  double terminal_distance = 0.0;
  std::vector<DecisionResult> decisions;

  int nfe_total() const;
  double nfe_mean() const;
  int estimation_total() const;
  double start_level_mean() const;
};

struct Aggregates {
  int episodes = 0;
  double score_mean = 0.0;
  double score_std = 0.0;
  double nfe_mean = 0.0;  // mean over episodes of the per-episode mean
  double nfe_std = 0.0;
  double estimation_mean = 0.0;  // per-episode estimation totals
  double start_level_mean = 0.0;

  nlohmann::json to_json() const;
  static Aggregates from_json(const nlohmann::json& j);
  bool operator==(const Aggregates&) const = default;
};

struct RunMetrics {
  RunConfig config;
  std::vector<EpisodeRecord> episodes;  // sorted by index
  Aggregates aggregates;
};

// Episode `index` uses seed config.seed + index for the environment and for
// every decision stream.
EpisodeRecord run_episode(const RunConfig& config, int index);
RunMetrics run_experiment(const RunConfig& config);

// Population mean and standard deviation over episode rows.
Aggregates aggregate(const std::vector<EpisodeRecord>& episodes);

double compute_speedup(double base_nfe, double fast_nfe);
double compute_speedup(const RunMetrics& base, const RunMetrics& fast);

// RMS distance between the unexecuted tail of each prediction and the rows of
// the next prediction covering the same steps.
std::vector<double> consecutive_distances(const EpisodeRecord& episode,
                                          int exec_horizon);

struct DensityHistogram {
  std::vector<double> edges;  // bins + 1 edges
  std::vector<int> counts;
  double threshold = 0.0;
  double fraction_below = 0.0;
  int samples = 0;
};

DensityHistogram distance_density(const std::vector<EpisodeRecord>& episodes,
                                  int exec_horizon, double threshold,
                                  int bins = 40, double max_distance = 0.2);

// Frequency of each committed mode; throws when any episode lacks a label.
std::vector<double> mode_histogram(const std::vector<EpisodeRecord>& episodes,
                                   int modes = 2);

// decisions x decisions matrix, A(j, i) = start level of decision i reused
// from decision j; explored starts sit on the diagonal at K; -1 elsewhere.
Eigen::MatrixXi start_heatmap(const EpisodeRecord& episode, int K,
                              int exec_horizon);

// metrics.csv, summary.json, heatmap.csv, density.csv. Throws
// std::runtime_error naming the path on I/O failure.
void write_outputs(const RunMetrics& metrics, const std::filesystem::path& dir,
                   double density_threshold = -1.0);

}  // namespace falcon
