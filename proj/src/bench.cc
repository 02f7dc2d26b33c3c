#include "falcon/bench.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "falcon/denoiser.h"

namespace falcon {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void mean_std(const std::vector<double>& xs, double& mean, double& std) {
  mean = 0.0;
  std = 0.0;
  if (xs.empty()) return;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  for (double x : xs) std += (x - mean) * (x - mean);
  std = std::sqrt(std / static_cast<double>(xs.size()));
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void RunConfig::validate() const {
  env.validate();
  if (levels < 1) throw std::invalid_argument("schedule.K must be >= 1");
  if (backend != SamplerKind::kDdpm && (steps < 1 || steps > levels)) {
    throw std::invalid_argument("sampler.steps must lie in [1, schedule.K]");
  }
  if (episodes < 1) throw std::invalid_argument("run.episodes must be >= 1");
  falcon.validate();
}

nlohmann::json RunConfig::to_json() const {
  return {
      {"env",
       {{"name", to_string(env.kind)},
        {"T_o", env.obs_horizon},
        {"T_a", env.exec_horizon},
        {"T_p", env.pred_horizon},
        {"episode_length", env.episode_length},
        {"success_radius", env.success_radius},
        {"component_std", env.component_std},
        {"obs_scale", env.obs_scale},
        {"start_box", env.start_box},
        {"track_speed", env.track_speed},
        {"track_amplitude", env.track_amplitude},
        {"track_period", env.track_period},
        {"goal_distance", env.goal_distance},
        {"push_speed", env.push_speed},
        {"commit_distance", env.commit_distance},
        {"arena", env.arena},
        {"jump_speed", env.jump_speed},
        {"switch_rate", env.switch_rate},
        {"min_jump", env.min_jump}}},
      {"sampler", {{"backend", to_string(backend)}, {"steps", steps}}},
      {"schedule",
       {{"kind", to_string(schedule)},
        {"K", levels},
        {"sigma", sigma == SigmaRule::kPosterior ? "posterior" : "beta"}}},
      {"falcon",
       {{"enabled", falcon_enabled},
        {"epsilon", falcon.epsilon},
        {"delta", falcon.delta},
        {"kappa", falcon.kappa},
        {"k_min", falcon.k_min},
        {"capacity", falcon.capacity},
        {"distance", to_string(falcon.distance)},
        {"alignment", to_string(falcon.alignment)},
        {"selection", to_string(falcon.selection)},
        {"fixed_level", falcon.fixed_level}}},
      {"run", {{"episodes", episodes}, {"seed", seed}}},
  };
}

StepGrid RunConfig::grid() const {
  return make_step_grid(levels, backend == SamplerKind::kDdpm ? levels : steps);
}

int EpisodeRecord::nfe_total() const {
  int n = 0;
  for (const auto& d : decisions) n += d.nfe_sequential;
  return n;
}

double EpisodeRecord::nfe_mean() const {
  return decisions.empty() ? 0.0
                           : static_cast<double>(nfe_total()) /
                                 static_cast<double>(decisions.size());
}

int EpisodeRecord::estimation_total() const {
  int n = 0;
  for (const auto& d : decisions) n += d.estimation_batch;
  return n;
}

double EpisodeRecord::start_level_mean() const {
  if (decisions.empty()) return 0.0;
  double total = 0.0;
  for (const auto& d : decisions) total += d.start_level;
  return total / static_cast<double>(decisions.size());
}

nlohmann::json Aggregates::to_json() const {
  return {{"episodes", episodes},
          {"score_mean", score_mean},
          {"score_std", score_std},
          {"nfe_mean", nfe_mean},
          {"nfe_std", nfe_std},
          {"estimation_mean", estimation_mean},
          {"start_level_mean", start_level_mean}};
}

Aggregates Aggregates::from_json(const nlohmann::json& j) {
  Aggregates a;
  a.episodes = j.at("episodes").get<int>();
  a.score_mean = j.at("score_mean").get<double>();
  a.score_std = j.at("score_std").get<double>();
  a.nfe_mean = j.at("nfe_mean").get<double>();
  a.nfe_std = j.at("nfe_std").get<double>();
  a.estimation_mean = j.at("estimation_mean").get<double>();
  a.start_level_mean = j.at("start_level_mean").get<double>();
  return a;
}

EpisodeRecord run_episode(const RunConfig& config, int index) {
  const NoiseSchedule schedule =
      build_schedule(config.schedule, config.levels, config.sigma);
  const StepGrid grid = config.grid();
  const EnvSpec& spec = config.env;
  const AnalyticDenoiser denoiser(
      [spec](const ObservationWindow& obs) { return expert_mixture(spec, obs); },
      schedule);
  const DecisionContext ctx{config.backend, schedule, grid, denoiser,
                            Horizons{spec.exec_horizon, spec.pred_horizon},
                            EnvSpec::kActionDim};

  EpisodeRecord record;
  record.index = index;
  record.seed = config.seed + static_cast<std::uint64_t>(index);
  EnvState state = reset(spec, record.seed);
  FalconState falcon_state(config.falcon.capacity);
  for (int i = 0; i < spec.decisions(); ++i) {
    const ObservationWindow obs = observe(state, spec);
    DecisionStreams streams = decision_streams(record.seed, i);
    DecisionResult decision =
        config.falcon_enabled
            ? falcon_decide(ctx, obs, falcon_state, config.falcon, streams)
            : baseline_decide(ctx, obs, streams);
    state = step_execute(std::move(state), decision.chunk.values, spec);
    record.decisions.push_back(std::move(decision));
  }
  record.score = score(state, spec);
  record.mode = state.mode;
  record.terminal_distance = (state.position - task_goal(state, spec)).norm();
  return record;
}

RunMetrics run_experiment(const RunConfig& config) {
  config.validate();
  RunMetrics metrics;
  metrics.config = config;
  metrics.episodes.resize(static_cast<std::size_t>(config.episodes));

  std::atomic<int> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (int i = next++; i < config.episodes; i = next++) {
      try {
        metrics.episodes[static_cast<std::size_t>(i)] = run_episode(config, i);
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        if (!error) {
          error = std::make_exception_ptr(
              std::runtime_error("episode " + std::to_string(i) + ": " + e.what()));
        }
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers = std::min<unsigned>(hw, static_cast<unsigned>(config.episodes));
  std::vector<std::jthread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  pool.clear();
  if (error) std::rethrow_exception(error);

  metrics.aggregates = aggregate(metrics.episodes);
  return metrics;
}

Aggregates aggregate(const std::vector<EpisodeRecord>& episodes) {
  Aggregates a;
  a.episodes = static_cast<int>(episodes.size());
  std::vector<double> scores, nfes, est, starts;
  for (const auto& e : episodes) {
    scores.push_back(e.score);
    nfes.push_back(e.nfe_mean());
    est.push_back(e.estimation_total());
    starts.push_back(e.start_level_mean());
  }
  double unused = 0.0;
  mean_std(scores, a.score_mean, a.score_std);
  mean_std(nfes, a.nfe_mean, a.nfe_std);
  mean_std(est, a.estimation_mean, unused);
  mean_std(starts, a.start_level_mean, unused);
  return a;
}

double compute_speedup(double base_nfe, double fast_nfe) {
  if (fast_nfe == 0.0) throw std::invalid_argument("speedup: zero NFE denominator");
  return base_nfe / fast_nfe;
}

double compute_speedup(const RunMetrics& base, const RunMetrics& fast) {
  if (base.config.env.kind != fast.config.env.kind ||
      base.config.backend != fast.config.backend) {
    throw std::invalid_argument("speedup: runs differ in env or backend");
  }
  return compute_speedup(base.aggregates.nfe_mean, fast.aggregates.nfe_mean);
}

std::vector<double> consecutive_distances(const EpisodeRecord& episode,
                                          int exec_horizon) {
  std::vector<double> out;
  for (std::size_t i = 1; i < episode.decisions.size(); ++i) {
    const Matrix& prev = episode.decisions[i - 1].chunk.values;
    const Matrix& cur = episode.decisions[i].chunk.values;
    const Eigen::Index tail = prev.rows() - exec_horizon;
    out.push_back(overlap_distance(cur.topRows(tail), prev.bottomRows(tail),
                                   DistanceNorm::kRms));
  }
  return out;
}

DensityHistogram distance_density(const std::vector<EpisodeRecord>& episodes,
                                  int exec_horizon, double threshold, int bins,
                                  double max_distance) {
  if (bins < 1 || !(max_distance > 0.0)) {
    throw std::invalid_argument("density: need bins >= 1 and a positive range");
  }
  DensityHistogram h;
  h.threshold = threshold;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (int b = 0; b <= bins; ++b) h.edges.push_back(max_distance * b / bins);
  int below = 0;
  for (const auto& e : episodes) {
    for (double d : consecutive_distances(e, exec_horizon)) {
      ++h.samples;
      if (d < threshold) ++below;
      const int b = std::min(bins - 1, static_cast<int>(d / max_distance * bins));
      ++h.counts[static_cast<std::size_t>(b)];
    }
  }
  if (h.samples == 0) {
    throw std::invalid_argument("density: need at least one episode with two decisions");
  }
  h.fraction_below = static_cast<double>(below) / h.samples;
  return h;
}

std::vector<double> mode_histogram(const std::vector<EpisodeRecord>& episodes,
                                   int modes) {
  if (episodes.empty()) throw std::invalid_argument("mode histogram: no episodes");
  std::vector<double> freq(static_cast<std::size_t>(modes), 0.0);
  for (const auto& e : episodes) {
    if (e.mode < 0 || e.mode >= modes) {
      throw std::invalid_argument("mode histogram: episode " + std::to_string(e.index) +
                                  " has no mode label");
    }
    freq[static_cast<std::size_t>(e.mode)] += 1.0;
  }
  for (double& f : freq) f /= static_cast<double>(episodes.size());
  return freq;
}

Eigen::MatrixXi start_heatmap(const EpisodeRecord& episode, int K,
                              int exec_horizon) {
  const auto n = static_cast<Eigen::Index>(episode.decisions.size());
  Eigen::MatrixXi heat = Eigen::MatrixXi::Constant(n, n, -1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& d = episode.decisions[static_cast<std::size_t>(i)];
    if (d.explored) {
      heat(i, i) = K;
    } else {
      heat((d.start_origin - 1) / exec_horizon, i) = d.start_level;
    }
  }
  return heat;
}

void write_outputs(const RunMetrics& metrics, const std::filesystem::path& dir,
                   double density_threshold) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  const EnvSpec& spec = metrics.config.env;
  const double threshold =
      density_threshold >= 0.0 ? density_threshold : 3.0 * spec.component_std;

  {
    const auto path = dir / "metrics.csv";
    auto out = open_for_write(path);
    out << "episode,score,nfe_mean,nfe_total,est_batch_total,mode,seed\n";
    for (const auto& e : metrics.episodes) {
      out << e.index << ',' << fmt(e.score) << ',' << fmt(e.nfe_mean()) << ','
          << e.nfe_total() << ',' << e.estimation_total() << ',' << e.mode << ','
          << e.seed << '\n';
    }
    finish(out, path);
  }

  nlohmann::json summary;
  summary["config"] = metrics.config.to_json();
  summary["aggregates"] = metrics.aggregates.to_json();
  {
    const auto path = dir / "density.csv";
    auto out = open_for_write(path);
    out << "bin_lo,bin_hi,count,density\n";
    bool have_density = false;
    for (const auto& e : metrics.episodes) have_density |= e.decisions.size() >= 2;
    if (have_density) {
      const auto h = distance_density(metrics.episodes, spec.exec_horizon, threshold);
      const double width = h.edges[1] - h.edges[0];
      for (std::size_t b = 0; b < h.counts.size(); ++b) {
        out << fmt(h.edges[b]) << ',' << fmt(h.edges[b + 1]) << ',' << h.counts[b] << ','
            << fmt(h.counts[b] / (h.samples * width)) << '\n';
      }
      summary["density"] = {{"threshold", h.threshold},
                            {"fraction_below", h.fraction_below},
                            {"samples", h.samples}};
    }
    finish(out, path);
  }
  {
    const auto path = dir / "heatmap.csv";
    auto out = open_for_write(path);
    int n = spec.decisions();
    out << "episode,row";
    for (int c = 0; c < n; ++c) out << ",c" << c;
    out << '\n';
    for (const auto& e : metrics.episodes) {
      const auto heat = start_heatmap(e, metrics.config.levels, spec.exec_horizon);
      for (Eigen::Index r = 0; r < heat.rows(); ++r) {
        out << e.index << ',' << r;
        for (Eigen::Index c = 0; c < heat.cols(); ++c) out << ',' << heat(r, c);
        out << '\n';
      }
    }
    finish(out, path);
  }
  if (spec.kind == EnvKind::kBimodalPush && !metrics.episodes.empty()) {
    bool labelled = true;
    for (const auto& e : metrics.episodes) labelled &= e.mode >= 0;
    if (labelled) summary["mode_frequencies"] = mode_histogram(metrics.episodes);
  }
  {
    const auto path = dir / "summary.json";
    auto out = open_for_write(path);
    out << summary.dump(2) << '\n';
    finish(out, path);
  }
}

}  // namespace falcon
