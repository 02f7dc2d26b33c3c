#include "falcon/cli.h"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "falcon/config.h"

namespace falcon {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string short_fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

AblationPoint run_point(RunConfig config, std::string label, double value,
                        const std::filesystem::path& out_dir) {
  config.falcon_enabled = true;
  const RunMetrics metrics = run_experiment(config);
  if (!out_dir.empty()) write_outputs(metrics, out_dir / label);
  return {std::move(label), value, metrics.aggregates};
}

std::string point_label(const std::string& parameter, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s_%02zu", parameter.c_str(), i);
  return buf;
}

}  // namespace

std::vector<double> epsilon_grid() {
  return {1e-4, 5e-3, 8e-3, 1e-2, 3e-2, 5e-2, 8e-2, 1e-1};
}

std::vector<double> delta_grid() {
  return {0.001, 0.05, 0.0625, 0.076, 0.1, 0.2, 0.33, 1.0};
}

std::vector<AblationPoint> ablate_epsilon(const RunConfig& base,
                                          const std::filesystem::path& out_dir) {
  std::vector<AblationPoint> points;
  const auto grid = epsilon_grid();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    RunConfig c = base;
    c.falcon.epsilon = grid[i];
    points.push_back(run_point(c, point_label("epsilon", i), grid[i], out_dir));
  }
  return points;
}

std::vector<AblationPoint> ablate_delta(const RunConfig& base,
                                        const std::filesystem::path& out_dir) {
  std::vector<AblationPoint> points;
  const auto grid = delta_grid();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    RunConfig c = base;
    c.falcon.delta = grid[i];
    points.push_back(run_point(c, point_label("delta", i), grid[i], out_dir));
  }
  return points;
}

std::vector<AblationPoint> ablate_selection(const RunConfig& base,
                                            const std::filesystem::path& out_dir) {
  std::vector<AblationPoint> points;
  RunConfig adaptive = base;
  adaptive.falcon.selection = SelectionMode::kAdaptive;
  points.push_back(run_point(adaptive, "adaptive", 0.0, out_dir));
  for (int divisor : {2, 5}) {
    RunConfig c = base;
    c.falcon.selection = SelectionMode::kFixedLevel;
    c.falcon.fixed_level = std::max(1, base.levels / divisor);
    points.push_back(run_point(c, "fixed_K_" + std::to_string(divisor),
                               c.falcon.fixed_level, out_dir));
  }
  return points;
}

void write_ablation_csv(const std::vector<AblationPoint>& points,
                        const std::string& parameter,
                        const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "label," << parameter
      << ",score_mean,score_std,nfe_mean,nfe_std,estimation_mean,start_level_mean\n";
  for (const auto& p : points) {
    const auto& a = p.aggregates;
    out << p.label << ',' << fmt(p.value) << ',' << fmt(a.score_mean) << ','
        << fmt(a.score_std) << ',' << fmt(a.nfe_mean) << ',' << fmt(a.nfe_std) << ','
        << fmt(a.estimation_mean) << ',' << fmt(a.start_level_mean) << '\n';
  }
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string write_report(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) {
    throw std::runtime_error("report: " + root.string() + " is not a directory");
  }
  std::vector<std::filesystem::path> found;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() == "summary.json") found.push_back(e.path());
  }
  std::sort(found.begin(), found.end());

  struct Row {
    std::string run, env, backend;
    bool falcon = false;
    int levels = 0, steps = 0;
    Aggregates agg;
  };
  std::vector<Row> rows;
  for (const auto& path : found) {
    std::ifstream in(path);
    nlohmann::json j;
    try {
      in >> j;
      Row r;
      r.run = std::filesystem::relative(path.parent_path(), root).generic_string();
      r.env = j.at("config").at("env").at("name").get<std::string>();
      r.backend = j.at("config").at("sampler").at("backend").get<std::string>();
      r.steps = j.at("config").at("sampler").at("steps").get<int>();
      r.levels = j.at("config").at("schedule").at("K").get<int>();
      r.falcon = j.at("config").at("falcon").at("enabled").get<bool>();
      r.agg = Aggregates::from_json(j.at("aggregates"));
      rows.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error("report: cannot read " + path.string() + ": " + e.what());
    }
  }

  std::ostringstream text;
  text << "run,env,backend,falcon,episodes,score_mean,score_std,nfe_mean,nfe_std,"
          "estimation_mean,start_level_mean,speedup\n";
  for (const auto& r : rows) {
    std::optional<double> base;
    for (const auto& b : rows) {
      if (!b.falcon && b.env == r.env && b.backend == r.backend && b.levels == r.levels &&
          b.steps == r.steps) {
        base = b.agg.nfe_mean;
        break;
      }
    }
    text << r.run << ',' << r.env << ',' << r.backend << ',' << (r.falcon ? 1 : 0) << ','
         << r.agg.episodes << ',' << fmt(r.agg.score_mean) << ',' << fmt(r.agg.score_std)
         << ',' << fmt(r.agg.nfe_mean) << ',' << fmt(r.agg.nfe_std) << ','
         << fmt(r.agg.estimation_mean) << ',' << fmt(r.agg.start_level_mean) << ',';
    if (base && r.agg.nfe_mean > 0.0) text << fmt(compute_speedup(*base, r.agg.nfe_mean));
    text << '\n';
  }
  const auto path = root / "report.csv";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text.str();
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
  return text.str();
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Warm-start sampling for diffusion action policies", "falcon"};
  app.require_subcommand(1);

  struct Options {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
    std::optional<int> episodes;
    std::optional<std::uint64_t> seed;
  } opts;

  auto add_run_options = [&opts](CLI::App* sub) {
    sub->add_option("--config", opts.config, "Run configuration file")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--set", opts.sets, "Override one key, KEY=VALUE (repeatable)")
        ->take_all();
    sub->add_option("--out", opts.out, "Output directory");
    sub->add_option("--episodes", opts.episodes, "Episode count");
    sub->add_option("--seed", opts.seed, "Base seed");
  };
  CLI::App* run = app.add_subcommand("run", "Run one configuration");
  CLI::App* eps = app.add_subcommand("ablate-epsilon", "Sweep the candidate threshold");
  CLI::App* del = app.add_subcommand("ablate-delta", "Sweep the exploration rate");
  CLI::App* sel = app.add_subcommand("ablate-selection", "Adaptive vs fixed start levels");
  CLI::App* rep = app.add_subcommand("report", "Tabulate every summary.json under --out");
  for (CLI::App* sub : {run, eps, del, sel}) add_run_options(sub);
  rep->add_option("--out", opts.out, "Directory holding earlier outputs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (rep->parsed()) {
      out << write_report(opts.out);
      return 0;
    }

    RunConfig config = load_config(opts.config, opts.sets);
    if (opts.episodes) config.episodes = *opts.episodes;
    if (opts.seed) {
      config.seed = *opts.seed;
    } else if (const char* env_seed = std::getenv("FALCON_SEED"); env_seed != nullptr) {
      try {
        config.seed = std::stoull(env_seed);
      } catch (const std::exception&) {
        throw ConfigError(std::string("FALCON_SEED: expected an unsigned integer, got '") +
                          env_seed + "'");
      }
    }
    if (!opts.out.empty()) config.out_dir = opts.out;
    try {
      config.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("invalid configuration: ") + e.what());
    }
    const std::filesystem::path dir = config.out_dir;

    if (run->parsed()) {
      const RunMetrics metrics = run_experiment(config);
      write_outputs(metrics, dir);
      const auto& a = metrics.aggregates;
      out << "episodes " << a.episodes << "  score " << short_fmt(a.score_mean) << " +- "
          << short_fmt(a.score_std) << "  nfe " << short_fmt(a.nfe_mean) << " +- "
          << short_fmt(a.nfe_std) << "  estimation " << short_fmt(a.estimation_mean) << '\n';
      return 0;
    }

    std::vector<AblationPoint> points;
    std::string parameter;
    if (eps->parsed()) {
      points = ablate_epsilon(config, dir);
      parameter = "epsilon";
    } else if (del->parsed()) {
      points = ablate_delta(config, dir);
      parameter = "delta";
    } else {
      points = ablate_selection(config, dir);
      parameter = "start_level";
    }
    write_ablation_csv(points, parameter, dir / "ablation.csv");
    for (const auto& p : points) {
      out << p.label << "  " << parameter << ' ' << short_fmt(p.value) << "  score "
          << short_fmt(p.aggregates.score_mean) << "  nfe "
          << short_fmt(p.aggregates.nfe_mean) << '\n';
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace falcon
