#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "falcon/bench.h"

namespace falcon {

std::vector<double> epsilon_grid();
std::vector<double> delta_grid();

struct AblationPoint {
  std::string label;
  double value = 0.0;
  Aggregates aggregates;
};

// Each sweep forces Falcon on and keeps every other field of `base`,
// including its seed, so grid points see the same episodes.
std::vector<AblationPoint> ablate_epsilon(const RunConfig& base,
                                          const std::filesystem::path& out_dir = {});
std::vector<AblationPoint> ablate_delta(const RunConfig& base,
                                        const std::filesystem::path& out_dir = {});
// Adaptive selection against fixed start levels K/2 and K/5.
std::vector<AblationPoint> ablate_selection(const RunConfig& base,
                                            const std::filesystem::path& out_dir = {});

void write_ablation_csv(const std::vector<AblationPoint>& points,
                        const std::string& parameter,
                        const std::filesystem::path& path);

// One row per summary.json found under `root`, sorted by path; written to
// root/report.csv and returned as text.
std::string write_report(const std::filesystem::path& root);

// Verbs: run, ablate-epsilon, ablate-delta, ablate-selection, report.
// Returns 0 on success, 2 on a usage error, 1 on any other failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace falcon
