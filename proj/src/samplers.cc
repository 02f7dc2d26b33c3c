#include "falcon/samplers.h"

#include <cmath>
#include <stdexcept>

namespace falcon {

namespace {

void require_finite(const Matrix& m, const char* who) {
  if (!m.allFinite()) {
    throw std::runtime_error(std::string(who) + ": non-finite output");
  }
}

void require_descending(const NoiseSchedule& schedule, int from, int to,
                        const char* who) {
  if (to >= from || to < 0 || from > schedule.levels()) {
    throw std::invalid_argument(std::string(who) + ": cannot step from level " +
                                std::to_string(from) + " to " +
                                std::to_string(to));
  }
}

}  // namespace

SamplerKind parse_sampler_kind(std::string_view name) {
  if (name == "ddpm") return SamplerKind::kDdpm;
  if (name == "ddim") return SamplerKind::kDdim;
  if (name == "dpmsolver") return SamplerKind::kDpmSolver;
  throw std::invalid_argument("unknown sampler '" + std::string(name) +
                              "' (expected ddpm, ddim or dpmsolver)");
}

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::kDdpm:
      return "ddpm";
    case SamplerKind::kDdim:
      return "ddim";
    case SamplerKind::kDpmSolver:
      return "dpmsolver";
  }
  return "unknown";
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  return m;
}

ActionChunk gaussian_start(Eigen::Index rows, Eigen::Index cols, int K,
                           Rng& rng) {
  return ActionChunk{standard_normal(rows, cols, rng), K};
}

double log_snr(double alpha_bar) {
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0)) {
    throw std::invalid_argument("log-SNR undefined for alpha_bar " +
                                std::to_string(alpha_bar));
  }
  return 0.5 * std::log(alpha_bar / (1.0 - alpha_bar));
}

ActionChunk ddpm_step(const NoiseSchedule& schedule, const Denoiser& denoiser,
                      const ObservationWindow& obs, const ActionChunk& a_k,
                      Rng& rng) {
  const int k = a_k.level;
  require_descending(schedule, k, k - 1, "ddpm_step");
  const double alpha = schedule.alpha(k);
  const double coeff = (1.0 - alpha) / std::sqrt(1.0 - schedule.alpha_bar(k));
  const Matrix eps = denoiser.epsilon(obs, a_k.values, k);
  Matrix next = (a_k.values - coeff * eps) / std::sqrt(alpha);
  if (k > 1) {
    next += schedule.sigma(k) *
            standard_normal(a_k.values.rows(), a_k.values.cols(), rng);
  }
  require_finite(next, "ddpm_step");
  return ActionChunk{std::move(next), k - 1};
}

ActionChunk ddim_step(const NoiseSchedule& schedule, const Denoiser& denoiser,
                      const ObservationWindow& obs, const ActionChunk& a_k,
                      int target, double sigma, Rng* rng) {
  const int k = a_k.level;
  require_descending(schedule, k, target, "ddim_step");
  if (sigma < 0.0) throw std::invalid_argument("ddim_step: sigma < 0");
  const double ab = schedule.alpha_bar(k);
  const double ab_next = schedule.alpha_bar(target);
  const double direction_var = 1.0 - ab_next - sigma * sigma;
  if (direction_var < 0.0) {
    throw std::invalid_argument("ddim_step: sigma^2 exceeds 1 - alpha_bar at target");
  }
  const Matrix eps = denoiser.epsilon(obs, a_k.values, k);
  const Matrix clean = (a_k.values - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
  Matrix next = std::sqrt(ab_next) * clean + std::sqrt(direction_var) * eps;
  if (sigma > 0.0) {
    if (rng == nullptr) throw std::invalid_argument("ddim_step: sigma > 0 needs an rng");
    next += sigma * standard_normal(a_k.values.rows(), a_k.values.cols(), *rng);
  }
  require_finite(next, "ddim_step");
  return ActionChunk{std::move(next), target};
}

ActionChunk dpmsolver_step(const NoiseSchedule& schedule,
                           const Denoiser& denoiser,
                           const ObservationWindow& obs, const ActionChunk& a_k,
                           int target) {
  const int k = a_k.level;
  require_descending(schedule, k, target, "dpmsolver_step");
  const double ab = schedule.alpha_bar(k);
  const double ab_next = schedule.alpha_bar(target);
  const double lambda = log_snr(ab);
  const double alpha = std::sqrt(ab);
  const double alpha_next = std::sqrt(ab_next);
  const double sigma = std::sqrt(1.0 - ab);
  double eps_coeff = 0.0;
  if (target == 0) {
    // sigma' (e^h - 1) -> alpha' sigma / alpha as sigma' -> 0
    eps_coeff = alpha_next * sigma / alpha;
  } else {
    const double h = log_snr(ab_next) - lambda;
    eps_coeff = std::sqrt(1.0 - ab_next) * std::expm1(h);
  }
  const Matrix eps = denoiser.epsilon(obs, a_k.values, k);
  Matrix next = (alpha_next / alpha) * a_k.values - eps_coeff * eps;
  require_finite(next, "dpmsolver_step");
  return ActionChunk{std::move(next), target};
}

ChainResult run_chain(SamplerKind kind, const NoiseSchedule& schedule,
                      const StepGrid& grid, const Denoiser& denoiser,
                      const ObservationWindow& obs, const ActionChunk& start,
                      Rng& rng, const ChainSink& sink) {
  const int first = grid.index_of(start.level);
  if (first < 0) {
    throw std::invalid_argument("run_chain: start level " +
                                std::to_string(start.level) +
                                " is not on the step grid");
  }
  ChainResult result;
  ActionChunk current = start;
  for (std::size_t i = static_cast<std::size_t>(first); i < grid.levels.size(); ++i) {
    if (sink) sink(current);
    result.trajectory.push_back(current);
    const int target = grid.next_level(i);
    switch (kind) {
      case SamplerKind::kDdpm:
        if (target != current.level - 1) {
          throw std::invalid_argument("run_chain: ddpm needs consecutive grid levels");
        }
        current = ddpm_step(schedule, denoiser, obs, current, rng);
        break;
      case SamplerKind::kDdim:
        current = ddim_step(schedule, denoiser, obs, current, target);
        break;
      case SamplerKind::kDpmSolver:
        current = dpmsolver_step(schedule, denoiser, obs, current, target);
        break;
    }
    ++result.nfe;
  }
  result.final = std::move(current);
  return result;
}

}  // namespace falcon
