#include "falcon/schedule.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace falcon {

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "cosine") return ScheduleKind::kCosine;
  throw std::invalid_argument("unknown schedule kind '" + std::string(name) +
                              "' (expected linear or cosine)");
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kLinear ? "linear" : "cosine";
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas,
                                        ScheduleKind kind,
                                        SigmaRule sigma_rule) {
  if (betas.empty()) {
    throw std::invalid_argument("noise schedule needs at least one level");
  }
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) {
      throw std::invalid_argument("beta outside (0, 1): " + std::to_string(b));
    }
  }
  NoiseSchedule s;
  s.kind_ = kind;
  s.betas_ = std::move(betas);
  const std::size_t n = s.betas_.size();
  s.alphas_.resize(n);
  s.alpha_bars_.resize(n);
  s.sigmas_.resize(n);
  double prod = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    s.alphas_[i] = 1.0 - s.betas_[i];
    prod *= s.alphas_[i];
    s.alpha_bars_[i] = prod;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (sigma_rule == SigmaRule::kBeta) {
      s.sigmas_[i] = std::sqrt(s.betas_[i]);
    } else {
      s.sigmas_[i] = i == 0 ? 0.0
                            : std::sqrt(s.betas_[i] * (1.0 - s.alpha_bars_[i - 1]) /
                                        (1.0 - s.alpha_bars_[i]));
    }
  }
  return s;
}

nlohmann::json NoiseSchedule::to_json() const {
  return {{"kind", to_string(kind_)}, {"K", levels()}, {"betas", betas_}};
}

NoiseSchedule NoiseSchedule::from_json(const nlohmann::json& j) {
  auto betas = j.at("betas").get<std::vector<double>>();
  if (j.at("K").get<int>() != static_cast<int>(betas.size())) {
    throw std::invalid_argument("schedule JSON: K does not match betas length");
  }
  return from_betas(std::move(betas),
                    parse_schedule_kind(j.at("kind").get<std::string>()));
}

NoiseSchedule build_schedule(ScheduleKind kind, int K, SigmaRule sigma_rule) {
  if (K < 1) throw std::invalid_argument("schedule needs K >= 1");
  std::vector<double> betas(static_cast<std::size_t>(K));
  if (kind == ScheduleKind::kLinear) {
    const double scale = 1000.0 / K;
    const double lo = std::min(1e-4 * scale, 0.999);
    const double hi = std::min(0.02 * scale, 0.999);
    for (int i = 0; i < K; ++i) {
      betas[i] = K == 1 ? lo : lo + (hi - lo) * i / (K - 1);
    }
  } else {
    constexpr double kOffset = 0.008;
    auto f = [&](double u) {
      const double c = std::cos((u + kOffset) / (1.0 + kOffset) *
                                std::numbers::pi / 2.0);
      return c * c;
    };
    for (int i = 0; i < K; ++i) {
      const double ratio = f(static_cast<double>(i + 1) / K) /
                           f(static_cast<double>(i) / K);
      betas[i] = std::min(1.0 - ratio, 0.999);
    }
  }
  return NoiseSchedule::from_betas(std::move(betas), kind, sigma_rule);
}

int StepGrid::index_of(int level) const {
  auto it = std::find(levels.begin(), levels.end(), level);
  return it == levels.end() ? -1 : static_cast<int>(it - levels.begin());
}

StepGrid make_step_grid(int K, int M) {
  if (K < 1 || M < 1) throw std::invalid_argument("step grid needs K, M >= 1");
  if (M > K) {
    throw std::invalid_argument("step grid: M=" + std::to_string(M) +
                                " exceeds K=" + std::to_string(K));
  }
  StepGrid grid;
  grid.levels.reserve(static_cast<std::size_t>(M));
  for (long i = M; i >= 1; --i) {
    // round-half-up of i*K/M in integer arithmetic
    const int k = static_cast<int>((2L * i * K + M) / (2L * M));
    if (grid.levels.empty() || grid.levels.back() != k) grid.levels.push_back(k);
  }
  return grid;
}

}  // namespace falcon
