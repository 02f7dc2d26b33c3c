#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace falcon {

enum class ScheduleKind { kLinear, kCosine };
enum class SigmaRule { kPosterior, kBeta };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string to_string(ScheduleKind kind);

// Discrete noise schedule over levels 1..K. Level 0 is the clean sample with
// alpha_bar(0) = 1. Accessors take the 1-based level directly.
class NoiseSchedule {
 public:
  // Throws std::invalid_argument on an empty or out-of-range beta vector.
  static NoiseSchedule from_betas(std::vector<double> betas,
                                  ScheduleKind kind = ScheduleKind::kLinear,
                                  SigmaRule sigma_rule = SigmaRule::kPosterior);

  int levels() const { return static_cast<int>(betas_.size()); }
  ScheduleKind kind() const { return kind_; }

  double beta(int k) const { return betas_.at(k - 1); }
  double alpha(int k) const { return alphas_.at(k - 1); }
  double alpha_bar(int k) const { return k == 0 ? 1.0 : alpha_bars_.at(k - 1); }
  double sigma(int k) const { return sigmas_.at(k - 1); }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  const std::vector<double>& sigmas() const { return sigmas_; }

  nlohmann::json to_json() const;
  static NoiseSchedule from_json(const nlohmann::json& j);

 private:
  ScheduleKind kind_ = ScheduleKind::kLinear;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> sigmas_;
};

// Linear betas are the 1000-level DDPM range [1e-4, 0.02] rescaled by 1000/K.
// Cosine is the squared-cosine alpha_bar curve with offset 0.008, betas capped
// at 0.999.
NoiseSchedule build_schedule(ScheduleKind kind, int K,
                             SigmaRule sigma_rule = SigmaRule::kPosterior);

// Strictly decreasing solver levels [k_M, ..., k_1]; the terminal step always
// lands on level 0, which is not stored.
struct StepGrid {
  std::vector<int> levels;

  int steps() const { return static_cast<int>(levels.size()); }
  int max_level() const { return levels.front(); }
  // Level reached after leaving levels[i].
  int next_level(std::size_t i) const {
    return i + 1 < levels.size() ? levels[i + 1] : 0;
  }
  // Index of `level` in `levels`, or -1.
  int index_of(int level) const;
};

StepGrid make_step_grid(int K, int M);

}  // namespace falcon
