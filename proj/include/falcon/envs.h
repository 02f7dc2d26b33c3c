#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "falcon/denoiser.h"
#include "falcon/samplers.h"

namespace falcon {

enum class EnvKind { kSmoothTrack, kBimodalPush, kJumpySwitch };

EnvKind parse_env_kind(std::string_view name);
std::string to_string(EnvKind kind);

// Synthetic point-agent tasks. Actions are per-step velocities in a 2-D plane
// (D_a = 2) integrated with unit timestep. Observation rows are
// [x, y, aux0, aux1] divided by `obs_scale` (D_o = 4).
struct EnvSpec {
  EnvKind kind = EnvKind::kSmoothTrack;
  int obs_horizon = 2;       // T_o
  int exec_horizon = 8;      // T_a
  int pred_horizon = 16;     // T_p
  int episode_length = 96;   // T, a multiple of T_a
  double success_radius = 0.2;
  double component_std = 0.02;
  double obs_scale = 10.0;
  double start_box = 0.05;   // half-width of the uniform start box

  // smooth_track: reference curve c(s) = (speed * s, amplitude * sin(2 pi s / period))
  double track_speed = 0.1;
  double track_amplitude = 0.8;
  double track_period = 48.0;

  // bimodal_push: goals at (+goal_distance, 0) and (-goal_distance, 0)
  double goal_distance = 3.0;
  double push_speed = 0.1;
  double commit_distance = 0.2;

  // jumpy_switch: targets in [-arena, arena]^2, re-drawn at decision
  // boundaries with probability switch_rate
  double arena = 5.0;
  double jump_speed = 0.8;
  double switch_rate = 0.7;
  double min_jump = 6.4;

  static constexpr int kActionDim = 2;
  static constexpr int kObsDim = 4;

  int decisions() const { return episode_length / exec_horizon; }
  void validate() const;
};

EnvSpec default_env_spec(EnvKind kind);

struct EnvState {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Eigen::Vector2d target = Eigen::Vector2d::Zero();  // jumpy_switch only
  int mode = -1;          // bimodal_push: -1 until committed, then 0 (+x) or 1 (-x)
  int t = 0;              // elapsed steps
  int switches = 0;
  std::vector<Eigen::RowVectorXd> history;  // one encoding per elapsed step, plus the initial one
  Rng rng;
};

EnvState reset(const EnvSpec& spec, std::uint64_t seed);

// Latest T_o encodings, repeating the initial encoding before enough steps
// have elapsed. The window's t is the 1-based decision step (elapsed + 1).
ObservationWindow observe(const EnvState& state, const EnvSpec& spec);

// Expert action distribution for the observed state.
ConditionalMixture expert_mixture(const EnvSpec& spec,
                                  const ObservationWindow& obs);

// Executes the first T_a rows of `actions` and applies the task events
// (commitment, target switches). Throws on non-finite actions.
EnvState step_execute(EnvState state, const Matrix& actions,
                      const EnvSpec& spec);

// Goal the score is measured against.
Eigen::Vector2d task_goal(const EnvState& state, const EnvSpec& spec);

// 1 when the episode finished within success_radius of its goal (and, for
// bimodal_push, committed to a mode); 0 otherwise. Throws before the episode
// is complete.
double score(const EnvState& final_state, const EnvSpec& spec);

// One (observation, clean chunk) pair per decision of closed-loop rollouts
// that execute a mixture mean, the component drawn by weight.
std::vector<TrainingSample> expert_dataset(const EnvSpec& spec, int episodes,
                                           std::uint64_t seed);

// Header "o_0_0,...,a_0_0,..." then one row per sample, %.17g.
void write_expert_csv(const std::vector<TrainingSample>& samples,
                      const std::filesystem::path& path);

}  // namespace falcon
