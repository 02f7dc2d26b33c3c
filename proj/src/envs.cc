#include "falcon/envs.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace falcon {

namespace {

Eigen::Vector2d track_point(const EnvSpec& spec, double s) {
  return {spec.track_speed * s,
          spec.track_amplitude * std::sin(2.0 * std::numbers::pi * s / spec.track_period)};
}

Eigen::Vector2d bimodal_goal(const EnvSpec& spec, int mode) {
  return {mode == 0 ? spec.goal_distance : -spec.goal_distance, 0.0};
}

Eigen::RowVectorXd encode(const EnvState& state, const EnvSpec& spec) {
  Eigen::RowVectorXd row(EnvSpec::kObsDim);
  double aux0 = 0.0;
  double aux1 = 0.0;
  switch (spec.kind) {
    case EnvKind::kSmoothTrack:
      break;
    case EnvKind::kBimodalPush:
      aux0 = state.mode == 1 ? -1.0 : (state.mode == 0 ? 1.0 : 0.0);
      aux1 = state.mode >= 0 ? 1.0 : 0.0;
      break;
    case EnvKind::kJumpySwitch:
      aux0 = state.target.x();
      aux1 = state.target.y();
      break;
  }
  row << state.position.x(), state.position.y(), aux0, aux1;
  return row / spec.obs_scale;
}

// Velocities that head straight for `target` at up to `speed` per step,
// rolled forward from `from` over `rows` steps.
Matrix roll_toward(const Eigen::Vector2d& from, const Eigen::Vector2d& target,
                   double speed, int rows) {
  Matrix out(rows, EnvSpec::kActionDim);
  Eigen::Vector2d q = from;
  for (int j = 0; j < rows; ++j) {
    const Eigen::Vector2d d = target - q;
    const double n = d.norm();
    const Eigen::Vector2d v =
        n > 0.0 ? Eigen::Vector2d(d / n * std::min(speed, n)) : Eigen::Vector2d::Zero();
    out.row(j) = v.transpose();
    q += v;
  }
  return out;
}

Eigen::Vector2d draw_target(const EnvSpec& spec, const Eigen::Vector2d& position,
                            const Eigen::Vector2d* heading, Rng& rng) {
  std::uniform_real_distribution<double> coord(-spec.arena, spec.arena);
  Eigen::Vector2d fallback = position;
  for (int attempt = 0; attempt < 4096; ++attempt) {
    const Eigen::Vector2d c(coord(rng), coord(rng));
    if ((c - position).norm() < spec.min_jump) continue;
    fallback = c;
    if (heading != nullptr && (c - position).dot(*heading) > 0.0) continue;
    return c;
  }
  return fallback;
}

}  // namespace

EnvKind parse_env_kind(std::string_view name) {
  if (name == "smooth_track") return EnvKind::kSmoothTrack;
  if (name == "bimodal_push") return EnvKind::kBimodalPush;
  if (name == "jumpy_switch") return EnvKind::kJumpySwitch;
  throw std::invalid_argument("unknown env '" + std::string(name) +
                              "' (smooth_track, bimodal_push or jumpy_switch)");
}

std::string to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::kSmoothTrack:
      return "smooth_track";
    case EnvKind::kBimodalPush:
      return "bimodal_push";
    case EnvKind::kJumpySwitch:
      return "jumpy_switch";
  }
  return "unknown";
}

void EnvSpec::validate() const {
  if (obs_horizon < 1) throw std::invalid_argument("env.T_o must be >= 1");
  if (exec_horizon < 1 || exec_horizon >= pred_horizon) {
    throw std::invalid_argument("env horizons need 1 <= T_a < T_p");
  }
  if (episode_length < exec_horizon || episode_length % exec_horizon != 0) {
    throw std::invalid_argument("env.episode_length must be a positive multiple of T_a");
  }
  if (!(success_radius > 0.0)) throw std::invalid_argument("env.success_radius must be > 0");
  if (!(component_std >= 0.0)) throw std::invalid_argument("env.component_std must be >= 0");
  if (!(obs_scale > 0.0)) throw std::invalid_argument("env.obs_scale must be > 0");
  if (!(track_period > 0.0)) throw std::invalid_argument("env.track_period must be > 0");
  if (!(switch_rate >= 0.0 && switch_rate <= 1.0)) {
    throw std::invalid_argument("env.switch_rate must lie in [0, 1]");
  }
}

EnvSpec default_env_spec(EnvKind kind) {
  EnvSpec spec;
  spec.kind = kind;
  if (kind == EnvKind::kJumpySwitch) spec.obs_scale = 5.0;
  if (kind == EnvKind::kBimodalPush) spec.obs_scale = 3.0;
  return spec;
}

EnvState reset(const EnvSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), 0xe57u};
  EnvState state;
  state.rng = Rng(seq);
  std::uniform_real_distribution<double> box(-spec.start_box, spec.start_box);
  state.position = Eigen::Vector2d(box(state.rng), box(state.rng));
  if (spec.kind == EnvKind::kJumpySwitch) {
    state.target = draw_target(spec, state.position, nullptr, state.rng);
  }
  state.history.push_back(encode(state, spec));
  return state;
}

ObservationWindow observe(const EnvState& state, const EnvSpec& spec) {
  ObservationWindow obs;
  obs.values.resize(spec.obs_horizon, EnvSpec::kObsDim);
  const int newest = static_cast<int>(state.history.size()) - 1;
  for (int r = 0; r < spec.obs_horizon; ++r) {
    const int idx = std::max(0, newest - (spec.obs_horizon - 1 - r));
    obs.values.row(r) = state.history[static_cast<std::size_t>(idx)];
  }
  obs.t = state.t + 1;
  return obs;
}

ConditionalMixture expert_mixture(const EnvSpec& spec,
                                  const ObservationWindow& obs) {
  const Eigen::RowVectorXd last = obs.values.bottomRows(1) * spec.obs_scale;
  const Eigen::Vector2d p(last(0), last(1));
  const int rows = spec.pred_horizon;
  ConditionalMixture mix;
  mix.component_std = spec.component_std;
  switch (spec.kind) {
    case EnvKind::kSmoothTrack: {
      const int s = obs.t - 1;
      const Eigen::Vector2d correction =
          (track_point(spec, s) - p) / spec.exec_horizon;
      Matrix mean(rows, EnvSpec::kActionDim);
      for (int j = 0; j < rows; ++j) {
        Eigen::Vector2d v = track_point(spec, s + j + 1) - track_point(spec, s + j);
        if (j < spec.exec_horizon) v += correction;
        mean.row(j) = v.transpose();
      }
      mix.weights = {1.0};
      mix.means = {std::move(mean)};
      break;
    }
    case EnvKind::kBimodalPush: {
      const bool committed = std::lround(last(3)) == 1;
      if (committed) {
        const int mode = last(2) > 0.0 ? 0 : 1;
        mix.weights = {1.0};
        mix.means = {roll_toward(p, bimodal_goal(spec, mode), spec.push_speed, rows)};
      } else {
        mix.weights = {0.5, 0.5};
        mix.means = {roll_toward(p, bimodal_goal(spec, 0), spec.push_speed, rows),
                     roll_toward(p, bimodal_goal(spec, 1), spec.push_speed, rows)};
      }
      break;
    }
    case EnvKind::kJumpySwitch: {
      const Eigen::Vector2d target(last(2), last(3));
      mix.weights = {1.0};
      mix.means = {roll_toward(p, target, spec.jump_speed, rows)};
      break;
    }
  }
  return mix;
}

EnvState step_execute(EnvState state, const Matrix& actions,
                      const EnvSpec& spec) {
  if (actions.rows() < spec.exec_horizon || actions.cols() != EnvSpec::kActionDim) {
    throw std::invalid_argument("step_execute: need at least T_a rows of 2-D actions");
  }
  if (state.t + spec.exec_horizon > spec.episode_length) {
    throw std::invalid_argument("step_execute: episode already complete");
  }
  const Matrix executed = actions.topRows(spec.exec_horizon);
  if (!executed.allFinite()) throw std::invalid_argument("step_execute: non-finite action");
  for (int j = 0; j < spec.exec_horizon; ++j) {
    state.position += executed.row(j).transpose();
    ++state.t;
    state.history.push_back(encode(state, spec));
  }

  if (spec.kind == EnvKind::kBimodalPush && state.mode < 0 &&
      std::abs(state.position.x()) >= spec.commit_distance) {
    state.mode = state.position.x() > 0.0 ? 0 : 1;
    state.history.back() = encode(state, spec);
  }
  if (spec.kind == EnvKind::kJumpySwitch) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const bool coin = unit(state.rng) < spec.switch_rate;
    const bool room = spec.episode_length - state.t >= 3 * spec.exec_horizon;
    if (coin && room) {
      const Eigen::Vector2d to_target = state.target - state.position;
      const bool moving = to_target.norm() > 1e-9;
      state.target = draw_target(spec, state.position, moving ? &to_target : nullptr,
                                 state.rng);
      ++state.switches;
      state.history.back() = encode(state, spec);
    }
  }
  return state;
}

Eigen::Vector2d task_goal(const EnvState& state, const EnvSpec& spec) {
  switch (spec.kind) {
    case EnvKind::kSmoothTrack:
      return track_point(spec, spec.episode_length);
    case EnvKind::kBimodalPush:
      return bimodal_goal(spec, state.mode < 0 ? 0 : state.mode);
    case EnvKind::kJumpySwitch:
      return state.target;
  }
  return Eigen::Vector2d::Zero();
}

double score(const EnvState& final_state, const EnvSpec& spec) {
  if (final_state.t != spec.episode_length) {
    throw std::invalid_argument("score: episode incomplete (t=" +
                                std::to_string(final_state.t) + ")");
  }
  if (spec.kind == EnvKind::kBimodalPush && final_state.mode < 0) return 0.0;
  const double dist = (final_state.position - task_goal(final_state, spec)).norm();
  return dist < spec.success_radius ? 1.0 : 0.0;
}

std::vector<TrainingSample> expert_dataset(const EnvSpec& spec, int episodes,
                                           std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("expert dataset: need episodes >= 1");
  std::vector<TrainingSample> out;
  for (int e = 0; e < episodes; ++e) {
    EnvState state = reset(spec, seed + static_cast<std::uint64_t>(e));
    Rng pick(seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(e + 1)));
    for (int i = 0; i < spec.decisions(); ++i) {
      ObservationWindow obs = observe(state, spec);
      const ConditionalMixture mix = expert_mixture(spec, obs);
      std::discrete_distribution<std::size_t> which(mix.weights.begin(), mix.weights.end());
      const Matrix& chunk = mix.means[which(pick)];
      state = step_execute(std::move(state), chunk, spec);
      out.push_back({std::move(obs), chunk});
    }
  }
  return out;
}

void write_expert_csv(const std::vector<TrainingSample>& samples,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  if (!samples.empty()) {
    const Matrix& o = samples.front().obs.values;
    const Matrix& a = samples.front().clean;
    std::string header;
    for (Eigen::Index r = 0; r < o.rows(); ++r)
      for (Eigen::Index c = 0; c < o.cols(); ++c)
        header += "o_" + std::to_string(r) + "_" + std::to_string(c) + ",";
    for (Eigen::Index r = 0; r < a.rows(); ++r)
      for (Eigen::Index c = 0; c < a.cols(); ++c)
        header += "a_" + std::to_string(r) + "_" + std::to_string(c) + ",";
    header.back() = '\n';
    out << header;
  }
  char buf[32];
  for (const auto& s : samples) {
    std::string row;
    for (const Matrix* m : {&s.obs.values, &s.clean}) {
      for (Eigen::Index r = 0; r < m->rows(); ++r) {
        for (Eigen::Index c = 0; c < m->cols(); ++c) {
          std::snprintf(buf, sizeof(buf), "%.17g,", (*m)(r, c));
          row += buf;
        }
      }
    }
    row.back() = '\n';
    out << row;
  }
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace falcon
