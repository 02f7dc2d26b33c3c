#include "falcon/falcon.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace falcon {

LatentBuffer::LatentBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("latent buffer capacity must be >= 1");
  entries_.reserve(capacity + 1);
  sequence_.reserve(capacity + 1);
}

void LatentBuffer::insert(PartialAction entry) {
  if (entry.origin < 1 || entry.level < 1) {
    throw std::invalid_argument("latent buffer: entry needs origin >= 1 and level >= 1");
  }
  if (!entry.values.allFinite()) {
    throw std::invalid_argument("latent buffer: non-finite entry");
  }
  entries_.push_back(std::move(entry));
  sequence_.push_back(next_sequence_++);
  if (entries_.size() <= capacity_) return;

  std::size_t victim = 0;
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = entries_[victim];
    if (a.origin != b.origin) {
      if (a.origin < b.origin) victim = i;
    } else if (a.level != b.level) {
      if (a.level > b.level) victim = i;
    } else if (sequence_[i] < sequence_[victim]) {
      victim = i;
    }
  }
  entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(victim));
  sequence_.erase(sequence_.begin() + static_cast<std::ptrdiff_t>(victim));
}

DistanceNorm parse_distance_norm(std::string_view name) {
  if (name == "rms") return DistanceNorm::kRms;
  if (name == "l2") return DistanceNorm::kL2;
  throw std::invalid_argument("unknown distance '" + std::string(name) + "' (rms or l2)");
}

Alignment parse_alignment(std::string_view name) {
  if (name == "shifted") return Alignment::kShifted;
  if (name == "wallclock") return Alignment::kWallClock;
  throw std::invalid_argument("unknown alignment '" + std::string(name) +
                              "' (shifted or wallclock)");
}

SelectionMode parse_selection_mode(std::string_view name) {
  if (name == "adaptive") return SelectionMode::kAdaptive;
  if (name == "fixed") return SelectionMode::kFixedLevel;
  throw std::invalid_argument("unknown selection '" + std::string(name) +
                              "' (adaptive or fixed)");
}

std::string to_string(DistanceNorm v) { return v == DistanceNorm::kRms ? "rms" : "l2"; }
std::string to_string(Alignment v) {
  return v == Alignment::kShifted ? "shifted" : "wallclock";
}
std::string to_string(SelectionMode v) {
  return v == SelectionMode::kAdaptive ? "adaptive" : "fixed";
}

void FalconConfig::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("falcon.epsilon must be > 0");
  if (!(delta >= 0.0 && delta <= 1.0)) {
    throw std::invalid_argument("falcon.delta must lie in [0, 1]");
  }
  if (!(kappa > 0.0)) throw std::invalid_argument("falcon.kappa must be > 0");
  if (k_min < 1) throw std::invalid_argument("falcon.k_min must be >= 1");
  if (capacity < 1) throw std::invalid_argument("falcon.capacity must be >= 1");
  if (fixed_level < 1) throw std::invalid_argument("falcon.fixed_level must be >= 1");
}

ReferenceAction make_reference(const ActionChunk& previous, int previous_t,
                               const Horizons& h) {
  if (h.execute < 1 || h.execute >= h.predict) {
    throw std::invalid_argument("reference action needs 1 <= T_a < T_p");
  }
  if (previous.values.rows() != h.predict) {
    throw std::invalid_argument("reference action: previous chunk is not T_p rows");
  }
  return ReferenceAction{previous.values.bottomRows(h.predict - h.execute),
                         previous_t + h.execute};
}

std::optional<OverlapWindow> overlap_window(const PartialAction& p, int t,
                                            const Horizons& h,
                                            Alignment alignment) {
  const int tail = h.predict - h.execute;
  if (alignment == Alignment::kShifted) return OverlapWindow{0, 0, tail};
  const int lo = std::max(p.origin, t);
  const int hi = std::min(p.origin + h.predict, t + tail);
  if (hi <= lo) return std::nullopt;
  return OverlapWindow{lo - p.origin, lo - t, hi - lo};
}

Matrix tweedie_estimate(const NoiseSchedule& schedule, const Denoiser& denoiser,
                        const ObservationWindow& obs, const PartialAction& p,
                        const OverlapWindow& window) {
  const double ab = schedule.alpha_bar(p.level);
  const Matrix eps = denoiser.epsilon(obs, p.values, p.level);
  const Matrix clean = (p.values - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
  return clean.middleRows(window.candidate_row, window.rows);
}

EstimationPass estimate_buffer(const NoiseSchedule& schedule,
                               const Denoiser& denoiser,
                               const ObservationWindow& obs,
                               const LatentBuffer& buffer, const Horizons& h,
                               Alignment alignment) {
  EstimationPass pass;
  pass.estimates.resize(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const auto window = overlap_window(buffer[i], obs.t, h, alignment);
    if (!window) continue;
    pass.estimates[i] =
        Estimate{tweedie_estimate(schedule, denoiser, obs, buffer[i], *window), *window};
    ++pass.evaluations;
  }
  return pass;
}

double overlap_distance(const Matrix& estimate, const Matrix& reference,
                        DistanceNorm norm) {
  const double l2 = (estimate - reference).norm();
  if (norm == DistanceNorm::kL2) return l2;
  return l2 / std::sqrt(static_cast<double>(estimate.size()));
}

std::vector<std::size_t> build_candidate_set(
    const LatentBuffer& buffer, const std::vector<std::optional<Estimate>>& estimates,
    const ReferenceAction& reference, const FalconConfig& cfg) {
  if (estimates.size() != buffer.size()) {
    throw std::invalid_argument("candidate set: estimates not aligned with buffer");
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    if (!estimates[i] || buffer[i].level < cfg.k_min) continue;
    const auto& est = *estimates[i];
    const Matrix ref = reference.values.middleRows(est.window.reference_row,
                                                   est.window.rows);
    if (overlap_distance(est.rows, ref, cfg.distance) < cfg.epsilon) out.push_back(i);
  }
  return out;
}

StartChoice select_start(const std::vector<int>& candidate_levels,
                         const FalconConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double coin = unit(rng);
  if (coin < cfg.delta || candidate_levels.empty()) return StartChoice{};

  const int lowest = *std::min_element(candidate_levels.begin(), candidate_levels.end());
  std::vector<double> weights(candidate_levels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] = std::exp(-(candidate_levels[i] - lowest) / cfg.kappa);
    total += weights[i];
  }
  double draw = unit(rng) * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    draw -= weights[i];
    if (draw < 0.0) return StartChoice{false, i};
  }
  return StartChoice{false, weights.size() - 1};
}

DecisionStreams decision_streams(std::uint64_t episode_seed, int decision) {
  const auto lo = static_cast<std::uint32_t>(episode_seed & 0xffffffffu);
  const auto hi = static_cast<std::uint32_t>(episode_seed >> 32);
  const auto d = static_cast<std::uint32_t>(decision);
  std::seed_seq chain_seq{lo, hi, d, 1u};
  std::seed_seq selection_seq{lo, hi, d, 2u};
  return DecisionStreams{Rng(chain_seq), Rng(selection_seq)};
}

namespace {

void check_observation(const DecisionContext& ctx, const ObservationWindow& obs) {
  if (obs.t < 1) throw std::invalid_argument("decision step must be >= 1");
  if (ctx.grid.max_level() != ctx.schedule.levels()) {
    throw std::invalid_argument("step grid must start at level K");
  }
}

// Buffer entries nearest to the fixed level, newest origin first on ties.
std::vector<std::size_t> fixed_level_candidates(const LatentBuffer& buffer,
                                                int level) {
  std::vector<std::size_t> out;
  int best_gap = std::numeric_limits<int>::max();
  int best_origin = 0;
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const int gap = std::abs(buffer[i].level - level);
    if (gap < best_gap || (gap == best_gap && buffer[i].origin > best_origin)) {
      best_gap = gap;
      best_origin = buffer[i].origin;
      out.assign(1, i);
    }
  }
  return out;
}

}  // namespace

DecisionResult baseline_decide(const DecisionContext& ctx,
                               const ObservationWindow& obs,
                               DecisionStreams& streams) {
  check_observation(ctx, obs);
  const ActionChunk start = gaussian_start(ctx.horizons.predict, ctx.action_dim,
                                           ctx.grid.max_level(), streams.chain);
  ChainResult chain = run_chain(ctx.kind, ctx.schedule, ctx.grid, ctx.denoiser,
                                obs, start, streams.chain);
  DecisionResult result;
  result.chunk = std::move(chain.final);
  result.start_level = start.level;
  result.nfe_sequential = chain.nfe;
  return result;
}

DecisionResult falcon_decide(const DecisionContext& ctx,
                             const ObservationWindow& obs, FalconState& state,
                             const FalconConfig& cfg, DecisionStreams& streams) {
  check_observation(ctx, obs);
  const int t = obs.t;
  DecisionResult result;
  std::optional<ActionChunk> start;

  if (state.previous) {
    const ReferenceAction reference =
        make_reference(*state.previous, state.previous_t, ctx.horizons);
    const EstimationPass pass = estimate_buffer(ctx.schedule, ctx.denoiser, obs,
                                                state.buffer, ctx.horizons,
                                                cfg.alignment);
    result.estimation_batch = pass.evaluations;
    const std::vector<std::size_t> candidates =
        cfg.selection == SelectionMode::kAdaptive
            ? build_candidate_set(state.buffer, pass.estimates, reference, cfg)
            : fixed_level_candidates(state.buffer, cfg.fixed_level);
    result.candidates = static_cast<int>(candidates.size());
    std::vector<int> levels;
    levels.reserve(candidates.size());
    for (std::size_t i : candidates) levels.push_back(state.buffer[i].level);
    const StartChoice choice = select_start(levels, cfg, streams.selection);
    if (!choice.gaussian) {
      const PartialAction& entry = state.buffer[candidates[choice.candidate]];
      // reused verbatim as the chunk for step t
      start = ActionChunk{entry.values, entry.level};
      result.explored = false;
      result.start_origin = entry.origin;
    }
  }
  if (!start) {
    start = gaussian_start(ctx.horizons.predict, ctx.action_dim,
                           ctx.grid.max_level(), streams.chain);
  }
  result.start_level = start->level;

  ChainResult chain = run_chain(
      ctx.kind, ctx.schedule, ctx.grid, ctx.denoiser, obs, *start, streams.chain,
      [&](const ActionChunk& chunk) {
        state.buffer.insert(PartialAction{t, chunk.level, chunk.values});
      });
  result.nfe_sequential = chain.nfe;
  result.chunk = std::move(chain.final);
  state.previous = result.chunk;
  state.previous_t = t;
  return result;
}

}  // namespace falcon
