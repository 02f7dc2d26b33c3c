#pragma once

#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "falcon/denoiser.h"
#include "falcon/schedule.h"

namespace falcon {

using Rng = std::mt19937_64;

enum class SamplerKind { kDdpm, kDdim, kDpmSolver };

SamplerKind parse_sampler_kind(std::string_view name);
std::string to_string(SamplerKind kind);

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Fresh N(0, I) chunk at level K.
ActionChunk gaussian_start(Eigen::Index rows, Eigen::Index cols, int K,
                           Rng& rng);

// log(sqrt(ab) / sqrt(1 - ab)); throws for ab outside (0, 1).
double log_snr(double alpha_bar);

// Ancestral step k -> k-1. Draws noise from `rng` only when k > 1.
ActionChunk ddpm_step(const NoiseSchedule& schedule, const Denoiser& denoiser,
                      const ObservationWindow& obs, const ActionChunk& a_k,
                      Rng& rng);

// Implicit step k -> target using cumulative alpha_bar at both levels.
// `sigma` > 0 adds sigma * z from `rng`, which must then be non-null.
ActionChunk ddim_step(const NoiseSchedule& schedule, const Denoiser& denoiser,
                      const ObservationWindow& obs, const ActionChunk& a_k,
                      int target, double sigma = 0.0, Rng* rng = nullptr);

// First-order exponential-integrator step k -> target in log-SNR. A target of
// level 0 uses the finite limit of sigma'(e^h - 1) as sigma' -> 0.
ActionChunk dpmsolver_step(const NoiseSchedule& schedule,
                           const Denoiser& denoiser,
                           const ObservationWindow& obs, const ActionChunk& a_k,
                           int target);

struct ChainResult {
  ActionChunk final;
  std::vector<ActionChunk> trajectory;  // chunk entering each executed step
  int nfe = 0;
};

using ChainSink = std::function<void(const ActionChunk&)>;

// Steps `start` down the grid to level 0. The sink sees each chunk before it is
// stepped. DDPM requires a grid of consecutive levels.
ChainResult run_chain(SamplerKind kind, const NoiseSchedule& schedule,
                      const StepGrid& grid, const Denoiser& denoiser,
                      const ObservationWindow& obs, const ActionChunk& start,
                      Rng& rng, const ChainSink& sink = {});

}  // namespace falcon
