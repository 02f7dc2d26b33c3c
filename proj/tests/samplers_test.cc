#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "falcon/samplers.h"

namespace falcon {
namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

const ObservationWindow kObs{Matrix::Zero(1, 1), 1};

AnalyticDenoiser mixture_denoiser(ConditionalMixture mix, const NoiseSchedule& s) {
  return AnalyticDenoiser([mix](const ObservationWindow&) { return mix; }, s);
}

TEST(SamplerKind, Names) {
  for (auto k : {SamplerKind::kDdpm, SamplerKind::kDdim, SamplerKind::kDpmSolver}) {
    EXPECT_EQ(parse_sampler_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_sampler_kind("euler"), std::invalid_argument);
}

TEST(DdpmStep, ZeroEpsilonDividesBySqrtAlpha) {
  const auto s = NoiseSchedule::from_betas({0.19});
  Rng rng(0);
  const auto out = ddpm_step(s, ZeroDenoiser{}, kObs, {scalar(0.9), 1}, rng);
  EXPECT_EQ(out.level, 0);
  EXPECT_NEAR(out.values(0, 0), 1.0, 1e-15);
}

TEST(DdpmStep, LastStepDrawsNoNoise) {
  const auto s = NoiseSchedule::from_betas({0.1, 0.2});
  Rng a(1), b(1);
  ddpm_step(s, ZeroDenoiser{}, kObs, {scalar(0.3), 1}, a);
  EXPECT_EQ(a(), b());
}

TEST(DdpmChain, PointMassConvergesAndCountsK) {
  const int K = 100;
  const auto s = build_schedule(ScheduleKind::kCosine, K);
  const Matrix mu = (Matrix(2, 2) << 0.3, -1.2, 2.0, 0.05).finished();
  const auto den = mixture_denoiser({{1.0}, {mu}, 0.0}, s);
  CountingDenoiser counting(den);
  Rng rng(4);
  const auto grid = make_step_grid(K, K);
  const auto chain =
      run_chain(SamplerKind::kDdpm, s, grid, counting, kObs, gaussian_start(2, 2, K, rng), rng);
  EXPECT_EQ(chain.nfe, K);
  EXPECT_EQ(counting.calls(), K);
  EXPECT_EQ(chain.final.level, 0);
  EXPECT_LT((chain.final.values - mu).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(DdimStep, ZeroEpsilonRescales) {
  const auto s = NoiseSchedule::from_betas({0.1, 0.2});
  const auto out = ddim_step(s, ZeroDenoiser{}, kObs, {scalar(1.0), 2}, 1);
  EXPECT_EQ(out.level, 1);
  EXPECT_NEAR(out.values(0, 0), std::sqrt(0.9 / 0.72), 1e-15);
  EXPECT_NEAR(out.values(0, 0), 1.11803, 1e-5);
  EXPECT_THROW(ddim_step(s, ZeroDenoiser{}, kObs, {scalar(1.0), 1}, 1), std::invalid_argument);
  EXPECT_THROW(ddim_step(s, ZeroDenoiser{}, kObs, {scalar(1.0), 2}, 1, 0.1),
               std::invalid_argument);
}

TEST(DdimStep, Deterministic) {
  const auto s = build_schedule(ScheduleKind::kCosine, 30);
  const auto den = mixture_denoiser({{0.3, 0.7}, {scalar(-1.0), scalar(1.0)}, 0.2}, s);
  const auto x = ddim_step(s, den, kObs, {scalar(0.4), 30}, 12);
  const auto y = ddim_step(s, den, kObs, {scalar(0.4), 30}, 12);
  EXPECT_EQ(x.values(0, 0), y.values(0, 0));
}

TEST(DpmSolverStep, ZeroEpsilonRescales) {
  const auto s = NoiseSchedule::from_betas({0.1, 0.2});
  const auto out = dpmsolver_step(s, ZeroDenoiser{}, kObs, {scalar(1.0), 2}, 1);
  EXPECT_NEAR(out.values(0, 0), std::sqrt(0.9 / 0.72), 1e-15);
  EXPECT_THROW(dpmsolver_step(s, ZeroDenoiser{}, kObs, {scalar(1.0), 1}, 2),
               std::invalid_argument);
}

TEST(DpmSolverStep, LogSnrValues) {
  EXPECT_NEAR(log_snr(0.9), 0.5 * std::log(9.0), 1e-15);
  EXPECT_NEAR(log_snr(0.9), 1.09861, 1e-5);
  EXPECT_NEAR(log_snr(0.72), 0.5 * std::log(0.72 / 0.28), 1e-15);
  // direct evaluation gives 0.472231 and h = 0.626381
  EXPECT_NEAR(log_snr(0.72), 0.47231, 1e-4);
  EXPECT_NEAR(log_snr(0.9) - log_snr(0.72), 0.62630, 1e-4);
  EXPECT_THROW(log_snr(1.0), std::invalid_argument);
  EXPECT_THROW(log_snr(0.0), std::invalid_argument);
}

TEST(DpmSolverStep, MatchesExponentialIntegratorForm) {
  const auto s = NoiseSchedule::from_betas({0.1, 0.2});
  const auto den = mixture_denoiser({{1.0}, {scalar(0.5)}, 0.3}, s);
  const double a = 0.8;
  const double eps = den.epsilon(kObs, scalar(a), 2)(0, 0);
  const double h = log_snr(0.9) - log_snr(0.72);
  const double expect =
      std::sqrt(0.9 / 0.72) * a - std::sqrt(0.1) * (std::exp(h) - 1.0) * eps;
  const auto out = dpmsolver_step(s, den, kObs, {scalar(a), 2}, 1);
  EXPECT_NEAR(out.values(0, 0), expect, 1e-14);
}

TEST(FewStepChains, PointMass) {
  const int K = 100;
  const auto s = build_schedule(ScheduleKind::kCosine, K);
  const Matrix mu = (Matrix(3, 2) << 1.0, -0.5, 0.25, 0.0, -2.0, 0.7).finished();
  const auto den = mixture_denoiser({{1.0}, {mu}, 0.0}, s);
  const auto grid = make_step_grid(K, 16);
  Rng rng(9);
  const auto start = gaussian_start(3, 2, K, rng);
  const auto ddim = run_chain(SamplerKind::kDdim, s, grid, den, kObs, start, rng);
  EXPECT_EQ(ddim.nfe, 16);
  EXPECT_LT((ddim.final.values - mu).cwiseAbs().maxCoeff(), 1e-5);
  const auto dpm = run_chain(SamplerKind::kDpmSolver, s, grid, den, kObs, start, rng);
  EXPECT_EQ(dpm.nfe, 16);
  EXPECT_LT((dpm.final.values - mu).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(RunChain, PartialStartAndSink) {
  const int K = 100;
  const auto s = build_schedule(ScheduleKind::kCosine, K);
  const auto den = mixture_denoiser({{1.0}, {Matrix::Zero(2, 2)}, 0.1}, s);
  const auto grid = make_step_grid(K, 16);
  for (std::size_t idx = 0; idx < grid.levels.size(); ++idx) {
    Rng rng(idx);
    std::vector<int> seen;
    const auto chain = run_chain(
        SamplerKind::kDdim, s, grid, den, kObs, {Matrix::Ones(2, 2), grid.levels[idx]}, rng,
        [&](const ActionChunk& c) { seen.push_back(c.level); });
    const int expect = static_cast<int>(grid.levels.size() - idx);
    EXPECT_EQ(chain.nfe, expect);
    ASSERT_EQ(static_cast<int>(seen.size()), chain.nfe);
    EXPECT_EQ(seen.front(), grid.levels[idx]);
    EXPECT_TRUE(std::is_sorted(seen.rbegin(), seen.rend()));
    EXPECT_EQ(std::adjacent_find(seen.begin(), seen.end()), seen.end());
    ASSERT_EQ(chain.trajectory.size(), seen.size());
  }
  Rng rng(0);
  EXPECT_THROW(run_chain(SamplerKind::kDdim, s, grid, den, kObs, {Matrix::Ones(2, 2), 99}, rng),
               std::invalid_argument);
  EXPECT_THROW(run_chain(SamplerKind::kDdpm, s, grid, den, kObs, {Matrix::Ones(2, 2), 100}, rng),
               std::invalid_argument);
}

TEST(RunChain, DdpmMomentsMatchGaussian) {
  const int K = 100;
  const auto s = build_schedule(ScheduleKind::kCosine, K);
  const double mu = 0.75;
  const auto den = mixture_denoiser({{1.0}, {Matrix::Constant(1, 2, mu)}, 1.0}, s);
  const auto grid = make_step_grid(K, K);
  const int n = 2000;
  Eigen::Vector2d sum = Eigen::Vector2d::Zero(), sq = Eigen::Vector2d::Zero();
  for (int i = 0; i < n; ++i) {
    Rng rng(1000 + i);
    const auto chain =
        run_chain(SamplerKind::kDdpm, s, grid, den, kObs, gaussian_start(1, 2, K, rng), rng);
    const Eigen::Vector2d x = chain.final.values.row(0).transpose();
    sum += x;
    sq += x.cwiseProduct(x);
  }
  for (int d = 0; d < 2; ++d) {
    const double mean = sum(d) / n;
    const double var = sq(d) / n - mean * mean;
    EXPECT_LT(std::abs(mean - mu), 4.0 / std::sqrt(n));
    EXPECT_LT(std::abs(var - 1.0), 0.15);
  }
}

// Median error against a 1000-level reference chain on a two-component mixture.
double refinement_error(SamplerKind kind, int M) {
  const int K = 1000;
  const auto s = build_schedule(ScheduleKind::kCosine, K);
  Matrix mu(2, 2);
  mu << 1.0, 0.5, -0.3, 0.8;
  const auto den = mixture_denoiser({{0.4, 0.6}, {mu, Matrix(-mu)}, 0.3}, s);
  const auto fine = make_step_grid(K, K);
  const auto coarse = make_step_grid(K, M);
  std::vector<double> errs;
  for (int i = 0; i < 64; ++i) {
    Rng rng(77 + i);
    const auto start = gaussian_start(2, 2, K, rng);
    const auto ref = run_chain(kind, s, fine, den, kObs, start, rng);
    const auto got = run_chain(kind, s, coarse, den, kObs, start, rng);
    errs.push_back((ref.final.values - got.final.values).norm());
  }
  std::nth_element(errs.begin(), errs.begin() + 32, errs.end());
  return errs[32];
}

TEST(RunChain, GridRefinementMonotone) {
  for (auto kind : {SamplerKind::kDdim, SamplerKind::kDpmSolver}) {
    double prev = std::numeric_limits<double>::infinity();
    for (int M : {4, 8, 16, 32}) {
      const double e = refinement_error(kind, M);
      EXPECT_LT(e, prev) << to_string(kind) << " M=" << M;
      prev = e;
    }
  }
}

}  // namespace
}  // namespace falcon
