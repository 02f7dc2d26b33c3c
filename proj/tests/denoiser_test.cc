#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "falcon/denoiser.h"
#include "falcon/samplers.h"

namespace falcon {
namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

ConditionalMixture single(const Matrix& mean, double s) {
  return ConditionalMixture{{1.0}, {mean}, s};
}

// Conjugate posterior mean of x0 under x0 ~ N(mu, s^2), a = sqrt(ab) x0 + sqrt(1-ab) n.
Matrix posterior_mean(const Matrix& mu, double s, double ab, const Matrix& a) {
  const double v = ab * s * s + 1.0 - ab;
  return mu + std::sqrt(ab) * s * s / v * (a - std::sqrt(ab) * mu);
}

ObservationWindow dummy_obs(int rows = 2, int cols = 4) {
  return ObservationWindow{Matrix::Zero(rows, cols), 1};
}

TEST(AnalyticEpsilon, StandardGaussian) {
  const auto sched = NoiseSchedule::from_betas({0.5});
  const Matrix eps = analytic_epsilon(single(scalar(0.0), 1.0), sched, {scalar(1.0), 1});
  EXPECT_NEAR(eps(0, 0), std::sqrt(0.5) / (0.5 + 0.5), 1e-15);
  EXPECT_NEAR(eps(0, 0), 0.70711, 1e-5);
}

TEST(AnalyticEpsilon, PointMassRecoversNoise) {
  const auto sched = NoiseSchedule::from_betas({0.75});
  const double a = 0.5 + std::sqrt(0.75) * 0.2;
  const Matrix eps = analytic_epsilon(single(scalar(1.0), 0.0), sched, {scalar(a), 1});
  EXPECT_NEAR(eps(0, 0), 0.2, 1e-15);
}

TEST(AnalyticEpsilon, SymmetricPairAtOrigin) {
  const auto sched = build_schedule(ScheduleKind::kCosine, 50);
  Matrix mu = Matrix::Constant(4, 2, 0.7);
  ConditionalMixture mix{{0.5, 0.5}, {mu, Matrix(-mu)}, 0.1};
  for (int k : {1, 10, 50}) {
    const Matrix eps = analytic_epsilon(mix, sched, {Matrix::Zero(4, 2), k});
    EXPECT_EQ(eps.cwiseAbs().maxCoeff(), 0.0) << "k=" << k;
  }
}

TEST(AnalyticEpsilon, RejectsCleanLevel) {
  const auto sched = build_schedule(ScheduleKind::kCosine, 10);
  EXPECT_THROW(analytic_epsilon(single(scalar(0.0), 1.0), sched, {scalar(1.0), 0}),
               std::invalid_argument);
  EXPECT_THROW(analytic_epsilon(single(scalar(0.0), 1.0), sched, {scalar(1.0), 11}),
               std::invalid_argument);
}

TEST(AnalyticEpsilon, SingleGaussianClosedFormRandomized) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> beta(0.01, 0.99), mean(-3.0, 3.0), sd(0.0, 2.0);
  for (int trial = 0; trial < 500; ++trial) {
    const auto sched = NoiseSchedule::from_betas({beta(rng)});
    const double ab = sched.alpha_bar(1);
    const double s = sd(rng);
    Matrix mu(3, 2), a(3, 2);
    for (int i = 0; i < 6; ++i) {
      mu(i) = mean(rng);
      a(i) = mean(rng);
    }
    const Matrix eps = analytic_epsilon(single(mu, s), sched, {a, 1});
    const Matrix expect =
        std::sqrt(1.0 - ab) * (a - std::sqrt(ab) * mu) / (ab * s * s + 1.0 - ab);
    ASSERT_LT((eps - expect).cwiseAbs().maxCoeff(), 1e-9);

    const Matrix tweedie = (a - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    ASSERT_LT((tweedie - posterior_mean(mu, s, ab, a)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(AnalyticEpsilon, ResponsibilitiesSingleComponentExactlyOne) {
  const auto sched = build_schedule(ScheduleKind::kCosine, 20);
  const auto r = component_responsibilities(single(Matrix::Ones(2, 2), 0.3), sched,
                                            Matrix::Constant(2, 2, 5.0), 7);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0], 1.0);
}

TEST(AnalyticEpsilon, ResponsibilitiesFavorNearComponent) {
  const auto sched = build_schedule(ScheduleKind::kCosine, 20);
  ConditionalMixture mix{{0.5, 0.5}, {Matrix::Ones(2, 2), Matrix(-Matrix::Ones(2, 2))}, 0.1};
  const auto r = component_responsibilities(mix, sched, Matrix::Constant(2, 2, 0.9), 2);
  EXPECT_NEAR(r[0] + r[1], 1.0, 1e-12);
  EXPECT_GT(r[0], 0.99);
}

TEST(ConditionalMixture, Validate) {
  EXPECT_NO_THROW((single(scalar(0.0), 1.0).validate()));
  EXPECT_THROW((ConditionalMixture{{0.5, 0.6}, {scalar(0), scalar(1)}, 1.0}.validate()),
               std::invalid_argument);
  EXPECT_THROW((ConditionalMixture{{1.0}, {}, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((ConditionalMixture{{1.0}, {scalar(0)}, -1.0}.validate()),
               std::invalid_argument);
}

MlpShape small_shape(Activation act = Activation::kTanh) {
  MlpShape s;
  s.obs_rows = 2;
  s.obs_cols = 3;
  s.horizon = 4;
  s.action_dim = 2;
  s.levels = 20;
  s.hidden = {8, 6};
  s.activation = act;
  return s;
}

LossProbe random_probe(const MlpShape& shape, std::uint64_t seed) {
  Rng rng(seed);
  LossProbe p;
  p.obs = {standard_normal(shape.obs_rows, shape.obs_cols, rng), 1};
  p.clean = standard_normal(shape.horizon, shape.action_dim, rng);
  p.noise = standard_normal(shape.horizon, shape.action_dim, rng);
  p.level = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(shape.levels));
  return p;
}

TEST(MicroMlp, ZeroNetOutputsZero) {
  const auto net = make_micro_mlp(small_shape(), 3, true);
  Rng rng(1);
  const Matrix out = mlp_epsilon(net, {standard_normal(2, 3, rng), 1},
                                 {standard_normal(4, 2, rng), 5});
  EXPECT_EQ(out.rows(), 4);
  EXPECT_EQ(out.cols(), 2);
  EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MicroMlp, PureAndShaped) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    MlpShape shape;
    shape.obs_rows = 1 + static_cast<int>(rng() % 3);
    shape.obs_cols = 1 + static_cast<int>(rng() % 4);
    shape.horizon = 1 + static_cast<int>(rng() % 8);
    shape.action_dim = 1 + static_cast<int>(rng() % 3);
    shape.levels = 10;
    shape.hidden = {1 + static_cast<int>(rng() % 10)};
    const auto net = make_micro_mlp(shape, rng());
    const ObservationWindow obs{standard_normal(shape.obs_rows, shape.obs_cols, rng), 1};
    const ActionChunk a{standard_normal(shape.horizon, shape.action_dim, rng), 3};
    const Matrix x = mlp_epsilon(net, obs, a);
    const Matrix y = mlp_epsilon(net, obs, a);
    ASSERT_EQ(x.rows(), shape.horizon);
    ASSERT_EQ(x.cols(), shape.action_dim);
    ASSERT_TRUE((x.array() == y.array()).all());
  }
}

TEST(MicroMlp, ShapeMismatchThrows) {
  const auto net = make_micro_mlp(small_shape(), 3);
  EXPECT_THROW(mlp_epsilon(net, dummy_obs(2, 2), {Matrix::Zero(4, 2), 1}),
               std::invalid_argument);
  EXPECT_THROW(mlp_epsilon(net, dummy_obs(2, 3), {Matrix::Zero(3, 2), 1}),
               std::invalid_argument);
}

TEST(MicroMlp, JsonRoundTrip) {
  const auto net = make_micro_mlp(small_shape(), 9);
  const auto back = MicroMlp::from_json(nlohmann::json::parse(net.to_json().dump()));
  ASSERT_EQ(back.parameter_count(), net.parameter_count());
  for (std::size_t i = 0; i < net.parameter_count(); ++i) {
    ASSERT_EQ(back.parameter(i), net.parameter(i));
  }
}

TEST(MicroMlp, ZeroNetLossIsNoiseEnergy) {
  const auto shape = small_shape();
  const auto net = make_micro_mlp(shape, 0, true);
  const auto sched = build_schedule(ScheduleKind::kCosine, shape.levels);
  double total = 0.0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) total += probe_loss(net, sched, random_probe(shape, 100 + i));
  // E||eps||^2 = T_p * D_a = 8; chi-square(8) sd is 4, so the mean has sd 4/sqrt(n)
  EXPECT_NEAR(total / n, 8.0, 4.0 * 4.0 / std::sqrt(n));
}

TEST(Gradcheck, LinearNetIsExact) {
  const auto shape = small_shape(Activation::kIdentity);
  const auto net = make_micro_mlp(shape, 21);
  const auto sched = build_schedule(ScheduleKind::kCosine, shape.levels);
  EXPECT_LT(gradcheck(net, sched, random_probe(shape, 4)), 1e-7);
}

TEST(Gradcheck, TanhNetWithinTolerance) {
  const auto shape = small_shape();
  const auto sched = build_schedule(ScheduleKind::kCosine, shape.levels);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto net = make_micro_mlp(shape, 40 + seed);
    EXPECT_LT(gradcheck(net, sched, random_probe(shape, seed), 1e-5), 1e-4);
  }
}

TEST(Gradcheck, Deterministic) {
  const auto shape = small_shape();
  const auto sched = build_schedule(ScheduleKind::kCosine, shape.levels);
  const auto net = make_micro_mlp(shape, 1);
  const auto probe = random_probe(shape, 2);
  EXPECT_EQ(gradcheck(net, sched, probe), gradcheck(net, sched, probe));
}

TEST(Training, PointMassLossHalves) {
  MlpShape shape = small_shape();
  shape.hidden = {32};
  const auto sched = build_schedule(ScheduleKind::kCosine, shape.levels);
  Rng rng(3);
  const ObservationWindow obs{standard_normal(2, 3, rng), 1};
  const Matrix target = standard_normal(4, 2, rng);
  std::vector<TrainingSample> data(64, TrainingSample{obs, target});
  TrainOptions opt;
  opt.epochs = 60;
  opt.learning_rate = 5e-3;
  opt.seed = 8;
  const auto result = train_micro_mlp(make_micro_mlp(shape, 2), data, sched, opt);
  ASSERT_EQ(result.epoch_loss.size(), 60u);
  EXPECT_LT(result.epoch_loss.back(), 0.5 * result.epoch_loss.front());
}

TEST(Training, NonFiniteLossAborts) {
  const auto shape = small_shape();
  const auto sched = build_schedule(ScheduleKind::kCosine, shape.levels);
  std::vector<TrainingSample> data{
      {dummy_obs(2, 3), Matrix::Constant(4, 2, std::numeric_limits<double>::infinity())}};
  EXPECT_THROW(train_micro_mlp(make_micro_mlp(shape, 1), data, sched, {}),
               std::runtime_error);
  EXPECT_THROW(train_micro_mlp(make_micro_mlp(shape, 1), {}, sched, {}),
               std::invalid_argument);
}

}  // namespace
}  // namespace falcon
