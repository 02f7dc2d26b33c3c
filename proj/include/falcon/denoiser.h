#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "falcon/schedule.h"

namespace falcon {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Latest T_o observation rows, oldest first. `t` is the wall-clock step of the
// newest row.
struct ObservationWindow {
  Matrix values;
  int t = 0;
};

// T_p x D_a action rows at a given noise level (0 = clean).
struct ActionChunk {
  Matrix values;
  int level = 0;
};

// Observation-conditioned isotropic Gaussian mixture over action chunks,
// already evaluated at one observation window.
struct ConditionalMixture {
  std::vector<double> weights;
  std::vector<Matrix> means;
  double component_std = 0.0;

  // Throws std::invalid_argument when weights are not a normalized positive
  // vector matching the means.
  void validate() const;
};

using MixtureFn = std::function<ConditionalMixture(const ObservationWindow&)>;

// Posterior responsibilities of each component given a noisy chunk at
// `level`. Exposed for tests and the Tweedie cross-checks.
std::vector<double> component_responsibilities(const ConditionalMixture& mix,
                                               const NoiseSchedule& schedule,
                                               const Matrix& noisy, int level);

// Exact noise prediction for the noised mixture marginal at `a_k.level`.
Matrix analytic_epsilon(const ConditionalMixture& mix,
                        const NoiseSchedule& schedule, const ActionChunk& a_k);
Matrix analytic_epsilon(const MixtureFn& mix, const NoiseSchedule& schedule,
                        const ObservationWindow& obs, const ActionChunk& a_k);

// Noise-prediction interface shared by the samplers and Falcon. Evaluations
// must be pure so batched calls can run in any order.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Matrix epsilon(const ObservationWindow& obs, const Matrix& noisy,
                         int level) const = 0;
};

class AnalyticDenoiser final : public Denoiser {
 public:
  AnalyticDenoiser(MixtureFn mixture, NoiseSchedule schedule)
      : mixture_(std::move(mixture)), schedule_(std::move(schedule)) {}

  Matrix epsilon(const ObservationWindow& obs, const Matrix& noisy,
                 int level) const override;

 private:
  MixtureFn mixture_;
  NoiseSchedule schedule_;
};

// Always predicts zero noise.
class ZeroDenoiser final : public Denoiser {
 public:
  Matrix epsilon(const ObservationWindow&, const Matrix& noisy,
                 int) const override {
    return Matrix::Zero(noisy.rows(), noisy.cols());
  }
};

// Forwards to another denoiser and counts invocations.
class CountingDenoiser final : public Denoiser {
 public:
  explicit CountingDenoiser(const Denoiser& inner) : inner_(inner) {}

  Matrix epsilon(const ObservationWindow& obs, const Matrix& noisy,
                 int level) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_.epsilon(obs, noisy, level);
  }
  std::int64_t calls() const { return calls_.load(); }
  void reset() { calls_.store(0); }

 private:
  const Denoiser& inner_;
  mutable std::atomic<std::int64_t> calls_{0};
};

enum class Activation { kTanh, kIdentity };

// Small fully connected noise-prediction network. Input is the row-major
// flattening of (observation, noisy actions) followed by level / K.
struct MicroMlp {
  int obs_rows = 0;
  int obs_cols = 0;
  int horizon = 0;
  int action_dim = 0;
  int levels = 1;
  Activation activation = Activation::kTanh;
  std::vector<Matrix> weights;  // weights[l] is out x in
  std::vector<Vector> biases;

  int input_dim() const { return obs_rows * obs_cols + horizon * action_dim + 1; }
  int output_dim() const { return horizon * action_dim; }
  std::size_t parameter_count() const;
  double& parameter(std::size_t index);
  double parameter(std::size_t index) const;

  void validate() const;
  nlohmann::json to_json() const;
  static MicroMlp from_json(const nlohmann::json& j);
};

struct MlpShape {
  int obs_rows = 0;
  int obs_cols = 0;
  int horizon = 0;
  int action_dim = 0;
  int levels = 1;
  std::vector<int> hidden;
  Activation activation = Activation::kTanh;
};

// Weights drawn N(0, 1/fan_in) from `seed`; biases zero. `zero` gives an
// all-zero network.
MicroMlp make_micro_mlp(const MlpShape& shape, std::uint64_t seed,
                        bool zero = false);

Matrix mlp_epsilon(const MicroMlp& net, const ObservationWindow& obs,
                   const ActionChunk& a_k);

class MlpDenoiser final : public Denoiser {
 public:
  explicit MlpDenoiser(MicroMlp net) : net_(std::move(net)) {}
  Matrix epsilon(const ObservationWindow& obs, const Matrix& noisy,
                 int level) const override {
    return mlp_epsilon(net_, obs, ActionChunk{noisy, level});
  }

 private:
  MicroMlp net_;
};

// One training-loss sample: ||noise - net(obs, sqrt(ab) clean + sqrt(1-ab) noise, k)||^2.
struct LossProbe {
  ObservationWindow obs;
  Matrix clean;
  int level = 1;
  Matrix noise;
};

double probe_loss(const MicroMlp& net, const NoiseSchedule& schedule,
                  const LossProbe& probe);
// Loss and its gradient flattened in parameter() order.
double probe_loss_gradient(const MicroMlp& net, const NoiseSchedule& schedule,
                           const LossProbe& probe, std::vector<double>& grad);

// Max over parameters of |analytic - central difference| / (|analytic| + 1e-8).
double gradcheck(const MicroMlp& net, const NoiseSchedule& schedule,
                 const LossProbe& probe, double step = 1e-5);

struct TrainingSample {
  ObservationWindow obs;
  Matrix clean;
};

struct TrainOptions {
  double learning_rate = 1e-2;
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MicroMlp net;
  std::vector<double> epoch_loss;  // mean per-sample loss of each epoch
};

// Minibatch SGD on the noise-prediction loss with k ~ U{1..K} and
// standard-normal noise. Throws std::runtime_error on a non-finite loss.
TrainResult train_micro_mlp(MicroMlp net,
                            const std::vector<TrainingSample>& dataset,
                            const NoiseSchedule& schedule,
                            const TrainOptions& options);

}  // namespace falcon
