#include "falcon/denoiser.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace falcon {

void ConditionalMixture::validate() const {
  if (weights.empty() || weights.size() != means.size()) {
    throw std::invalid_argument("mixture needs one weight per mean, m >= 1");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("mixture weight must be > 0");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("mixture weights do not sum to 1");
  }
  if (!(component_std >= 0.0)) {
    throw std::invalid_argument("mixture component std must be >= 0");
  }
}

std::vector<double> component_responsibilities(const ConditionalMixture& mix,
                                               const NoiseSchedule& schedule,
                                               const Matrix& noisy,
                                               int level) {
  const std::size_t m = mix.weights.size();
  std::vector<double> r(m, 1.0);
  if (m == 1) return r;
  const double ab = schedule.alpha_bar(level);
  const double var =
      ab * mix.component_std * mix.component_std + (1.0 - ab);
  const double scale = std::sqrt(ab);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m; ++i) {
    const double d2 = (noisy - scale * mix.means[i]).squaredNorm();
    r[i] = std::log(mix.weights[i]) - d2 / (2.0 * var);
    best = std::max(best, r[i]);
  }
  double total = 0.0;
  for (double& v : r) {
    v = std::exp(v - best);
    total += v;
  }
  for (double& v : r) v /= total;
  return r;
}

Matrix analytic_epsilon(const ConditionalMixture& mix,
                        const NoiseSchedule& schedule, const ActionChunk& a_k) {
  if (a_k.level < 1 || a_k.level > schedule.levels()) {
    throw std::invalid_argument("analytic_epsilon: level " +
                                std::to_string(a_k.level) +
                                " outside [1, K]");
  }
  const double ab = schedule.alpha_bar(a_k.level);
  const double var =
      ab * mix.component_std * mix.component_std + (1.0 - ab);
  const double scale = std::sqrt(ab);
  const auto r = component_responsibilities(mix, schedule, a_k.values, a_k.level);
  Matrix residual = Matrix::Zero(a_k.values.rows(), a_k.values.cols());
  for (std::size_t i = 0; i < r.size(); ++i) {
    residual += r[i] * (a_k.values - scale * mix.means[i]);
  }
  return std::sqrt(1.0 - ab) / var * residual;
}

Matrix analytic_epsilon(const MixtureFn& mix, const NoiseSchedule& schedule,
                        const ObservationWindow& obs, const ActionChunk& a_k) {
  return analytic_epsilon(mix(obs), schedule, a_k);
}

Matrix AnalyticDenoiser::epsilon(const ObservationWindow& obs,
                                 const Matrix& noisy, int level) const {
  return analytic_epsilon(mixture_(obs), schedule_, ActionChunk{noisy, level});
}

// ---------------------------------------------------------------------------
// MicroMlp

namespace {

Vector flatten_rows(const Matrix& m) {
  Vector v(m.size());
  Eigen::Index n = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v(n++) = m(r, c);
  return v;
}

Matrix unflatten_rows(const Vector& v, int rows, int cols) {
  Matrix m(rows, cols);
  Eigen::Index n = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = v(n++);
  return m;
}

Vector assemble_input(const MicroMlp& net, const ObservationWindow& obs,
                      const Matrix& noisy, int level) {
  if (obs.values.rows() != net.obs_rows || obs.values.cols() != net.obs_cols) {
    throw std::invalid_argument("mlp: observation shape mismatch");
  }
  if (noisy.rows() != net.horizon || noisy.cols() != net.action_dim) {
    throw std::invalid_argument("mlp: action chunk shape mismatch");
  }
  Vector x(net.input_dim());
  x << flatten_rows(obs.values), flatten_rows(noisy),
      static_cast<double>(level) / net.levels;
  return x;
}

double activate(Activation a, double v) {
  return a == Activation::kTanh ? std::tanh(v) : v;
}

// Layer outputs after activation; front() is the input.
std::vector<Vector> forward_all(const MicroMlp& net, const Vector& x) {
  std::vector<Vector> acts;
  acts.reserve(net.weights.size() + 1);
  acts.push_back(x);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    Vector z = net.weights[l] * acts.back() + net.biases[l];
    const bool hidden = l + 1 < net.weights.size();
    if (hidden) z = z.unaryExpr([&](double v) { return activate(net.activation, v); });
    acts.push_back(std::move(z));
  }
  return acts;
}

Vector noisy_input_target(const MicroMlp& net, const NoiseSchedule& schedule,
                          const LossProbe& probe, Vector& target) {
  const double ab = schedule.alpha_bar(probe.level);
  const Matrix noisy =
      std::sqrt(ab) * probe.clean + std::sqrt(1.0 - ab) * probe.noise;
  target = flatten_rows(probe.noise);
  return assemble_input(net, probe.obs, noisy, probe.level);
}

}  // namespace

std::size_t MicroMlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  return n;
}

double& MicroMlp::parameter(std::size_t index) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto wn = static_cast<std::size_t>(weights[l].size());
    if (index < wn) {
      const auto cols = static_cast<std::size_t>(weights[l].cols());
      return weights[l](static_cast<Eigen::Index>(index / cols),
                        static_cast<Eigen::Index>(index % cols));
    }
    index -= wn;
    const auto bn = static_cast<std::size_t>(biases[l].size());
    if (index < bn) return biases[l](static_cast<Eigen::Index>(index));
    index -= bn;
  }
  throw std::out_of_range("mlp parameter index");
}

double MicroMlp::parameter(std::size_t index) const {
  return const_cast<MicroMlp&>(*this).parameter(index);
}

void MicroMlp::validate() const {
  if (weights.empty() || weights.size() != biases.size()) {
    throw std::invalid_argument("mlp: needs matching weight/bias layers");
  }
  if (obs_rows < 1 || obs_cols < 1 || horizon < 1 || action_dim < 1 ||
      levels < 1) {
    throw std::invalid_argument("mlp: dimensions must be positive");
  }
  Eigen::Index in = input_dim();
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].cols() != in || biases[l].size() != weights[l].rows()) {
      throw std::invalid_argument("mlp: layer " + std::to_string(l) +
                                  " shape inconsistent");
    }
    in = weights[l].rows();
  }
  if (in != output_dim()) {
    throw std::invalid_argument("mlp: output width must equal T_p * D_a");
  }
}

nlohmann::json MicroMlp::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < weights.size(); ++l) {
    std::vector<double> w(weights[l].size());
    std::size_t n = 0;
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < weights[l].cols(); ++c) w[n++] = weights[l](r, c);
    layers.push_back({{"rows", weights[l].rows()},
                      {"cols", weights[l].cols()},
                      {"weight", w},
                      {"bias", std::vector<double>(biases[l].data(),
                                                   biases[l].data() + biases[l].size())}});
  }
  return {{"obs_rows", obs_rows},
          {"obs_cols", obs_cols},
          {"horizon", horizon},
          {"action_dim", action_dim},
          {"levels", levels},
          {"activation", activation == Activation::kTanh ? "tanh" : "identity"},
          {"layers", layers}};
}

MicroMlp MicroMlp::from_json(const nlohmann::json& j) {
  MicroMlp net;
  net.obs_rows = j.at("obs_rows").get<int>();
  net.obs_cols = j.at("obs_cols").get<int>();
  net.horizon = j.at("horizon").get<int>();
  net.action_dim = j.at("action_dim").get<int>();
  net.levels = j.at("levels").get<int>();
  const auto act = j.at("activation").get<std::string>();
  if (act == "tanh") {
    net.activation = Activation::kTanh;
  } else if (act == "identity") {
    net.activation = Activation::kIdentity;
  } else {
    throw std::invalid_argument("mlp: unknown activation '" + act + "'");
  }
  for (const auto& layer : j.at("layers")) {
    const int rows = layer.at("rows").get<int>();
    const int cols = layer.at("cols").get<int>();
    const auto w = layer.at("weight").get<std::vector<double>>();
    const auto b = layer.at("bias").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(rows) * cols ||
        b.size() != static_cast<std::size_t>(rows)) {
      throw std::invalid_argument("mlp: layer array sizes do not match shape");
    }
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = w[static_cast<std::size_t>(r) * cols + c];
    net.weights.push_back(std::move(m));
    net.biases.push_back(Eigen::Map<const Vector>(b.data(), rows));
  }
  net.validate();
  return net;
}

MicroMlp make_micro_mlp(const MlpShape& shape, std::uint64_t seed, bool zero) {
  MicroMlp net;
  net.obs_rows = shape.obs_rows;
  net.obs_cols = shape.obs_cols;
  net.horizon = shape.horizon;
  net.action_dim = shape.action_dim;
  net.levels = shape.levels;
  net.activation = shape.activation;
  std::vector<int> widths{net.input_dim()};
  widths.insert(widths.end(), shape.hidden.begin(), shape.hidden.end());
  widths.push_back(net.output_dim());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Matrix w = Matrix::Zero(widths[l + 1], widths[l]);
    if (!zero) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(widths[l]));
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = scale * normal(rng);
    }
    net.weights.push_back(std::move(w));
    net.biases.push_back(Vector::Zero(widths[l + 1]));
  }
  net.validate();
  return net;
}

Matrix mlp_epsilon(const MicroMlp& net, const ObservationWindow& obs,
                   const ActionChunk& a_k) {
  const auto acts = forward_all(net, assemble_input(net, obs, a_k.values, a_k.level));
  return unflatten_rows(acts.back(), net.horizon, net.action_dim);
}

double probe_loss(const MicroMlp& net, const NoiseSchedule& schedule,
                  const LossProbe& probe) {
  Vector target;
  const Vector x = noisy_input_target(net, schedule, probe, target);
  return (target - forward_all(net, x).back()).squaredNorm();
}

double probe_loss_gradient(const MicroMlp& net, const NoiseSchedule& schedule,
                           const LossProbe& probe, std::vector<double>& grad) {
  Vector target;
  const Vector x = noisy_input_target(net, schedule, probe, target);
  const auto acts = forward_all(net, x);
  const Vector residual = acts.back() - target;
  grad.assign(net.parameter_count(), 0.0);

  // Offsets of each layer's block in the flat parameter order.
  std::vector<std::size_t> offset(net.weights.size());
  std::size_t n = 0;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    offset[l] = n;
    n += static_cast<std::size_t>(net.weights[l].size() + net.biases[l].size());
  }

  Vector delta = 2.0 * residual;  // dL/dz of the output layer
  for (std::size_t l = net.weights.size(); l-- > 0;) {
    const Vector& input = acts[l];
    const auto cols = net.weights[l].cols();
    for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        grad[offset[l] + static_cast<std::size_t>(r * cols + c)] = delta(r) * input(c);
      }
      grad[offset[l] + static_cast<std::size_t>(net.weights[l].size() + r)] = delta(r);
    }
    if (l == 0) break;
    Vector back = net.weights[l].transpose() * delta;
    if (net.activation == Activation::kTanh) {
      back = back.cwiseProduct((1.0 - acts[l].array().square()).matrix());
    }
    delta = std::move(back);
  }
  return residual.squaredNorm();
}

double gradcheck(const MicroMlp& net, const NoiseSchedule& schedule,
                 const LossProbe& probe, double step) {
  std::vector<double> analytic;
  probe_loss_gradient(net, schedule, probe, analytic);
  MicroMlp work = net;
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double saved = work.parameter(i);
    work.parameter(i) = saved + step;
    const double up = probe_loss(work, schedule, probe);
    work.parameter(i) = saved - step;
    const double down = probe_loss(work, schedule, probe);
    work.parameter(i) = saved;
    const double fd = (up - down) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + 1e-8));
  }
  return worst;
}

TrainResult train_micro_mlp(MicroMlp net,
                            const std::vector<TrainingSample>& dataset,
                            const NoiseSchedule& schedule,
                            const TrainOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("training: empty dataset");
  if (options.epochs < 1 || options.batch_size < 1) {
    throw std::invalid_argument("training: epochs and batch size must be >= 1");
  }
  if (net.levels != schedule.levels()) {
    throw std::invalid_argument("training: net level count differs from schedule");
  }
  net.validate();
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> level_dist(1, schedule.levels());

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  std::vector<double> grad;
  std::vector<double> batch_grad(net.parameter_count());
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      std::fill(batch_grad.begin(), batch_grad.end(), 0.0);
      for (std::size_t b = start; b < stop; ++b) {
        const auto& sample = dataset[order[b]];
        LossProbe probe{sample.obs, sample.clean, level_dist(rng),
                        Matrix(sample.clean.rows(), sample.clean.cols())};
        for (Eigen::Index r = 0; r < probe.noise.rows(); ++r)
          for (Eigen::Index c = 0; c < probe.noise.cols(); ++c)
            probe.noise(r, c) = normal(rng);
        const double loss = probe_loss_gradient(net, schedule, probe, grad);
        if (!std::isfinite(loss)) {
          std::ostringstream msg;
          msg << "training diverged: non-finite loss at epoch " << epoch
              << ", sample " << order[b];
          throw std::runtime_error(msg.str());
        }
        epoch_total += loss;
        for (std::size_t i = 0; i < grad.size(); ++i) batch_grad[i] += grad[i];
      }
      const double scale = options.learning_rate / static_cast<double>(stop - start);
      for (std::size_t i = 0; i < batch_grad.size(); ++i) {
        net.parameter(i) -= scale * batch_grad[i];
      }
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(dataset.size()));
  }
  result.net = std::move(net);
  return result;
}

}  // namespace falcon
