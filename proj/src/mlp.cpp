#include "smlp/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace smlp {

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::logistic:
      return "logistic";
    case Activation::linear:
      return "linear";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "logistic") return Activation::logistic;
  if (name == "linear") return Activation::linear;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

void kernel::apply_block(Activation a, double* v, std::size_t n) {
  switch (a) {
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) v[i] = kernel::tanh(v[i]);
      break;
    case Activation::logistic:
      for (std::size_t i = 0; i < n; ++i) v[i] = kernel::logistic(v[i]);
      break;
    case Activation::linear:
      break;
  }
}

// ---------------------------------------------------------------------------
// MlpNetwork

MlpNetwork::MlpNetwork(const std::vector<std::size_t>& layer_sizes,
                       const std::vector<Activation>& hidden_activations) {
  if (layer_sizes.size() < 2) throw ConfigError("network needs at least input and output layers");
  if (hidden_activations.size() != layer_sizes.size() - 2) {
    throw ConfigError("need one activation per hidden layer");
  }
  for (std::size_t s : layer_sizes) {
    if (s == 0) throw ConfigError("layer sizes must be positive");
  }
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    DenseLayer layer;
    layer.inputs = layer_sizes[l];
    layer.outputs = layer_sizes[l + 1];
    layer.activation = l + 2 < layer_sizes.size() ? hidden_activations[l] : Activation::linear;
    layer.weights.assign(layer.inputs * layer.outputs, 0.0);
    layer.biases.assign(layer.outputs, 0.0);
    layers_.push_back(std::move(layer));
  }
}

MlpNetwork::MlpNetwork(const std::vector<std::size_t>& layer_sizes, Activation hidden)
    : MlpNetwork(layer_sizes,
                 std::vector<Activation>(layer_sizes.size() >= 2 ? layer_sizes.size() - 2 : 0, hidden)) {}

MlpNetwork::MlpNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { validate(); }

MlpNetwork MlpNetwork::glorot(const std::vector<std::size_t>& layer_sizes, Activation hidden,
                              Rng& rng) {
  MlpNetwork net(layer_sizes, hidden);
  for (auto& layer : net.layers_) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(layer.inputs + layer.outputs));
    for (double& w : layer.weights) w = rng.uniform(-limit, limit);
  }
  return net;
}

std::vector<std::size_t> MlpNetwork::layer_sizes() const {
  std::vector<std::size_t> s;
  if (layers_.empty()) return s;
  s.push_back(layers_.front().inputs);
  for (const auto& l : layers_) s.push_back(l.outputs);
  return s;
}

std::vector<std::size_t> MlpNetwork::hidden_widths() const {
  std::vector<std::size_t> w;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) w.push_back(layers_[l].outputs);
  return w;
}

std::size_t MlpNetwork::hidden_neurons() const {
  const auto w = hidden_widths();
  return std::accumulate(w.begin(), w.end(), std::size_t{0});
}

std::size_t MlpNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.biases.size();
  return n;
}

std::size_t MlpNetwork::max_width() const {
  std::size_t m = layers_.empty() ? 0 : layers_.front().inputs;
  for (const auto& l : layers_) m = std::max(m, l.outputs);
  return m;
}

void MlpNetwork::validate() const {
  if (layers_.empty()) throw ConfigError("network has no layers");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.inputs == 0 || layer.outputs == 0) throw ConfigError("network layer has zero width");
    if (l > 0 && layer.inputs != layers_[l - 1].outputs) {
      throw ConfigError("network layer " + std::to_string(l) + " input width mismatch");
    }
    if (layer.weights.size() != layer.inputs * layer.outputs ||
        layer.biases.size() != layer.outputs) {
      throw ConfigError("network layer " + std::to_string(l) + " parameter count mismatch");
    }
    if (l + 1 == layers_.size() && layer.activation != Activation::linear) {
      throw ConfigError("network output layer must be linear");
    }
    if (static_cast<unsigned>(layer.activation) > static_cast<unsigned>(Activation::linear)) {
      throw ConfigError("invalid activation tag");
    }
    for (double v : layer.weights) {
      if (!std::isfinite(v)) throw DataError("network has non-finite weights");
    }
    for (double v : layer.biases) {
      if (!std::isfinite(v)) throw DataError("network has non-finite biases");
    }
  }
}

std::vector<double> flatten_parameters(const MlpNetwork& net) {
  std::vector<double> p;
  p.reserve(net.parameter_count());
  for (const auto& l : net.layers()) {
    p.insert(p.end(), l.weights.begin(), l.weights.end());
    p.insert(p.end(), l.biases.begin(), l.biases.end());
  }
  return p;
}

void set_parameters(MlpNetwork& net, std::span<const double> params) {
  if (params.size() != net.parameter_count()) {
    throw DimensionError("parameter vector has wrong length");
  }
  std::size_t k = 0;
  for (auto& l : net.layers()) {
    for (double& w : l.weights) w = params[k++];
    for (double& b : l.biases) b = params[k++];
  }
}

// ---------------------------------------------------------------------------
// Forward evaluation

namespace {

[[noreturn]] void throw_non_finite() {
  throw DataError("non-finite value in network forward pass");
}

void check_input(const MlpNetwork& net, std::size_t n) {
  if (n != net.inputs()) {
    throw DimensionError("network expects " + std::to_string(net.inputs()) + " inputs, got " +
                         std::to_string(n));
  }
}

}  // namespace

std::vector<double> mlp_forward(const MlpNetwork& net, std::span<const double> x,
                                ActivationCounter* counter) {
  std::vector<double> out(net.outputs());
  ForwardScratch scratch;
  mlp_forward(net, x, out, scratch, counter);
  return out;
}

void mlp_forward(const MlpNetwork& net, std::span<const double> x, std::span<double> out,
                 ForwardScratch& scratch, ActivationCounter* counter) {
  check_input(net, x.size());
  if (out.size() != net.outputs()) throw DimensionError("output buffer has wrong length");
  const std::size_t width = net.max_width();
  scratch.a.resize(width);
  scratch.b.resize(width);
  std::copy(x.begin(), x.end(), scratch.a.begin());
  double* in = scratch.a.data();
  double* next = scratch.b.data();
  std::uint64_t activations = 0;
  for (const auto& layer : net.layers()) {
    bool finite = true;
    for (std::size_t i = 0; i < layer.outputs; ++i) {
      const double* w = layer.weights.data() + i * layer.inputs;
      double acc = layer.biases[i];
      for (std::size_t j = 0; j < layer.inputs; ++j) acc += w[j] * in[j];
      finite &= std::isfinite(acc);
      next[i] = kernel::apply(layer.activation, acc);
    }
    if (!finite) throw_non_finite();
    if (&layer != &net.layers().back()) activations += layer.outputs;
    std::swap(in, next);
  }
  std::copy(in, in + net.outputs(), out.begin());
  if (counter) counter->add(activations);
}

namespace {

// o[q] = bias + sum_j w[j] * x[j * NB + q], accumulated in j order.
template <std::size_t NB>
void affine_block(const double* w, std::size_t n_in, double bias, const double* x, double* o) {
  double acc[NB];
  for (std::size_t q = 0; q < NB; ++q) acc[q] = bias;
  for (std::size_t j = 0; j < n_in; ++j) {
    const double wj = w[j];
    const double* xj = x + j * NB;
    for (std::size_t q = 0; q < NB; ++q) acc[q] += wj * xj[q];
  }
  for (std::size_t q = 0; q < NB; ++q) o[q] = acc[q];
}

void affine_tail(const double* w, std::size_t n_in, double bias, const double* x, std::size_t nb,
                 double* o) {
  for (std::size_t q = 0; q < nb; ++q) {
    double acc = bias;
    for (std::size_t j = 0; j < n_in; ++j) acc += w[j] * x[j * nb + q];
    o[q] = acc;
  }
}

}  // namespace

void mlp_forward_block(const MlpNetwork& net, const double* inputs, std::size_t count,
                       double* outputs, ForwardScratch& scratch, ActivationCounter* counter) {
  constexpr std::size_t kBlock = 64;
  const std::size_t n_in = net.inputs();
  const std::size_t n_out = net.outputs();
  const std::size_t width = net.max_width();
  scratch.a.resize(width * kBlock);
  scratch.b.resize(width * kBlock);

  for (std::size_t start = 0; start < count; start += kBlock) {
    const std::size_t nb = std::min(kBlock, count - start);
    // Neuron-major layout: value of neuron j for query q at [j * nb + q].
    double* in = scratch.a.data();
    double* next = scratch.b.data();
    for (std::size_t q = 0; q < nb; ++q) {
      const double* x = inputs + (start + q) * n_in;
      for (std::size_t j = 0; j < n_in; ++j) in[j * nb + q] = x[j];
    }
    for (const auto& layer : net.layers()) {
      for (std::size_t i = 0; i < layer.outputs; ++i) {
        const double* w = layer.weights.data() + i * layer.inputs;
        if (nb == kBlock) {
          affine_block<kBlock>(w, layer.inputs, layer.biases[i], in, next + i * nb);
        } else {
          affine_tail(w, layer.inputs, layer.biases[i], in, nb, next + i * nb);
        }
      }
      const std::size_t n = layer.outputs * nb;
      bool bad = false;
      for (std::size_t k = 0; k < n; ++k) bad |= !(std::abs(next[k]) <= std::numeric_limits<double>::max());
      if (bad) throw_non_finite();
      kernel::apply_block(layer.activation, next, n);
      std::swap(in, next);
    }
    for (std::size_t q = 0; q < nb; ++q) {
      double* y = outputs + (start + q) * n_out;
      for (std::size_t k = 0; k < n_out; ++k) y[k] = in[k * nb + q];
    }
  }
  if (counter) counter->add(static_cast<std::uint64_t>(count) * net.hidden_neurons());
}

// ---------------------------------------------------------------------------
// Backpropagation

std::vector<double> Gradient::flatten() const {
  std::vector<double> g;
  for (const auto& l : layers) {
    g.insert(g.end(), l.weights.begin(), l.weights.end());
    g.insert(g.end(), l.biases.begin(), l.biases.end());
  }
  return g;
}

namespace {

/// Forward/backward workspace for one network shape.
class Backprop {
 public:
  explicit Backprop(const MlpNetwork& net) : net_(&net) {
    const auto sizes = net.layer_sizes();
    acts_.resize(sizes.size());
    for (std::size_t l = 0; l < sizes.size(); ++l) acts_[l].resize(sizes[l]);
    delta_.resize(net.max_width());
    delta_prev_.resize(net.max_width());
    grad_.layers.resize(net.layers().size());
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      grad_.layers[l].weights.resize(net.layers()[l].weights.size());
      grad_.layers[l].biases.resize(net.layers()[l].biases.size());
    }
  }

  void zero() {
    for (auto& l : grad_.layers) {
      std::fill(l.weights.begin(), l.weights.end(), 0.0);
      std::fill(l.biases.begin(), l.biases.end(), 0.0);
    }
    grad_.loss = 0.0;
  }

  const std::vector<double>& forward(std::span<const double> x) {
    const auto& layers = net_->layers();
    std::copy(x.begin(), x.end(), acts_[0].begin());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& layer = layers[l];
      const double* in = acts_[l].data();
      double* out = acts_[l + 1].data();
      for (std::size_t i = 0; i < layer.outputs; ++i) {
        const double* w = layer.weights.data() + i * layer.inputs;
        double acc = layer.biases[i];
        for (std::size_t j = 0; j < layer.inputs; ++j) acc += w[j] * in[j];
        out[i] = kernel::apply(layer.activation, acc);
      }
    }
    return acts_.back();
  }

  /// Accumulates the gradient of scale * sum_k (y_k - t_k)^2 for one sample.
  void accumulate(std::span<const double> x, std::span<const double> t, double scale) {
    const auto& y = forward(x);
    const auto& layers = net_->layers();
    const std::size_t n_out = y.size();
    for (std::size_t k = 0; k < n_out; ++k) {
      const double e = y[k] - t[k];
      grad_.loss += scale * e * e;
      delta_[k] = 2.0 * scale * e;
    }
    for (std::size_t l = layers.size(); l-- > 0;) {
      const auto& layer = layers[l];
      auto& g = grad_.layers[l];
      const double* in = acts_[l].data();
      for (std::size_t i = 0; i < layer.outputs; ++i) {
        const double d = delta_[i];
        g.biases[i] += d;
        double* gw = g.weights.data() + i * layer.inputs;
        for (std::size_t j = 0; j < layer.inputs; ++j) gw[j] += d * in[j];
      }
      if (l == 0) break;
      const Activation prev_act = layers[l - 1].activation;
      for (std::size_t j = 0; j < layer.inputs; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < layer.outputs; ++i) s += layer.weights[i * layer.inputs + j] * delta_[i];
        delta_prev_[j] = s * kernel::derivative_from_output(prev_act, in[j]);
      }
      std::swap(delta_, delta_prev_);
    }
  }

  Gradient& gradient() { return grad_; }

 private:
  const MlpNetwork* net_;
  std::vector<std::vector<double>> acts_;
  std::vector<double> delta_, delta_prev_;
  Gradient grad_;
};

void check_batch(const MlpNetwork& net, const RowMatrix& inputs, const RowMatrix& targets) {
  if (inputs.rows == 0) throw DataError("batch is empty");
  if (inputs.rows != targets.rows) throw DimensionError("inputs and targets differ in row count");
  check_input(net, inputs.cols);
  if (targets.cols != net.outputs()) {
    throw DimensionError("network has " + std::to_string(net.outputs()) + " outputs, targets have " +
                         std::to_string(targets.cols));
  }
}

}  // namespace

Gradient mlp_backprop_grad(const MlpNetwork& net, const RowMatrix& inputs, const RowMatrix& targets) {
  check_batch(net, inputs, targets);
  Backprop bp(net);
  bp.zero();
  const double scale = 1.0 / static_cast<double>(inputs.rows * net.outputs());
  for (std::size_t b = 0; b < inputs.rows; ++b) bp.accumulate(inputs.row(b), targets.row(b), scale);
  return bp.gradient();
}

// ---------------------------------------------------------------------------
// Tolerance

void ToleranceSpec::validate() const {
  if (!(tau_a >= 0.0) || !(tau_r >= 0.0)) throw ConfigError("tolerances must be non-negative");
  if (tau_a == 0.0 && tau_r == 0.0) throw ConfigError("tau_a and tau_r cannot both be zero");
}

bool tolerance_pass(double prediction, double reference, const ToleranceSpec& tol) {
  return std::abs(prediction - reference) <= tol.threshold(reference);
}

double pass_rate(std::span<const double> predictions, std::span<const double> references,
                 const ToleranceSpec& tol) {
  if (predictions.size() != references.size()) {
    throw DimensionError("predictions and references differ in length");
  }
  if (predictions.empty()) return 1.0;
  std::size_t pass = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    pass += tolerance_pass(predictions[i], references[i], tol) ? 1 : 0;
  }
  return static_cast<double>(pass) / static_cast<double>(predictions.size());
}

// ---------------------------------------------------------------------------
// SGD

void SgdParams::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (max_iterations < 1) throw ConfigError("max iterations must be >= 1");
}

std::string_view train_status_name(TrainStatus s) {
  switch (s) {
    case TrainStatus::converged:
      return "converged";
    case TrainStatus::early_terminated:
      return "early_terminated";
    case TrainStatus::max_iters:
      return "max_iters";
  }
  return "?";
}

namespace {

struct Evaluation {
  double pass_rate = 0.0;
  double mse = 0.0;  // normalized units
};

Evaluation evaluate(const MlpNetwork& net, const SupervisedSet& data, const TargetSpace& space,
                    ForwardScratch& scratch, std::vector<double>& pred) {
  const std::size_t n = data.size();
  const std::size_t k = net.outputs();
  pred.resize(n * k);
  mlp_forward_block(net, data.inputs.data.data(), n, pred.data(), scratch);
  std::size_t pass = 0;
  double sse = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    bool ok = true;
    for (std::size_t o = 0; o < k; ++o) {
      const double ref = data.targets(p, o);
      const double u = pred[p * k + o];
      const double e = u - space.scales[o].normalize(ref);
      sse += e * e;
      ok &= tolerance_pass(space.scales[o].denormalize(u), ref, space.tolerances[o]);
    }
    pass += ok ? 1 : 0;
  }
  Evaluation ev;
  ev.pass_rate = n ? static_cast<double>(pass) / static_cast<double>(n) : 1.0;
  ev.mse = n ? sse / static_cast<double>(n * k) : 0.0;
  return ev;
}

void check_set(const MlpNetwork& net, const SupervisedSet& s, const TargetSpace& space,
               const char* name) {
  if (s.size() == 0) throw DataError(std::string(name) + " set is empty");
  if (s.targets.rows != s.inputs.rows) throw DimensionError(std::string(name) + " set rows mismatch");
  check_input(net, s.inputs.cols);
  if (s.targets.cols != net.outputs() || space.scales.size() != net.outputs() ||
      space.tolerances.size() != net.outputs()) {
    throw DimensionError(std::string(name) + " set output width does not match network");
  }
}

}  // namespace

double dataset_pass_rate(const MlpNetwork& net, const SupervisedSet& data, const TargetSpace& space) {
  check_set(net, data, space, "evaluation");
  ForwardScratch scratch;
  std::vector<double> pred;
  return evaluate(net, data, space, scratch, pred).pass_rate;
}

TrainOutcome sgd_train(MlpNetwork& net, const SupervisedSet& train, const SupervisedSet& test,
                       const TargetSpace& space, const SgdParams& params,
                       const EarlyStopPolicy& stop) {
  params.validate();
  net.validate();
  check_set(net, train, space, "training");
  check_set(net, test, space, "test");

  const std::size_t n = train.size();
  const std::size_t k = net.outputs();
  RowMatrix targets(n, k);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t o = 0; o < k; ++o) targets(p, o) = space.scales[o].normalize(train.targets(p, o));
  }

  Rng rng(params.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Backprop bp(net);
  ForwardScratch scratch;
  std::vector<double> pred;

  double lr = params.learning_rate;
  const double min_lr = params.learning_rate * params.min_learning_rate_fraction;
  double best_pass = -1.0;
  double best_mse = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  MlpNetwork best = net;
  TrainOutcome outcome;

  for (std::size_t it = 1; it <= params.max_iterations; ++it) {
    if (params.shuffle) rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += params.batch_size) {
      const std::size_t end = std::min(n, start + params.batch_size);
      const double scale = 1.0 / static_cast<double>((end - start) * k);
      bp.zero();
      for (std::size_t b = start; b < end; ++b) {
        bp.accumulate(train.inputs.row(order[b]), targets.row(order[b]), scale);
      }
      const Gradient& g = bp.gradient();
      epoch_loss += g.loss * static_cast<double>(end - start);
      for (std::size_t l = 0; l < net.layers().size(); ++l) {
        auto& layer = net.layers()[l];
        const auto& gl = g.layers[l];
        for (std::size_t i = 0; i < layer.weights.size(); ++i) layer.weights[i] -= lr * gl.weights[i];
        for (std::size_t i = 0; i < layer.biases.size(); ++i) layer.biases[i] -= lr * gl.biases[i];
      }
    }
    if (!std::isfinite(epoch_loss)) {
      throw DivergenceError("SGD diverged at epoch " + std::to_string(it) +
                            " (non-finite training loss)");
    }

    Evaluation ev;
    try {
      ev = evaluate(net, test, space, scratch, pred);
    } catch (const DataError&) {
      throw DivergenceError("SGD diverged at epoch " + std::to_string(it) +
                            " (non-finite network output)");
    }
    outcome.iterations = it;

    if (ev.pass_rate > best_pass) {
      best = net;
      outcome.test_pass_rate = ev.pass_rate;
      outcome.test_mse = ev.mse;
    }
    if (ev.pass_rate >= 1.0) {
      outcome.status = TrainStatus::converged;
      outcome.test_pass_rate = ev.pass_rate;
      outcome.test_mse = ev.mse;
      outcome.train_pass_rate = evaluate(net, train, space, scratch, pred).pass_rate;
      return outcome;
    }
    if (stop.checkpoint_iteration != 0 && it == stop.checkpoint_iteration) {
      outcome.checkpoint_pass_rate = ev.pass_rate;
      if (ev.pass_rate < stop.threshold) {
        outcome.status = TrainStatus::early_terminated;
        break;
      }
    }

    bool improved = false;
    if (ev.pass_rate > best_pass) {
      best_pass = ev.pass_rate;
      improved = true;
    }
    if (ev.mse < best_mse * (1.0 - params.min_relative_improvement)) {
      best_mse = ev.mse;
      improved = true;
    }
    if (improved) {
      stale = 0;
    } else if (++stale >= params.plateau_patience) {
      lr = std::max(min_lr, 0.5 * lr);
      stale = 0;
    }
  }

  if (outcome.status != TrainStatus::early_terminated) outcome.status = TrainStatus::max_iters;
  net = std::move(best);
  outcome.train_pass_rate = evaluate(net, train, space, scratch, pred).pass_rate;
  return outcome;
}

// ---------------------------------------------------------------------------
// Cost model

double activation_cost(std::span<const std::size_t> hidden_widths, std::size_t outputs_per_pass,
                       std::size_t num_vars, CostMode mode) {
  if (hidden_widths.empty()) return 0.0;
  const double total = static_cast<double>(
      std::accumulate(hidden_widths.begin(), hidden_widths.end(), std::size_t{0}));
  if (mode == CostMode::paper_estimate) {
    const double layers = static_cast<double>(hidden_widths.size());
    const double mean_width = total / layers;
    return layers * mean_width * static_cast<double>(num_vars);
  }
  const std::size_t per_pass = std::max<std::size_t>(outputs_per_pass, 1);
  const std::size_t passes = (num_vars + per_pass - 1) / per_pass;
  return total * static_cast<double>(passes);
}

double activation_cost(const MlpNetwork& net, std::size_t num_vars, CostMode mode) {
  const auto w = net.hidden_widths();
  return activation_cost(w, net.outputs(), num_vars, mode);
}

}  // namespace smlp
