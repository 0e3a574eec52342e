#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "smlp/activation.hpp"
#include "smlp/common.hpp"

namespace smlp {

struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  Activation activation = Activation::linear;
  std::vector<double> weights;  // outputs x inputs, row-major
  std::vector<double> biases;   // outputs

  double weight(std::size_t out, std::size_t in) const { return weights[out * inputs + in]; }

  bool operator==(const DenseLayer&) const = default;
};

/// Feed-forward network: hidden layers with tanh/logistic/linear activations
/// and a linear output layer.
class MlpNetwork {
 public:
  MlpNetwork() = default;
  /// Zero-initialized network. `layer_sizes` = [n_in, h_1, ..., h_L, n_out].
  MlpNetwork(const std::vector<std::size_t>& layer_sizes,
             const std::vector<Activation>& hidden_activations);
  MlpNetwork(const std::vector<std::size_t>& layer_sizes, Activation hidden = Activation::tanh);

  /// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static MlpNetwork glorot(const std::vector<std::size_t>& layer_sizes, Activation hidden,
                           Rng& rng);

  /// Wraps pre-built layers, checking shapes and finiteness.
  explicit MlpNetwork(std::vector<DenseLayer> layers);

  std::size_t inputs() const { return layers_.front().inputs; }
  std::size_t outputs() const { return layers_.back().outputs; }
  std::size_t num_hidden_layers() const { return layers_.size() - 1; }
  std::vector<std::size_t> layer_sizes() const;
  std::vector<std::size_t> hidden_widths() const;
  std::size_t hidden_neurons() const;
  std::size_t parameter_count() const;
  std::size_t max_width() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  /// Throws ConfigError on shape mismatch, DataError on non-finite parameters.
  void validate() const;

  bool operator==(const MlpNetwork&) const = default;

 private:
  std::vector<DenseLayer> layers_;
};

/// Flattened parameters in layer order, weights then biases per layer.
std::vector<double> flatten_parameters(const MlpNetwork& net);
void set_parameters(MlpNetwork& net, std::span<const double> params);

/// Thread-safe count of hidden-neuron activation evaluations.
class ActivationCounter {
 public:
  void add(std::uint64_t n) { count_.fetch_add(n, std::memory_order_relaxed); }
  std::uint64_t value() const { return count_.load(std::memory_order_relaxed); }
  void reset() { count_.store(0, std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> count_{0};
};

std::vector<double> mlp_forward(const MlpNetwork& net, std::span<const double> x,
                                ActivationCounter* counter = nullptr);

/// Reusable buffers for forward evaluation.
struct ForwardScratch {
  std::vector<double> a, b;
};

void mlp_forward(const MlpNetwork& net, std::span<const double> x, std::span<double> out,
                 ForwardScratch& scratch, ActivationCounter* counter = nullptr);

/// Evaluates `count` row-major inputs (count x n_in) into row-major outputs
/// (count x n_out). Per-query arithmetic is identical to mlp_forward, so
/// results match bitwise.
void mlp_forward_block(const MlpNetwork& net, const double* inputs, std::size_t count, double* outputs,
                       ForwardScratch& scratch, ActivationCounter* counter = nullptr);

// ---------------------------------------------------------------------------
// Gradients

struct LayerGradient {
  std::vector<double> weights;
  std::vector<double> biases;
};

struct Gradient {
  std::vector<LayerGradient> layers;
  double loss = 0.0;  // batch-mean squared error over samples and outputs

  std::vector<double> flatten() const;
};

/// Exact gradient of the batch-mean MSE, (1 / (B * n_out)) * sum (y - t)^2.
Gradient mlp_backprop_grad(const MlpNetwork& net, const RowMatrix& inputs, const RowMatrix& targets);

// ---------------------------------------------------------------------------
// Tolerance criterion

/// Per-point pass criterion: |prediction - reference| <= tau_a + tau_r |reference|.
struct ToleranceSpec {
  double tau_a = 0.0;
  double tau_r = 0.0;

  double threshold(double reference) const { return tau_a + tau_r * std::abs(reference); }
  void validate() const;

  bool operator==(const ToleranceSpec&) const = default;
};

bool tolerance_pass(double prediction, double reference, const ToleranceSpec& tol);
double pass_rate(std::span<const double> predictions, std::span<const double> references,
                 const ToleranceSpec& tol);

// ---------------------------------------------------------------------------
// SGD training

/// Affine output scaling to [0, 1] by per-scalar min/max. A constant scalar
/// uses its magnitude (or 1 for zero) as the range.
struct OutputScale {
  double min = 0.0;
  double max = 1.0;

  double range() const {
    if (max > min) return max - min;
    return min != 0.0 ? std::abs(min) : 1.0;
  }
  double normalize(double v) const { return (v - min) / range(); }
  double denormalize(double u) const { return min + u * range(); }

  bool operator==(const OutputScale&) const = default;
};

/// Inputs (normalized) with raw-unit targets.
struct SupervisedSet {
  RowMatrix inputs;
  RowMatrix targets;

  std::size_t size() const { return inputs.rows; }
};

/// Per-output scaling and tolerance; the criterion is applied in raw units.
struct TargetSpace {
  std::vector<OutputScale> scales;
  std::vector<ToleranceSpec> tolerances;
};

struct SgdParams {
  double learning_rate = 0.2;
  std::size_t batch_size = 1;
  /// Evaluation epochs (full passes over the training set).
  std::size_t max_iterations = 2000;
  std::uint64_t seed = 1;
  bool shuffle = true;
  /// Halve the learning rate after this many epochs without improvement in
  /// test pass rate or test MSE.
  std::size_t plateau_patience = 50;
  /// Test MSE must drop by this fraction of the best so far to count as progress.
  double min_relative_improvement = 0.0;
  double min_learning_rate_fraction = 1.0 / 64.0;

  void validate() const;
};

struct EarlyStopPolicy {
  /// Epoch at which the pass rate is checked; 0 disables early termination.
  std::size_t checkpoint_iteration = 0;
  /// Training continues past the checkpoint only if pass rate >= threshold.
  double threshold = 0.5;
};

enum class TrainStatus { converged, early_terminated, max_iters };

std::string_view train_status_name(TrainStatus s);

struct TrainOutcome {
  TrainStatus status = TrainStatus::max_iters;
  double test_pass_rate = 0.0;
  double train_pass_rate = 0.0;
  /// Test pass rate at the early-stop checkpoint, or -1 if not reached.
  double checkpoint_pass_rate = -1.0;
  double test_mse = 0.0;  // in normalized output units
  std::size_t iterations = 0;
};

/// Point-level pass rate: a point passes iff every output is within tolerance.
double dataset_pass_rate(const MlpNetwork& net, const SupervisedSet& data, const TargetSpace& space);

/// Mini-batch SGD on normalized targets until every test point passes, the
/// early-stop checkpoint fails, or max_iterations is reached. On a non-converged
/// exit the network holds the weights with the best test pass rate seen.
TrainOutcome sgd_train(MlpNetwork& net, const SupervisedSet& train, const SupervisedSet& test,
                       const TargetSpace& space, const SgdParams& params,
                       const EarlyStopPolicy& stop = {});

// ---------------------------------------------------------------------------
// Evaluation cost model

enum class CostMode { paper_estimate, exact };

/// paper_estimate: N_l * N_n * N_var with N_n the mean hidden width.
/// exact: sum of hidden widths times the passes needed for N_var outputs
/// (ceil(N_var / outputs_per_pass)).
double activation_cost(std::span<const std::size_t> hidden_widths, std::size_t outputs_per_pass,
                       std::size_t num_vars, CostMode mode);
double activation_cost(const MlpNetwork& net, std::size_t num_vars, CostMode mode);

}  // namespace smlp
