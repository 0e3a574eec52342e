#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "smlp/mlp.hpp"
#include "test_util.hpp"

using namespace smlp;

namespace {

// Plain forward pass with std::tanh, written independently of the library.
std::vector<double> oracle_forward(const MlpNetwork& net, std::vector<double> x) {
  for (const auto& l : net.layers()) {
    std::vector<double> y(l.outputs);
    for (std::size_t i = 0; i < l.outputs; ++i) {
      double s = l.biases[i];
      for (std::size_t j = 0; j < l.inputs; ++j) s += l.weights[i * l.inputs + j] * x[j];
      switch (l.activation) {
        case Activation::tanh:
          y[i] = std::tanh(s);
          break;
        case Activation::logistic:
          y[i] = 1.0 / (1.0 + std::exp(-s));
          break;
        case Activation::linear:
          y[i] = s;
          break;
      }
    }
    x = std::move(y);
  }
  return x;
}

double oracle_loss(const MlpNetwork& net, const RowMatrix& in, const RowMatrix& tgt) {
  double s = 0.0;
  for (std::size_t p = 0; p < in.rows; ++p) {
    const auto y = oracle_forward(net, {in.row(p).begin(), in.row(p).end()});
    for (std::size_t o = 0; o < y.size(); ++o) s += (y[o] - tgt(p, o)) * (y[o] - tgt(p, o));
  }
  return s / static_cast<double>(in.rows * tgt.cols);
}

SupervisedSet make_set(const RowMatrix& in, const RowMatrix& tgt) { return {in, tgt}; }

TargetSpace unit_space(std::size_t outputs, ToleranceSpec tol) {
  return {std::vector<OutputScale>(outputs, OutputScale{0.0, 1.0}),
          std::vector<ToleranceSpec>(outputs, tol)};
}

}  // namespace

TEST(Activation, TanhKernelMatchesStd) {
  Rng rng(1);
  for (int i = 0; i < 200000; ++i) {
    const double x = i % 3 == 0 ? rng.uniform(-1e-3, 1e-3) : rng.uniform(-30.0, 30.0);
    const double ref = std::tanh(x);
    EXPECT_NEAR(kernel::tanh(x), ref, 2e-15 * std::abs(ref) + 1e-300) << x;
  }
  EXPECT_EQ(kernel::tanh(0.0), 0.0);
  EXPECT_FALSE(std::signbit(kernel::tanh(0.0)));
  EXPECT_TRUE(std::signbit(kernel::tanh(-0.0)));
  EXPECT_EQ(kernel::tanh(50.0), 1.0);
  EXPECT_EQ(kernel::tanh(-1e300), -1.0);
  EXPECT_EQ(kernel::tanh(std::numeric_limits<double>::infinity()), 1.0);
}

TEST(Activation, BlockMatchesScalar) {
  std::vector<double> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -8.0 + 0.016 * static_cast<double>(i);
  for (Activation a : {Activation::tanh, Activation::logistic, Activation::linear}) {
    auto b = v;
    kernel::apply_block(a, b.data(), b.size());
    for (std::size_t i = 0; i < v.size(); ++i) ASSERT_EQ(b[i], kernel::apply(a, v[i]));
  }
  EXPECT_NEAR(kernel::logistic(0.7), 1.0 / (1.0 + std::exp(-0.7)), 1e-15);
  EXPECT_EQ(parse_activation("tanh"), Activation::tanh);
  EXPECT_EQ(activation_name(Activation::logistic), "logistic");
  EXPECT_THROW(parse_activation("relu"), ConfigError);
}

TEST(Mlp, HandComputedForward) {
  DenseLayer h{2, 2, Activation::tanh, {0.5, -1.0, 2.0, 0.25}, {0.1, -0.2}};
  DenseLayer o{2, 1, Activation::linear, {1.5, -0.5}, {0.3}};
  const MlpNetwork net({h, o});
  const double x0 = 0.4, x1 = -0.6;
  const double h0 = std::tanh(0.1 + 0.5 * x0 - 1.0 * x1);
  const double h1 = std::tanh(-0.2 + 2.0 * x0 + 0.25 * x1);
  const double y = 0.3 + 1.5 * h0 - 0.5 * h1;
  EXPECT_NEAR(mlp_forward(net, std::vector<double>{x0, x1})[0], y, 1e-15);
}

TEST(Mlp, ForwardMatchesOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto net = test::random_network({3, 1 + rng.below(16), 1 + rng.below(16), 2}, rng, 2.0);
    for (int i = 0; i < 20; ++i) {
      std::vector<double> x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      const auto y = mlp_forward(net, x);
      const auto ref = oracle_forward(net, x);
      for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(y[o], ref[o], 1e-13 * (1 + std::abs(ref[o])));
    }
  }
}

TEST(Mlp, BlockForwardIsBitwiseEqualToSingle) {
  Rng rng(4);
  const auto net = test::random_network({4, 12, 6, 3}, rng);
  for (std::size_t count : {1, 63, 64, 65, 200}) {
    const auto x = test::random_matrix(count, 4, rng);
    std::vector<double> block(count * 3);
    ForwardScratch scratch;
    ActivationCounter counter;
    mlp_forward_block(net, x.data.data(), count, block.data(), scratch, &counter);
    EXPECT_EQ(counter.value(), count * 18);
    for (std::size_t q = 0; q < count; ++q) {
      const auto y = mlp_forward(net, x.row(q));
      for (std::size_t o = 0; o < 3; ++o) ASSERT_EQ(block[q * 3 + o], y[o]);
    }
  }
}

TEST(Mlp, ShapesAndCounts) {
  const MlpNetwork net({4, 12, 6, 1});
  EXPECT_EQ(net.parameter_count(), 145u);
  EXPECT_EQ(net.hidden_neurons(), 18u);
  EXPECT_EQ(net.hidden_widths(), (std::vector<std::size_t>{12, 6}));
  EXPECT_EQ(net.layer_sizes(), (std::vector<std::size_t>{4, 12, 6, 1}));
  EXPECT_EQ(net.max_width(), 12u);
  EXPECT_THROW(MlpNetwork(std::vector<std::size_t>{4}), ConfigError);
  EXPECT_THROW(MlpNetwork({4, 0, 1}), ConfigError);
  EXPECT_THROW(mlp_forward(net, std::vector<double>{1.0, 2.0}), DimensionError);

  Rng rng(1);
  auto g = MlpNetwork::glorot({5, 7, 2}, Activation::tanh, rng);
  const double lim = std::sqrt(6.0 / 12.0);
  for (double w : g.layers()[0].weights) EXPECT_LE(std::abs(w), lim);
  for (double b : g.layers()[0].biases) EXPECT_EQ(b, 0.0);
  auto p = flatten_parameters(g);
  ASSERT_EQ(p.size(), g.parameter_count());
  p[0] = 42.0;
  set_parameters(g, p);
  EXPECT_EQ(g.layers()[0].weights[0], 42.0);
  p.push_back(1.0);
  EXPECT_THROW(set_parameters(g, p), DimensionError);
}

TEST(Mlp, ForwardIsDeterministicAndCounted) {
  Rng rng(2);
  const auto net = test::random_network({2, 9, 5, 1}, rng);
  ActivationCounter c;
  const std::vector<double> x{0.3, 0.8};
  const auto a = mlp_forward(net, x, &c);
  const auto b = mlp_forward(net, x, &c);
  EXPECT_EQ(a, b);
  EXPECT_EQ(c.value(), 2u * 14u);
}

TEST(Mlp, NonFiniteForwardIsAnError) {
  MlpNetwork net({1, 2, 1});
  EXPECT_THROW(mlp_forward(net, std::vector<double>{std::nan("")}), DataError);
  auto bad = net;
  bad.layers()[0].weights[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(bad.validate(), DataError);
}

TEST(Backprop, MatchesCentralDifferences) {
  Rng rng(2024);
  for (int trial = 0; trial < 12; ++trial) {
    std::vector<std::size_t> sizes{1 + rng.below(4)};
    const std::size_t hidden = 1 + rng.below(3);
    for (std::size_t l = 0; l < hidden; ++l) sizes.push_back(1 + rng.below(16));
    sizes.push_back(1 + rng.below(3));
    auto net = test::random_network(sizes, rng);
    const auto in = test::random_matrix(1 + rng.below(5), sizes.front(), rng, -1.0, 1.0);
    const auto tgt = test::random_matrix(in.rows, sizes.back(), rng, -1.0, 1.0);
    const auto grad = mlp_backprop_grad(net, in, tgt);
    EXPECT_NEAR(grad.loss, oracle_loss(net, in, tgt), 1e-13);
    const auto g = grad.flatten();
    auto p = flatten_parameters(net);
    ASSERT_EQ(g.size(), p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(p[i]));
      const double keep = p[i];
      p[i] = keep + h;
      set_parameters(net, p);
      const double up = oracle_loss(net, in, tgt);
      p[i] = keep - h;
      set_parameters(net, p);
      const double down = oracle_loss(net, in, tgt);
      p[i] = keep;
      set_parameters(net, p);
      const double fd = (up - down) / (2.0 * h);
      EXPECT_LE(std::abs(g[i] - fd), std::max(1e-8, 1e-5 * std::max(std::abs(g[i]), std::abs(fd))))
          << "trial " << trial << " param " << i;
    }
  }
}

TEST(Backprop, RejectsMismatchedBatches) {
  MlpNetwork net({2, 3, 1});
  EXPECT_THROW(mlp_backprop_grad(net, RowMatrix(0, 2), RowMatrix(0, 1)), DataError);
  EXPECT_THROW(mlp_backprop_grad(net, RowMatrix(2, 2), RowMatrix(3, 1)), DimensionError);
  EXPECT_THROW(mlp_backprop_grad(net, RowMatrix(2, 2), RowMatrix(2, 2)), DimensionError);
}

TEST(Tolerance, WorkedExample) {
  const double phi_max = 2000.0;
  const ToleranceSpec tol{phi_max * 1e-3, 4e-2};
  EXPECT_DOUBLE_EQ(tol.threshold(1500.0), 62.0);
  EXPECT_TRUE(tolerance_pass(1540.0, 1500.0, tol));
  EXPECT_FALSE(tolerance_pass(1570.0, 1500.0, tol));
  EXPECT_TRUE(tolerance_pass(1562.0, 1500.0, tol));
  // Absolute value on the reference.
  EXPECT_TRUE(tolerance_pass(-1540.0, -1500.0, tol));
}

TEST(Tolerance, DegenerateTerms) {
  const ToleranceSpec abs_only{0.1, 0.0};
  EXPECT_TRUE(tolerance_pass(1e6 + 0.1, 1e6, abs_only));
  EXPECT_FALSE(tolerance_pass(0.25, 0.1, abs_only));
  for (double r : {-3.0, 0.0, 7.5}) EXPECT_TRUE(tolerance_pass(r, r, {1e-12, 0.0}));
  const std::vector<double> pred{1.0, 2.0, 3.5, 4.0}, ref{1.0, 2.05, 3.0, 4.0};
  EXPECT_DOUBLE_EQ(pass_rate(pred, ref, abs_only), 0.75);
  EXPECT_THROW(pass_rate(pred, std::vector<double>{1.0}, abs_only), DimensionError);
  EXPECT_THROW((ToleranceSpec{0.0, 0.0}.validate()), ConfigError);
  EXPECT_THROW((ToleranceSpec{-1.0, 0.1}.validate()), ConfigError);
}

TEST(CostModel, WorkedExamples) {
  const std::vector<std::size_t> w12{12, 12};
  EXPECT_EQ(activation_cost(w12, 1, 24, CostMode::paper_estimate), 576.0);
  const std::vector<std::size_t> w126{12, 6};
  EXPECT_EQ(activation_cost(w126, 5, 5, CostMode::exact), 18.0);
  const std::vector<std::size_t> w189{18, 9};
  EXPECT_EQ(activation_cost(w189, 24, 24, CostMode::exact), 27.0);
  EXPECT_EQ(activation_cost(w189, 1, 24, CostMode::exact), 648.0);
  EXPECT_EQ(activation_cost(w189, 1, 24, CostMode::paper_estimate), 648.0);

  // Exact mode agrees with the runtime counter.
  Rng rng(3);
  const auto net = test::random_network({4, 12, 6, 1}, rng);
  ActivationCounter c;
  for (int i = 0; i < 24; ++i) mlp_forward(net, std::vector<double>{0.1, 0.2, 0.3, 0.4}, &c);
  EXPECT_EQ(static_cast<double>(c.value()), activation_cost(net, 24, CostMode::exact));
}

TEST(OutputScale, ConstantScalarUsesMagnitude) {
  EXPECT_DOUBLE_EQ((OutputScale{2.0, 6.0}.normalize(5.0)), 0.75);
  EXPECT_DOUBLE_EQ((OutputScale{-4.0, -4.0}.range()), 4.0);
  EXPECT_DOUBLE_EQ((OutputScale{0.0, 0.0}.range()), 1.0);
  const OutputScale s{3.0, 11.0};
  EXPECT_DOUBLE_EQ(s.denormalize(s.normalize(7.25)), 7.25);
}

TEST(Sgd, ConstantTargetConvergesQuickly) {
  Rng rng(5);
  const auto x = test::random_matrix(40, 2, rng);
  RowMatrix t(40, 1);
  for (double& v : t.data) v = 3.0;
  auto net = MlpNetwork::glorot({2, 6, 3, 1}, Activation::tanh, rng);
  const TargetSpace space{{OutputScale{3.0, 3.0}}, {ToleranceSpec{3e-3, 4e-2}}};
  const auto out = sgd_train(net, make_set(x, t), make_set(x, t), space, SgdParams{});
  EXPECT_EQ(out.status, TrainStatus::converged);
  EXPECT_EQ(out.test_pass_rate, 1.0);
  EXPECT_LE(out.iterations, 20u);
}

TEST(Sgd, LinearTargetReachesLeastSquaresSolution) {
  // y = 0.3 + 0.5 x0 - 0.2 x1; the least-squares fit of a linear model is exact.
  Rng rng(6);
  const auto x = test::random_matrix(50, 2, rng);
  RowMatrix t(50, 1);
  for (std::size_t p = 0; p < 50; ++p) t(p, 0) = 0.3 + 0.5 * x(p, 0) - 0.2 * x(p, 1);
  auto net = MlpNetwork::glorot({2, 1}, Activation::linear, rng);
  SgdParams params;
  params.learning_rate = 0.1;
  params.max_iterations = 3000;
  const auto space = unit_space(1, {1e-14, 0.0});
  const auto out = sgd_train(net, make_set(x, t), make_set(x, t), space, params);
  EXPECT_LE(out.test_mse, 1e-8);
  const auto& l = net.layers()[0];
  EXPECT_NEAR(l.weights[0], 0.5, 1e-4);
  EXPECT_NEAR(l.weights[1], -0.2, 1e-4);
  EXPECT_NEAR(l.biases[0], 0.3, 1e-4);
}

TEST(Sgd, HugeLearningRateDiverges) {
  const auto table = generate_synthetic({"gauss-bumps", {8, 8}, 1, 3});
  const auto pts = normalize_inputs(table);
  RowMatrix t(table.num_points(), 1);
  for (std::size_t p = 0; p < table.num_points(); ++p) t(p, 0) = table.value(p, 0);
  Rng rng(7);
  auto net = MlpNetwork::glorot({2, 8, 4, 1}, Activation::tanh, rng);
  SgdParams params;
  params.learning_rate = 1e3;
  params.max_iterations = 200;
  const TargetSpace space{{OutputScale{table.scalar_min(0), table.scalar_max(0)}},
                          {ToleranceSpec{1e-9, 0.0}}};
  EXPECT_THROW(sgd_train(net, make_set(pts.points, t), make_set(pts.points, t), space, params),
               DivergenceError);
}

TEST(Sgd, EarlyStopAndBestSnapshot) {
  Rng rng(9);
  const auto x = test::random_matrix(60, 2, rng);
  RowMatrix t(60, 1);
  for (std::size_t p = 0; p < 60; ++p) t(p, 0) = std::sin(9.0 * x(p, 0)) * std::cos(7.0 * x(p, 1));
  const TargetSpace space{{OutputScale{-1.0, 1.0}}, {ToleranceSpec{1e-6, 1e-6}}};
  auto net = MlpNetwork::glorot({2, 3, 2, 1}, Activation::tanh, rng);
  SgdParams params;
  params.max_iterations = 100;
  const auto out = sgd_train(net, make_set(x, t), make_set(x, t), space, params, {10, 0.5});
  EXPECT_EQ(out.status, TrainStatus::early_terminated);
  EXPECT_EQ(out.iterations, 10u);
  EXPECT_GE(out.checkpoint_pass_rate, 0.0);
  EXPECT_LT(out.checkpoint_pass_rate, 0.5);
  // The returned network is the best snapshot.
  EXPECT_EQ(dataset_pass_rate(net, make_set(x, t), space), out.test_pass_rate);
  EXPECT_EQ(train_status_name(out.status), "early_terminated");
}

TEST(Sgd, SameSeedSameNetwork) {
  Rng rng(10);
  const auto x = test::random_matrix(30, 2, rng);
  RowMatrix t(30, 1);
  for (std::size_t p = 0; p < 30; ++p) t(p, 0) = x(p, 0) * x(p, 1);
  const auto space = unit_space(1, {1e-4, 0.0});
  Rng r1(3), r2(3);
  auto a = MlpNetwork::glorot({2, 5, 1}, Activation::tanh, r1);
  auto b = MlpNetwork::glorot({2, 5, 1}, Activation::tanh, r2);
  SgdParams params;
  params.max_iterations = 30;
  sgd_train(a, make_set(x, t), make_set(x, t), space, params);
  sgd_train(b, make_set(x, t), make_set(x, t), space, params);
  EXPECT_EQ(a, b);
}

TEST(Sgd, RejectsBadInputs) {
  MlpNetwork net({2, 3, 1});
  const auto space = unit_space(1, {0.1, 0.0});
  const SupervisedSet empty{RowMatrix(0, 2), RowMatrix(0, 1)};
  const SupervisedSet one{RowMatrix(1, 2), RowMatrix(1, 1)};
  EXPECT_THROW(sgd_train(net, empty, one, space, {}), DataError);
  SgdParams bad;
  bad.learning_rate = 0.0;
  EXPECT_THROW(sgd_train(net, one, one, space, bad), ConfigError);
  const SupervisedSet wide{RowMatrix(1, 3), RowMatrix(1, 1)};
  EXPECT_THROW(sgd_train(net, wide, one, space, {}), DimensionError);
}
