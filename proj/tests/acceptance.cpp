// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero if
// any criterion fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "smlp/adaptive.hpp"
#include "smlp/binary_io.hpp"
#include "smlp/commands.hpp"
#include "smlp/config.hpp"
#include "smlp/mlp.hpp"
#include "smlp/model.hpp"
#include "smlp/som.hpp"
#include "smlp/table.hpp"
#include "test_util.hpp"

namespace smlp {
namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

int run_cli_args(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "smlp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (!err.str().empty()) std::cerr << err.str();
  return code;
}

// Artifacts shared by criteria 4, 5, 8, 9 and 10.
struct Desk {
  test::TempDir dir{"acceptance"};
  std::string table = (dir / "flame.tab").string();
  std::string model = (dir / "flame.mdl").string();
  bool trained = false;
  int train_code = -1;
};

Desk& desk() {
  static Desk d;
  return d;
}

// ---------------------------------------------------------------------------

double oracle_loss(const MlpNetwork& net, const RowMatrix& in, const RowMatrix& tgt) {
  double s = 0.0;
  for (std::size_t p = 0; p < in.rows; ++p) {
    std::vector<double> a(in.row(p).begin(), in.row(p).end());
    const auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      std::vector<double> z(L.outputs);
      for (std::size_t o = 0; o < L.outputs; ++o) {
        double v = L.biases[o];
        for (std::size_t i = 0; i < L.inputs; ++i) v += L.weights[o * L.inputs + i] * a[i];
        z[o] = l + 1 < layers.size() ? std::tanh(v) : v;
      }
      a = std::move(z);
    }
    for (std::size_t o = 0; o < a.size(); ++o) s += (a[o] - tgt(p, o)) * (a[o] - tgt(p, o));
  }
  return s / static_cast<double>(in.rows * tgt.cols);
}

Verdict gradient_check() {
  Rng rng(50);
  std::size_t checked = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> sizes{1 + rng.below(4)};
    const std::size_t hidden = 1 + rng.below(3);
    for (std::size_t l = 0; l < hidden; ++l) sizes.push_back(1 + rng.below(16));
    sizes.push_back(1 + rng.below(3));
    auto net = test::random_network(sizes, rng);
    const auto in = test::random_matrix(1 + rng.below(8), sizes.front(), rng, -1.0, 1.0);
    const auto tgt = test::random_matrix(in.rows, sizes.back(), rng, -1.0, 1.0);
    const auto g = mlp_backprop_grad(net, in, tgt).flatten();
    auto p = flatten_parameters(net);
    if (g.size() != p.size()) return {false, "gradient size mismatch"};
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
      const double err = std::abs(g[i] - fd);
      const double bound = std::max(1e-8, 1e-5 * std::max(std::abs(g[i]), std::abs(fd)));
      worst = std::max(worst, err / bound);
      if (err > bound) {
        return {false, "network " + std::to_string(trial) + " parameter " + std::to_string(i) +
                           ": backprop " + fmt(g[i], 12) + " vs fd " + fmt(fd, 12)};
      }
      ++checked;
    }
  }
  return {true, std::to_string(checked) + " components, worst error/bound " + fmt(worst, 3)};
}

// ---------------------------------------------------------------------------

std::size_t brute_force_assign(const SomMap& map, std::span<const double> q) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < map.num_clusters(); ++j) {
    double d2 = 0.0;
    for (std::size_t d = 0; d < map.dims; ++d) d2 += (q[d] - map.weights(j, d)) * (q[d] - map.weights(j, d));
    const double score = -std::sqrt(d2);
    if (score > best_score) {
      best_score = score;
      best = j;
    }
  }
  return best;
}

Verdict som_oracle() {
  std::size_t queries = 0;
  for (std::size_t nc : {1, 4, 15}) {
    Rng rng(nc);
    const auto points = test::random_matrix(600, 3, rng);
    SomTrainParams params;
    params.seed = nc;
    params.prune_empty = false;
    const SomMap map = som_train(points, SomTopology::line(nc), params);
    if (map.num_clusters() != nc) return {false, "map has " + std::to_string(map.num_clusters()) + " nodes"};
    for (int i = 0; i < 10000; ++i) {
      const auto q = test::random_matrix(1, 3, rng, -0.2, 1.2);
      if (som_assign(map, q.row(0)) != brute_force_assign(map, q.row(0))) {
        return {false, "mismatch at N_c=" + std::to_string(nc)};
      }
      ++queries;
    }
  }

  // Ties: nodes on a dyadic lattice, queries at exact midpoints and equidistant
  // centres, so distances compare equal in floating point.
  SomMap tie;
  tie.topology = SomTopology::line(4);
  tie.dims = 2;
  tie.weights = RowMatrix(4, 2);
  const double nodes[4][2] = {{0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}};
  for (std::size_t j = 0; j < 4; ++j) {
    tie.weights(j, 0) = nodes[j][0];
    tie.weights(j, 1) = nodes[j][1];
  }
  tie.trained = true;
  std::size_t ties = 0;
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> q(2);
    switch (i % 4) {
      case 0: q = {0.5, 0.5}; break;
      case 1: q = {0.5, rng.below(2) ? 0.25 : 0.75}; break;
      case 2: q = {rng.below(2) ? 0.25 : 0.75, 0.5}; break;
      default: q = {0.5, 0.0625 * static_cast<double>(rng.below(17))}; break;
    }
    const std::size_t want = brute_force_assign(tie, q);
    if (som_assign(tie, q) != want) return {false, "tie mismatch"};
    double d_first = 0.0, d_other = 0.0;
    for (std::size_t d = 0; d < 2; ++d) d_first += (q[d] - nodes[want][d]) * (q[d] - nodes[want][d]);
    for (std::size_t j = want + 1; j < 4; ++j) {
      d_other = 0.0;
      for (std::size_t d = 0; d < 2; ++d) d_other += (q[d] - nodes[j][d]) * (q[d] - nodes[j][d]);
      if (d_other == d_first) {
        ++ties;
        break;
      }
    }
  }
  if (ties < 1000) return {false, "only " + std::to_string(ties) + " tie cases constructed"};
  return {true, std::to_string(queries) + " random queries, " + std::to_string(ties) + " ties"};
}

// ---------------------------------------------------------------------------

Verdict baseline_exactness() {
  const SyntheticSpec spec{"multilinear", {7, 5, 9, 4}, 3, 11};
  const GridTable table = generate_synthetic(spec);
  const auto fn = make_synthetic_function(spec);
  Rng rng(3);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto q = test::random_query(table, rng);
    const auto got = multilinear_eval(table, q);
    const auto want = (*fn)(q);
    for (std::size_t k = 0; k < got.size(); ++k) {
      worst = std::max(worst, std::abs(got[k] - want[k]) / std::max(std::abs(want[k]), 1e-300));
    }
  }
  if (worst > 1e-12) return {false, "max relative error " + fmt(worst, 3)};
  double node_worst = 0.0;
  for (std::size_t p = 0; p < table.num_points(); ++p) {
    const auto tp = table_point(table, p);
    const auto got = multilinear_eval(table, tp.inputs);
    for (std::size_t k = 0; k < got.size(); ++k) {
      const double e = std::abs(got[k] - tp.outputs[k]);
      if (e > std::numeric_limits<double>::epsilon() * std::abs(tp.outputs[k])) {
        return {false, "node " + std::to_string(p) + " off by " + fmt(e, 3)};
      }
      node_worst = std::max(node_worst, e);
    }
  }
  return {true, "max relative error " + fmt(worst, 3) + " at random queries, node error " +
                    fmt(node_worst, 3)};
}

// ---------------------------------------------------------------------------

Verdict end_to_end() {
  auto& d = desk();
  if (run_cli_args({"generate", "--family", "flame-like", "--axes", "20,10,10", "--scalars", "8",
                    "--seed", "1", "--out", d.table}) != kExitOk) {
    return {false, "generate failed"};
  }
  const auto t0 = Clock::now();
  d.train_code = run_cli_args({"train", "--table", d.table, "--model", d.model, "--parallelism", "1"});
  const double train_seconds = since(t0);
  d.trained = d.train_code == kExitOk || d.train_code == kExitBestEffort;
  if (!d.trained) return {false, "train exited with " + std::to_string(d.train_code)};
  std::string text;
  if (run_cli_args({"eval", "--model", d.model, "--table", d.table, "--queries", "100000", "--seed", "99"},
                   &text) != kExitOk) {
    return {false, "eval failed"};
  }
  const auto pos = text.find("pass_rate  ");
  if (pos == std::string::npos) return {false, "eval printed no pass rate"};
  const double pass = std::stod(text.substr(pos + 11));
  const double total = since(t0);
  const bool ok = d.train_code == kExitOk && pass >= 0.95 && total < 300.0;
  return {ok, std::string(d.train_code == kExitOk ? "all networks converged" : "best effort") +
                  ", eval pass rate " + fmt(pass, 6) + ", train " + fmt(train_seconds, 3) + " s"};
}

Verdict compression() {
  auto& d = desk();
  if (!d.trained) return {false, "no trained model"};
  const auto model_bytes = std::filesystem::file_size(d.model);
  const auto table_bytes = std::filesystem::file_size(d.table);
  const double ratio = static_cast<double>(table_bytes) / static_cast<double>(model_bytes);
  return {model_bytes * 100 <= table_bytes, "model " + std::to_string(model_bytes) + " B, table " +
                                                 std::to_string(table_bytes) + " B, ratio " +
                                                 fmt(ratio, 3) + "x (needs 100x)"};
}

// ---------------------------------------------------------------------------

struct RunStats {
  std::size_t neurons = 0;
  double wall = 0.0;
  bool converged = false;
  std::vector<double> rmse;
};

RunStats train_and_measure(const SyntheticSpec& spec, std::size_t clusters, std::optional<std::size_t> groups,
                           std::size_t parallelism, std::uint64_t seed, std::size_t eval_queries) {
  const GridTable table = generate_synthetic(spec);
  RunConfig cfg;
  cfg.clusters = clusters;
  cfg.groups = groups;
  cfg.parallelism = parallelism;
  cfg.seed = seed;
  const TrainSetup setup = make_train_setup(cfg, table);
  const auto result = train_surrogate(table, setup);
  RunStats s;
  s.neurons = result.report.total_hidden_neurons();
  s.wall = result.report.wall_seconds;
  s.converged = result.report.all_converged();
  if (eval_queries > 0) {
    for (const auto& a : evaluate_accuracy(result.model, table, eval_queries, seed + 1000).scalars) {
      s.rmse.push_back(a.rmse);
    }
  }
  return s;
}

Verdict clustering_benefit() {
  int held = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const SyntheticSpec spec{"regimes", {20, 10, 10}, 8, seed};
    const auto clustered = train_and_measure(spec, 4, std::nullopt, 4, seed, 0);
    const auto global = train_and_measure(spec, 1, 0, 4, seed, 0);
    const bool ok = clustered.neurons <= global.neurons && clustered.wall < global.wall;
    held += ok;
    detail += (seed > 1 ? "; " : "") + std::string("seed ") + std::to_string(seed) + ": " +
              std::to_string(clustered.neurons) + " vs " + std::to_string(global.neurons) + " neurons, " +
              fmt(clustered.wall, 3) + " vs " + fmt(global.wall, 3) + " s";
  }
  return {held >= 2, std::to_string(held) + "/3 seeds hold (" + detail + ")"};
}

Verdict over_clustering() {
  int held = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const SyntheticSpec spec{"flame-like", {20, 10, 10}, 8, seed};
    const auto few = train_and_measure(spec, 4, std::nullopt, 1, seed, 100000);
    const auto many = train_and_measure(spec, 30, std::nullopt, 1, seed, 100000);
    int worse = 0;
    for (std::size_t k = 0; k < few.rmse.size(); ++k) worse += many.rmse[k] > few.rmse[k];
    held += worse >= 6;
    detail += (seed > 1 ? ", " : "") + std::string("seed ") + std::to_string(seed) + ": " +
              std::to_string(worse) + "/8";
  }
  return {held >= 2, std::to_string(held) + "/3 seeds hold (scalars with higher RMSE at N_c=30: " + detail + ")"};
}

// ---------------------------------------------------------------------------

Verdict cost_model() {
  auto& d = desk();
  if (!d.trained) return {false, "no trained model"};
  const SurrogateModel model = load_model(d.model);
  const GridTable table = load_table(d.table);
  const std::size_t n = 1000000;
  const RowMatrix q = sample_queries(table, n, 5);
  const BatchResult res = surrogate_eval_batch(model, q);

  std::vector<std::uint64_t> per_cluster(model.num_clusters(), 0);
  for (std::size_t c = 0; c < model.num_clusters(); ++c) {
    for (std::size_t g = 0; g < model.num_groups(); ++g) {
      for (std::size_t w : model.network(c, g).hidden_widths()) per_cluster[c] += w;
    }
  }
  std::uint64_t expected = 0;
  for (std::size_t i = 0; i < n; ++i) expected += per_cluster[surrogate_route(model, q.row(i))];
  if (res.activations != expected) {
    return {false, "counter " + std::to_string(res.activations) + " != " + std::to_string(expected)};
  }
  const bool uniform = std::ranges::all_of(per_cluster, [&](auto v) { return v == per_cluster[0]; });
  if (uniform && res.activations != n * per_cluster[0]) return {false, "counter differs from n x widths"};

  for (std::size_t c = 0; c < model.num_clusters(); ++c) {
    for (std::size_t g = 0; g < model.num_groups(); ++g) {
      const auto& net = model.network(c, g);
      const auto widths = net.hidden_widths();
      const double nl = static_cast<double>(widths.size());
      double sum = 0.0;
      for (std::size_t w : widths) sum += static_cast<double>(w);
      const double nvar = static_cast<double>(model.grouping.groups[g].size());
      const double want = nl * (sum / nl) * nvar;
      if (activation_cost(net, model.grouping.groups[g].size(), CostMode::paper_estimate) != want) {
        return {false, "paper estimate differs for network (" + std::to_string(c) + ", " + std::to_string(g) + ")"};
      }
    }
  }
  return {true, std::to_string(res.activations) + " activations over " + std::to_string(n) + " queries" +
                    (uniform ? " (" + std::to_string(per_cluster[0]) + " per query)" : "")};
}

Verdict determinism() {
  auto& d = desk();
  if (!d.trained) return {false, "no trained model"};
  const auto p8 = (d.dir / "flame-p8.mdl").string();
  run_cli_args({"train", "--table", d.table, "--model", p8, "--parallelism", "8"});
  if (read_file(d.model) != read_file(p8)) return {false, "parallelism 1 and 8 model files differ"};

  const SurrogateModel model = load_model(d.model);
  const GridTable table = load_table(d.table);
  const RowMatrix q = sample_queries(table, 1000, 17);
  const auto before = surrogate_eval_batch(model, q).outputs;
  const auto copy = (d.dir / "copy.mdl").string();
  save_model(model, copy);
  const auto after = surrogate_eval_batch(load_model(copy), q).outputs;
  for (std::size_t i = 0; i < before.data.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(before.data[i]) != std::bit_cast<std::uint64_t>(after.data[i])) {
      return {false, "reloaded model differs at output " + std::to_string(i)};
    }
  }
  if (read_file(d.model) != read_file(copy)) return {false, "re-saved file differs"};
  return {true, "identical files at parallelism 1 and 8, 1000 queries bitwise after reload"};
}

Verdict throughput() {
  auto& d = desk();
  if (!d.trained) return {false, "no trained model"};
  const SurrogateModel model = load_model(d.model);
  const GridTable table = load_table(d.table);
  const std::size_t n = 1000000;
  const RowMatrix q = sample_queries(table, n, 23);
  std::vector<double> surrogate, baseline;
  std::vector<double> out(table.num_scalars());
  double sink = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    surrogate.push_back(surrogate_eval_batch(model, q).seconds);
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < n; ++i) {
      multilinear_eval(table, q.row(i), out);
      sink += out[0];
    }
    baseline.push_back(since(t0));
  }
  std::ranges::sort(surrogate);
  std::ranges::sort(baseline);
  const double ratio = surrogate[2] / baseline[2];
  return {ratio <= 3.0 && std::isfinite(sink), "median surrogate " + fmt(surrogate[2], 3) + " s, multilinear " +
                                                   fmt(baseline[2], 3) + " s, ratio " + fmt(ratio, 3)};
}

}  // namespace
}  // namespace smlp

int main() {
  using namespace smlp;
  struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient check", 10.0, gradient_check},
      {2, "SOM assignment oracle", 5.0, som_oracle},
      {3, "multilinear baseline exactness", 5.0, baseline_exactness},
      {4, "end-to-end convergence", 300.0, end_to_end},
      {5, "compression", 0.0, compression},
      {6, "clustering benefit", 0.0, clustering_benefit},
      {7, "over-clustering trend", 900.0, over_clustering},
      {8, "cost model consistency", 0.0, cost_model},
      {9, "determinism and round trip", 0.0, determinism},
      {10, "throughput parity", 120.0, throughput},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = since(t0);
    if (c.limit_seconds > 0.0 && seconds >= c.limit_seconds) {
      v.pass = false;
      v.detail += "; over the " + fmt(c.limit_seconds, 4) + " s limit";
    }
    failed += !v.pass;
    std::printf("criterion %2d %-32s %s  %s (%.2f s)\n", c.id, c.name, v.pass ? "PASS" : "FAIL",
                v.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
