#include "smlp/som.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace smlp {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void check_finite(const RowMatrix& points) {
  for (double v : points.data) {
    if (!std::isfinite(v)) throw DataError("SOM input contains non-finite values");
  }
}

}  // namespace

double SomTopology::half_diameter() const {
  const double r = static_cast<double>(rows - 1);
  const double c = static_cast<double>(cols - 1);
  return 0.5 * std::sqrt(r * r + c * c);
}

SomMap som_train(const RowMatrix& points, SomTopology topology, const SomTrainParams& params,
                 SomTrainTrace* trace) {
  const std::size_t n = points.rows;
  const std::size_t nodes = topology.nodes();
  if (nodes == 0) throw ConfigError("SOM needs at least one node");
  if (points.cols == 0) throw DataError("SOM input has zero dimensions");
  if (n < nodes) {
    throw DataError("SOM has " + std::to_string(nodes) + " nodes but only " + std::to_string(n) +
                    " points");
  }
  if (params.epochs == 0) throw ConfigError("SOM epochs must be >= 1");
  if (!(params.learning_rate_start > 0.0) || params.learning_rate_end < 0.0) {
    throw ConfigError("SOM learning rates must be positive");
  }
  check_finite(points);

  Rng rng(params.seed);
  SomMap map{topology, points.cols, RowMatrix(nodes, points.cols), false};

  // Initialize from distinct random input points.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t j = 0; j < nodes; ++j) {
    std::swap(order[j], order[j + rng.below(n - j)]);
    auto src = points.row(order[j]);
    std::copy(src.begin(), src.end(), map.weights.row(j).begin());
  }

  std::vector<double> lattice_r(nodes), lattice_c(nodes);
  for (std::size_t j = 0; j < nodes; ++j) {
    lattice_r[j] = static_cast<double>(j / topology.cols);
    lattice_c[j] = static_cast<double>(j % topology.cols);
  }

  const std::size_t ordered_epochs = static_cast<std::size_t>(
      std::ceil(params.ordered_fraction * static_cast<double>(params.epochs)));
  const double total_steps = static_cast<double>(params.epochs * n);
  const double ordered_steps = static_cast<double>(ordered_epochs * n);
  const double radius0 = topology.half_diameter();

  if (trace) {
    trace->quantization_error.assign(1, quantization_error(map, points));
    trace->ordered_epochs = ordered_epochs;
  }

  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
    if (params.shuffle) rng.shuffle(order);
    for (std::size_t i = 0; i < n; ++i, ++step) {
      const auto x = points.row(order[i]);
      const double s = static_cast<double>(step);
      const double lr = params.learning_rate_start +
                        (params.learning_rate_end - params.learning_rate_start) *
                            (total_steps > 1.0 ? s / (total_steps - 1.0) : 0.0);
      const double radius = s < ordered_steps ? radius0 * (1.0 - s / ordered_steps) : 0.0;

      const std::size_t winner = som_assign(map, x);
      if (radius <= 0.0) {
        auto w = map.weights.row(winner);
        for (std::size_t d = 0; d < w.size(); ++d) w[d] += lr * (x[d] - w[d]);
        continue;
      }
      const double inv_two_r2 = 1.0 / (2.0 * radius * radius);
      for (std::size_t j = 0; j < nodes; ++j) {
        const double dr = lattice_r[j] - lattice_r[winner];
        const double dc = lattice_c[j] - lattice_c[winner];
        const double h = std::exp(-(dr * dr + dc * dc) * inv_two_r2);
        auto w = map.weights.row(j);
        for (std::size_t d = 0; d < w.size(); ++d) w[d] += lr * h * (x[d] - w[d]);
      }
    }
    if (trace) trace->quantization_error.push_back(quantization_error(map, points));
  }
  map.trained = true;

  if (params.prune_empty && nodes > 1) {
    std::vector<std::size_t> counts(nodes, 0);
    for (std::size_t p = 0; p < n; ++p) ++counts[som_assign(map, points.row(p))];
    const auto kept = static_cast<std::size_t>(
        std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }));
    if (kept < nodes) {
      RowMatrix w(kept, map.dims);
      std::size_t k = 0;
      for (std::size_t j = 0; j < nodes; ++j) {
        if (counts[j] == 0) continue;
        auto src = map.weights.row(j);
        std::copy(src.begin(), src.end(), w.row(k++).begin());
      }
      map.weights = std::move(w);
      map.topology = SomTopology::line(kept);
      if (trace) trace->pruned_nodes = nodes - kept;
    }
  }
  return map;
}

std::size_t som_assign(const SomMap& map, std::span<const double> query) {
  if (query.size() != map.dims) {
    throw DimensionError("SOM query has " + std::to_string(query.size()) + " coordinates, map has " +
                         std::to_string(map.dims));
  }
  std::size_t best = 0;
  double best_d = squared_distance(map.node(0), query);
  for (std::size_t j = 1; j < map.num_clusters(); ++j) {
    const double d = squared_distance(map.node(j), query);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

NearestTwo som_nearest_two(const SomMap& map, std::span<const double> query) {
  if (query.size() != map.dims) throw DimensionError("SOM query dimension mismatch");
  NearestTwo r;
  double d1 = squared_distance(map.node(0), query);
  double d2 = d1;
  r.first = r.second = 0;
  bool have_second = false;
  for (std::size_t j = 1; j < map.num_clusters(); ++j) {
    const double d = squared_distance(map.node(j), query);
    if (d < d1) {
      d2 = d1;
      r.second = r.first;
      d1 = d;
      r.first = j;
      have_second = true;
    } else if (!have_second || d < d2) {
      d2 = d;
      r.second = j;
      have_second = true;
    }
  }
  r.first_distance = std::sqrt(d1);
  r.second_distance = std::sqrt(d2);
  return r;
}

std::vector<std::size_t> som_assign_all(const SomMap& map, const RowMatrix& points) {
  std::vector<std::size_t> a(points.rows);
  for (std::size_t p = 0; p < points.rows; ++p) a[p] = som_assign(map, points.row(p));
  return a;
}

double quantization_error(const SomMap& map, const RowMatrix& points) {
  if (points.rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t p = 0; p < points.rows; ++p) {
    const auto x = points.row(p);
    total += std::sqrt(squared_distance(map.node(som_assign(map, x)), x));
  }
  return total / static_cast<double>(points.rows);
}

std::size_t default_cluster_count(std::size_t num_points) {
  constexpr double kReferencePoints = 1.62e6;
  const double scaled = 4.0 * static_cast<double>(num_points) / kReferencePoints;
  return std::max<std::size_t>(4, static_cast<std::size_t>(std::llround(scaled)));
}

// ---------------------------------------------------------------------------
// Scalar grouping

std::size_t ScalarGrouping::num_scalars() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.size();
  return n;
}

void ScalarGrouping::validate(std::size_t num_scalars) const {
  std::vector<int> seen(num_scalars, 0);
  for (const auto& g : groups) {
    if (g.empty()) throw ConfigError("scalar grouping contains an empty group");
    for (std::size_t s : g) {
      if (s >= num_scalars) throw ConfigError("scalar grouping index out of range");
      if (seen[s]++) throw ConfigError("scalar grouping assigns a scalar twice");
    }
  }
  for (int c : seen) {
    if (c == 0) throw ConfigError("scalar grouping does not cover every scalar");
  }
}

ScalarGrouping ScalarGrouping::singletons(std::size_t num_scalars) {
  ScalarGrouping g;
  for (std::size_t s = 0; s < num_scalars; ++s) g.groups.push_back({s});
  return g;
}

ScalarGrouping ScalarGrouping::single(std::size_t num_scalars) {
  ScalarGrouping g;
  g.groups.emplace_back(num_scalars);
  std::iota(g.groups[0].begin(), g.groups[0].end(), 0);
  return g;
}

RowMatrix scalar_features(const GridTable& table, std::size_t sample_points) {
  const std::size_t n = table.num_points();
  const std::size_t m = std::min(sample_points, n);
  std::vector<std::size_t> idx(m);
  if (m == n) {
    std::iota(idx.begin(), idx.end(), 0);
  } else {
    // Golden-ratio stride, made coprime with n so the indices are distinct.
    std::size_t stride = static_cast<std::size_t>(0.6180339887498949 * static_cast<double>(n));
    stride = std::max<std::size_t>(stride, 1);
    while (std::gcd(stride, n) != 1) ++stride;
    std::size_t p = n / 2;
    for (auto& i : idx) {
      i = p;
      p = (p + stride) % n;
    }
  }

  RowMatrix f(table.num_scalars(), m);
  for (std::size_t s = 0; s < table.num_scalars(); ++s) {
    auto row = f.row(s);
    double mean = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      row[k] = table.value(idx[k], s);
      mean += row[k];
    }
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (double& v : row) {
      v -= mean;
      var += v * v;
    }
    var /= static_cast<double>(m);
    const double sd = std::sqrt(var);
    // Constant scalars keep an all-zero profile.
    const double scale = sd > 0.0 ? 1.0 / sd : 0.0;
    for (double& v : row) v *= scale;
  }
  return f;
}

ScalarGrouping group_scalars(const GridTable& table, std::size_t num_groups,
                             const GroupingParams& params) {
  const std::size_t ns = table.num_scalars();
  if (num_groups < 1 || num_groups > ns) {
    throw ConfigError("number of scalar groups must be in [1, " + std::to_string(ns) + "], got " +
                      std::to_string(num_groups));
  }
  if (num_groups == 1) return ScalarGrouping::single(ns);

  const RowMatrix features = scalar_features(table, params.sample_points);
  SomTrainParams som_params = params.som;
  som_params.prune_empty = true;
  const SomMap map = som_train(features, SomTopology::line(num_groups), som_params);

  ScalarGrouping g;
  g.groups.resize(map.num_clusters());
  for (std::size_t s = 0; s < ns; ++s) g.groups[som_assign(map, features.row(s))].push_back(s);
  std::erase_if(g.groups, [](const auto& v) { return v.empty(); });
  return g;
}

}  // namespace smlp
