#include "smlp/adaptive.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace smlp {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(std::string_view s, std::string_view field) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw DataError("training report: bad " + std::string(field) + " '" + std::string(s) + "'");
  }
  return v;
}

std::size_t parse_size(std::string_view s, std::string_view field) {
  std::size_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw DataError("training report: bad " + std::string(field) + " '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string sanitize_name(std::string name) {
  for (char& ch : name) {
    if (ch == ',' || ch == '|' || ch == ':' || ch == '\n' || ch == '\r') ch = '_';
  }
  return name;
}

std::vector<double> heldout_rmse(const MlpNetwork& net, const SupervisedSet& test,
                                 const TargetSpace& space) {
  const std::size_t k = net.outputs();
  std::vector<double> sum(k, 0.0);
  ForwardScratch scratch;
  std::vector<double> y(k);
  for (std::size_t p = 0; p < test.size(); ++p) {
    mlp_forward(net, test.inputs.row(p), y, scratch);
    for (std::size_t o = 0; o < k; ++o) {
      const double e = space.scales[o].denormalize(y[o]) - test.targets(p, o);
      sum[o] += e * e;
    }
  }
  for (double& s : sum) s = test.size() ? std::sqrt(s / static_cast<double>(test.size())) : 0.0;
  return sum;
}

// SGD on [0, 1] inputs is poorly conditioned; training runs on x' = 2x - 1.
void center_inputs(SupervisedSet& s) {
  for (double& v : s.inputs.data) v = 2.0 * v - 1.0;
}

// Rewrites the first layer so the network takes [0, 1] inputs again:
// W (2x - 1) + b = (2W) x + (b - W 1).
void fold_centering(MlpNetwork& net) {
  auto& layer = net.layers().front();
  for (std::size_t o = 0; o < layer.outputs; ++o) {
    double shift = 0.0;
    for (std::size_t i = 0; i < layer.inputs; ++i) {
      double& w = layer.weights[o * layer.inputs + i];
      shift += w;
      w *= 2.0;
    }
    layer.biases[o] -= shift;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Policy

std::vector<double> AdaptivePolicy::default_ratios(std::size_t hidden_layers) {
  if (hidden_layers == 2) return {1.0, 0.5};
  static constexpr double kRatios[] = {1.0, 0.75, 0.5, 0.5, 0.25, 0.25};
  std::vector<double> r;
  for (std::size_t l = 0; l < hidden_layers; ++l) r.push_back(l < 6 ? kRatios[l] : 0.25);
  return r;
}

std::vector<double> AdaptivePolicy::ratios() const {
  if (layer_ratios.empty()) return default_ratios(hidden_layers);
  return layer_ratios;
}

std::size_t AdaptivePolicy::checkpoint_iteration() const {
  const double it = std::ceil(checkpoint_fraction * static_cast<double>(sgd.max_iterations));
  return std::max<std::size_t>(1, static_cast<std::size_t>(it));
}

void AdaptivePolicy::validate() const {
  if (hidden_layers < 1 || hidden_layers > 16) {
    throw ConfigError("hidden_layers must be in [1, 16], got " + std::to_string(hidden_layers));
  }
  if (initial_width < 1) throw ConfigError("initial_width must be positive");
  if (width_increment < 1) throw ConfigError("width_increment must be positive");
  if (max_width < initial_width) throw ConfigError("max_width must be >= initial_width");
  if (!layer_ratios.empty() && layer_ratios.size() != hidden_layers) {
    throw ConfigError("layer_ratios has " + std::to_string(layer_ratios.size()) +
                      " entries, expected one per hidden layer (" + std::to_string(hidden_layers) + ")");
  }
  for (double r : layer_ratios) {
    if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("layer_ratios must be positive");
  }
  if (!(checkpoint_fraction > 0.0 && checkpoint_fraction < 1.0)) {
    throw ConfigError("checkpoint_fraction must be in (0, 1)");
  }
  if (!(checkpoint_threshold >= 0.0 && checkpoint_threshold <= 1.0)) {
    throw ConfigError("checkpoint_threshold must be in [0, 1]");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must be in (0, 1)");
  }
  sgd.validate();
}

std::uint64_t AdaptivePolicy::digest() const {
  Fnv1a h;
  h.update_value(static_cast<std::uint64_t>(hidden_layers));
  h.update_value(static_cast<std::uint64_t>(initial_width));
  h.update_value(static_cast<std::uint64_t>(width_increment));
  h.update_value(static_cast<std::uint64_t>(max_width));
  for (double r : ratios()) h.update_value(r);
  h.update_value(static_cast<std::uint8_t>(activation));
  h.update_value(checkpoint_fraction);
  h.update_value(checkpoint_threshold);
  h.update_value(train_fraction);
  h.update_value(sgd.learning_rate);
  h.update_value(static_cast<std::uint64_t>(sgd.batch_size));
  h.update_value(static_cast<std::uint64_t>(sgd.max_iterations));
  h.update_value(static_cast<std::uint64_t>(sgd.plateau_patience));
  h.update_value(sgd.min_learning_rate_fraction);
  h.update_value(static_cast<std::uint8_t>(sgd.shuffle));
  return h.digest();
}

std::optional<std::vector<std::size_t>> grow_architecture(const AdaptivePolicy& policy,
                                                          std::size_t step) {
  const std::size_t w = policy.initial_width + step * policy.width_increment;
  std::size_t first = w;
  if (w > policy.max_width) {
    if (step == 0) return std::nullopt;
    const std::size_t prev = policy.initial_width + (step - 1) * policy.width_increment;
    if (prev >= policy.max_width) return std::nullopt;
    first = policy.max_width;
  }
  const auto ratios = policy.ratios();
  std::vector<std::size_t> widths(ratios.size());
  widths[0] = first;
  for (std::size_t l = 1; l < ratios.size(); ++l) {
    const double v = std::floor(ratios[l] * static_cast<double>(first) + 0.5);
    widths[l] = std::max<std::size_t>(1, static_cast<std::size_t>(v));
  }
  return widths;
}

Split split_train_test(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (n == 0) throw DataError("cannot split an empty point set");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must be in (0, 1)");
  }
  Split s;
  if (n == 1) {
    s.train = {0};
    s.test = {0};
    return s;
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  const auto target = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  const std::size_t n_train = std::clamp<std::size_t>(target, 1, n - 1);
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

SupervisedSet subset(const SupervisedSet& data, const std::vector<std::size_t>& rows) {
  SupervisedSet s{RowMatrix(rows.size(), data.inputs.cols), RowMatrix(rows.size(), data.targets.cols)};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::ranges::copy(data.inputs.row(rows[i]), s.inputs.row(i).begin());
    std::ranges::copy(data.targets.row(rows[i]), s.targets.row(i).begin());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Single job

JobResult adaptive_train_job(const SupervisedSet& data, const TargetSpace& space,
                             const AdaptivePolicy& policy, std::uint64_t split_seed,
                             std::uint64_t network_seed) {
  policy.validate();
  if (data.size() == 0) throw DataError("adaptive job has no training data");
  const auto t0 = Clock::now();
  const Split split = split_train_test(data.size(), policy.train_fraction, split_seed);
  SupervisedSet train = subset(data, split.train);
  SupervisedSet test = subset(data, split.test);
  center_inputs(train);
  center_inputs(test);
  const EarlyStopPolicy stop{policy.checkpoint_iteration(), policy.checkpoint_threshold};

  JobResult result;
  JobRecord& rec = result.record;
  rec.train_points = train.size();
  rec.test_points = test.size();
  double best_pass = -1.0;

  for (std::size_t k = 0;; ++k) {
    const auto widths = grow_architecture(policy, k);
    if (!widths) break;
    std::vector<std::size_t> sizes{data.inputs.cols};
    sizes.insert(sizes.end(), widths->begin(), widths->end());
    sizes.push_back(data.targets.cols);

    Rng rng(derive_seed(network_seed, k));
    MlpNetwork net = MlpNetwork::glorot(sizes, policy.activation, rng);
    SgdParams params = policy.sgd;
    params.seed = derive_seed(network_seed, k, 1);

    AttemptRecord attempt{*widths, {}, false};
    try {
      attempt.outcome = sgd_train(net, train, test, space, params, stop);
    } catch (const DivergenceError&) {
      attempt.diverged = true;
      attempt.outcome.iterations = params.max_iterations;
    }
    rec.iterations += attempt.outcome.iterations;
    rec.attempts.push_back(attempt);
    if (attempt.diverged) continue;

    if (attempt.outcome.test_pass_rate > best_pass) {
      best_pass = attempt.outcome.test_pass_rate;
      result.network = std::move(net);
      rec.widths = *widths;
    }
    if (attempt.outcome.status == TrainStatus::converged) break;
  }

  if (best_pass < 0.0) {
    // Every attempt diverged; fall back to an untrained initial architecture.
    std::vector<std::size_t> sizes{data.inputs.cols};
    const auto widths = *grow_architecture(policy, 0);
    sizes.insert(sizes.end(), widths.begin(), widths.end());
    sizes.push_back(data.targets.cols);
    result.network = MlpNetwork(sizes, policy.activation);
    rec.widths = widths;
  }
  fold_centering(result.network);
  const SupervisedSet heldout = subset(data, split.test);
  rec.pass_rate = dataset_pass_rate(result.network, heldout, space);
  rec.converged = rec.pass_rate >= 1.0;
  rec.rmse = heldout_rmse(result.network, heldout, space);
  rec.seconds = seconds_since(t0);
  return result;
}

// ---------------------------------------------------------------------------
// Report

bool TrainingReport::all_converged() const {
  return std::ranges::all_of(jobs, [](const JobRecord& j) { return j.converged; });
}

std::size_t TrainingReport::total_hidden_neurons() const {
  std::size_t n = 0;
  for (const auto& j : jobs) n += std::accumulate(j.widths.begin(), j.widths.end(), std::size_t{0});
  return n;
}

double TrainingReport::total_job_seconds() const {
  double s = 0.0;
  for (const auto& j : jobs) s += j.seconds;
  return s;
}

std::string TrainingReport::to_csv() const {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& j : jobs) {
    out += std::to_string(j.cluster) + ',' + std::to_string(j.group) + ',';
    for (std::size_t l = 0; l < j.widths.size(); ++l) {
      if (l) out += 'x';
      out += std::to_string(j.widths[l]);
    }
    out += ',' + j.outcome() + ',' + std::to_string(j.iterations) + ',' + format_double(j.seconds) +
           ',' + format_double(j.pass_rate) + ',';
    for (std::size_t s = 0; s < j.rmse.size(); ++s) {
      if (s) out += '|';
      const std::string name = s < j.scalar_names.size() ? sanitize_name(j.scalar_names[s])
                                                         : "s" + std::to_string(s);
      out += name + ':' + format_double(j.rmse[s]);
    }
    out += '\n';
  }
  out += "# wall_seconds=" + format_double(wall_seconds) + '\n';
  out += "# parallelism=" + std::to_string(parallelism) + '\n';
  return out;
}

TrainingReport TrainingReport::from_csv(std::string_view text) {
  TrainingReport r;
  bool header = false;
  for (std::string_view line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.front() == '#') {
      line.remove_prefix(1);
      while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) continue;
      const auto key = line.substr(0, eq);
      const auto value = line.substr(eq + 1);
      if (key == "wall_seconds") r.wall_seconds = parse_double(value, key);
      if (key == "parallelism") r.parallelism = parse_size(value, key);
      continue;
    }
    if (!header) {
      if (line != kCsvHeader) throw DataError("training report: unexpected header '" + std::string(line) + "'");
      header = true;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 8) {
      throw DataError("training report: expected 8 fields, got " + std::to_string(f.size()));
    }
    JobRecord j;
    j.cluster = parse_size(f[0], "cluster");
    j.group = parse_size(f[1], "group");
    for (auto w : split(f[2], 'x')) j.widths.push_back(parse_size(w, "architecture"));
    if (f[3] == "converged") {
      j.converged = true;
    } else if (f[3] != "best_effort") {
      throw DataError("training report: bad outcome '" + std::string(f[3]) + "'");
    }
    j.iterations = parse_size(f[4], "iterations");
    j.seconds = parse_double(f[5], "seconds");
    j.pass_rate = parse_double(f[6], "pass_rate");
    if (!f[7].empty()) {
      for (auto item : split(f[7], '|')) {
        const auto colon = item.rfind(':');
        if (colon == std::string_view::npos) throw DataError("training report: bad rmse entry");
        j.scalar_names.emplace_back(item.substr(0, colon));
        j.rmse.push_back(parse_double(item.substr(colon + 1), "rmse"));
      }
    }
    r.jobs.push_back(std::move(j));
  }
  if (!header) throw DataError("training report: missing header");
  return r;
}

// ---------------------------------------------------------------------------
// All jobs

std::vector<ToleranceSpec> scalar_tolerances(const GridTable& table, double tau_a_multiplier,
                                             double tau_r) {
  std::vector<ToleranceSpec> t(table.num_scalars());
  for (std::size_t s = 0; s < t.size(); ++s) {
    const double phi_max = std::max(std::abs(table.scalar_min(s)), std::abs(table.scalar_max(s)));
    t[s] = {tau_a_multiplier * phi_max, tau_r};
    t[s].validate();
  }
  return t;
}

std::uint64_t job_split_seed(std::uint64_t seed, std::size_t cluster) {
  return derive_seed(seed, 0x73706c6974ULL, cluster);
}

std::uint64_t job_network_seed(std::uint64_t seed, std::size_t cluster, std::size_t group) {
  return derive_seed(seed, cluster + 1, group + 1);
}

SupervisedSet job_data(const GridTable& table, const NormalizedPoints& points,
                       const std::vector<std::size_t>& members,
                       const std::vector<std::size_t>& scalars) {
  SupervisedSet d{RowMatrix(members.size(), table.dims()), RowMatrix(members.size(), scalars.size())};
  for (std::size_t i = 0; i < members.size(); ++i) {
    std::ranges::copy(points.points.row(members[i]), d.inputs.row(i).begin());
    for (std::size_t o = 0; o < scalars.size(); ++o) d.targets(i, o) = table.value(members[i], scalars[o]);
  }
  return d;
}

TrainResult train_all(const GridTable& table, const SomMap& som, const ScalarGrouping& grouping,
                      const TrainSetup& setup, const ProgressFn& progress) {
  setup.policy.validate();
  if (som.dims != table.dims()) {
    throw DimensionError("SOM has " + std::to_string(som.dims) + " inputs, table has " +
                         std::to_string(table.dims()) + " dims");
  }
  grouping.validate(table.num_scalars());
  const auto t0 = Clock::now();

  const NormalizedPoints points = normalize_inputs(table);
  const auto assignment = som_assign_all(som, points.points);
  const std::size_t nc = som.num_clusters();
  const std::size_t ng = grouping.num_groups();
  std::vector<std::vector<std::size_t>> members(nc);
  for (std::size_t p = 0; p < assignment.size(); ++p) members[assignment[p]].push_back(p);
  for (std::size_t c = 0; c < nc; ++c) {
    if (members[c].empty()) throw DataError("cluster " + std::to_string(c) + " has no table points");
  }

  auto tolerances = scalar_tolerances(table, setup.tau_a_multiplier, setup.tau_r);
  if (setup.tau_a_absolute) {
    for (auto& t : tolerances) {
      t.tau_a = *setup.tau_a_absolute;
      t.validate();
    }
  }
  std::vector<OutputScale> scales(table.num_scalars());
  for (std::size_t s = 0; s < scales.size(); ++s) scales[s] = {table.scalar_min(s), table.scalar_max(s)};

  const std::size_t njobs = nc * ng;
  std::vector<JobResult> results(njobs);
  std::vector<std::exception_ptr> errors(njobs);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::mutex progress_mutex;

  const auto worker = [&] {
    while (!abort.load()) {
      const std::size_t j = next.fetch_add(1);
      if (j >= njobs) return;
      const std::size_t c = j / ng;
      const std::size_t g = j % ng;
      try {
        const auto& scalars = grouping.groups[g];
        const SupervisedSet data = job_data(table, points, members[c], scalars);
        TargetSpace space;
        for (std::size_t s : scalars) {
          space.scales.push_back(scales[s]);
          space.tolerances.push_back(tolerances[s]);
        }
        results[j] = adaptive_train_job(data, space, setup.policy, job_split_seed(setup.seed, c),
                                        job_network_seed(setup.seed, c, g));
        auto& rec = results[j].record;
        rec.cluster = c;
        rec.group = g;
        for (std::size_t s : scalars) rec.scalar_names.push_back(table.scalar_names()[s]);
        if (progress) {
          std::lock_guard lock(progress_mutex);
          progress(rec);
        }
      } catch (...) {
        errors[j] = std::current_exception();
        abort.store(true);
      }
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(setup.parallelism, 1, njobs);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  for (std::size_t j = 0; j < njobs; ++j) {
    if (!errors[j]) continue;
    std::size_t done = 0;
    for (std::size_t i = 0; i < njobs; ++i) done += !results[i].record.attempts.empty();
    const std::string where = "job (cluster " + std::to_string(j / ng) + ", group " +
                              std::to_string(j % ng) + ") failed after " + std::to_string(done) +
                              " of " + std::to_string(njobs) + " jobs completed: ";
    try {
      std::rethrow_exception(errors[j]);
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    } catch (const DimensionError& e) {
      throw DimensionError(where + e.what());
    }
  }

  TrainResult out;
  SurrogateModel& m = out.model;
  m.scalar_names = table.scalar_names();
  m.som = som;
  m.grouping = grouping;
  m.networks.reserve(njobs);
  for (auto& r : results) m.networks.push_back(std::move(r.network));
  m.input_norm = points.stats;
  m.output_scales = scales;
  m.blend = setup.blend;
  m.provenance.table_digest = table.digest();
  Fnv1a h;
  h.update_value(setup.policy.digest());
  h.update_value(setup.seed);
  h.update_value(static_cast<std::uint64_t>(nc));
  h.update_value(static_cast<std::uint64_t>(ng));
  m.provenance.policy_digest = h.digest();
  m.provenance.tau_r = setup.tau_r;
  m.provenance.tau_a_multiplier = setup.tau_a_absolute ? 0.0 : setup.tau_a_multiplier;
  for (const auto& t : tolerances) m.provenance.tau_a.push_back(t.tau_a);

  out.report.parallelism = threads;
  for (auto& r : results) out.report.jobs.push_back(std::move(r.record));
  out.report.wall_seconds = seconds_since(t0);
  return out;
}

TrainResult train_surrogate(const GridTable& table, const TrainSetup& setup,
                            const ProgressFn& progress) {
  if (setup.clusters < 1) throw ConfigError("cluster count must be positive");
  const NormalizedPoints points = normalize_inputs(table);
  SomTrainParams som_params = setup.som;
  som_params.seed = derive_seed(setup.seed, 0x736f6dULL);
  const SomMap som = som_train(points.points, SomTopology::line(setup.clusters), som_params);
  const ScalarGrouping grouping = setup.grouping.groups.empty()
                                      ? ScalarGrouping::singletons(table.num_scalars())
                                      : setup.grouping;
  return train_all(table, som, grouping, setup, progress);
}

}  // namespace smlp
