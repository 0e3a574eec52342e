#include "smlp/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "smlp/adaptive.hpp"
#include "smlp/binary_io.hpp"

namespace smlp {

namespace {

using Clock = std::chrono::steady_clock;

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string join_widths(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "x" : "") + std::to_string(w[i]);
  return s;
}

void check_digest(const SurrogateModel& model, const GridTable& table, bool force) {
  if (model.provenance.table_digest == table.digest() || force) return;
  throw DataError("table digest does not match the model's training table (use --force to override)");
}

}  // namespace

RowMatrix sample_queries(const GridTable& table, std::size_t count, std::uint64_t seed) {
  RowMatrix q(count, table.dims());
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t d = 0; d < table.dims(); ++d) {
      const auto& ax = table.axis(d);
      q(i, d) = rng.uniform(ax.front(), ax.back());
    }
  }
  return q;
}

AccuracySummary evaluate_accuracy(const SurrogateModel& model, const GridTable& table,
                                  std::size_t queries, std::uint64_t seed) {
  if (queries == 0) throw ConfigError("queries: must be at least 1");
  if (model.dims() != table.dims() || model.num_scalars() != table.num_scalars()) {
    throw DimensionError("model and table shapes differ");
  }
  const RowMatrix q = sample_queries(table, queries, seed);
  const BatchResult pred = surrogate_eval_batch(model, q);

  const std::size_t ns = table.num_scalars();
  RowMatrix ref(queries, ns);
  const auto t0 = Clock::now();
  for (std::size_t i = 0; i < queries; ++i) multilinear_eval(table, q.row(i), ref.row(i));
  const double baseline = std::chrono::duration<double>(Clock::now() - t0).count();

  const auto tol = model.tolerances();
  AccuracySummary s;
  s.queries = queries;
  s.surrogate_seconds = pred.seconds;
  s.baseline_seconds = baseline;
  s.scalars.resize(ns);
  std::vector<double> sq(ns, 0.0), ref_sq(ns, 0.0);
  std::vector<std::size_t> passes(ns, 0);
  std::size_t point_passes = 0;
  for (std::size_t i = 0; i < queries; ++i) {
    bool all = true;
    for (std::size_t k = 0; k < ns; ++k) {
      const double y = pred.outputs(i, k);
      const double r = ref(i, k);
      const double e = y - r;
      sq[k] += e * e;
      ref_sq[k] += r * r;
      s.scalars[k].max_error = std::max(s.scalars[k].max_error, std::abs(e));
      if (tolerance_pass(y, r, tol[k])) {
        ++passes[k];
      } else {
        all = false;
      }
    }
    point_passes += all;
  }
  const double n = static_cast<double>(queries);
  for (std::size_t k = 0; k < ns; ++k) {
    auto& a = s.scalars[k];
    a.name = table.scalar_names()[k];
    a.rmse = std::sqrt(sq[k] / n);
    a.l2_relative = ref_sq[k] > 0.0 ? std::sqrt(sq[k] / ref_sq[k]) : std::sqrt(sq[k]);
    a.pass_rate = static_cast<double>(passes[k]) / n;
  }
  s.pass_rate = static_cast<double>(point_passes) / n;
  return s;
}

GridTable resolve_table(const RunConfig& cfg) {
  if (!cfg.table_path.empty()) return load_table(cfg.table_path);
  return generate_synthetic(cfg.synthetic);
}

// ---------------------------------------------------------------------------
// generate

int cmd_generate(const RunConfig& cfg, std::ostream& out) {
  if (cfg.out_path.empty()) throw ConfigError("out: generate needs an output path (--out)");
  const GridTable table = generate_synthetic(cfg.synthetic);
  save_table(table, cfg.out_path);
  out << "family     " << cfg.synthetic.family << '\n' << "shape      ";
  for (std::size_t d = 0; d < table.dims(); ++d) out << (d ? " x " : "") << table.axis(d).size();
  out << " x " << table.num_scalars() << " scalars\n";
  out << "points     " << table.num_points() << '\n';
  out << "bytes      " << std::filesystem::file_size(cfg.out_path) << '\n';
  out << "wrote      " << cfg.out_path.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  if (cfg.model_path.empty()) throw ConfigError("model: train needs an output model path (--model)");
  const GridTable table = resolve_table(cfg);
  const TrainSetup setup = make_train_setup(cfg, table);
  out << "training " << setup.clusters << " clusters x " << setup.grouping.num_groups()
      << " groups, " << setup.policy.hidden_layers << " hidden layers, parallelism "
      << setup.parallelism << '\n';
  const auto result = train_surrogate(table, setup, [&](const JobRecord& r) {
    out << "  job c" << r.cluster << " g" << r.group << "  " << join_widths(r.widths) << "  "
        << r.outcome() << "  pass " << fmt(r.pass_rate, 4) << "  " << fmt(r.seconds, 3) << " s\n";
  });
  save_model(result.model, cfg.model_path);
  const auto report_path =
      cfg.out_path.empty() ? std::filesystem::path(cfg.model_path.string() + ".report.csv") : cfg.out_path;
  write_text(report_path, result.report.to_csv());

  const auto& rep = result.report;
  const std::size_t converged =
      static_cast<std::size_t>(std::ranges::count_if(rep.jobs, [](const auto& j) { return j.converged; }));
  out << "jobs       " << converged << '/' << rep.jobs.size() << " converged\n";
  out << "wall       " << fmt(rep.wall_seconds, 4) << " s (job sum " << fmt(rep.total_job_seconds(), 4)
      << " s)\n";
  out << "neurons    " << rep.total_hidden_neurons() << " hidden\n";
  out << format_memory_report(memory_report(result.model, table));
  out << "model      " << cfg.model_path.string() << '\n';
  out << "report     " << report_path.string() << '\n';
  return rep.all_converged() ? kExitOk : kExitBestEffort;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  if (cfg.model_path.empty()) throw ConfigError("model: eval needs a model (--model)");
  if (cfg.table_path.empty()) throw ConfigError("table: eval needs a table (--table)");
  if (cfg.queries == 0) throw ConfigError("queries: must be at least 1");
  SurrogateModel model = load_model(cfg.model_path);
  const GridTable table = load_table(cfg.table_path);
  check_digest(model, table, cfg.force);
  model.blend = cfg.blend.mode == BlendMode::off ? model.blend : cfg.blend;
  const auto acc = evaluate_accuracy(model, table, cfg.queries, cfg.seed);

  std::string csv = "scalar,rmse,max_error,l2_relative,pass_rate\n";
  out << std::left << std::setw(12) << "scalar" << std::setw(14) << "rmse" << std::setw(14)
      << "max_error" << std::setw(14) << "l2_rel" << "pass_rate\n";
  for (const auto& s : acc.scalars) {
    out << std::setw(12) << s.name << std::setw(14) << fmt(s.rmse) << std::setw(14) << fmt(s.max_error)
        << std::setw(14) << fmt(s.l2_relative) << fmt(s.pass_rate, 5) << '\n';
    csv += s.name + ',' + fmt(s.rmse, 17) + ',' + fmt(s.max_error, 17) + ',' + fmt(s.l2_relative, 17) +
           ',' + fmt(s.pass_rate, 17) + '\n';
  }
  out << "queries    " << acc.queries << '\n';
  out << "surrogate  " << fmt(acc.surrogate_seconds, 4) << " s\n";
  out << "baseline   " << fmt(acc.baseline_seconds, 4) << " s\n";
  out << "pass_rate  " << fmt(acc.pass_rate, 6) << '\n';
  if (!cfg.out_path.empty()) write_text(cfg.out_path, csv);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench

int cmd_bench(const RunConfig& cfg, std::ostream& out) {
  if (cfg.out_path.empty()) throw ConfigError("out: bench needs an output CSV path (--out)");
  cfg.validate();
  if (cfg.queries == 0) throw ConfigError("queries: must be at least 1");
  const GridTable table = resolve_table(cfg);

  std::string csv =
      "layers,clusters,grouping,groups,networks,converged,train_seconds,job_seconds,"
      "total_hidden_neurons,architectures,group_sizes,paper_estimate,exact_cost,rmse_mean,"
      "pass_rate,eval_seconds,baseline_seconds,model_bytes,status\n";
  std::string dat =
      "# layers clusters grouping train_seconds total_hidden_neurons paper_estimate exact_cost "
      "rmse_mean eval_seconds baseline_seconds\n";

  for (std::size_t layers : cfg.sweep.layers) {
    for (std::size_t clusters : cfg.sweep.clusters) {
      for (bool grouping : cfg.sweep.grouping) {
        RunConfig run = cfg;
        run.policy.hidden_layers = layers;
        run.policy.layer_ratios.clear();
        run.clusters = clusters;
        if (!grouping) run.groups = 0;
        const std::string key = std::to_string(layers) + ',' + std::to_string(clusters) + ',' +
                                (grouping ? "on" : "off");
        out << "bench L=" << layers << " Nc=" << clusters << " grouping=" << (grouping ? "on" : "off")
            << std::flush;
        try {
          const TrainSetup setup = make_train_setup(run, table);
          const auto result = train_surrogate(table, setup);
          const auto& m = result.model;
          const auto& rep = result.report;
          std::string archs, sizes;
          double estimate = 0.0, exact = 0.0;
          for (std::size_t c = 0; c < m.num_clusters(); ++c) {
            for (std::size_t g = 0; g < m.num_groups(); ++g) {
              const auto& net = m.network(c, g);
              const std::size_t nv = m.grouping.groups[g].size();
              if (!archs.empty()) archs += ';';
              archs += join_widths(net.hidden_widths());
              estimate += activation_cost(net, nv, CostMode::paper_estimate);
              exact += activation_cost(net, nv, CostMode::exact);
            }
          }
          for (std::size_t g = 0; g < m.num_groups(); ++g) {
            sizes += (g ? ";" : "") + std::to_string(m.grouping.groups[g].size());
          }
          // Per-query cost: one cluster's networks are evaluated.
          estimate /= static_cast<double>(m.num_clusters());
          exact /= static_cast<double>(m.num_clusters());
          const auto acc = evaluate_accuracy(m, table, cfg.queries, cfg.seed);
          double rmse = 0.0;
          for (const auto& s : acc.scalars) rmse += s.rmse;
          rmse /= static_cast<double>(acc.scalars.size());
          const std::size_t bytes = serialize_model(m).size();
          const std::size_t converged = static_cast<std::size_t>(
              std::ranges::count_if(rep.jobs, [](const auto& j) { return j.converged; }));
          csv += key + ',' + std::to_string(m.num_groups()) + ',' + std::to_string(m.networks.size()) +
                 ',' + std::to_string(converged) + ',' + fmt(rep.wall_seconds, 9) + ',' +
                 fmt(rep.total_job_seconds(), 9) + ',' + std::to_string(rep.total_hidden_neurons()) +
                 ',' + archs + ',' + sizes + ',' + fmt(estimate, 17) + ',' + fmt(exact, 17) + ',' +
                 fmt(rmse, 17) + ',' + fmt(acc.pass_rate, 17) + ',' + fmt(acc.surrogate_seconds, 9) +
                 ',' + fmt(acc.baseline_seconds, 9) + ',' + std::to_string(bytes) + ",ok\n";
          dat += std::to_string(layers) + ' ' + std::to_string(clusters) + ' ' + (grouping ? "1" : "0") +
                 ' ' + fmt(rep.wall_seconds, 9) + ' ' + std::to_string(rep.total_hidden_neurons()) +
                 ' ' + fmt(estimate, 17) + ' ' + fmt(exact, 17) + ' ' + fmt(rmse, 17) + ' ' +
                 fmt(acc.surrogate_seconds, 9) + ' ' + fmt(acc.baseline_seconds, 9) + '\n';
          out << "  " << fmt(rep.wall_seconds, 4) << " s, " << rep.total_hidden_neurons()
              << " neurons, rmse " << fmt(rmse, 4) << '\n';
        } catch (const Error& e) {
          std::string msg = e.what();
          std::ranges::replace(msg, ',', ';');
          std::ranges::replace(msg, '\n', ' ');
          csv += key + ",,,,,,,,,,,,,,,,error: " + msg + '\n';
          out << "  failed: " << e.what() << '\n';
        }
      }
    }
  }
  write_text(cfg.out_path, csv);
  auto dat_path = cfg.out_path;
  dat_path.replace_extension(".dat");
  write_text(dat_path, dat);
  out << "csv        " << cfg.out_path.string() << '\n';
  out << "plot data  " << dat_path.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const std::filesystem::path& report_path, const RunConfig& cfg, std::ostream& out) {
  const TrainingReport rep = TrainingReport::from_csv(read_text(report_path));
  const std::size_t converged =
      static_cast<std::size_t>(std::ranges::count_if(rep.jobs, [](const auto& j) { return j.converged; }));
  out << "jobs       " << rep.jobs.size() << " (" << converged << " converged)\n";
  out << "wall       " << fmt(rep.wall_seconds, 4) << " s at parallelism " << rep.parallelism << '\n';
  out << "job sum    " << fmt(rep.total_job_seconds(), 4) << " s\n";
  out << "neurons    " << rep.total_hidden_neurons() << " hidden\n";
  std::size_t iterations = 0;
  for (const auto& j : rep.jobs) iterations += j.iterations;
  out << "epochs     " << iterations << '\n';
  for (const auto& j : rep.jobs) {
    if (j.converged) continue;
    out << "best effort: cluster " << j.cluster << " group " << j.group << " "
        << join_widths(j.widths) << " pass " << fmt(j.pass_rate, 4) << '\n';
  }
  if (!cfg.model_path.empty() && !cfg.table_path.empty()) {
    const SurrogateModel model = load_model(cfg.model_path);
    const GridTable table = load_table(cfg.table_path);
    check_digest(model, table, cfg.force);
    out << format_memory_report(memory_report(model, table));
  }
  return rep.all_converged() ? kExitOk : kExitBestEffort;
}

// ---------------------------------------------------------------------------
// Argument parsing

namespace {

struct Flags {
  std::optional<std::string> config, table, model, out;
  std::optional<std::size_t> clusters, groups, layers, parallelism, queries;
  std::optional<double> tau_r, tau_a_mult, train_frac;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> blend;
  bool force = false;
  std::optional<std::string> family;
  std::vector<std::size_t> axes;
  std::optional<std::size_t> scalars;
  std::optional<std::size_t> max_iterations;
  std::string report;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file");
  app->add_option("--table", f.table, "table file");
  app->add_option("--model", f.model, "model file");
  app->add_option("--out", f.out, "output path");
  app->add_option("--clusters", f.clusters, "number of SOM clusters");
  app->add_option("--groups", f.groups, "number of scalar groups (0 = one network per scalar)");
  app->add_option("--layers", f.layers, "hidden layer count");
  app->add_option("--tau-r", f.tau_r, "relative tolerance");
  app->add_option("--tau-a-mult", f.tau_a_mult, "absolute tolerance as a multiple of max |phi|");
  app->add_option("--train-frac", f.train_frac, "training fraction");
  app->add_option("--parallelism", f.parallelism, "concurrent training jobs");
  app->add_option("--seed", f.seed, "random seed");
  app->add_option("--blend", f.blend, "cluster blending")->check(CLI::IsMember({"off", "nearest2"}));
  app->add_option("--queries", f.queries, "number of random evaluation queries");
  app->add_flag("--force", f.force, "ignore table/model digest mismatch");
  app->add_option("--family", f.family, "synthetic family");
  app->add_option("--axes", f.axes, "synthetic axis lengths, comma separated")->delimiter(',');
  app->add_option("--scalars", f.scalars, "synthetic scalar count");
  app->add_option("--max-iters", f.max_iterations, "SGD epoch limit per architecture");
}

RunConfig build_config(const Flags& f) {
  RunConfig cfg;
  if (f.config) cfg = load_config(*f.config);
  if (f.table) cfg.table_path = *f.table;
  if (f.model) cfg.model_path = *f.model;
  if (f.out) cfg.out_path = *f.out;
  if (f.clusters) cfg.clusters = *f.clusters;
  if (f.groups) cfg.groups = *f.groups;
  if (f.layers) {
    cfg.policy.hidden_layers = *f.layers;
    if (cfg.policy.layer_ratios.size() != *f.layers) cfg.policy.layer_ratios.clear();
  }
  if (f.tau_r) cfg.tau_r = *f.tau_r;
  if (f.tau_a_mult) {
    cfg.tau_a_multiplier = *f.tau_a_mult;
    cfg.tau_a_absolute.reset();
  }
  if (f.train_frac) cfg.policy.train_fraction = *f.train_frac;
  if (f.parallelism) cfg.parallelism = *f.parallelism;
  if (f.seed) cfg.seed = *f.seed;
  if (f.blend) cfg.blend.mode = parse_blend_mode(*f.blend);
  if (f.queries) cfg.queries = *f.queries;
  if (f.force) cfg.force = true;
  if (f.family) cfg.synthetic.family = *f.family;
  if (!f.axes.empty()) cfg.synthetic.axes = f.axes;
  if (f.scalars) cfg.synthetic.scalars = *f.scalars;
  if (f.seed) cfg.synthetic.seed = *f.seed;
  if (f.max_iterations) cfg.policy.sgd.max_iterations = *f.max_iterations;
  cfg.validate();
  return cfg;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lookup-table compression with SOM-clustered neural network ensembles", "smlp"};
  app.require_subcommand(1);
  Flags f;
  auto* gen = app.add_subcommand("generate", "write a synthetic table");
  auto* train = app.add_subcommand("train", "train a surrogate model for a table");
  auto* eval = app.add_subcommand("eval", "compare a model with multilinear interpolation");
  auto* bench = app.add_subcommand("bench", "sweep layers, clusters and grouping");
  auto* report = app.add_subcommand("report", "summarize a training report");
  for (auto* sub : {gen, train, eval, bench, report}) add_common(sub, f);
  report->add_option("report", f.report, "training report CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, eo;
    const int code = app.exit(e, o, eo);
    out << o.str();
    err << eo.str();
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const RunConfig cfg = build_config(f);
    if (*gen) return cmd_generate(cfg, out);
    if (*train) return cmd_train(cfg, out);
    if (*eval) return cmd_eval(cfg, out);
    if (*bench) return cmd_bench(cfg, out);
    return cmd_report(f.report, cfg, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace smlp
