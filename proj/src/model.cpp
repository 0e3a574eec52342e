#include "smlp/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <thread>

#include "smlp/binary_io.hpp"

namespace smlp {

namespace {

constexpr std::string_view kModelMagic{"SMLP-MDL\0", 9};
constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint32_t kF32Flag = 0x80000000u;

[[noreturn]] void structure_error(const std::string& what) {
  throw FormatError(FormatError::Kind::structure, "model: " + what);
}

void normalize_query(const SurrogateModel& model, std::span<const double> query,
                     std::span<double> unit) {
  if (query.size() != model.dims()) {
    throw DimensionError("query has " + std::to_string(query.size()) + " coordinates, model has " +
                         std::to_string(model.dims()) + " inputs");
  }
  for (std::size_t d = 0; d < query.size(); ++d) {
    if (std::isnan(query[d])) throw DataError("query coordinate " + std::to_string(d) + " is NaN");
    const double x = std::clamp(query[d], model.input_norm.min[d], model.input_norm.max[d]);
    unit[d] = model.input_norm.normalize(d, x);
  }
}

/// All scalars of one cluster at a normalized input.
void eval_cluster(const SurrogateModel& model, std::size_t cluster, std::span<const double> unit,
                  std::span<double> out, ForwardScratch& scratch, std::vector<double>& y,
                  ActivationCounter* counter) {
  for (std::size_t g = 0; g < model.num_groups(); ++g) {
    const auto& net = model.network(cluster, g);
    const auto& members = model.grouping.groups[g];
    y.resize(net.outputs());
    mlp_forward(net, unit, y, scratch, counter);
    for (std::size_t o = 0; o < members.size(); ++o) {
      const std::size_t s = members[o];
      out[s] = model.output_scales[s].denormalize(y[o]);
    }
  }
}

void eval_point(const SurrogateModel& model, std::span<const double> query, std::span<double> out,
                ForwardScratch& scratch, std::vector<double>& y, std::vector<double>& unit,
                std::vector<double>& other, ActivationCounter* counter,
                std::vector<std::uint64_t>* evaluations) {
  unit.resize(model.dims());
  normalize_query(model, query, unit);
  const auto count = [&](std::size_t c) {
    if (!evaluations) return;
    for (std::size_t g = 0; g < model.num_groups(); ++g) ++(*evaluations)[c * model.num_groups() + g];
  };
  if (model.blend.mode == BlendMode::off || model.num_clusters() < 2) {
    const std::size_t c = som_assign(model.som, unit);
    eval_cluster(model, c, unit, out, scratch, y, counter);
    count(c);
    return;
  }
  const NearestTwo nn = som_nearest_two(model.som, unit);
  eval_cluster(model, nn.first, unit, out, scratch, y, counter);
  count(nn.first);
  if (nn.first_distance == 0.0) return;
  other.resize(model.num_scalars());
  eval_cluster(model, nn.second, unit, other, scratch, y, counter);
  count(nn.second);
  const double w1 = 1.0 / std::pow(nn.first_distance, model.blend.exponent);
  const double w2 = 1.0 / std::pow(nn.second_distance, model.blend.exponent);
  const double inv = 1.0 / (w1 + w2);
  for (std::size_t s = 0; s < out.size(); ++s) out[s] = (w1 * out[s] + w2 * other[s]) * inv;
}

}  // namespace

std::string_view blend_mode_name(BlendMode m) { return m == BlendMode::off ? "off" : "nearest2"; }

BlendMode parse_blend_mode(std::string_view s) {
  if (s == "off") return BlendMode::off;
  if (s == "nearest2") return BlendMode::nearest2;
  throw ConfigError("unknown blend mode '" + std::string(s) + "' (expected off or nearest2)");
}

std::size_t SurrogateModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& net : networks) n += net.parameter_count();
  return n;
}

std::size_t SurrogateModel::hidden_neurons() const {
  std::size_t n = 0;
  for (const auto& net : networks) n += net.hidden_neurons();
  return n;
}

std::vector<ToleranceSpec> SurrogateModel::tolerances() const {
  std::vector<ToleranceSpec> t(num_scalars());
  for (std::size_t s = 0; s < t.size(); ++s) {
    t[s] = {s < provenance.tau_a.size() ? provenance.tau_a[s] : 0.0, provenance.tau_r};
  }
  return t;
}

void SurrogateModel::validate() const {
  const std::size_t d = dims();
  if (d == 0 || d > kMaxTableDims) structure_error("invalid input dimension count");
  if (input_norm.max.size() != d) structure_error("input normalization size mismatch");
  for (std::size_t i = 0; i < d; ++i) {
    if (!(input_norm.max[i] > input_norm.min[i])) structure_error("degenerate input normalization");
  }
  if (scalar_names.empty()) structure_error("no scalars");
  if (output_scales.size() != num_scalars()) structure_error("output scale count mismatch");
  if (provenance.tau_a.size() != num_scalars()) structure_error("tolerance count mismatch");
  if (som.dims != d || som.weights.cols != d) structure_error("SOM dimension mismatch");
  if (som.num_clusters() == 0) structure_error("SOM has no nodes");
  try {
    grouping.validate(num_scalars());
  } catch (const ConfigError& e) {
    structure_error(e.what());
  }
  if (networks.size() != num_clusters() * num_groups()) {
    structure_error("expected " + std::to_string(num_clusters() * num_groups()) + " networks, found " +
                    std::to_string(networks.size()));
  }
  for (std::size_t c = 0; c < num_clusters(); ++c) {
    for (std::size_t g = 0; g < num_groups(); ++g) {
      const auto& net = network(c, g);
      if (net.layers().empty()) structure_error("missing network");
      try {
        net.validate();
      } catch (const Error& e) {
        structure_error(e.what());
      }
      if (net.inputs() != d) structure_error("network input width does not match dims");
      if (net.outputs() != grouping.groups[g].size()) {
        structure_error("network output width does not match its group size");
      }
    }
  }
  if (blend.mode != BlendMode::off && blend.mode != BlendMode::nearest2) {
    structure_error("invalid blend mode");
  }
}

std::vector<double> surrogate_eval(const SurrogateModel& model, std::span<const double> query,
                                   ActivationCounter* counter) {
  std::vector<double> out(model.num_scalars());
  ForwardScratch scratch;
  std::vector<double> y, unit, other;
  eval_point(model, query, out, scratch, y, unit, other, counter, nullptr);
  return out;
}

std::size_t surrogate_route(const SurrogateModel& model, std::span<const double> query) {
  std::vector<double> unit(model.dims());
  normalize_query(model, query, unit);
  return som_assign(model.som, unit);
}

namespace {

void eval_range(const SurrogateModel& model, const RowMatrix& queries, std::size_t begin,
                std::size_t end, RowMatrix& outputs, std::vector<std::uint64_t>& evaluations,
                ActivationCounter& counter) {
  ForwardScratch scratch;
  std::vector<double> y, unit, other;
  if (model.blend.mode != BlendMode::off && model.num_clusters() > 1) {
    for (std::size_t q = begin; q < end; ++q) {
      eval_point(model, queries.row(q), outputs.row(q), scratch, y, unit, other, &counter,
                 &evaluations);
    }
    return;
  }

  const std::size_t n = end - begin;
  const std::size_t dims = model.dims();
  const std::size_t nc = model.num_clusters();
  RowMatrix units(n, dims);
  std::vector<std::size_t> cluster(n);
  std::vector<std::size_t> offsets(nc + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    normalize_query(model, queries.row(begin + i), units.row(i));
    cluster[i] = som_assign(model.som, units.row(i));
    ++offsets[cluster[i] + 1];
  }
  for (std::size_t c = 0; c < nc; ++c) offsets[c + 1] += offsets[c];
  // Stable bucket of query indices per cluster.
  std::vector<std::size_t> order(n);
  {
    std::vector<std::size_t> fill(offsets.begin(), offsets.end() - 1);
    for (std::size_t i = 0; i < n; ++i) order[fill[cluster[i]]++] = i;
  }

  std::vector<double> in, out;
  for (std::size_t c = 0; c < nc; ++c) {
    const std::size_t m = offsets[c + 1] - offsets[c];
    if (m == 0) continue;
    in.resize(m * dims);
    for (std::size_t k = 0; k < m; ++k) {
      const auto u = units.row(order[offsets[c] + k]);
      std::copy(u.begin(), u.end(), in.begin() + static_cast<std::ptrdiff_t>(k * dims));
    }
    for (std::size_t g = 0; g < model.num_groups(); ++g) {
      const auto& net = model.network(c, g);
      const auto& members = model.grouping.groups[g];
      out.resize(m * net.outputs());
      mlp_forward_block(net, in.data(), m, out.data(), scratch, &counter);
      evaluations[c * model.num_groups() + g] += m;
      for (std::size_t k = 0; k < m; ++k) {
        auto row = outputs.row(begin + order[offsets[c] + k]);
        const double* yk = out.data() + k * net.outputs();
        for (std::size_t o = 0; o < members.size(); ++o) {
          const std::size_t s = members[o];
          row[s] = model.output_scales[s].denormalize(yk[o]);
        }
      }
    }
  }
}

}  // namespace

BatchResult surrogate_eval_batch(const SurrogateModel& model, const RowMatrix& queries,
                                 const BatchOptions& options) {
  if (queries.rows > 0 && queries.cols != model.dims()) {
    throw DimensionError("query matrix has " + std::to_string(queries.cols) +
                         " columns, model has " + std::to_string(model.dims()) + " inputs");
  }
  BatchResult r;
  r.outputs = RowMatrix(queries.rows, model.num_scalars());
  r.network_evaluations.assign(model.networks.size(), 0);
  ActivationCounter counter;

  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t threads =
      std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(1, queries.rows / 4096));
  if (threads <= 1) {
    eval_range(model, queries, 0, queries.rows, r.outputs, r.network_evaluations, counter);
  } else {
    std::vector<std::vector<std::uint64_t>> evals(threads,
                                                  std::vector<std::uint64_t>(model.networks.size(), 0));
    std::vector<std::exception_ptr> errors(threads);
    {
      std::vector<std::jthread> workers;
      const std::size_t chunk = (queries.rows + threads - 1) / threads;
      for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t b = std::min(queries.rows, t * chunk);
        const std::size_t e = std::min(queries.rows, b + chunk);
        workers.emplace_back([&, t, b, e] {
          try {
            eval_range(model, queries, b, e, r.outputs, evals[t], counter);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (const auto& ev : evals) {
      for (std::size_t i = 0; i < ev.size(); ++i) r.network_evaluations[i] += ev[i];
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.activations = counter.value();
  return r;
}

// ---------------------------------------------------------------------------
// Serialization

std::vector<std::uint8_t> serialize_model(const SurrogateModel& model, ValuePrecision precision) {
  model.validate();
  const bool f32 = precision == ValuePrecision::f32;
  ByteWriter w;
  w.raw(kModelMagic);
  w.u32(kModelVersion | (f32 ? kF32Flag : 0u));
  w.u32(static_cast<std::uint32_t>(model.dims()));
  w.u32(static_cast<std::uint32_t>(model.num_scalars()));
  w.u32(static_cast<std::uint32_t>(model.num_clusters()));
  w.u32(static_cast<std::uint32_t>(model.num_groups()));
  w.u32(static_cast<std::uint32_t>(model.blend.mode));
  w.f64(model.blend.exponent);
  w.u64(model.provenance.table_digest);
  w.u64(model.provenance.policy_digest);
  w.f64(model.provenance.tau_r);
  w.f64(model.provenance.tau_a_multiplier);
  for (std::size_t s = 0; s < model.num_scalars(); ++s) {
    w.str(model.scalar_names[s]);
    w.f64(model.provenance.tau_a[s]);
  }
  w.u32(static_cast<std::uint32_t>(model.som.topology.rows));
  w.u32(static_cast<std::uint32_t>(model.som.topology.cols));
  for (double v : model.som.weights.data) w.f64(v);
  for (const auto& g : model.grouping.groups) {
    w.u32(static_cast<std::uint32_t>(g.size()));
    for (std::size_t s : g) w.u32(static_cast<std::uint32_t>(s));
  }
  for (const auto& net : model.networks) {
    const auto sizes = net.layer_sizes();
    w.u32(static_cast<std::uint32_t>(sizes.size()));
    for (std::size_t s : sizes) w.u32(static_cast<std::uint32_t>(s));
    for (std::size_t l = 0; l + 1 < net.layers().size(); ++l) {
      w.u8(static_cast<std::uint8_t>(net.layers()[l].activation));
    }
    for (const auto& layer : net.layers()) {
      for (double v : layer.weights) f32 ? w.f32(static_cast<float>(v)) : w.f64(v);
      for (double v : layer.biases) f32 ? w.f32(static_cast<float>(v)) : w.f64(v);
    }
  }
  for (std::size_t d = 0; d < model.dims(); ++d) {
    w.f64(model.input_norm.min[d]);
    w.f64(model.input_norm.max[d]);
  }
  for (const auto& s : model.output_scales) {
    w.f64(s.min);
    w.f64(s.max);
  }
  append_crc(w);
  return w.take();
}

SurrogateModel deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kModelMagic.size() ||
      !std::equal(kModelMagic.begin(), kModelMagic.end(), bytes.begin())) {
    throw FormatError(FormatError::Kind::bad_magic, "not a model file (bad magic)");
  }
  if (bytes.size() < kModelMagic.size() + 4) {
    throw FormatError(FormatError::Kind::truncated, "model file truncated");
  }
  ByteReader r(bytes.first(bytes.size() - 4));
  r.bytes(kModelMagic.size());
  const std::uint32_t version_word = r.u32();
  if ((version_word & ~kF32Flag) != kModelVersion) {
    throw FormatError(FormatError::Kind::bad_version,
                      "unsupported model version " + std::to_string(version_word & ~kF32Flag));
  }
  const bool f32 = (version_word & kF32Flag) != 0;
  const auto real = [&] { return f32 ? static_cast<double>(r.f32()) : r.f64(); };

  SurrogateModel m;
  const std::size_t dims = r.u32();
  const std::size_t ns = r.u32();
  const std::size_t nc = r.u32();
  const std::size_t ng = r.u32();
  if (dims == 0 || dims > kMaxTableDims || ns == 0 || nc == 0 || ng == 0 || ng > ns) {
    structure_error("invalid header counts");
  }
  // Every cluster/group/scalar costs at least a few bytes; reject absurd counts
  // before allocating.
  if (nc * dims * 8 > r.remaining() || nc * ng > r.remaining()) {
    throw FormatError(FormatError::Kind::truncated, "model: payload shorter than declared sizes");
  }
  const std::uint32_t blend_mode = r.u32();
  if (blend_mode > 1) structure_error("invalid blend mode");
  m.blend.mode = static_cast<BlendMode>(blend_mode);
  m.blend.exponent = r.f64();
  m.provenance.table_digest = r.u64();
  m.provenance.policy_digest = r.u64();
  m.provenance.tau_r = r.f64();
  m.provenance.tau_a_multiplier = r.f64();
  for (std::size_t s = 0; s < ns; ++s) {
    m.scalar_names.push_back(r.str());
    m.provenance.tau_a.push_back(r.f64());
  }
  m.som.topology.rows = r.u32();
  m.som.topology.cols = r.u32();
  if (m.som.topology.nodes() != nc) structure_error("SOM topology does not match cluster count");
  m.som.dims = dims;
  m.som.weights = RowMatrix(nc, dims);
  for (double& v : m.som.weights.data) v = r.f64();
  m.som.trained = true;
  m.grouping.groups.resize(ng);
  for (auto& g : m.grouping.groups) {
    const std::size_t size = r.u32();
    if (size == 0 || size > ns) structure_error("invalid group size");
    g.resize(size);
    for (auto& s : g) s = r.u32();
  }
  m.networks.reserve(nc * ng);
  for (std::size_t i = 0; i < nc * ng; ++i) {
    const std::size_t count = r.u32();
    if (count < 2 || count > 64) structure_error("invalid network layer count");
    std::vector<std::size_t> sizes(count);
    for (auto& s : sizes) {
      s = r.u32();
      if (s == 0 || s > 1u << 16) structure_error("invalid network layer width");
    }
    std::vector<DenseLayer> layers(count - 1);
    for (std::size_t l = 0; l + 1 < count; ++l) {
      layers[l].inputs = sizes[l];
      layers[l].outputs = sizes[l + 1];
      layers[l].activation = Activation::linear;
    }
    for (std::size_t l = 0; l + 2 < count; ++l) {
      const std::uint8_t tag = r.u8();
      if (tag > static_cast<std::uint8_t>(Activation::linear)) structure_error("invalid activation tag");
      layers[l].activation = static_cast<Activation>(tag);
    }
    for (auto& layer : layers) {
      const std::size_t nw = layer.inputs * layer.outputs;
      if ((nw + layer.outputs) * (f32 ? 4 : 8) > r.remaining()) {
        throw FormatError(FormatError::Kind::truncated, "model: payload shorter than declared sizes");
      }
      layer.weights.resize(nw);
      for (auto& v : layer.weights) v = real();
      layer.biases.resize(layer.outputs);
      for (auto& v : layer.biases) v = real();
    }
    try {
      m.networks.emplace_back(std::move(layers));
    } catch (const Error& e) {
      structure_error(e.what());
    }
  }
  m.input_norm.min.resize(dims);
  m.input_norm.max.resize(dims);
  for (std::size_t d = 0; d < dims; ++d) {
    m.input_norm.min[d] = r.f64();
    m.input_norm.max[d] = r.f64();
  }
  m.output_scales.resize(ns);
  for (auto& s : m.output_scales) {
    s.min = r.f64();
    s.max = r.f64();
  }
  if (r.remaining() != 0) structure_error("trailing bytes after payload");
  verify_crc(bytes, "model");
  m.validate();
  return m;
}

void save_model(const SurrogateModel& model, const std::filesystem::path& path,
                ValuePrecision precision) {
  write_file_atomic(path, serialize_model(model, precision));
}

SurrogateModel load_model(const std::filesystem::path& path) {
  return deserialize_model(read_file(path));
}

// ---------------------------------------------------------------------------
// Storage accounting

MemoryReport memory_report(const SurrogateModel& model, const GridTable& table,
                           ValuePrecision precision) {
  MemoryReport r;
  r.model_bytes = serialize_model(model, precision).size();
  r.table_bytes = serialize_table(table, precision).size();
  r.ratio = static_cast<double>(r.table_bytes) / static_cast<double>(r.model_bytes);
  r.parameter_count = model.parameter_count();
  return r;
}

std::string format_memory_report(const MemoryReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "model bytes      %zu\n"
                "table bytes      %zu\n"
                "compression      %.1fx\n"
                "parameters       %zu\n"
                "reference        %.3f MB networks vs %.0f MB table (%.0fx, published 4-D flamelet table)\n",
                r.model_bytes, r.table_bytes, r.ratio, r.parameter_count, kPublishedModelMegabytes,
                kPublishedTableMegabytes, kPublishedTableMegabytes / kPublishedModelMegabytes);
  return buf;
}

}  // namespace smlp
