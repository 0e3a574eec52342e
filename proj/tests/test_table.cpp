#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "smlp/binary_io.hpp"
#include "smlp/table.hpp"
#include "test_util.hpp"

using namespace smlp;

namespace {

// Interpolates one axis at a time, collapsing the last axis first. Shares no
// code with the library's corner-weight loop.
double oracle_interp(const GridTable& t, std::span<const double> q, std::size_t scalar) {
  const std::size_t dims = t.dims();
  std::vector<double> cube(t.num_points());
  for (std::size_t p = 0; p < t.num_points(); ++p) cube[p] = t.value(p, scalar);
  std::vector<std::size_t> shape;
  for (std::size_t d = 0; d < dims; ++d) shape.push_back(t.axis(d).size());
  for (std::size_t d = dims; d-- > 0;) {
    const auto& a = t.axis(d);
    const double x = std::clamp(q[d], a.front(), a.back());
    std::size_t i = 0;
    while (i + 2 < a.size() && x >= a[i + 1]) ++i;
    const double w = (x - a[i]) / (a[i + 1] - a[i]);
    const std::size_t outer = cube.size() / shape[d];
    std::vector<double> next(outer);
    for (std::size_t o = 0; o < outer; ++o) {
      next[o] = (1.0 - w) * cube[o * shape[d] + i] + w * cube[o * shape[d] + i + 1];
    }
    cube = std::move(next);
  }
  return cube[0];
}

GridTable small_table() {
  return GridTable({{0.0, 1.0, 3.0}, {-1.0, 1.0}}, {"a", "b"},
                   {0, 10, 1, 11, 2, 12, 3, 13, 4, 14, 5, 15});
}

}  // namespace

TEST(Table, LayoutIsRowMajorScalarsInnermost) {
  const auto t = small_table();
  EXPECT_EQ(t.num_points(), 6u);
  EXPECT_EQ(t.stride(0), 2u);
  EXPECT_EQ(t.stride(1), 1u);
  // point 3 = (axis0 index 1, axis1 index 1)
  EXPECT_EQ(t.inputs(3), (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(t.value(3, 0), 3.0);
  EXPECT_EQ(t.value(3, 1), 13.0);
  EXPECT_EQ(t.scalar_min(1), 10.0);
  EXPECT_EQ(t.scalar_max(0), 5.0);
}

TEST(Table, RejectsMalformedConstruction) {
  EXPECT_THROW(GridTable({{0.0, 1.0}}, {"a"}, {1.0}), DataError);
  EXPECT_THROW(GridTable({{0.0}}, {"a"}, {1.0}), DataError);
  EXPECT_THROW(GridTable({{0.0, 0.0}}, {"a"}, {1.0, 2.0}), DataError);
  EXPECT_THROW(GridTable({{0.0, 1.0}}, {}, {}), DataError);
  EXPECT_THROW(GridTable({{0.0, 1.0}}, {"a"}, {1.0, std::nan("")}), DataError);
  EXPECT_THROW(GridTable({}, {"a"}, {}), DataError);
}

TEST(Multilinear, NodesAreExact) {
  const auto t = generate_synthetic({"gauss-bumps", {7, 5, 4}, 3, 9});
  for (std::size_t p = 0; p < t.num_points(); ++p) {
    const auto y = multilinear_eval(t, t.inputs(p), RangePolicy::strict);
    for (std::size_t s = 0; s < t.num_scalars(); ++s) EXPECT_EQ(y[s], t.value(p, s));
  }
}

TEST(Multilinear, MatchesAxisByAxisOracle) {
  const auto t = generate_synthetic({"flame-like", {9, 6, 5}, 4, 2});
  Rng rng(17);
  for (int i = 0; i < 500; ++i) {
    const auto q = test::random_query(t, rng);
    const auto y = multilinear_eval(t, q);
    for (std::size_t s = 0; s < t.num_scalars(); ++s) {
      const double ref = oracle_interp(t, q, s);
      EXPECT_NEAR(y[s], ref, 1e-12 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST(Multilinear, ReproducesMultilinearFamily) {
  const SyntheticSpec spec{"multilinear", {6, 5, 4, 3}, 3, 5};
  const auto t = generate_synthetic(spec);
  const auto fn = make_synthetic_function(spec);
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const auto q = test::random_query(t, rng);
    const auto y = multilinear_eval(t, q);
    const auto ref = (*fn)(q);
    for (std::size_t s = 0; s < t.num_scalars(); ++s) {
      EXPECT_NEAR(y[s], ref[s], 1e-12 * std::abs(ref[s]));
    }
  }
}

TEST(Multilinear, ClampAndStrictPolicies) {
  const auto t = small_table();
  const std::vector<double> outside{5.0, -4.0};
  const auto y = multilinear_eval(t, outside, RangePolicy::clamp);
  const auto edge = multilinear_eval(t, std::vector<double>{3.0, -1.0});
  EXPECT_EQ(y, edge);
  EXPECT_THROW(multilinear_eval(t, outside, RangePolicy::strict), DataError);
  EXPECT_THROW(multilinear_eval(t, std::vector<double>{0.5, std::nan("")}), DataError);
  EXPECT_THROW(multilinear_eval(t, std::vector<double>{0.5}), DimensionError);
}

TEST(Multilinear, HandComputedMidpoint) {
  const auto t = small_table();
  // x = 2 sits halfway between axis-0 nodes 1 and 3; y = 0 halfway on axis 1.
  const auto y = multilinear_eval(t, std::vector<double>{2.0, 0.0});
  EXPECT_DOUBLE_EQ(y[0], 0.25 * (2 + 3 + 4 + 5));
  EXPECT_DOUBLE_EQ(y[1], 0.25 * (12 + 13 + 14 + 15));
}

TEST(Synthetic, FamiliesAreSeededAndDeterministic) {
  for (const auto& fam : synthetic_families()) {
    const SyntheticSpec a{fam, {5, 4, 3}, 3, 11};
    SyntheticSpec b = a;
    b.seed = 12;
    EXPECT_EQ(generate_synthetic(a), generate_synthetic(a)) << fam;
    EXPECT_NE(generate_synthetic(a).digest(), generate_synthetic(b).digest()) << fam;
  }
  EXPECT_THROW(generate_synthetic({"nope", {4, 4}, 1, 1}), ConfigError);
  EXPECT_THROW(generate_synthetic({"regimes", {4, 1}, 1, 1}), ConfigError);
  EXPECT_THROW(generate_synthetic({"regimes", {4, 4}, 0, 1}), ConfigError);
}

TEST(Synthetic, TableMatchesFunctionAtNodes) {
  const SyntheticSpec spec{"regimes", {8, 5}, 2, 4};
  const auto t = generate_synthetic(spec);
  const auto fn = make_synthetic_function(spec);
  for (std::size_t p = 0; p < t.num_points(); ++p) {
    const auto ref = (*fn)(t.inputs(p));
    for (std::size_t s = 0; s < 2; ++s) EXPECT_EQ(t.value(p, s), ref[s]);
  }
}

TEST(Normalization, MapsGridOntoUnitCube) {
  const auto t = generate_synthetic({"gauss-bumps", {5, 6, 7}, 1, 1});
  const auto n = normalize_inputs(t);
  ASSERT_EQ(n.points.rows, t.num_points());
  for (double v : n.points.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(n.points(0, 0), 0.0);
  EXPECT_EQ(n.points(t.num_points() - 1, 2), 1.0);
  std::vector<double> raw{t.axis(0)[2], t.axis(1)[3], t.axis(2)[1]}, unit(3), back(3);
  n.stats.normalize(raw, unit);
  n.stats.denormalize(unit, back);
  for (int d = 0; d < 3; ++d) EXPECT_NEAR(back[d], raw[d], 1e-12 * (1 + std::abs(raw[d])));
}

TEST(TableFile, RoundTripIsBitwise) {
  test::TempDir dir("table");
  const auto t = generate_synthetic({"flame-like", {6, 4, 3}, 5, 8});
  save_table(t, dir / "t.tab");
  const auto back = load_table(dir / "t.tab");
  EXPECT_EQ(back, t);
  EXPECT_EQ(back.digest(), t.digest());
}

TEST(TableFile, Float32StoresRoundedValues) {
  const auto t = generate_synthetic({"gauss-bumps", {5, 4}, 2, 3});
  const auto bytes32 = serialize_table(t, ValuePrecision::f32);
  EXPECT_LT(bytes32.size(), serialize_table(t).size());
  const auto back = deserialize_table(bytes32);
  for (std::size_t i = 0; i < t.values().size(); ++i) {
    EXPECT_EQ(back.values()[i], static_cast<double>(static_cast<float>(t.values()[i])));
  }
}

TEST(TableFile, DetectsCorruption) {
  const auto t = generate_synthetic({"gauss-bumps", {5, 4}, 2, 3});
  const auto good = serialize_table(t);

  auto bad_magic = good;
  bad_magic[0] ^= 0xFF;
  try {
    deserialize_table(bad_magic);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::bad_magic);
  }

  for (std::size_t cut : {std::size_t{10}, good.size() / 2, good.size() - 1}) {
    std::vector<std::uint8_t> trunc(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(deserialize_table(trunc), FormatError) << cut;
  }

  auto flipped = good;
  flipped[good.size() - 12] ^= 0x01;
  try {
    deserialize_table(flipped);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::checksum);
  }

  auto version = good;
  version[9] = 99;
  try {
    deserialize_table(version);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatError::Kind::bad_version);
  }
}

TEST(TableFile, MissingFileIsAnError) {
  EXPECT_THROW(load_table("/nonexistent/dir/x.tab"), Error);
}

TEST(BinaryIo, Crc32KnownValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}), 0xCBF43926u);
}
