// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "common.hpp"
#include "protoncd/data.hpp"
#include "protoncd/error.hpp"
#include "protoncd/numerics.hpp"

namespace protoncd {
namespace {

namespace fs = std::filesystem;
using testing::throws_kind;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("protoncd_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

VmfMixtureOptions small_mixture(std::uint64_t seed = 1) {
  VmfMixtureOptions o;
  o.k_classes = 3;
  o.k_base = 2;
  o.d_in = 6;
  o.n_per_class = 10;
  o.seed = seed;
  return o;
}

ToyImageOptions small_toy(std::uint64_t seed = 2) {
  ToyImageOptions o;
  o.k_anomaly_types = 3;
  o.grid = 8;
  o.cell = 4;
  o.d_in = 5;
  o.n_per_class = 4;
  o.seed = seed;
  return o;
}

// Replaces the first occurrence of `from` in line `line_no` (1-based).
std::string edit_line(const std::string& text, int line_no, const std::string& from, const std::string& to) {
  std::string out;
  std::size_t start = 0;
  for (int l = 1; start <= text.size(); ++l) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (l == line_no) {
      const auto at = line.find(from);
      EXPECT_NE(at, std::string::npos) << "fixture edit failed";
      if (at != std::string::npos) line.replace(at, from.size(), to);
    }
    out += line;
    if (end < text.size()) out += '\n';
    start = end + 1;
  }
  return out;
}

TEST(DatasetIo, RoundTripIsIdentity) {
  const fs::path dir = scratch_dir("roundtrip");
  for (const Dataset& ds : {synth_vmf_mixture(small_mixture()), synth_toy_images(small_toy())}) {
    save_dataset(ds, dir / "d.jsonl");
    const Dataset back = load_dataset(dir / "d.jsonl");
    EXPECT_EQ(back, ds);
    EXPECT_EQ(serialize_dataset(back), serialize_dataset(ds));
  }
}

TEST(DatasetIo, ThreeClassFixtureLoads) {
  const fs::path dir = scratch_dir("fixture");
  save_dataset(synth_vmf_mixture(small_mixture()), dir / "d.jsonl");
  const Dataset ds = load_dataset(dir / "d.jsonl");
  EXPECT_EQ(ds.samples.size(), 30u);
  EXPECT_EQ(ds.k_base, 2);
  EXPECT_EQ(ds.k_new_true, 1);
}

TEST(DatasetIo, LabelOutsideRangeIsValidationError) {
  const std::string text = serialize_dataset(synth_vmf_mixture(small_mixture()));
  // line 22 holds the first sample of novel class 2; K = 4
  const std::string bad = edit_line(text, 22, "\"label\":2", "\"label\":4");
  EXPECT_TRUE(throws_kind(ErrorKind::ValidationError, [&] { parse_dataset(bad); }));
  const std::string negative = edit_line(text, 2, "\"label\":0", "\"label\":-1");
  EXPECT_TRUE(throws_kind(ErrorKind::ValidationError, [&] { parse_dataset(negative); }));
}

TEST(DatasetIo, LabeledNovelSampleIsValidationError) {
  const std::string text = serialize_dataset(synth_vmf_mixture(small_mixture()));
  const std::string bad = edit_line(text, 22, "\"split\":\"unlabeled\"", "\"split\":\"labeled\"");
  EXPECT_TRUE(throws_kind(ErrorKind::ValidationError, [&] { parse_dataset(bad); }));
}

TEST(DatasetIo, ParseFailureNamesLine) {
  std::string text = serialize_dataset(synth_vmf_mixture(small_mixture()));
  text = edit_line(text, 5, "\"patches\":[[", "\"patches\":[[oops");
  try {
    parse_dataset(text);
    FAIL() << "expected FormatError";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::FormatError);
    EXPECT_NE(std::string(e.what()).find("line 5"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, MixedGridShapesRejected) {
  Dataset ds = synth_vmf_mixture(small_mixture());
  ds.samples[3].patches = Matrix(2, 6, 0.1);
  EXPECT_TRUE(throws_kind(ErrorKind::ValidationError, [&] { validate_dataset(ds); }));
  const std::string text = serialize_dataset(ds);
  EXPECT_TRUE(throws_kind(ErrorKind::ValidationError, [&] { parse_dataset(text); }));
}

TEST(DatasetIo, DuplicateIdsAndBadMapsRejected) {
  Dataset ds = synth_vmf_mixture(small_mixture());
  Dataset dup = ds;
  dup.samples[1].id = dup.samples[0].id;
  EXPECT_TRUE(throws_kind(ErrorKind::ValidationError, [&] { validate_dataset(dup); }));
  Dataset bad_map = ds;
  bad_map.samples[0].anomaly_map = Matrix(1, 1, 1.5);
  EXPECT_TRUE(throws_kind(ErrorKind::ValidationError, [&] { validate_dataset(bad_map); }));
}

TEST(DatasetIo, UnknownFieldAndHeaderErrors) {
  const std::string text = serialize_dataset(synth_vmf_mixture(small_mixture()));
  EXPECT_TRUE(throws_kind(ErrorKind::FormatError,
                          [&] { parse_dataset(edit_line(text, 3, "\"id\"", "\"extra\":1,\"id\"")); }));
  EXPECT_TRUE(throws_kind(ErrorKind::FormatError,
                          [&] { parse_dataset(edit_line(text, 1, "\"version\":1", "\"version\":9")); }));
  EXPECT_TRUE(throws_kind(ErrorKind::FormatError, [&] { parse_dataset(""); }));
}

TEST(DatasetIo, SidecarAnomalyMap) {
  const fs::path dir = scratch_dir("sidecar");
  Dataset ds = synth_vmf_mixture(small_mixture());
  std::string text = serialize_dataset(ds);
  text = edit_line(text, 2, "\"anomaly_map\":[[1.0]]", "\"anomaly_map_path\":\"maps/a.json\"");
  fs::create_directories(dir / "maps");
  std::ofstream(dir / "maps" / "a.json") << "[[0.375]]";
  std::ofstream(dir / "d.jsonl") << text;
  const Dataset back = load_dataset(dir / "d.jsonl");
  ASSERT_TRUE(back.samples[0].anomaly_map.has_value());
  EXPECT_EQ((*back.samples[0].anomaly_map)(0, 0), 0.375);
  fs::remove(dir / "maps" / "a.json");
  EXPECT_TRUE(throws_kind(ErrorKind::FormatError, [&] { load_dataset(dir / "d.jsonl"); }));
}

TEST(DatasetIo, TrainingLabelHidesGroundTruth) {
  const Dataset ds = synth_vmf_mixture(small_mixture());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (ds.samples[i].split == Split::Labeled) {
      EXPECT_EQ(ds.training_label(i), ds.samples[i].label);
    } else {
      EXPECT_FALSE(ds.training_label(i).has_value());
    }
  }
}

TEST(Pooling, ConstantMap) {
  const Vector v = pool_anomaly_map(Matrix(6, 6, 0.3), 3);
  ASSERT_EQ(v.size(), 9u);
  for (double x : v) EXPECT_NEAR(x, 0.3, 1e-15);
}

TEST(Pooling, SingleHotCell) {
  Matrix m(4, 4, 0.0);
  m(0, 0) = 1.0;
  EXPECT_EQ(pool_anomaly_map(m, 2), (Vector{0.25, 0, 0, 0}));
}

TEST(Pooling, MatchesNestedLoopAndKeepsMean) {
  Rng rng(3);
  Matrix m(8, 8);
  for (double& x : m.flat()) x = rng.uniform();
  const Vector v = pool_anomaly_map(m, 4);
  double map_mean = 0.0;
  for (double x : m.flat()) map_mean += x / 64.0;
  double pooled_mean = 0.0;
  for (int py = 0; py < 4; ++py) {
    for (int px = 0; px < 4; ++px) {
      double s = 0.0;
      for (int y = 2 * py; y < 2 * py + 2; ++y) {
        for (int x = 2 * px; x < 2 * px + 2; ++x) s += m(y, x);
      }
      EXPECT_NEAR(v[py * 4 + px], s / 4.0, 1e-15);
      pooled_mean += v[py * 4 + px] / 16.0;
    }
  }
  EXPECT_NEAR(pooled_mean, map_mean, 1e-9);
}

TEST(Pooling, EdgeReplicationForIndivisibleSize) {
  Rng rng(4);
  Matrix m(5, 7);
  for (double& x : m.flat()) x = rng.uniform();
  // pad to 6 x 8 by repeating the last row / column, then 3 x 4 cells
  Matrix padded(6, 8);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 8; ++x) padded(y, x) = m(std::min(y, 4), std::min(x, 6));
  }
  const Vector v = pool_anomaly_map(m, 2);
  const Vector w = pool_anomaly_map(padded, 2);
  ASSERT_EQ(v.size(), 4u);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(v[j], w[j], 1e-15);
}

TEST(Pooling, EmptyMapRejected) {
  EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [] { pool_anomaly_map(Matrix(), 2); }));
}

TEST(Views, IdentityAugmentation) {
  const Dataset ds = synth_toy_images(small_toy());
  AugmentParams p;
  p.noise_sigma = 0.0;
  p.scale_jitter = 0.0;
  p.flip_prob = 0.0;
  p.crop_fraction = 1.0;
  Rng rng(5);
  for (const Sample& s : ds.samples) {
    const ViewPair v = make_views(s, ds.layout, p, rng);
    EXPECT_EQ(v.view_a, s);
    EXPECT_EQ(v.view_b, s);
  }
}

TEST(Views, FlipCommutesWithPooling) {
  const Dataset ds = synth_toy_images(small_toy());
  AugmentParams p;
  p.noise_sigma = 0.0;
  p.scale_jitter = 0.0;
  p.flip_prob = 1.0;
  p.crop_fraction = 1.0;
  Rng rng(6);
  const int g = ds.layout.grid;
  for (const Sample& s : ds.samples) {
    const Sample v = make_view(s, ds.layout, p, rng);
    const Vector pooled = pool_anomaly_map(*s.anomaly_map, g);
    const Vector pooled_view = pool_anomaly_map(*v.anomaly_map, g);
    for (int r = 0; r < g; ++r) {
      for (int c = 0; c < g; ++c) {
        EXPECT_NEAR(pooled_view[r * g + c], pooled[r * g + (g - 1 - c)], 1e-15);
        for (int k = 0; k < ds.layout.d_in; ++k) {
          EXPECT_EQ(v.patches(r * g + c, k), s.patches(r * g + (g - 1 - c), k));
        }
      }
    }
  }
}

TEST(Views, DeterministicAndKeepIdentity) {
  const Dataset ds = synth_toy_images(small_toy());
  AugmentParams p;
  Rng r1(7), r2(7);
  for (const Sample& s : ds.samples) {
    const ViewPair a = make_views(s, ds.layout, p, r1);
    const ViewPair b = make_views(s, ds.layout, p, r2);
    EXPECT_EQ(a.view_a, b.view_a);
    EXPECT_EQ(a.view_b, b.view_b);
    for (const Sample* v : {&a.view_a, &a.view_b}) {
      EXPECT_EQ(v->id, s.id);
      EXPECT_EQ(v->label, s.label);
      EXPECT_EQ(v->split, s.split);
      for (double x : v->anomaly_map->flat()) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
      }
    }
    EXPECT_NE(a.view_a.patches, a.view_b.patches);
  }
}

TEST(Views, CropKeepsGridShape) {
  const Dataset ds = synth_toy_images(small_toy());
  AugmentParams p;
  p.noise_sigma = 0.0;
  p.scale_jitter = 0.0;
  p.flip_prob = 0.0;
  p.crop_fraction = 0.5;
  Rng rng(8);
  const Sample v = make_view(ds.samples[0], ds.layout, p, rng);
  EXPECT_EQ(v.patches.rows(), ds.samples[0].patches.rows());
  EXPECT_EQ(v.anomaly_map->rows(), ds.samples[0].anomaly_map->rows());
  // every cropped patch is a copy of some source patch
  for (std::size_t r = 0; r < v.patches.rows(); ++r) {
    bool found = false;
    for (std::size_t q = 0; q < ds.samples[0].patches.rows() && !found; ++q) {
      found = std::equal(v.patches.row(r).begin(), v.patches.row(r).end(),
                         ds.samples[0].patches.row(q).begin());
    }
    EXPECT_TRUE(found) << "patch " << r;
  }
}

TEST(VmfMixture, ConcentrationLimit) {
  VmfMixtureOptions o = small_mixture();
  o.kappa = 1e6;
  const Dataset ds = synth_vmf_mixture(o);
  // class means recovered as the normalized class average
  for (int c = 0; c < 3; ++c) {
    Vector mean(6, 0.0);
    for (const Sample& s : ds.samples) {
      if (*s.label == c) axpy(1.0, s.patches.row(0), mean);
    }
    mean = numerics::normalize_unit(mean);
    for (const Sample& s : ds.samples) {
      if (*s.label != c) continue;
      const double cosine = std::clamp(dot(mean, s.patches.row(0)), -1.0, 1.0);
      EXPECT_LT(std::acos(cosine), 1e-2);
    }
  }
}

TEST(VmfMixture, MeanResultantLengthMatchesBesselRatio) {
  for (double kappa : {2.0, 20.0, 80.0}) {
    for (int d : {3, 16}) {
      Rng rng(9);
      Vector mu(static_cast<std::size_t>(d), 0.0);
      mu[0] = 1.0;
      double acc = 0.0;
      const int n = 5000;
      for (int i = 0; i < n; ++i) {
        const Vector x = sample_vmf(mu, kappa, rng);
        EXPECT_NEAR(norm2(x), 1.0, 1e-12);
        acc += x[0];
      }
      EXPECT_NEAR(acc / n, numerics::vmf_mean_resultant_length(d, kappa), 0.02)
          << "d " << d << " kappa " << kappa;
    }
  }
}

TEST(VmfMixture, SplitsAndDeterminism) {
  VmfMixtureOptions o = small_mixture(12);
  o.with_normal = true;
  o.ood_classes = 1;
  o.ood_per_class = 5;
  o.d_in = 8;
  const Dataset a = synth_vmf_mixture(o);
  const Dataset b = synth_vmf_mixture(o);
  EXPECT_EQ(dataset_digest(a), dataset_digest(b));
  EXPECT_EQ(serialize_dataset(a), serialize_dataset(b));
  o.seed = 13;
  EXPECT_NE(dataset_digest(synth_vmf_mixture(o)), dataset_digest(a));
  EXPECT_EQ(a.normal_label, 3);
  EXPECT_EQ(a.num_classes(), 4);
  EXPECT_EQ(a.indices_of(Split::Ood).size(), 5u);
  for (const Sample& s : a.samples) {
    if (s.split == Split::Labeled) EXPECT_TRUE(*s.label < 2 || *s.label == 3);
    if (s.split == Split::Ood) EXPECT_FALSE(s.label.has_value());
  }
}

TEST(VmfMixture, TooFewDimensionsRejected) {
  VmfMixtureOptions o = small_mixture();
  o.d_in = 2;
  EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [&] { synth_vmf_mixture(o); }));
}

TEST(ToyImages, NormalSamplesHaveEmptyMaps) {
  const Dataset ds = synth_toy_images(small_toy());
  for (const Sample& s : ds.samples) {
    if (*s.label != ds.normal_label) continue;
    for (double x : s.anomaly_map->flat()) EXPECT_EQ(x, 0.0);
  }
}

TEST(ToyImages, FootprintAreaWithinBlurMargin) {
  ToyImageOptions o = small_toy();
  o.implant_size = 5;
  const Dataset ds = synth_toy_images(o);
  for (const Sample& s : ds.samples) {
    if (*s.label == ds.normal_label) continue;
    int support = 0;
    int saturated = 0;
    for (double x : s.anomaly_map->flat()) {
      support += x > 0.0;
      saturated += x == 1.0;
    }
    // a 3x3 box blur grows the footprint by one pixel per side and keeps
    // only the interior at 1
    EXPECT_EQ(support, (o.implant_size + 2) * (o.implant_size + 2));
    EXPECT_EQ(saturated, (o.implant_size - 2) * (o.implant_size - 2));
    // implants stay on the object
    for (std::size_t y = 0; y < s.anomaly_map->rows(); ++y) {
      for (std::size_t x = 0; x < s.anomaly_map->cols(); ++x) {
        if ((*s.anomaly_map)(y, x) == 1.0) EXPECT_EQ((*s.foreground_mask)(y, x), 1.0);
      }
    }
  }
}

TEST(ToyImages, DisjointLocationsGiveDisjointSupports) {
  ToyImageOptions o = small_toy();
  o.grid = 11;
  o.cell = 4;
  o.implant_size = 4;
  o.disjoint_locations = true;
  const Dataset ds = synth_toy_images(o);
  std::vector<std::vector<bool>> support(3, std::vector<bool>(o.grid * o.grid, false));
  for (const Sample& s : ds.samples) {
    if (*s.label == ds.normal_label) continue;
    const Vector v = pool_anomaly_map(*s.anomaly_map, o.grid);
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] > 0.0) support[*s.label][j] = true;
    }
  }
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      for (std::size_t j = 0; j < support[a].size(); ++j) EXPECT_FALSE(support[a][j] && support[b][j]);
    }
  }
}

TEST(ToyImages, ImplantLargerThanObjectRejected) {
  ToyImageOptions o = small_toy();
  o.implant_size = 40;
  EXPECT_TRUE(throws_kind(ErrorKind::InvalidArgument, [&] { synth_toy_images(o); }));
}

TEST(ToyImages, Deterministic) {
  EXPECT_EQ(dataset_digest(synth_toy_images(small_toy(4))), dataset_digest(synth_toy_images(small_toy(4))));
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
}

}  // namespace
}  // namespace protoncd
