// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include "protoncd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "protoncd/error.hpp"
#include "protoncd/numerics.hpp"

namespace protoncd {

using nlohmann::json;

namespace {

constexpr std::string_view kDatasetFormat = "protoncd-dataset";
constexpr int kDatasetVersion = 1;

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    rows.push_back(json(std::vector<double>(row.begin(), row.end())));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) fail(ErrorKind::FormatError, what + " must be a 2-D array");
  const std::size_t rows = j.size();
  const std::size_t cols = rows == 0 ? 0 : j[0].size();
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) {
      fail(ErrorKind::FormatError, what + " has ragged rows");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) fail(ErrorKind::FormatError, what + " has a non-numeric entry");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

json sample_to_json(const Sample& s) {
  json j;
  j["id"] = s.id;
  j["split"] = std::string(to_string(s.split));
  j["label"] = s.label ? json(*s.label) : json(nullptr);
  j["patches"] = matrix_to_json(s.patches);
  j["anomaly_map"] = s.anomaly_map ? matrix_to_json(*s.anomaly_map) : json(nullptr);
  j["foreground_mask"] = s.foreground_mask ? matrix_to_json(*s.foreground_mask) : json(nullptr);
  return j;
}

Matrix load_sidecar_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::FormatError, "cannot open anomaly map sidecar " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, "sidecar " + path.string() + ": " + e.what());
  }
  return matrix_from_json(j, "anomaly map sidecar");
}

Sample sample_from_json(const json& j, const std::filesystem::path& base_dir) {
  static const std::set<std::string> kKeys = {"id",          "split",           "label",
                                              "patches",     "anomaly_map",     "foreground_mask",
                                              "anomaly_map_path"};
  if (!j.is_object()) fail(ErrorKind::FormatError, "sample must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.contains(key)) fail(ErrorKind::FormatError, "unknown sample field '" + key + "'");
  }
  Sample s;
  s.id = j.at("id").get<std::string>();
  s.split = parse_split(j.at("split").get<std::string>());
  if (j.contains("label") && !j["label"].is_null()) s.label = j["label"].get<int>();
  s.patches = matrix_from_json(j.at("patches"), "patches");
  if (j.contains("anomaly_map") && !j["anomaly_map"].is_null()) {
    s.anomaly_map = matrix_from_json(j["anomaly_map"], "anomaly_map");
  } else if (j.contains("anomaly_map_path") && !j["anomaly_map_path"].is_null()) {
    s.anomaly_map = load_sidecar_map(base_dir / j["anomaly_map_path"].get<std::string>());
  }
  if (j.contains("foreground_mask") && !j["foreground_mask"].is_null()) {
    s.foreground_mask = matrix_from_json(j["foreground_mask"], "foreground_mask");
  }
  return s;
}

// Nearest-neighbour resize of rows/cols [r0, r0+len) x [c0, c0+len) of a
// square grid of `side` cells, each `unit` entries wide, back to full size.
Matrix crop_resize_map(const Matrix& map, int side, int r0, int c0, int len) {
  const int unit_r = static_cast<int>(map.rows()) / side;
  const int unit_c = static_cast<int>(map.cols()) / side;
  Matrix out(map.rows(), map.cols());
  for (std::size_t y = 0; y < map.rows(); ++y) {
    const std::size_t sy = static_cast<std::size_t>(r0 * unit_r) + y * len / side;
    for (std::size_t x = 0; x < map.cols(); ++x) {
      const std::size_t sx = static_cast<std::size_t>(c0 * unit_c) + x * len / side;
      out(y, x) = map(sy, sx);
    }
  }
  return out;
}

void flip_columns(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    std::reverse(row.begin(), row.end());
  }
}

// Edge-replicate so that rows and cols are multiples of side.
Matrix pad_to_multiple(const Matrix& map, int side) {
  const std::size_t h = (map.rows() + side - 1) / side * side;
  const std::size_t w = (map.cols() + side - 1) / side * side;
  if (h == map.rows() && w == map.cols()) return map;
  Matrix out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      out(y, x) = map(std::min(y, map.rows() - 1), std::min(x, map.cols() - 1));
    }
  }
  return out;
}

Vector random_unit(int d, Rng& rng, double scale = 1.0) {
  Vector v = sample_uniform_sphere(d, rng);
  for (double& x : v) x *= scale;
  return v;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Labeled: return "labeled";
    case Split::Unlabeled: return "unlabeled";
    case Split::Ood: return "ood";
  }
  return "unlabeled";
}

Split parse_split(std::string_view text) {
  if (text == "labeled") return Split::Labeled;
  if (text == "unlabeled") return Split::Unlabeled;
  if (text == "ood") return Split::Ood;
  fail(ErrorKind::FormatError, "unknown split '" + std::string(text) + "'");
}

std::optional<int> Dataset::training_label(std::size_t index) const {
  const Sample& s = samples.at(index);
  if (s.split != Split::Labeled) return std::nullopt;
  return s.label;
}

std::optional<int> Dataset::num_classes() const {
  if (!k_new_true) return std::nullopt;
  return k_base + *k_new_true + 1;
}

std::vector<std::size_t> Dataset::indices_of(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

void validate_dataset(const Dataset& ds) {
  const auto& L = ds.layout;
  require(L.d_in >= 1 && L.grid >= 1 && L.height >= 1 && L.width >= 1, ErrorKind::ValidationError,
          "layout integers must be positive");
  require(ds.k_base >= 0, ErrorKind::ValidationError, "k_base must be >= 0");
  const auto k = ds.num_classes();
  if (k) {
    require(*ds.k_new_true >= 0, ErrorKind::ValidationError, "k_new_true must be >= 0");
    require(ds.normal_label == *k - 1, ErrorKind::ValidationError,
            "normal_label must be K-1 when k_new_true is known");
  }
  require(ds.normal_label >= ds.k_base, ErrorKind::ValidationError,
          "normal_label must not collide with a base class");
  std::set<std::string> ids;
  for (const Sample& s : ds.samples) {
    const std::string where = "sample '" + s.id + "'";
    require(ids.insert(s.id).second, ErrorKind::ValidationError, "duplicate id " + s.id);
    require(s.patches.rows() == static_cast<std::size_t>(L.patch_count()) &&
                s.patches.cols() == static_cast<std::size_t>(L.d_in),
            ErrorKind::ValidationError, where + " has a patch grid inconsistent with the layout");
    for (double x : s.patches.flat()) {
      require(std::isfinite(x), ErrorKind::ValidationError, where + " has a non-finite feature");
    }
    if (s.label) {
      require(*s.label >= 0, ErrorKind::ValidationError, where + " has a negative label");
      if (k) require(*s.label < *k, ErrorKind::ValidationError, where + " has a label outside [0,K)");
    }
    if (s.split == Split::Labeled) {
      require(s.label.has_value(), ErrorKind::ValidationError, where + " is labeled without a label");
      require(*s.label < ds.k_base || *s.label == ds.normal_label, ErrorKind::ValidationError,
              where + " is labeled with a non-base class");
    }
    if (s.anomaly_map) {
      require(s.anomaly_map->rows() == static_cast<std::size_t>(L.height) &&
                  s.anomaly_map->cols() == static_cast<std::size_t>(L.width),
              ErrorKind::ValidationError, where + " anomaly map has the wrong shape");
      for (double x : s.anomaly_map->flat()) {
        require(x >= 0.0 && x <= 1.0, ErrorKind::ValidationError,
                where + " anomaly map entry outside [0,1]");
      }
    }
    if (s.foreground_mask) {
      require(s.foreground_mask->rows() == static_cast<std::size_t>(L.height) &&
                  s.foreground_mask->cols() == static_cast<std::size_t>(L.width),
              ErrorKind::ValidationError, where + " foreground mask has the wrong shape");
      for (double x : s.foreground_mask->flat()) {
        require(x == 0.0 || x == 1.0, ErrorKind::ValidationError, where + " mask is not binary");
      }
    }
  }
}

std::string serialize_dataset(const Dataset& ds) {
  json header;
  header["format"] = kDatasetFormat;
  header["version"] = kDatasetVersion;
  header["k_base"] = ds.k_base;
  header["k_new_true"] = ds.k_new_true ? json(*ds.k_new_true) : json(nullptr);
  header["normal_label"] = ds.normal_label;
  header["d_in"] = ds.layout.d_in;
  header["grid"] = ds.layout.grid;
  header["height"] = ds.layout.height;
  header["width"] = ds.layout.width;
  std::string out = header.dump();
  out.push_back('\n');
  for (const Sample& s : ds.samples) {
    out += sample_to_json(s).dump();
    out.push_back('\n');
  }
  return out;
}

Dataset parse_dataset(std::string_view text, const std::filesystem::path& base_dir) {
  Dataset ds;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        if (j.value("format", "") != kDatasetFormat) {
          fail(ErrorKind::FormatError, "missing dataset header");
        }
        if (j.value("version", -1) != kDatasetVersion) {
          fail(ErrorKind::FormatError, "unsupported dataset version");
        }
        ds.k_base = j.at("k_base").get<int>();
        if (!j.at("k_new_true").is_null()) ds.k_new_true = j["k_new_true"].get<int>();
        ds.normal_label = j.at("normal_label").get<int>();
        ds.layout.d_in = j.at("d_in").get<int>();
        ds.layout.grid = j.at("grid").get<int>();
        ds.layout.height = j.at("height").get<int>();
        ds.layout.width = j.at("width").get<int>();
        have_header = true;
      } else {
        ds.samples.push_back(sample_from_json(j, base_dir));
      }
    } catch (const json::exception& e) {
      fail(ErrorKind::FormatError, "line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::FormatError) throw;
      fail(ErrorKind::FormatError, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  require(have_header, ErrorKind::FormatError, "empty dataset file");
  validate_dataset(ds);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::FormatError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str(), path.parent_path());
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  validate_dataset(ds);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::InvalidArgument, "cannot write " + path.string());
  out << serialize_dataset(ds);
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string dataset_digest(const Dataset& ds) { return fnv1a_hex(serialize_dataset(ds)); }

Vector pool_anomaly_map(const Matrix& map, int grid_n) {
  require(!map.empty(), ErrorKind::InvalidArgument, "cannot pool an empty anomaly map");
  require(grid_n >= 1, ErrorKind::InvalidArgument, "grid_n must be positive");
  const Matrix padded = pad_to_multiple(map, grid_n);
  const std::size_t ch = padded.rows() / grid_n;
  const std::size_t cw = padded.cols() / grid_n;
  Vector pooled(static_cast<std::size_t>(grid_n) * grid_n, 0.0);
  for (int pr = 0; pr < grid_n; ++pr) {
    for (int pc = 0; pc < grid_n; ++pc) {
      double s = 0.0;
      for (std::size_t y = pr * ch; y < (pr + 1) * ch; ++y) {
        for (std::size_t x = pc * cw; x < (pc + 1) * cw; ++x) s += padded(y, x);
      }
      pooled[static_cast<std::size_t>(pr) * grid_n + pc] = s / static_cast<double>(ch * cw);
    }
  }
  return pooled;
}

Sample make_view(const Sample& sample, const DatasetLayout& layout, const AugmentParams& params,
                 Rng& rng) {
  Sample view = sample;
  const int side = layout.grid;
  const std::size_t d_in = sample.patches.cols();

  const int crop = std::max(1, static_cast<int>(std::lround(params.crop_fraction * side)));
  if (crop < side) {
    const int r0 = static_cast<int>(rng.index(static_cast<std::size_t>(side - crop + 1)));
    const int c0 = static_cast<int>(rng.index(static_cast<std::size_t>(side - crop + 1)));
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        const int sr = r0 + r * crop / side;
        const int sc = c0 + c * crop / side;
        auto src = sample.patches.row(static_cast<std::size_t>(sr * side + sc));
        std::copy(src.begin(), src.end(), view.patches.row(static_cast<std::size_t>(r * side + c)).begin());
      }
    }
    if (view.anomaly_map) {
      view.anomaly_map = crop_resize_map(pad_to_multiple(*view.anomaly_map, side), side, r0, c0, crop);
    }
    if (view.foreground_mask) {
      view.foreground_mask =
          crop_resize_map(pad_to_multiple(*view.foreground_mask, side), side, r0, c0, crop);
    }
  }

  if (rng.uniform() < params.flip_prob) {
    Matrix flipped = view.patches;
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        auto src = view.patches.row(static_cast<std::size_t>(r * side + (side - 1 - c)));
        std::copy(src.begin(), src.end(), flipped.row(static_cast<std::size_t>(r * side + c)).begin());
      }
    }
    view.patches = std::move(flipped);
    if (view.anomaly_map) flip_columns(*view.anomaly_map);
    if (view.foreground_mask) flip_columns(*view.foreground_mask);
  }

  const double scale = 1.0 + params.scale_jitter * (2.0 * rng.uniform() - 1.0);
  for (double& x : view.patches.flat()) x *= scale;

  if (params.noise_sigma > 0.0) {
    for (std::size_t i = 0; i < view.patches.rows() * d_in; ++i) {
      view.patches.flat()[i] += params.noise_sigma * rng.normal();
    }
  }
  return view;
}

ViewPair make_views(const Sample& sample, const DatasetLayout& layout, const AugmentParams& params,
                    Rng& rng) {
  ViewPair pair;
  pair.view_a = make_view(sample, layout, params, rng);
  pair.view_b = make_view(sample, layout, params, rng);
  return pair;
}

Vector sample_uniform_sphere(int d, Rng& rng) {
  for (;;) {
    Vector v(static_cast<std::size_t>(d));
    for (double& x : v) x = rng.normal();
    const double n = norm2(v);
    if (n > 1e-12) {
      for (double& x : v) x /= n;
      return v;
    }
  }
}

Vector sample_vmf(std::span<const double> mean, double kappa, Rng& rng) {
  const int d = static_cast<int>(mean.size());
  require(d >= 2, ErrorKind::InvalidArgument, "vMF sampling needs d >= 2");
  require(kappa > 0.0, ErrorKind::InvalidArgument, "vMF sampling needs kappa > 0");
  const double dm1 = d - 1.0;
  // b written to avoid cancellation at large kappa
  const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + dm1 * std::log(1.0 - x0 * x0);
  double w = 0.0;
  for (;;) {
    const double z = rng.beta(0.5 * dm1, 0.5 * dm1);
    w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    const double u = rng.uniform();
    if (kappa * w + dm1 * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
  }
  // tangent direction orthogonal to the mean
  Vector v;
  for (;;) {
    v = sample_uniform_sphere(d, rng);
    const double proj = dot(v, mean);
    axpy(-proj, mean, v);
    const double n = norm2(v);
    if (n > 1e-9) {
      for (double& x : v) x /= n;
      break;
    }
  }
  const double r = std::sqrt(std::max(0.0, 1.0 - w * w));
  Vector out(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) out[i] = w * mean[i] + r * v[i];
  return out;
}

Dataset synth_vmf_mixture(const VmfMixtureOptions& opt) {
  require(opt.k_classes >= 2, ErrorKind::InvalidArgument, "need at least two classes");
  require(opt.n_per_class >= 1, ErrorKind::InvalidArgument, "n_per_class must be >= 1");
  require(opt.kappa > 0.0, ErrorKind::InvalidArgument, "kappa must be positive");
  require(opt.labeled_fraction >= 0.0 && opt.labeled_fraction <= 1.0, ErrorKind::InvalidArgument,
          "labeled_fraction must lie in [0,1]");
  require(opt.ood_classes >= 0, ErrorKind::InvalidArgument, "ood_classes must be >= 0");
  const int k_base = opt.k_base >= 0 ? opt.k_base : opt.k_classes - opt.k_classes / 2;
  require(k_base <= opt.k_classes, ErrorKind::InvalidArgument, "k_base exceeds k_classes");
  const int n_dirs = opt.k_classes + (opt.with_normal ? 1 : 0) + opt.ood_classes;
  require(opt.d_in >= n_dirs, ErrorKind::InvalidArgument,
          "d_in must be at least the number of class directions for orthogonal means");

  Rng rng(opt.seed);
  // Gram-Schmidt over Gaussian draws
  std::vector<Vector> means;
  while (static_cast<int>(means.size()) < n_dirs) {
    Vector v(static_cast<std::size_t>(opt.d_in));
    for (double& x : v) x = rng.normal();
    for (const Vector& m : means) axpy(-dot(v, m), m, v);
    const double n = norm2(v);
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    means.push_back(std::move(v));
  }

  Dataset ds;
  ds.k_base = k_base;
  ds.k_new_true = opt.k_classes - k_base;
  ds.normal_label = opt.k_classes;
  ds.layout = {opt.d_in, 1, 1, 1};

  const int n_labeled = static_cast<int>(std::lround(opt.labeled_fraction * opt.n_per_class));
  int serial = 0;
  auto emit = [&](const Vector& mean, std::optional<int> label, Split split, double score) {
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "vmf-%06d", serial++);
    s.id = id;
    s.split = split;
    s.label = label;
    const Vector x = sample_vmf(mean, opt.kappa, rng);
    s.patches = Matrix(1, static_cast<std::size_t>(opt.d_in));
    std::copy(x.begin(), x.end(), s.patches.row(0).begin());
    s.anomaly_map = Matrix(1, 1, score);
    ds.samples.push_back(std::move(s));
  };

  const int n_classes = opt.k_classes + (opt.with_normal ? 1 : 0);
  for (int c = 0; c < n_classes; ++c) {
    const bool is_normal = c == opt.k_classes;
    const bool is_base = c < k_base || is_normal;
    for (int j = 0; j < opt.n_per_class; ++j) {
      const Split split = is_base && j < n_labeled ? Split::Labeled : Split::Unlabeled;
      emit(means[c], c, split, is_normal ? 0.0 : 1.0);
    }
  }
  const int n_ood = opt.ood_per_class >= 0 ? opt.ood_per_class : opt.n_per_class;
  for (int c = 0; c < opt.ood_classes; ++c) {
    for (int j = 0; j < n_ood; ++j) emit(means[n_classes + c], std::nullopt, Split::Ood, 1.0);
  }
  validate_dataset(ds);
  return ds;
}

Dataset synth_toy_images(const ToyImageOptions& opt) {
  require(opt.grid >= 4, ErrorKind::InvalidArgument, "toy images need a grid of at least 4");
  require(opt.k_anomaly_types >= 2, ErrorKind::InvalidArgument, "need at least two anomaly types");
  require(opt.cell >= 1 && opt.d_in >= 1 && opt.n_per_class >= 1 && opt.implant_size >= 1,
          ErrorKind::InvalidArgument, "toy image sizes must be positive");
  const int side = opt.grid * opt.cell;
  // object occupies patch rows/cols [1, grid-1)
  const int obj_lo = opt.cell;
  const int obj_hi = side - opt.cell;
  require(opt.implant_size <= obj_hi - obj_lo, ErrorKind::InvalidArgument,
          "implant larger than the object region");
  const int k_base =
      opt.k_base >= 0 ? opt.k_base : opt.k_anomaly_types - opt.k_anomaly_types / 2;
  require(k_base <= opt.k_anomaly_types, ErrorKind::InvalidArgument, "k_base exceeds type count");

  // patch-aligned horizontal slots per type for the disjoint-location mode
  const int obj_patch_cols = opt.grid - 2;
  const int slot_patches = obj_patch_cols / opt.k_anomaly_types;
  if (opt.disjoint_locations) {
    require(slot_patches * opt.cell >= opt.implant_size + 2, ErrorKind::InvalidArgument,
            "implant does not fit a disjoint slot of the object region");
  }

  Rng rng(opt.seed);
  const Vector background = random_unit(opt.d_in, rng, 0.5);
  const Vector object = random_unit(opt.d_in, rng, 1.0);
  std::vector<Vector> signatures;
  for (int t = 0; t < opt.k_anomaly_types; ++t) signatures.push_back(random_unit(opt.d_in, rng, 2.0));
  constexpr double kPixelNoise = 0.2;

  Dataset ds;
  ds.k_base = k_base;
  ds.k_new_true = opt.k_anomaly_types - k_base;
  ds.normal_label = opt.k_anomaly_types;
  ds.layout = {opt.d_in, opt.grid, side, side};

  const int n_labeled = static_cast<int>(std::lround(opt.labeled_fraction * opt.n_per_class));
  int serial = 0;
  for (int cls = 0; cls <= opt.k_anomaly_types; ++cls) {
    const bool is_normal = cls == opt.k_anomaly_types;
    const bool is_base = cls < k_base || is_normal;
    for (int j = 0; j < opt.n_per_class; ++j) {
      Matrix mask(side, side, 0.0);
      for (int y = obj_lo; y < obj_hi; ++y) {
        for (int x = obj_lo; x < obj_hi; ++x) mask(y, x) = 1.0;
      }
      Matrix footprint(side, side, 0.0);
      if (!is_normal) {
        int x0 = 0;
        const int y0 = obj_lo + static_cast<int>(rng.index(obj_hi - obj_lo - opt.implant_size + 1));
        if (opt.disjoint_locations) {
          const int slot_lo = obj_lo + cls * slot_patches * opt.cell;
          const int slot_hi = slot_lo + slot_patches * opt.cell;
          x0 = slot_lo + 1 + static_cast<int>(rng.index(slot_hi - slot_lo - opt.implant_size - 1));
        } else {
          x0 = obj_lo + static_cast<int>(rng.index(obj_hi - obj_lo - opt.implant_size + 1));
        }
        for (int y = y0; y < y0 + opt.implant_size; ++y) {
          for (int x = x0; x < x0 + opt.implant_size; ++x) footprint(y, x) = 1.0;
        }
      }
      // 3x3 box blur, clipped to [0,1]
      Matrix amap(side, side, 0.0);
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          double s = 0.0;
          int n = 0;
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = y + dy;
              const int xx = x + dx;
              if (yy < 0 || yy >= side || xx < 0 || xx >= side) continue;
              s += footprint(yy, xx);
              ++n;
            }
          }
          amap(y, x) = std::clamp(s / n, 0.0, 1.0);
        }
      }

      Sample s;
      char id[32];
      std::snprintf(id, sizeof id, "toy-%06d", serial++);
      s.id = id;
      s.split = is_base && j < n_labeled ? Split::Labeled : Split::Unlabeled;
      s.label = cls;
      s.patches = Matrix(static_cast<std::size_t>(opt.grid * opt.grid), static_cast<std::size_t>(opt.d_in));
      const double inv_area = 1.0 / (opt.cell * opt.cell);
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          auto feat = s.patches.row(static_cast<std::size_t>((y / opt.cell) * opt.grid + x / opt.cell));
          const Vector& base = mask(y, x) > 0.0 ? object : background;
          for (int k = 0; k < opt.d_in; ++k) {
            double v = base[k] + kPixelNoise * rng.normal();
            if (footprint(y, x) > 0.0) v += signatures[cls][k];
            feat[k] += v * inv_area;
          }
        }
      }
      s.anomaly_map = std::move(amap);
      s.foreground_mask = std::move(mask);
      ds.samples.push_back(std::move(s));
    }
  }
  validate_dataset(ds);
  return ds;
}

}  // namespace protoncd
