// SPDX-License-Identifier: Apache-2.0
//
// Synthetic dataset generation and the partial-view occlusion simulator.
// Every cloud is normalized to the unit sphere before storage; everything
// is deterministic per seed.
#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcfuse/common.hpp"
#include "pcfuse/geometry.hpp"
#include "pcfuse/io.hpp"
#include "pcfuse/rng.hpp"

namespace pcfuse {

enum class ShapeFamily { sphere, box, cylinder, torus, plane_union };

inline std::string to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::sphere: return "sphere";
    case ShapeFamily::box: return "box";
    case ShapeFamily::cylinder: return "cylinder";
    case ShapeFamily::torus: return "torus";
    case ShapeFamily::plane_union: return "plane_union";
  }
  return "?";
}

inline ShapeFamily family_from_string(const std::string& s) {
  if (s == "sphere") return ShapeFamily::sphere;
  if (s == "box") return ShapeFamily::box;
  if (s == "cylinder") return ShapeFamily::cylinder;
  if (s == "torus") return ShapeFamily::torus;
  if (s == "plane_union") return ShapeFamily::plane_union;
  throw ConfigError("unknown shape family '" + s + "'");
}

struct ShapeSpec {
  ShapeFamily family = ShapeFamily::sphere;
  std::vector<double> size_params;  // family-specific; defaults drawn from seed
  std::size_t n_gt = 256;
  std::uint64_t seed = 0;
  std::string name;
};

namespace detail {

// Surface sample in antipodal pairs: the centroid is zero by construction,
// so unit-sphere normalization leaves every point at radius 1, and the
// cloud is centro-symmetric.
template <typename Real>
void sample_sphere(Rng& rng, std::size_t n, double radius, std::vector<Vec3<Real>>& pts) {
  for (std::size_t i = 0; i + 1 < n; i += 2) {
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Vec3<Real> p{static_cast<Real>(radius * r * std::cos(phi)),
                       static_cast<Real>(radius * r * std::sin(phi)),
                       static_cast<Real>(radius * z)};
    pts.push_back(p);
    pts.push_back({-p[0], -p[1], -p[2]});
  }
  if (pts.size() < n) pts.push_back({static_cast<Real>(radius), 0, 0});
}

template <typename Real>
void sample_box(Rng& rng, std::size_t n, double ax, double ay, double az,
                std::vector<Vec3<Real>>& pts) {
  const double areas[3] = {ay * az, ax * az, ax * ay};  // x-, y-, z-normal faces
  const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
  for (std::size_t i = 0; i < n; ++i) {
    double pick = rng.uniform(0.0, total);
    int face = 0;
    double sign = 1.0;
    for (int f = 0; f < 3; ++f) {
      if (pick < 2 * areas[f]) {
        face = f;
        sign = pick < areas[f] ? 1.0 : -1.0;
        break;
      }
      pick -= 2 * areas[f];
    }
    const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
    double x = 0, y = 0, z = 0;
    if (face == 0) { x = sign * ax; y = u * ay; z = v * az; }
    else if (face == 1) { y = sign * ay; x = u * ax; z = v * az; }
    else { z = sign * az; x = u * ax; y = v * ay; }
    pts.push_back({static_cast<Real>(x), static_cast<Real>(y), static_cast<Real>(z)});
  }
}

template <typename Real>
void sample_cylinder(Rng& rng, std::size_t n, double radius, double height,
                     std::vector<Vec3<Real>>& pts) {
  const double lateral = 2.0 * std::numbers::pi * radius * height;
  const double caps = 2.0 * std::numbers::pi * radius * radius;
  for (std::size_t i = 0; i < n; ++i) {
    const double pick = rng.uniform(0.0, lateral + caps);
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    if (pick < lateral) {
      const double z = rng.uniform(-height / 2, height / 2);
      pts.push_back({static_cast<Real>(radius * std::cos(phi)),
                     static_cast<Real>(radius * std::sin(phi)), static_cast<Real>(z)});
    } else {
      const double r = radius * std::sqrt(rng.uniform());
      const double z = pick < lateral + caps / 2 ? height / 2 : -height / 2;
      pts.push_back({static_cast<Real>(r * std::cos(phi)), static_cast<Real>(r * std::sin(phi)),
                     static_cast<Real>(z)});
    }
  }
}

template <typename Real>
void sample_torus(Rng& rng, std::size_t n, double major, double minor,
                  std::vector<Vec3<Real>>& pts) {
  std::size_t emitted = 0;
  while (emitted < n) {
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    // rejection on the surface-area density (major + minor cos theta)
    if (rng.uniform() * (major + minor) > major + minor * std::cos(theta)) continue;
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double rad = major + minor * std::cos(theta);
    pts.push_back({static_cast<Real>(rad * std::cos(phi)), static_cast<Real>(rad * std::sin(phi)),
                   static_cast<Real>(minor * std::sin(theta))});
    ++emitted;
  }
}

// Three mutually orthogonal rectangles through the origin.
template <typename Real>
void sample_plane_union(Rng& rng, std::size_t n, double ax, double ay, double az,
                        std::vector<Vec3<Real>>& pts) {
  const double areas[3] = {ax * ay, ay * az, ax * az};
  const double total = areas[0] + areas[1] + areas[2];
  for (std::size_t i = 0; i < n; ++i) {
    double pick = rng.uniform(0.0, total);
    int plane = 0;
    for (int p = 0; p < 3; ++p) {
      if (pick < areas[p]) {
        plane = p;
        break;
      }
      pick -= areas[p];
    }
    const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
    if (plane == 0) pts.push_back({static_cast<Real>(u * ax), static_cast<Real>(v * ay), 0});
    else if (plane == 1) pts.push_back({0, static_cast<Real>(u * ay), static_cast<Real>(v * az)});
    else pts.push_back({static_cast<Real>(u * ax), 0, static_cast<Real>(v * az)});
  }
}

}  // namespace detail

// Samples the spec's surface and normalizes to the unit sphere.
template <typename Real>
PointCloud<Real> sample_shape(const ShapeSpec& spec) {
  if (spec.n_gt < 1) throw ArgumentError("sample_shape: n_gt must be >= 1");
  Rng rng(derive_seed(spec.seed, "shape"));
  auto dim = [&](std::size_t i, double lo, double hi) {
    return i < spec.size_params.size() ? spec.size_params[i] : rng.uniform(lo, hi);
  };
  PointCloud<Real> cloud;
  cloud.provenance = Provenance::ground_truth;
  cloud.points.reserve(spec.n_gt);
  switch (spec.family) {
    case ShapeFamily::sphere:
      detail::sample_sphere(rng, spec.n_gt, dim(0, 0.5, 1.0), cloud.points);
      break;
    case ShapeFamily::box:
      detail::sample_box(rng, spec.n_gt, dim(0, 0.4, 1.0), dim(1, 0.4, 1.0), dim(2, 0.4, 1.0),
                         cloud.points);
      break;
    case ShapeFamily::cylinder:
      detail::sample_cylinder(rng, spec.n_gt, dim(0, 0.3, 0.7), dim(1, 0.8, 1.6), cloud.points);
      break;
    case ShapeFamily::torus:
      detail::sample_torus(rng, spec.n_gt, dim(0, 0.6, 1.0), dim(1, 0.15, 0.35), cloud.points);
      break;
    case ShapeFamily::plane_union:
      detail::sample_plane_union(rng, spec.n_gt, dim(0, 0.5, 1.0), dim(1, 0.5, 1.0),
                                 dim(2, 0.5, 1.0), cloud.points);
      break;
  }
  auto [normalized, tf] = normalize_unit_sphere(cloud);
  (void)tf;
  return normalized;
}

// Half-space culling analogue of a restricted viewpoint: rank points by
// projection onto the view direction and keep the top ceil(keep_ratio*N).
// The output preserves input order and is always a verbatim subset.
template <typename Real>
PointCloud<Real> make_partial(const PointCloud<Real>& cloud, Vec3<Real> viewpoint,
                              double keep_ratio) {
  cloud.validate();
  if (!(keep_ratio > 0.0) || !(keep_ratio < 1.0))
    throw ArgumentError("make_partial: keep_ratio must be in (0, 1)");
  const double vn = std::sqrt(static_cast<double>(viewpoint[0]) * viewpoint[0] +
                              static_cast<double>(viewpoint[1]) * viewpoint[1] +
                              static_cast<double>(viewpoint[2]) * viewpoint[2]);
  if (!(vn > 0)) throw ArgumentError("make_partial: viewpoint must be a nonzero vector");
  const std::size_t n = cloud.size();
  const std::size_t n_keep =
      static_cast<std::size_t>(std::ceil(keep_ratio * static_cast<double>(n)));

  std::vector<std::pair<double, std::size_t>> ranked(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = cloud.points[i];
    const double proj = (static_cast<double>(p[0]) * viewpoint[0] +
                         static_cast<double>(p[1]) * viewpoint[1] +
                         static_cast<double>(p[2]) * viewpoint[2]) /
                        vn;
    ranked[i] = {-proj, i};  // descending projection, ascending index on ties
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<std::size_t> keep;
  keep.reserve(n_keep);
  for (std::size_t i = 0; i < n_keep; ++i) keep.push_back(ranked[i].second);
  std::sort(keep.begin(), keep.end());

  PointCloud<Real> out;
  out.provenance = Provenance::partial;
  out.transform = cloud.transform;
  out.points.reserve(n_keep);
  for (std::size_t i : keep) out.points.push_back(cloud.points[i]);
  return out;
}

// Augmentation hooks (rotation about z, additive Gaussian jitter).
template <typename Real>
PointCloud<Real> rotate_z(const PointCloud<Real>& cloud, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  PointCloud<Real> out = cloud;
  for (auto& p : out.points) {
    const double x = p[0], y = p[1];
    p[0] = static_cast<Real>(c * x - s * y);
    p[1] = static_cast<Real>(s * x + c * y);
  }
  return out;
}

template <typename Real>
PointCloud<Real> add_noise(const PointCloud<Real>& cloud, double sigma, Rng& rng) {
  PointCloud<Real> out = cloud;
  for (auto& p : out.points)
    for (auto& c : p) c = static_cast<Real>(static_cast<double>(c) + sigma * rng.normal());
  return out;
}

// ---------------------------------------------------------------------------
// On-disk dataset: per shape a ground-truth and a partial PCF file plus a
// JSON manifest.
// ---------------------------------------------------------------------------
struct DatasetEntry {
  std::string name;
  std::string category;
  std::string gt_file;       // relative to the manifest directory
  std::string partial_file;
  std::size_t n_gt = 0;
  std::size_t n_partial = 0;
  std::uint64_t seed = 0;
  std::array<double, 3> viewpoint{0, 0, 1};
  double keep_ratio = 0.5;
};

struct DatasetManifest {
  std::vector<DatasetEntry> entries;

  nlohmann::json to_json() const {
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& e : entries) {
      shapes.push_back({{"name", e.name},
                        {"category", e.category},
                        {"gt", e.gt_file},
                        {"partial", e.partial_file},
                        {"n_gt", e.n_gt},
                        {"n_partial", e.n_partial},
                        {"seed", e.seed},
                        {"viewpoint", e.viewpoint},
                        {"keep_ratio", e.keep_ratio}});
    }
    return nlohmann::json{{"format_version", 1}, {"shapes", shapes}};
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    if (j.value("format_version", 0) != 1)
      throw DataError("unsupported dataset manifest version");
    DatasetManifest m;
    for (const auto& s : j.at("shapes")) {
      DatasetEntry e;
      e.name = s.at("name").get<std::string>();
      e.category = s.at("category").get<std::string>();
      e.gt_file = s.at("gt").get<std::string>();
      e.partial_file = s.at("partial").get<std::string>();
      e.n_gt = s.at("n_gt").get<std::size_t>();
      e.n_partial = s.at("n_partial").get<std::size_t>();
      e.seed = s.at("seed").get<std::uint64_t>();
      const auto& v = s.at("viewpoint");
      e.viewpoint = {v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>()};
      e.keep_ratio = s.at("keep_ratio").get<double>();
      m.entries.push_back(std::move(e));
    }
    return m;
  }
};

struct GenConfig {
  std::size_t count = 8;
  std::size_t points = 256;
  double keep_ratio = 0.75;
  std::uint64_t seed = 1;
  std::vector<ShapeFamily> families = {ShapeFamily::sphere, ShapeFamily::box,
                                       ShapeFamily::cylinder, ShapeFamily::torus,
                                       ShapeFamily::plane_union};
};

template <typename Real = float>
DatasetManifest generate_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.count < 1) throw ArgumentError("generate_dataset: count must be >= 1");
  if (cfg.families.empty()) throw ArgumentError("generate_dataset: no shape families");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create '" + out_dir.string() + "': " + ec.message());

  DatasetManifest manifest;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    ShapeSpec spec;
    spec.family = cfg.families[i % cfg.families.size()];
    spec.n_gt = cfg.points;
    spec.seed = derive_seed(cfg.seed, "shape", i);
    char suffix[8];
    std::snprintf(suffix, sizeof(suffix), "%03zu", i);
    spec.name = to_string(spec.family) + "_" + suffix;

    PointCloud<Real> gt = sample_shape<Real>(spec);
    Rng view_rng(derive_seed(spec.seed, "viewpoint"));
    Vec3<Real> view;
    double norm = 0;
    do {
      const double z = view_rng.uniform(-1.0, 1.0);
      const double phi = view_rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      view = {static_cast<Real>(r * std::cos(phi)), static_cast<Real>(r * std::sin(phi)),
              static_cast<Real>(z)};
      norm = std::abs(view[0]) + std::abs(view[1]) + std::abs(view[2]);
    } while (!(norm > 0));
    PointCloud<Real> partial = make_partial(gt, view, cfg.keep_ratio);

    DatasetEntry e;
    e.name = spec.name;
    e.category = to_string(spec.family);
    e.gt_file = spec.name + "_gt.pcf";
    e.partial_file = spec.name + "_partial.pcf";
    e.n_gt = gt.size();
    e.n_partial = partial.size();
    e.seed = spec.seed;
    e.viewpoint = {static_cast<double>(view[0]), static_cast<double>(view[1]),
                   static_cast<double>(view[2])};
    e.keep_ratio = cfg.keep_ratio;
    write_pcf(out_dir / e.gt_file, gt);
    write_pcf(out_dir / e.partial_file, partial);
    manifest.entries.push_back(std::move(e));
  }
  atomic_write_file(out_dir / "manifest.json", manifest.to_json().dump(2) + "\n");
  return manifest;
}

// In-memory training/eval sample.
template <typename Real>
struct Sample {
  PointCloud<Real> partial;
  PointCloud<Real> gt;
  std::string category;
  std::string name;
  std::uint64_t seed = 0;
};

// Deterministic train/val split by shape-seed parity (even = train,
// odd = val).
enum class SplitMode { all, train, val };

inline SplitMode split_from_string(const std::string& s) {
  if (s == "all") return SplitMode::all;
  if (s == "train") return SplitMode::train;
  if (s == "val") return SplitMode::val;
  throw ConfigError("unknown split '" + s + "' (expected all|train|val)");
}

template <typename Real>
std::vector<Sample<Real>> split_by_parity(std::vector<Sample<Real>> samples, SplitMode mode) {
  if (mode == SplitMode::all) return samples;
  std::vector<Sample<Real>> out;
  for (auto& s : samples) {
    const bool is_train = (s.seed % 2) == 0;
    if ((mode == SplitMode::train) == is_train) out.push_back(std::move(s));
  }
  if (out.empty()) throw DataError("seed-parity split selected no samples");
  return out;
}

template <typename Real>
std::vector<Sample<Real>> load_dataset(const std::filesystem::path& manifest_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + manifest_path.string() + "': " + e.what());
  }
  const DatasetManifest manifest = DatasetManifest::from_json(j);
  if (manifest.entries.empty()) throw DataError("dataset manifest lists no shapes");
  const auto dir = manifest_path.parent_path();
  std::vector<Sample<Real>> samples;
  for (const auto& e : manifest.entries) {
    Sample<Real> s;
    s.partial = read_pcf<Real>(dir / e.partial_file);
    s.partial.provenance = Provenance::partial;
    s.gt = read_pcf<Real>(dir / e.gt_file);
    s.gt.provenance = Provenance::ground_truth;
    s.category = e.category;
    s.name = e.name;
    s.seed = e.seed;
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace pcfuse
