// SPDX-License-Identifier: Apache-2.0
//
// Exact geometric primitives. Brute-force O(Q*R) distance kernels are the
// reference implementations; squared distances everywhere, square roots
// only at metric-reporting boundaries.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "pcfuse/common.hpp"
#include "pcfuse/tensor.hpp"

namespace pcfuse {

template <typename Real>
using Vec3 = std::array<Real, 3>;

enum class Provenance { partial, ground_truth, predicted, synthetic };

template <typename Real>
struct CloudTransform {
  Vec3<Real> center{0, 0, 0};
  Real scale{1};
};

template <typename Real>
struct PointCloud {
  std::vector<Vec3<Real>> points;
  Provenance provenance = Provenance::synthetic;
  std::optional<CloudTransform<Real>> transform;

  std::size_t size() const { return points.size(); }

  void validate() const {
    if (points.empty()) throw ArgumentError("point cloud must contain at least one point");
    for (const auto& p : points)
      for (Real c : p)
        if (!std::isfinite(static_cast<double>(c)))
          throw ArgumentError("point cloud contains non-finite coordinates");
  }
};

template <typename Real>
Real sq_dist(const Vec3<Real>& a, const Vec3<Real>& b) {
  const Real dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

template <typename To, typename From>
PointCloud<To> cloud_cast(const PointCloud<From>& c) {
  PointCloud<To> out;
  out.points.reserve(c.points.size());
  for (const auto& p : c.points)
    out.points.push_back({static_cast<To>(p[0]), static_cast<To>(p[1]), static_cast<To>(p[2])});
  out.provenance = c.provenance;
  if (c.transform) {
    out.transform = CloudTransform<To>{{static_cast<To>((*c.transform).center[0]),
                                        static_cast<To>((*c.transform).center[1]),
                                        static_cast<To>((*c.transform).center[2])},
                                       static_cast<To>((*c.transform).scale)};
  }
  return out;
}

// Constant [N, 3] tensor view of the coordinates.
template <typename Real>
Tensor<Real> coords_tensor(const std::vector<Vec3<Real>>& pts) {
  std::vector<Real> data;
  data.reserve(pts.size() * 3);
  for (const auto& p : pts) {
    data.push_back(p[0]);
    data.push_back(p[1]);
    data.push_back(p[2]);
  }
  return Tensor<Real>({pts.size(), 3}, std::move(data));
}

template <typename Real>
Tensor<Real> coords_tensor(const PointCloud<Real>& c) {
  return coords_tensor(c.points);
}

// ---------------------------------------------------------------------------
// Farthest point sampling. Greedy: the first selection is `start`, each
// subsequent pick maximizes the minimum squared distance to the selected
// set. Ties break to the lowest index; deterministic given (cloud, m,
// start).
// ---------------------------------------------------------------------------
template <typename Real>
std::vector<std::size_t> fps(const std::vector<Vec3<Real>>& pts, std::size_t m,
                             std::size_t start = 0) {
  const std::size_t n = pts.size();
  if (m < 1 || m > n)
    throw ArgumentError("fps: sample count " + std::to_string(m) + " out of range for " +
                        std::to_string(n) + " points");
  if (start >= n) throw ArgumentError("fps: start index out of range");

  std::vector<std::size_t> picked;
  picked.reserve(m);
  std::vector<char> selected(n, 0);
  std::vector<Real> min_d2(n, std::numeric_limits<Real>::max());

  std::size_t cur = start;
  picked.push_back(cur);
  selected[cur] = 1;
  for (std::size_t it = 1; it < m; ++it) {
    Real best = Real(-1);
    std::size_t best_i = 0;
    bool found = false;
    for (std::size_t i = 0; i < n; ++i) {
      const Real d = sq_dist(pts[i], pts[cur]);
      if (d < min_d2[i]) min_d2[i] = d;
      if (!selected[i] && min_d2[i] > best) {
        best = min_d2[i];
        best_i = i;
        found = true;
      }
    }
    (void)found;
    cur = best_i;
    picked.push_back(cur);
    selected[cur] = 1;
  }
  return picked;
}

template <typename Real>
std::vector<std::size_t> fps(const PointCloud<Real>& cloud, std::size_t m, std::size_t start = 0) {
  return fps(cloud.points, m, start);
}

// ---------------------------------------------------------------------------
// k-nearest neighbors, exact, sorted ascending by (squared distance,
// index). A query that coincides with a reference matches itself.
// ---------------------------------------------------------------------------
struct IndexMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> idx;  // rows * cols, row-major

  std::size_t at(std::size_t r, std::size_t c) const { return idx[r * cols + c]; }
};

template <typename Real>
IndexMatrix knn(const std::vector<Vec3<Real>>& queries, const std::vector<Vec3<Real>>& refs,
                std::size_t k) {
  if (k < 1 || k > refs.size())
    throw ArgumentError("knn: k=" + std::to_string(k) + " out of range for " +
                        std::to_string(refs.size()) + " references");
  IndexMatrix out;
  out.rows = queries.size();
  out.cols = k;
  out.idx.resize(queries.size() * k);
  std::vector<std::pair<Real, std::size_t>> dist(refs.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t r = 0; r < refs.size(); ++r) dist[r] = {sq_dist(queries[q], refs[r]), r};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    for (std::size_t j = 0; j < k; ++j) out.idx[q * k + j] = dist[j].second;
  }
  return out;
}

// Differentiable gather of per-reference features into neighborhoods:
// [R, C] x (Q x k) -> [Q, k, C]. The gradient scatters back additively.
template <typename Real>
Tensor<Real> group(const Tensor<Real>& features, const IndexMatrix& neighbors) {
  return gather_rows(features, neighbors.idx, Shape{neighbors.rows, neighbors.cols});
}

// ---------------------------------------------------------------------------
// Normalization to the unit sphere: centroid at the origin, max norm 1
// (scale 1 if all points coincide). The returned transform undoes it.
// ---------------------------------------------------------------------------
template <typename Real>
std::pair<PointCloud<Real>, CloudTransform<Real>> normalize_unit_sphere(
    const PointCloud<Real>& cloud) {
  cloud.validate();
  const std::size_t n = cloud.size();
  double cx = 0, cy = 0, cz = 0;
  for (const auto& p : cloud.points) {
    cx += static_cast<double>(p[0]);
    cy += static_cast<double>(p[1]);
    cz += static_cast<double>(p[2]);
  }
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  cz /= static_cast<double>(n);

  double max_norm2 = 0;
  for (const auto& p : cloud.points) {
    const double dx = p[0] - cx, dy = p[1] - cy, dz = p[2] - cz;
    max_norm2 = std::max(max_norm2, dx * dx + dy * dy + dz * dz);
  }
  const double scale = max_norm2 > 0 ? std::sqrt(max_norm2) : 1.0;

  CloudTransform<Real> tf{{static_cast<Real>(cx), static_cast<Real>(cy), static_cast<Real>(cz)},
                          static_cast<Real>(scale)};
  PointCloud<Real> out;
  out.provenance = cloud.provenance;
  out.points.reserve(n);
  const Real inv = Real(1) / tf.scale;
  for (const auto& p : cloud.points)
    out.points.push_back({(p[0] - tf.center[0]) * inv, (p[1] - tf.center[1]) * inv,
                          (p[2] - tf.center[2]) * inv});
  out.transform = tf;
  return {out, tf};
}

// Maps normalized coordinates back into the original frame.
template <typename Real>
PointCloud<Real> denormalize(const PointCloud<Real>& cloud, const CloudTransform<Real>& tf) {
  PointCloud<Real> out;
  out.provenance = cloud.provenance;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points)
    out.points.push_back({p[0] * tf.scale + tf.center[0], p[1] * tf.scale + tf.center[1],
                          p[2] * tf.scale + tf.center[2]});
  return out;
}

}  // namespace pcfuse
