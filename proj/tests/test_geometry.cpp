// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pcfuse/geometry.hpp"
#include "pcfuse/rng.hpp"
#include "pcfuse/tensor.hpp"

using namespace pcfuse;

namespace {

// Independent reference implementations, kept deliberately separate from
// the library code paths they verify.

std::vector<std::size_t> fps_reference(const std::vector<Vec3<double>>& pts, std::size_t m,
                                       std::size_t start) {
  std::vector<std::size_t> picked{start};
  std::vector<bool> used(pts.size(), false);
  used[start] = true;
  while (picked.size() < m) {
    double best = -1;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (used[i]) continue;
      double nearest = std::numeric_limits<double>::max();
      for (std::size_t s : picked) nearest = std::min(nearest, sq_dist(pts[i], pts[s]));
      if (nearest > best) {
        best = nearest;
        best_i = i;
      }
    }
    picked.push_back(best_i);
    used[best_i] = true;
  }
  return picked;
}

std::vector<std::size_t> knn_reference(const Vec3<double>& q, const std::vector<Vec3<double>>& refs,
                                       std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t r = 0; r < refs.size(); ++r) all.emplace_back(sq_dist(q, refs[r]), r);
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < k; ++j) out.push_back(all[j].second);
  return out;
}

std::vector<Vec3<double>> random_cloud(Rng& rng, std::size_t n) {
  std::vector<Vec3<double>> pts(n);
  for (auto& p : pts)
    p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  return pts;
}

}  // namespace

TEST_CASE("fps basics") {
  std::vector<Vec3<double>> line{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};

  // m = 1 -> just the start
  CHECK(fps(line, 1, 2) == std::vector<std::size_t>{2});

  // collinear 0,1,2,3 from start 0: farthest is 3
  CHECK(fps(line, 2, 0) == std::vector<std::size_t>{0, 3});

  // m = N returns every index, in selection order
  auto all = fps(line, 4, 0);
  auto sorted = all;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3});

  CHECK_THROWS_AS(fps(line, 5, 0), ArgumentError);
  CHECK_THROWS_AS(fps(line, 2, 7), ArgumentError);
}

TEST_CASE("fps handles duplicate points with distinct indices") {
  std::vector<Vec3<double>> dup{{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
  auto picked = fps(dup, 3, 0);
  std::sort(picked.begin(), picked.end());
  CHECK(picked == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("fps matches brute-force reference on random clouds") {
  Rng rng(101);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 2 + rng.index(63);
    auto pts = random_cloud(rng, n);
    const std::size_t m = 1 + rng.index(n);
    const std::size_t start = rng.index(n);
    CHECK(fps(pts, m, start) == fps_reference(pts, m, start));
  }
}

TEST_CASE("fps min-pairwise-distance is non-increasing in m") {
  Rng rng(55);
  auto pts = random_cloud(rng, 40);
  double prev = std::numeric_limits<double>::max();
  for (std::size_t m = 2; m <= 20; ++m) {
    auto picked = fps(pts, m, 0);
    double min_d = std::numeric_limits<double>::max();
    for (std::size_t i = 0; i < picked.size(); ++i)
      for (std::size_t j = i + 1; j < picked.size(); ++j)
        min_d = std::min(min_d, sq_dist(pts[picked[i]], pts[picked[j]]));
    CHECK(min_d <= prev);
    prev = min_d;
  }
}

TEST_CASE("knn basics") {
  std::vector<Vec3<double>> refs{{0, 0, 0}, {5, 0, 0}, {6, 0, 0}};

  // self match
  auto self = knn<double>({{5, 0, 0}}, refs, 1);
  CHECK(self.at(0, 0) == 1);

  // query 4.9: distances 24.01, 0.01, 1.21
  auto two = knn<double>({{4.9, 0, 0}}, refs, 2);
  CHECK(two.at(0, 0) == 1);
  CHECK(two.at(0, 1) == 2);

  // k = R gives all, distance sorted
  auto all = knn<double>({{4.9, 0, 0}}, refs, 3);
  CHECK(all.at(0, 0) == 1);
  CHECK(all.at(0, 1) == 2);
  CHECK(all.at(0, 2) == 0);

  CHECK_THROWS_AS(knn<double>({{0, 0, 0}}, refs, 4), ArgumentError);
}

TEST_CASE("knn matches exhaustive sort on random clouds") {
  Rng rng(202);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t nr = 2 + rng.index(63);
    const std::size_t nq = 1 + rng.index(16);
    auto refs = random_cloud(rng, nr);
    auto queries = random_cloud(rng, nq);
    const std::size_t k = 1 + rng.index(nr);
    auto got = knn(queries, refs, k);
    for (std::size_t q = 0; q < nq; ++q) {
      auto expect = knn_reference(queries[q], refs, k);
      for (std::size_t j = 0; j < k; ++j) CHECK(got.at(q, j) == expect[j]);
    }
  }
}

TEST_CASE("knn is translation invariant") {
  Rng rng(77);
  auto refs = random_cloud(rng, 30);
  auto queries = random_cloud(rng, 7);
  auto base = knn(queries, refs, 5);
  const Vec3<double> t{0.37, -1.2, 0.05};
  for (auto& p : refs)
    for (int c = 0; c < 3; ++c) p[c] += t[c];
  for (auto& p : queries)
    for (int c = 0; c < 3; ++c) p[c] += t[c];
  auto shifted = knn(queries, refs, 5);
  CHECK(base.idx == shifted.idx);
}

TEST_CASE("group gathers and scatters") {
  Tensor<double> feats({3, 2}, {1, 2, 3, 4, 5, 6});

  IndexMatrix zeros{2, 2, {0, 0, 0, 0}};
  auto g0 = group(feats, zeros);
  CHECK(g0.shape() == Shape{2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(g0.data()[i * 2] == 1);
    CHECK(g0.data()[i * 2 + 1] == 2);
  }

  IndexMatrix ident{3, 1, {0, 1, 2}};
  auto gi = group(feats, ident);
  CHECK(gi.data() == feats.data());

  // gradient of sum(group) counts occurrences per reference row
  Tape<double> tape;
  auto tracked = tape.leaf({3, 2}, {1, 2, 3, 4, 5, 6});
  IndexMatrix mix{2, 2, {0, 2, 2, 2}};
  auto loss = sum_all(group(tracked, mix));
  tape.backward(loss);
  CHECK(tape.grad(tracked.node()) == std::vector<double>{1, 1, 0, 0, 3, 3});

  IndexMatrix bad{1, 1, {5}};
  CHECK_THROWS_AS(group(feats, bad), ArgumentError);
}

TEST_CASE("normalize_unit_sphere") {
  // single point
  PointCloud<double> single;
  single.points = {{3, -2, 7}};
  auto [ns, ts] = normalize_unit_sphere(single);
  CHECK(ns.points[0][0] == 0.0);
  CHECK(ns.points[0][1] == 0.0);
  CHECK(ns.points[0][2] == 0.0);
  CHECK(ts.scale == 1.0);

  // already normalized
  PointCloud<double> pair;
  pair.points = {{-1, 0, 0}, {1, 0, 0}};
  auto [np, tp] = normalize_unit_sphere(pair);
  CHECK(np.points[0][0] == -1.0);
  CHECK(np.points[1][0] == 1.0);
  CHECK(tp.scale == 1.0);

  // hand-normalized example
  PointCloud<double> seg;
  seg.points = {{0, 0, 0}, {0, 0, 4}};
  auto [nseg, tseg] = normalize_unit_sphere(seg);
  CHECK(tseg.center[2] == 2.0);
  CHECK(tseg.scale == 2.0);
  CHECK(nseg.points[0][2] == -1.0);
  CHECK(nseg.points[1][2] == 1.0);
}

TEST_CASE("denormalize then normalize is identity within 1e-6") {
  Rng rng(9);
  PointCloud<double> cloud;
  cloud.points = random_cloud(rng, 37);
  for (auto& p : cloud.points)
    for (int c = 0; c < 3; ++c) p[c] = p[c] * 3.0 + c;
  auto [normalized, tf] = normalize_unit_sphere(cloud);
  auto restored = denormalize(normalized, tf);
  REQUIRE(restored.size() == cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(std::abs(restored.points[i][c] - cloud.points[i][c]) <= 1e-6);
  auto [renorm, tf2] = normalize_unit_sphere(restored);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (int c = 0; c < 3; ++c)
      CHECK(std::abs(renorm.points[i][c] - normalized.points[i][c]) <= 1e-6);
}

TEST_CASE("point cloud validation") {
  PointCloud<double> empty;
  CHECK_THROWS_AS(empty.validate(), ArgumentError);
  PointCloud<double> bad;
  bad.points = {{0, 0, std::numeric_limits<double>::infinity()}};
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}
