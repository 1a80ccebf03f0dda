// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics: Chamfer distance (squared Euclidean, mean over each
// cloud) and F-score at a fixed threshold. Accumulation is pairwise in
// double so results are permutation-invariant to well below reporting
// precision.
#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcfuse/common.hpp"
#include "pcfuse/geometry.hpp"

namespace pcfuse {

namespace detail {

template <typename Real>
double nearest_sq_dist(const Vec3<Real>& p, const std::vector<Vec3<Real>>& refs) {
  double best = std::numeric_limits<double>::max();
  for (const auto& r : refs) {
    const double dx = static_cast<double>(p[0]) - static_cast<double>(r[0]);
    const double dy = static_cast<double>(p[1]) - static_cast<double>(r[1]);
    const double dz = static_cast<double>(p[2]) - static_cast<double>(r[2]);
    const double d = dx * dx + dy * dy + dz * dz;
    if (d < best) best = d;
  }
  return best;
}

inline std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace detail

// L_CD(Y, Yhat) = mean_y min_yhat ||y - yhat||^2 + mean_yhat min_y ||y - yhat||^2
template <typename Real>
double chamfer_distance(const PointCloud<Real>& y, const PointCloud<Real>& y_hat) {
  y.validate();
  y_hat.validate();
  std::vector<double> mins_a(y.size()), mins_b(y_hat.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    mins_a[i] = detail::nearest_sq_dist(y.points[i], y_hat.points);
  for (std::size_t j = 0; j < y_hat.size(); ++j)
    mins_b[j] = detail::nearest_sq_dist(y_hat.points[j], y.points);
  const double term_a = pairwise_sum(mins_a) / static_cast<double>(y.size());
  const double term_b = pairwise_sum(mins_b) / static_cast<double>(y_hat.size());
  return term_a + term_b;
}

// Precision: fraction of Yhat within Euclidean distance tau of Y; recall
// symmetric; F = 2PR/(P+R), 0 when both are 0. Compares squared distances
// against tau^2, which is equivalent for tau > 0.
template <typename Real>
double f_score(const PointCloud<Real>& y, const PointCloud<Real>& y_hat, double tau) {
  if (!(tau > 0)) throw ArgumentError("f_score: tau must be positive");
  y.validate();
  y_hat.validate();
  const double tau2 = tau * tau;
  std::size_t hit_pred = 0, hit_gt = 0;
  for (const auto& p : y_hat.points)
    if (detail::nearest_sq_dist(p, y.points) < tau2) ++hit_pred;
  for (const auto& p : y.points)
    if (detail::nearest_sq_dist(p, y_hat.points) < tau2) ++hit_gt;
  const double precision = static_cast<double>(hit_pred) / static_cast<double>(y_hat.size());
  const double recall = static_cast<double>(hit_gt) / static_cast<double>(y.size());
  if (precision + recall == 0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

struct CategoryStats {
  std::size_t count = 0;
  double cd_x1e3 = 0;
  double fscore = 0;
};

struct MetricsReport {
  double mean_cd_times_1e3 = 0;
  double f_score_at_tau = 0;
  double tau = 0;
  std::size_t count = 0;
  std::map<std::string, CategoryStats> per_category;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mean_cd_x1e3"] = mean_cd_times_1e3;
    j["fscore"] = f_score_at_tau;
    j["tau"] = tau;
    j["count"] = count;
    nlohmann::json cats = nlohmann::json::object();
    for (const auto& [name, s] : per_category)
      cats[name] = {{"count", s.count}, {"cd_x1e3", s.cd_x1e3}, {"fscore", s.fscore}};
    j["per_category"] = cats;
    return j;
  }

  // Fixed column order: category, count, cd_x1e3, fscore.
  std::string to_csv() const {
    std::string out = "category,count,cd_x1e3,fscore\n";
    for (const auto& [name, s] : per_category) {
      out += name + ',' + std::to_string(s.count) + ',' + detail::format_metric(s.cd_x1e3) + ',' +
             detail::format_metric(s.fscore) + '\n';
    }
    out += "overall," + std::to_string(count) + ',' + detail::format_metric(mean_cd_times_1e3) +
           ',' + detail::format_metric(f_score_at_tau) + '\n';
    return out;
  }
};

template <typename Real>
struct EvalPair {
  const PointCloud<Real>* ground_truth;
  const PointCloud<Real>* prediction;
  std::string category;
};

template <typename Real>
MetricsReport evaluate_batch(const std::vector<EvalPair<Real>>& pairs, double tau) {
  if (pairs.empty()) throw ArgumentError("evaluate_batch: empty batch");
  MetricsReport report;
  report.tau = tau;
  report.count = pairs.size();

  std::vector<double> cds, fs;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_cat;
  for (const auto& pair : pairs) {
    const double cd = chamfer_distance(*pair.ground_truth, *pair.prediction);
    const double f = f_score(*pair.ground_truth, *pair.prediction, tau);
    cds.push_back(cd);
    fs.push_back(f);
    by_cat[pair.category].first.push_back(cd);
    by_cat[pair.category].second.push_back(f);
  }
  report.mean_cd_times_1e3 = 1e3 * pairwise_sum(cds) / static_cast<double>(cds.size());
  report.f_score_at_tau = pairwise_sum(fs) / static_cast<double>(fs.size());
  for (const auto& [name, stats] : by_cat) {
    CategoryStats s;
    s.count = stats.first.size();
    s.cd_x1e3 = 1e3 * pairwise_sum(stats.first) / static_cast<double>(s.count);
    s.fscore = pairwise_sum(stats.second) / static_cast<double>(s.count);
    report.per_category[name] = s;
  }
  return report;
}

}  // namespace pcfuse
