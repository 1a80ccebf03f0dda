// SPDX-License-Identifier: Apache-2.0
//
// Differentiable Chamfer-distance training loss, plus the pluggable loss
// interface used by the loss-ablation axis. The nearest-neighbor pairing
// is held fixed during backward (subgradient choice; ties go to the
// lowest index).
#pragma once

#include <functional>
#include <map>
#include <string>

#include "pcfuse/common.hpp"
#include "pcfuse/geometry.hpp"
#include "pcfuse/metrics.hpp"
#include "pcfuse/tensor.hpp"

namespace pcfuse {

// Scalar Chamfer loss of a predicted [M, 3] tensor against a fixed
// ground-truth cloud. Gradient flows to the prediction only.
template <typename Real>
Tensor<Real> chamfer_loss(const PointCloud<Real>& gt, const Tensor<Real>& pred) {
  gt.validate();
  require_shape(pred.ndim() == 2 && pred.shape()[1] == 3,
                "chamfer_loss: prediction must be [M, 3], got " + shape_str(pred.shape()));
  const std::size_t n_gt = gt.size();
  const std::size_t n_pred = pred.shape()[0];
  if (n_pred == 0) throw ArgumentError("chamfer_loss: empty prediction");
  const auto& pv = pred.data();

  auto nearest_pred = std::make_shared<std::vector<std::size_t>>(n_gt);
  auto nearest_gt = std::make_shared<std::vector<std::size_t>>(n_pred);
  std::vector<double> mins_a(n_gt), mins_b(n_pred, std::numeric_limits<double>::max());

  for (std::size_t i = 0; i < n_gt; ++i) {
    const double gx = gt.points[i][0], gy = gt.points[i][1], gz = gt.points[i][2];
    double best = std::numeric_limits<double>::max();
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < n_pred; ++j) {
      const double dx = gx - static_cast<double>(pv[j * 3 + 0]);
      const double dy = gy - static_cast<double>(pv[j * 3 + 1]);
      const double dz = gz - static_cast<double>(pv[j * 3 + 2]);
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        best = d;
        best_j = j;
      }
      if (d < mins_b[j]) {
        mins_b[j] = d;
        (*nearest_gt)[j] = i;
      }
    }
    mins_a[i] = best;
    (*nearest_pred)[i] = best_j;
  }

  const double loss = pairwise_sum(mins_a) / static_cast<double>(n_gt) +
                      pairwise_sum(mins_b) / static_cast<double>(n_pred);

  Tape<Real>* tape = detail::common_tape<Real>({&pred});
  const int pn = pred.node();
  auto out = std::make_shared<std::vector<Real>>(1, static_cast<Real>(loss));
  auto gt_pts = std::make_shared<std::vector<Vec3<Real>>>(gt.points);
  return detail::emit<Real>(
      tape, "chamfer", Shape{1}, std::move(out), pn >= 0 ? std::vector<int>{pn} : std::vector<int>{},
      [pn, nearest_pred, nearest_gt, gt_pts, n_gt, n_pred,
       sp = pred.storage()](const std::vector<Real>& g, Tape<Real>& t) {
        if (pn < 0) return;
        auto& gp = t.grad_slot(pn);
        const Real g0 = g[0];
        const Real wa = g0 * Real(2) / static_cast<Real>(n_gt);
        for (std::size_t i = 0; i < n_gt; ++i) {
          const std::size_t j = (*nearest_pred)[i];
          for (std::size_t c = 0; c < 3; ++c)
            gp[j * 3 + c] += wa * ((*sp)[j * 3 + c] - (*gt_pts)[i][c]);
        }
        const Real wb = g0 * Real(2) / static_cast<Real>(n_pred);
        for (std::size_t j = 0; j < n_pred; ++j) {
          const std::size_t i = (*nearest_gt)[j];
          for (std::size_t c = 0; c < 3; ++c)
            gp[j * 3 + c] += wb * ((*sp)[j * 3 + c] - (*gt_pts)[i][c]);
        }
      },
      8ull * n_gt * n_pred);
}

// ---------------------------------------------------------------------------
// Pluggable loss interface. The Chamfer-distance variants studied in the
// literature (DCD, HyperCD, InfoCD, LandauCD) can be registered as
// external losses; only vanilla CD ships built in.
// ---------------------------------------------------------------------------
struct LossKind {
  enum class Tag { vanilla_cd, external };
  Tag tag = Tag::vanilla_cd;
  std::string name = "cd";
  std::map<std::string, double> params;

  void validate() const {
    if (tag == Tag::vanilla_cd && !params.empty())
      throw ConfigError("loss 'cd' takes no parameters");
  }

  static LossKind parse(const std::string& name) {
    LossKind k;
    if (name == "cd" || name == "vanilla_cd") {
      k.tag = Tag::vanilla_cd;
      k.name = "cd";
    } else {
      k.tag = Tag::external;
      k.name = name;
    }
    return k;
  }
};

template <typename Real>
using LossFn = std::function<Tensor<Real>(const PointCloud<Real>& gt, const Tensor<Real>& pred,
                                          const std::map<std::string, double>& params)>;

template <typename Real>
class LossRegistry {
 public:
  static LossRegistry& instance() {
    static LossRegistry reg;
    return reg;
  }

  void register_loss(const std::string& name, LossFn<Real> fn) { fns_[name] = std::move(fn); }

  bool contains(const std::string& name) const { return fns_.count(name) > 0; }

  LossFn<Real> resolve(const LossKind& kind) const {
    kind.validate();
    auto it = fns_.find(kind.name);
    if (it == fns_.end())
      throw ConfigError("unknown loss function '" + kind.name + "'");
    return it->second;
  }

 private:
  LossRegistry() {
    fns_["cd"] = [](const PointCloud<Real>& gt, const Tensor<Real>& pred,
                    const std::map<std::string, double>&) { return chamfer_loss(gt, pred); };
  }
  std::map<std::string, LossFn<Real>> fns_;
};

}  // namespace pcfuse
