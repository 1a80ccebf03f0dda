// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of every differentiable
// operation, in wide precision. Inputs near decision boundaries (relu
// kinks, argmax ties, nearest-neighbor flips) are resampled so the
// difference quotient stays on one branch.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pcfuse/geometry.hpp"
#include "pcfuse/layers.hpp"
#include "pcfuse/loss.hpp"
#include "pcfuse/rng.hpp"
#include "pcfuse/tensor.hpp"

namespace pcfuse {

struct GradCheckCase {
  std::string op;
  double max_rel_err = 0;
  double tolerance = 1e-5;
  bool pass = false;
};

// build: (const std::vector<Tensor<double>>& leaves) -> scalar Tensor on
// the leaves' tape. Compares tape gradients of every input element
// against central differences.
template <typename Fn>
GradCheckCase check_gradients(const std::string& op_name, Fn&& build,
                              std::vector<std::pair<Shape, std::vector<double>>> inputs,
                              double step = 1e-4, double tol = 1e-5, double floor = 1e-8) {
  Tape<double> tape;
  std::vector<Tensor<double>> leaves;
  leaves.reserve(inputs.size());
  for (auto& [shape, data] : inputs) leaves.push_back(tape.leaf(shape, data, true));
  Tensor<double> loss = build(leaves);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& l : leaves) analytic.push_back(tape.grad(l.node()));

  auto eval = [&](const std::vector<std::pair<Shape, std::vector<double>>>& xs) {
    Tape<double> t;
    std::vector<Tensor<double>> ls;
    ls.reserve(xs.size());
    for (const auto& [shape, data] : xs) ls.push_back(t.leaf(shape, data, true));
    return build(ls).scalar();
  };

  double max_rel = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].second.size(); ++j) {
      const double orig = inputs[i].second[j];
      inputs[i].second[j] = orig + step;
      const double fp = eval(inputs);
      inputs[i].second[j] = orig - step;
      const double fm = eval(inputs);
      inputs[i].second[j] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double an = analytic[i][j];
      const double denom = std::max({floor, std::abs(fd), std::abs(an)});
      max_rel = std::max(max_rel, std::abs(fd - an) / denom);
    }
  }
  return GradCheckCase{op_name, max_rel, tol, max_rel <= tol};
}

namespace detail {

inline std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Random values bounded away from zero (for relu).
inline std::vector<double> random_vec_margin(Rng& rng, std::size_t n, double margin) {
  std::vector<double> v(n);
  for (auto& x : v) {
    do {
      x = rng.uniform(-1.0, 1.0);
    } while (std::abs(x) < margin);
  }
  return v;
}

// Random rows whose top-2 values are separated (for reduce_max).
inline std::vector<double> random_rows_gapped(Rng& rng, std::size_t rows, std::size_t cols,
                                              double gap) {
  std::vector<double> v(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (;;) {
      for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] = rng.uniform(-1.0, 1.0);
      double best = -2, second = -2;
      for (std::size_t c = 0; c < cols; ++c) {
        const double x = v[r * cols + c];
        if (x > best) {
          second = best;
          best = x;
        } else if (x > second) {
          second = x;
        }
      }
      if (best - second >= gap) break;
    }
  }
  return v;
}

// Clouds whose nearest-neighbor pairings have a stable margin in both
// directions (for the chamfer loss).
inline bool chamfer_margins_ok(const std::vector<double>& gt, const std::vector<double>& pred,
                               double margin) {
  auto second_gap = [](double x, double y, double z, const std::vector<double>& pts) {
    double best = 1e300, second = 1e300;
    for (std::size_t i = 0; i * 3 < pts.size(); ++i) {
      const double dx = x - pts[i * 3], dy = y - pts[i * 3 + 1], dz = z - pts[i * 3 + 2];
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        second = best;
        best = d;
      } else if (d < second) {
        second = d;
      }
    }
    return second - best;
  };
  for (std::size_t i = 0; i * 3 < gt.size(); ++i)
    if (second_gap(gt[i * 3], gt[i * 3 + 1], gt[i * 3 + 2], pred) < margin) return false;
  for (std::size_t j = 0; j * 3 < pred.size(); ++j)
    if (second_gap(pred[j * 3], pred[j * 3 + 1], pred[j * 3 + 2], gt) < margin) return false;
  return true;
}

}  // namespace detail

inline std::vector<double> gradcheck_rand(Rng& rng, std::size_t n, double lo = -1.0,
                                          double hi = 1.0) {
  return detail::random_vec(rng, n, lo, hi);
}

// Finite-difference suite covering every differentiable op of the tensor
// core plus the chamfer loss. Deterministic per seed.
inline std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradCheckCase> cases;
  auto rng_for = [seed](const char* tag) { return Rng(derive_seed(seed, tag)); };

  {
    auto rng = rng_for("matmul");
    cases.push_back(check_gradients(
        "matmul",
        [](const std::vector<Tensor<double>>& in) { return sum_all(matmul(in[0], in[1])); },
        {{{3, 4}, detail::random_vec(rng, 12)}, {{4, 5}, detail::random_vec(rng, 20)}}));
  }
  {
    auto rng = rng_for("matmul_batched");
    cases.push_back(check_gradients(
        "matmul_batched",
        [](const std::vector<Tensor<double>>& in) { return sum_all(matmul(in[0], in[1])); },
        {{{2, 3, 4}, detail::random_vec(rng, 24)}, {{2, 4, 3}, detail::random_vec(rng, 24)}}));
  }
  {
    auto rng = rng_for("matmul_shared_rhs");
    cases.push_back(check_gradients(
        "matmul_shared_rhs",
        [](const std::vector<Tensor<double>>& in) { return sum_all(matmul(in[0], in[1])); },
        {{{2, 3, 4}, detail::random_vec(rng, 24)}, {{4, 5}, detail::random_vec(rng, 20)}}));
  }
  {
    auto rng = rng_for("matmul_shared_lhs");
    cases.push_back(check_gradients(
        "matmul_shared_lhs",
        [](const std::vector<Tensor<double>>& in) { return sum_all(matmul(in[0], in[1])); },
        {{{3, 4}, detail::random_vec(rng, 12)}, {{2, 4, 2}, detail::random_vec(rng, 16)}}));
  }
  {
    auto rng = rng_for("add");
    const auto w = detail::random_vec(rng, 12);
    cases.push_back(check_gradients(
        "add",
        [w](const std::vector<Tensor<double>>& in) {
          return sum_all(mul(add(in[0], in[1]), Tensor<double>({3, 4}, w)));
        },
        {{{3, 4}, detail::random_vec(rng, 12)}, {{3, 4}, detail::random_vec(rng, 12)}}));
  }
  {
    auto rng = rng_for("add_bias");
    const auto w = detail::random_vec(rng, 12);
    cases.push_back(check_gradients(
        "add_bias",
        [w](const std::vector<Tensor<double>>& in) {
          return sum_all(mul(add(in[0], in[1]), Tensor<double>({3, 4}, w)));
        },
        {{{3, 4}, detail::random_vec(rng, 12)}, {{4}, detail::random_vec(rng, 4)}}));
  }
  {
    auto rng = rng_for("sub");
    const auto w = detail::random_vec(rng, 12);
    cases.push_back(check_gradients(
        "sub",
        [w](const std::vector<Tensor<double>>& in) {
          return sum_all(mul(sub(in[0], in[1]), Tensor<double>({3, 4}, w)));
        },
        {{{3, 4}, detail::random_vec(rng, 12)}, {{3, 4}, detail::random_vec(rng, 12)}}));
  }
  {
    auto rng = rng_for("mul");
    cases.push_back(check_gradients(
        "mul",
        [](const std::vector<Tensor<double>>& in) { return sum_all(mul(in[0], in[1])); },
        {{{3, 4}, detail::random_vec(rng, 12)}, {{3, 4}, detail::random_vec(rng, 12)}}));
  }
  {
    auto rng = rng_for("scale");
    cases.push_back(check_gradients(
        "scale",
        [](const std::vector<Tensor<double>>& in) { return sum_all(scale(in[0], 2.5)); },
        {{{3, 4}, detail::random_vec(rng, 12)}}));
  }
  {
    auto rng = rng_for("relu");
    const auto w = detail::random_vec(rng, 12);
    cases.push_back(check_gradients(
        "relu",
        [w](const std::vector<Tensor<double>>& in) {
          return sum_all(mul(relu(in[0]), Tensor<double>({3, 4}, w)));
        },
        {{{3, 4}, detail::random_vec_margin(rng, 12, 1e-2)}}));
  }
  {
    auto rng = rng_for("softmax");
    const auto w = detail::random_vec(rng, 15);
    cases.push_back(check_gradients(
        "softmax_rows",
        [w](const std::vector<Tensor<double>>& in) {
          return sum_all(mul(softmax_rows(in[0]), Tensor<double>({3, 5}, w)));
        },
        {{{3, 5}, detail::random_vec(rng, 15)}}));
  }
  {
    auto rng = rng_for("layer_norm");
    const auto w = detail::random_vec(rng, 24);
    cases.push_back(check_gradients(
        "layer_norm",
        [w](const std::vector<Tensor<double>>& in) {
          return sum_all(mul(layer_norm(in[0], in[1], in[2], 1e-5), Tensor<double>({4, 6}, w)));
        },
        {{{4, 6}, detail::random_vec(rng, 24)},
         {{6}, detail::random_vec(rng, 6, 0.5, 1.5)},
         {{6}, detail::random_vec(rng, 6)}}));
  }
  {
    auto rng = rng_for("concat");
    const auto w = detail::random_vec(rng, 10);
    cases.push_back(check_gradients(
        "concat",
        [w](const std::vector<Tensor<double>>& in) {
          return sum_all(mul(concat<double>({in[0], in[1]}, 1), Tensor<double>({2, 5}, w)));
        },
        {{{2, 3}, detail::random_vec(rng, 6)}, {{2, 2}, detail::random_vec(rng, 4)}}));
  }
  {
    auto rng = rng_for("slice");
    const auto w = detail::random_vec(rng, 4);
    cases.push_back(check_gradients(
        "slice",
        [w](const std::vector<Tensor<double>>& in) {
          return sum_all(mul(slice(in[0], 1, 1, 2), Tensor<double>({2, 2}, w)));
        },
        {{{2, 4}, detail::random_vec(rng, 8)}}));
  }
  {
    auto rng = rng_for("transpose");
    const auto w = detail::random_vec(rng, 24);
    cases.push_back(check_gradients(
        "transpose_last2",
        [w](const std::vector<Tensor<double>>& in) {
          return sum_all(mul(transpose_last2(in[0]), Tensor<double>({2, 4, 3}, w)));
        },
        {{{2, 3, 4}, detail::random_vec(rng, 24)}}));
  }
  {
    auto rng = rng_for("heads");
    const auto w = detail::random_vec(rng, 32);
    cases.push_back(check_gradients(
        "split_merge_heads",
        [w](const std::vector<Tensor<double>>& in) {
          auto h = split_heads(in[0], 2);  // [2, 4, 4]
          return sum_all(mul(merge_heads(h), Tensor<double>({4, 8}, w)));
        },
        {{{4, 8}, detail::random_vec(rng, 32)}}));
  }
  {
    auto rng = rng_for("gather");
    const auto w = detail::random_vec(rng, 12);
    cases.push_back(check_gradients(
        "gather_rows",
        [w](const std::vector<Tensor<double>>& in) {
          const std::vector<std::size_t> idx{0, 2, 2, 4};
          return sum_all(mul(gather_rows(in[0], idx, Shape{2, 2}),
                             Tensor<double>({2, 2, 3}, w)));
        },
        {{{5, 3}, detail::random_vec(rng, 15)}}));
  }
  {
    auto rng = rng_for("reduce_max");
    const auto w = detail::random_vec(rng, 3);
    cases.push_back(check_gradients(
        "reduce_max",
        [w](const std::vector<Tensor<double>>& in) {
          return sum_all(mul(reduce_max(in[0], 1), Tensor<double>({3}, w)));
        },
        {{{3, 4}, detail::random_rows_gapped(rng, 3, 4, 1e-2)}}));
  }
  {
    auto rng = rng_for("reduce_sum");
    const auto w = detail::random_vec(rng, 4);
    cases.push_back(check_gradients(
        "reduce_sum",
        [w](const std::vector<Tensor<double>>& in) {
          return sum_all(mul(reduce_sum(in[0], 0), Tensor<double>({4}, w)));
        },
        {{{3, 4}, detail::random_vec(rng, 12)}}));
  }
  {
    auto rng = rng_for("mean_all");
    cases.push_back(check_gradients(
        "mean_all", [](const std::vector<Tensor<double>>& in) { return mean_all(in[0]); },
        {{{3, 4}, detail::random_vec(rng, 12)}}));
  }
  {
    auto rng = rng_for("reshape");
    const auto w = detail::random_vec(rng, 12);
    cases.push_back(check_gradients(
        "reshape",
        [w](const std::vector<Tensor<double>>& in) {
          return sum_all(mul(reshape(in[0], Shape{4, 3}), Tensor<double>({4, 3}, w)));
        },
        {{{3, 4}, detail::random_vec(rng, 12)}}));
  }
  {
    auto rng = rng_for("chamfer");
    std::vector<double> gt, pred;
    do {
      gt = detail::random_vec(rng, 8 * 3);
      pred = detail::random_vec(rng, 7 * 3);
    } while (!detail::chamfer_margins_ok(gt, pred, 5e-2));
    PointCloud<double> gt_cloud;
    for (std::size_t i = 0; i < 8; ++i)
      gt_cloud.points.push_back({gt[i * 3], gt[i * 3 + 1], gt[i * 3 + 2]});
    cases.push_back(check_gradients(
        "chamfer_loss",
        [gt_cloud](const std::vector<Tensor<double>>& in) {
          return chamfer_loss(gt_cloud, in[0]);
        },
        {{{7, 3}, pred}}));
  }
  return cases;
}

// Test fixture: an op whose backward rule is deliberately wrong (drops
// the scale factor). The harness must report it as a failure.
template <typename Real>
Tensor<Real> corrupted_scale(const Tensor<Real>& a, Real s) {
  const std::size_t n = a.size();
  auto out = detail::make_data<Real>(n);
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = a.data()[i] * s;
  Tape<Real>* tape = detail::common_tape<Real>({&a});
  const int an = a.node();
  return detail::emit<Real>(
      tape, "corrupted_scale", a.shape(), std::move(out),
      an >= 0 ? std::vector<int>{an} : std::vector<int>{},
      [an, n](const std::vector<Real>& g, Tape<Real>& t) {
        if (an < 0) return;
        auto& ga = t.grad_slot(an);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];  // missing * s
      },
      n);
}

// FD check of a scalar model forward against the tape gradients of every
// parameter, subsampling element indices per parameter. forward must be
// pure in the parameters.
template <typename Real, typename Fn>
GradCheckCase check_param_gradients(const std::string& name, ParamRegistry<Real>& reg,
                                    Fn&& forward, double step = 1e-4, double tol = 1e-4,
                                    double floor = 1e-6, std::size_t max_per_param = 3,
                                    std::uint64_t select_seed = 7) {
  Tape<Real> tape;
  Ctx<Real> ctx(&tape);
  Tensor<Real> loss = forward(ctx);
  tape.backward(loss);

  std::unordered_map<const Parameter<Real>*, const std::vector<Real>*> analytic;
  for (Parameter<Real>* p : ctx.bound_params()) analytic[p] = &tape.grad(ctx.node_of(*p));

  auto eval = [&]() {
    Ctx<Real> frozen(nullptr);
    return static_cast<double>(forward(frozen).scalar());
  };

  double max_rel = 0;
  Rng pick(select_seed);
  for (auto& p : reg) {
    const auto it = analytic.find(&p);
    for (std::size_t s = 0; s < std::min(max_per_param, p.count()); ++s) {
      const std::size_t j = pick.index(p.count());
      const Real orig = p.value[j];
      p.value[j] = orig + static_cast<Real>(step);
      const double fp = eval();
      p.value[j] = orig - static_cast<Real>(step);
      const double fm = eval();
      p.value[j] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double an = it == analytic.end() ? 0.0 : static_cast<double>((*it->second)[j]);
      const double denom = std::max({floor, std::abs(fd), std::abs(an)});
      max_rel = std::max(max_rel, std::abs(fd - an) / denom);
    }
  }
  return GradCheckCase{name, max_rel, tol, max_rel <= tol};
}

}  // namespace pcfuse
