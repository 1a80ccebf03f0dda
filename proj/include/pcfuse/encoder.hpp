// SPDX-License-Identifier: Apache-2.0
//
// Per-branch hierarchical 3D encoder: three set-abstraction levels with
// K-NN grouping, each followed by a point-transformer block. All three
// per-level outputs are retained. A graph-feature (edge-conv) backbone is
// available as the alternate extractor with the identical shape contract.
#pragma once

#include <string>
#include <vector>

#include "pcfuse/config.hpp"
#include "pcfuse/geometry.hpp"
#include "pcfuse/layers.hpp"

namespace pcfuse {

template <typename Real>
struct PyramidLevel {
  std::vector<Vec3<Real>> centroids;  // M_l x 3, always a subset of the input points
  Tensor<Real> tokens;                // [M_l, C_l]
};

template <typename Real>
struct FeaturePyramid {
  int branch_id = 0;
  std::vector<PyramidLevel<Real>> levels;
};

namespace detail {

// Relative neighbor offsets as a constant [Q, k, 3] tensor.
template <typename Real>
Tensor<Real> relative_offsets(const std::vector<Vec3<Real>>& centroids,
                              const std::vector<Vec3<Real>>& points, const IndexMatrix& nbr) {
  std::vector<Real> data(nbr.rows * nbr.cols * 3);
  for (std::size_t q = 0; q < nbr.rows; ++q)
    for (std::size_t j = 0; j < nbr.cols; ++j) {
      const auto& p = points[nbr.at(q, j)];
      const auto& c = centroids[q];
      Real* dst = data.data() + (q * nbr.cols + j) * 3;
      dst[0] = p[0] - c[0];
      dst[1] = p[1] - c[1];
      dst[2] = p[2] - c[2];
    }
  return Tensor<Real>({nbr.rows, nbr.cols, 3}, std::move(data));
}

}  // namespace detail

// FPS downsample -> K-NN grouping of (relative offset ++ neighbor token)
// -> shared pointwise MLP -> max over the neighborhood.
template <typename Real>
struct SetAbstraction {
  Linear<Real> mlp1, mlp2;
  std::size_t m_out = 0;
  std::size_t k = 0;

  SetAbstraction() = default;
  SetAbstraction(ParamRegistry<Real>& reg, const std::string& name, std::size_t in_width,
                 std::size_t out_width, std::size_t m_out_, std::size_t k_)
      : mlp1(reg, name + ".mlp1", 3 + in_width, out_width),
        mlp2(reg, name + ".mlp2", out_width, out_width),
        m_out(m_out_),
        k(k_) {}

  PyramidLevel<Real> operator()(Ctx<Real>& ctx, const std::vector<Vec3<Real>>& points,
                                const Tensor<Real>& tokens, std::size_t fps_start = 0) const {
    const std::size_t c_in = tokens.shape()[1];
    const std::size_t c_out = mlp1.out_width();
    const auto picked = fps(points, m_out, fps_start);
    std::vector<Vec3<Real>> centroids;
    centroids.reserve(m_out);
    for (std::size_t i : picked) centroids.push_back(points[i]);

    const IndexMatrix nbr = knn(centroids, points, k);
    auto rel = detail::relative_offsets(centroids, points, nbr);   // const [Q, k, 3]
    auto gathered = group(tokens, nbr);                            // [Q, k, C_in]
    auto feat = concat<Real>({rel, gathered}, 2);                  // [Q, k, 3 + C_in]
    auto flat = reshape(feat, Shape{m_out * k, 3 + c_in});
    auto h = relu(mlp2(ctx, relu(mlp1(ctx, flat))));
    auto pooled = reduce_max(reshape(h, Shape{m_out, k, c_out}), 1);  // [Q, C_out]
    return {std::move(centroids), pooled};
  }
};

// Edge-feature alternative (DGCNN-style): concat(x_i, x_j - x_i) over the
// K-NN graph, shared MLP, max aggregation, then FPS selection.
template <typename Real>
struct EdgeConvLevel {
  Linear<Real> mlp1, mlp2;
  std::size_t m_out = 0;
  std::size_t k = 0;

  EdgeConvLevel() = default;
  EdgeConvLevel(ParamRegistry<Real>& reg, const std::string& name, std::size_t in_width,
                std::size_t out_width, std::size_t m_out_, std::size_t k_)
      : mlp1(reg, name + ".mlp1", 2 * in_width, out_width),
        mlp2(reg, name + ".mlp2", out_width, out_width),
        m_out(m_out_),
        k(k_) {}

  PyramidLevel<Real> operator()(Ctx<Real>& ctx, const std::vector<Vec3<Real>>& points,
                                const Tensor<Real>& tokens, std::size_t fps_start = 0) const {
    const std::size_t r = points.size();
    const std::size_t c_in = tokens.shape()[1];
    const std::size_t c_out = mlp1.out_width();
    const IndexMatrix nbr = knn(points, points, k);
    std::vector<std::size_t> self_idx(r * k);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < k; ++j) self_idx[i * k + j] = i;

    auto center = gather_rows(tokens, self_idx, Shape{r, k});  // [R, k, C_in]
    auto nbrs = group(tokens, nbr);
    auto edge = concat<Real>({center, sub(nbrs, center)}, 2);  // [R, k, 2 C_in]
    auto flat = reshape(edge, Shape{r * k, 2 * c_in});
    auto h = relu(mlp2(ctx, relu(mlp1(ctx, flat))));
    auto feats = reduce_max(reshape(h, Shape{r, k, c_out}), 1);  // [R, C_out]

    const auto picked = fps(points, m_out, fps_start);
    std::vector<Vec3<Real>> centroids;
    centroids.reserve(m_out);
    for (std::size_t i : picked) centroids.push_back(points[i]);
    auto out_tokens = gather_rows(feats, picked, Shape{m_out});
    return {std::move(centroids), out_tokens};
  }
};

// Multi-head self-attention over the level's tokens with an additive
// positional bias from a small MLP on pairwise centroid offsets, then
// residual + layer norm.
template <typename Real>
struct PointTransformerBlock {
  Linear<Real> pos1, pos2;  // 3 -> hidden -> heads
  AttentionBlock<Real> attn;
  std::size_t heads = 1;

  PointTransformerBlock() = default;
  PointTransformerBlock(ParamRegistry<Real>& reg, const std::string& name, std::size_t width,
                        std::size_t heads_, std::size_t bias_hidden)
      : pos1(reg, name + ".pos1", 3, bias_hidden),
        pos2(reg, name + ".pos2", bias_hidden, heads_),
        attn(reg, name, width, heads_),
        heads(heads_) {}

  Tensor<Real> operator()(Ctx<Real>& ctx, const std::vector<Vec3<Real>>& coords,
                          const Tensor<Real>& tokens,
                          std::vector<Real>* attn_out = nullptr) const {
    const std::size_t m = coords.size();
    std::vector<Real> off(m * m * 3);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        Real* dst = off.data() + (i * m + j) * 3;
        dst[0] = coords[j][0] - coords[i][0];
        dst[1] = coords[j][1] - coords[i][1];
        dst[2] = coords[j][2] - coords[i][2];
      }
    Tensor<Real> offsets(Shape{m * m, 3}, std::move(off));
    auto b = pos2(ctx, relu(pos1(ctx, offsets)));                    // [m*m, H]
    auto bias = reshape(transpose_last2(b), Shape{heads, m, m});     // [H, m, m]
    return attn(ctx, tokens, tokens, &bias, attn_out);
  }
};

// Three chained (extractor -> point transformer) stages; all per-level
// outputs are retained in the pyramid.
template <typename Real>
struct BranchEncoder {
  ExtractorKind kind = ExtractorKind::set_abstraction_knn;
  int branch_id = 0;
  std::vector<SetAbstraction<Real>> sa_levels;
  std::vector<EdgeConvLevel<Real>> ec_levels;
  std::vector<PointTransformerBlock<Real>> pt_blocks;

  BranchEncoder() = default;
  BranchEncoder(ParamRegistry<Real>& reg, const std::string& name, const ModelConfig& cfg,
                int branch_id_)
      : kind(cfg.extractor), branch_id(branch_id_) {
    std::size_t in_width = 3;  // level 0 consumes raw coordinates as features
    for (std::size_t l = 0; l < cfg.levels.size(); ++l) {
      const auto& lv = cfg.levels[l];
      const std::string lname = name + ".level" + std::to_string(l);
      if (kind == ExtractorKind::set_abstraction_knn)
        sa_levels.emplace_back(reg, lname + ".sa", in_width, lv.width, lv.points, cfg.knn_k);
      else
        ec_levels.emplace_back(reg, lname + ".ec", in_width, lv.width, lv.points, cfg.knn_k);
      pt_blocks.emplace_back(reg, lname + ".pt", lv.width, cfg.heads, cfg.pt_bias_hidden);
      in_width = lv.width;
    }
  }

  FeaturePyramid<Real> operator()(Ctx<Real>& ctx, const PointCloud<Real>& cloud,
                                  std::size_t fps_start = 0) const {
    cloud.validate();
    const std::size_t n_levels = pt_blocks.size();
    const std::size_t first = kind == ExtractorKind::set_abstraction_knn ? sa_levels[0].m_out
                                                                         : ec_levels[0].m_out;
    if (cloud.size() < first)
      throw ArgumentError("encoder input has " + std::to_string(cloud.size()) +
                          " points, fewer than the first-level target " + std::to_string(first));

    FeaturePyramid<Real> pyramid;
    pyramid.branch_id = branch_id;
    const std::vector<Vec3<Real>>* points = &cloud.points;
    Tensor<Real> tokens = coords_tensor(cloud.points);
    for (std::size_t l = 0; l < n_levels; ++l) {
      const std::size_t start = fps_start % points->size();
      PyramidLevel<Real> level = kind == ExtractorKind::set_abstraction_knn
                                     ? sa_levels[l](ctx, *points, tokens, start)
                                     : ec_levels[l](ctx, *points, tokens, start);
      level.tokens = pt_blocks[l](ctx, level.centroids, level.tokens);
      pyramid.levels.push_back(std::move(level));
      points = &pyramid.levels.back().centroids;
      tokens = pyramid.levels.back().tokens;
    }
    return pyramid;
  }
};

}  // namespace pcfuse
