// SPDX-License-Identifier: Apache-2.0
//
// Self-fusion network: per-level, per-ordered-branch-pair blocks of
// cross-attention -> self-attention -> linear projection to the fusion
// width (512), with positional encodings added to each branch's tokens
// beforehand. Token sets are ordered lexicographically by (source branch,
// context branch, level) so checkpoints and tests are order-stable.
#pragma once

#include <string>
#include <vector>

#include "pcfuse/config.hpp"
#include "pcfuse/encoder.hpp"
#include "pcfuse/layers.hpp"

namespace pcfuse {

// tokens[l] += MLP(centroids[l]); a function of position only.
template <typename Real>
struct PositionalEncoder {
  Linear<Real> l1, l2;  // 3 -> hidden -> C_l

  PositionalEncoder() = default;
  PositionalEncoder(ParamRegistry<Real>& reg, const std::string& name, std::size_t hidden,
                    std::size_t width)
      : l1(reg, name + ".l1", 3, hidden), l2(reg, name + ".l2", hidden, width) {}

  Tensor<Real> operator()(Ctx<Real>& ctx, const std::vector<Vec3<Real>>& centroids,
                          const Tensor<Real>& tokens) const {
    auto coords = coords_tensor(centroids);
    return add(tokens, l2(ctx, relu(l1(ctx, coords))));
  }
};

// Applies one branch's per-level positional encoders; centroids unchanged.
template <typename Real>
FeaturePyramid<Real> add_positional_encoding(Ctx<Real>& ctx, const FeaturePyramid<Real>& pyramid,
                                             const std::vector<PositionalEncoder<Real>>& encs) {
  if (encs.size() != pyramid.levels.size())
    throw ContractError("positional encoder count does not match pyramid levels");
  FeaturePyramid<Real> out;
  out.branch_id = pyramid.branch_id;
  for (std::size_t l = 0; l < pyramid.levels.size(); ++l) {
    out.levels.push_back(
        {pyramid.levels[l].centroids, encs[l](ctx, pyramid.levels[l].centroids,
                                              pyramid.levels[l].tokens)});
  }
  return out;
}

// cross-attention (Q from src, K/V from ctx) -> self-attention -> linear
// projection up to the fusion width. fusion_depth > 1 stacks the
// (cross, self) pair before the projection.
template <typename Real>
struct SelfFusionBlock {
  std::vector<AttentionBlock<Real>> cross;
  std::vector<AttentionBlock<Real>> self_attn;
  Linear<Real> proj;

  SelfFusionBlock() = default;
  SelfFusionBlock(ParamRegistry<Real>& reg, const std::string& name, std::size_t width,
                  std::size_t heads, std::size_t depth, std::size_t fusion_width) {
    for (std::size_t d = 0; d < depth; ++d) {
      cross.emplace_back(reg, name + ".d" + std::to_string(d) + ".cross", width, heads);
      self_attn.emplace_back(reg, name + ".d" + std::to_string(d) + ".self", width, heads);
    }
    proj = Linear<Real>(reg, name + ".proj", width, fusion_width);
  }

  Tensor<Real> operator()(Ctx<Real>& ctx, const Tensor<Real>& src,
                          const Tensor<Real>& context) const {
    require_shape(src.shape()[1] == context.shape()[1],
                  "self_fusion_block: widths disagree, " + shape_str(src.shape()) + " vs " +
                      shape_str(context.shape()));
    Tensor<Real> x = src;
    for (std::size_t d = 0; d < cross.size(); ++d) {
      x = cross[d](ctx, x, context);
      x = self_attn[d](ctx, x, x);
    }
    return proj(ctx, x);
  }
};

template <typename Real>
struct TokenSet {
  std::size_t source_branch = 0;
  std::size_t context_branch = 0;
  std::size_t level = 0;
  Tensor<Real> tokens;  // [M_level, fusion_width]
};

template <typename Real>
struct FusedFeatures {
  std::vector<TokenSet<Real>> token_sets;
  Tensor<Real> flat;  // concatenation along the token axis, token-set order
};

// One self-fusion block per (ordered pair, level). Double mode fuses both
// directions of every pair; single mode keeps only the (i < j) direction.
template <typename Real>
struct FusionNetwork {
  struct Entry {
    std::size_t src, ctx, level;
    SelfFusionBlock<Real> block;
  };
  std::vector<Entry> entries;
  std::size_t branches = 0;

  FusionNetwork() = default;
  FusionNetwork(ParamRegistry<Real>& reg, const ModelConfig& cfg) : branches(cfg.branches) {
    for (std::size_t i = 0; i < cfg.branches; ++i) {
      for (std::size_t j = 0; j < cfg.branches; ++j) {
        if (i == j) continue;
        if (cfg.fusion_mode == FusionMode::single_direction && i > j) continue;
        for (std::size_t l = 0; l < cfg.levels.size(); ++l) {
          const std::string name = "fusion.s" + std::to_string(i) + ".c" + std::to_string(j) +
                                   ".level" + std::to_string(l);
          entries.push_back(Entry{i, j, l,
                                  SelfFusionBlock<Real>(reg, name, cfg.levels[l].width, cfg.heads,
                                                        cfg.fusion_depth, cfg.fusion_width)});
        }
      }
    }
  }

  FusedFeatures<Real> operator()(Ctx<Real>& ctx,
                                 const std::vector<FeaturePyramid<Real>>& pyramids) const {
    if (pyramids.size() < 2) throw ConfigError("fusion requires at least two branches");
    if (pyramids.size() != branches)
      throw ContractError("fusion built for " + std::to_string(branches) + " branches, got " +
                          std::to_string(pyramids.size()) + " pyramids");
    FusedFeatures<Real> out;
    std::vector<Tensor<Real>> parts;
    for (const auto& e : entries) {
      const auto& src = pyramids[e.src].levels.at(e.level).tokens;
      const auto& context = pyramids[e.ctx].levels.at(e.level).tokens;
      Tensor<Real> fused = e.block(ctx, src, context);
      parts.push_back(fused);
      out.token_sets.push_back(TokenSet<Real>{e.src, e.ctx, e.level, std::move(fused)});
    }
    out.flat = concat(parts, 0);
    return out;
  }
};

}  // namespace pcfuse
