// SPDX-License-Identifier: Apache-2.0
//
// Point-generation decoders. Learned query tokens cross-attend to the
// concatenated fused tokens; a pointwise head maps each query to a 3D
// coordinate. The output is merged with the partial input and resampled
// with FPS (index selection is non-differentiable; gradients pass through
// selected missing-point coordinates only).
#pragma once

#include <string>
#include <variant>
#include <vector>

#include "pcfuse/config.hpp"
#include "pcfuse/fusion.hpp"
#include "pcfuse/geometry.hpp"
#include "pcfuse/layers.hpp"

namespace pcfuse {

// XMFNet-like: queries attend to fused tokens across decoder_layers
// layers of (cross, self), then an MLP head emits coordinates.
template <typename Real>
struct QueryCrossAttentionDecoder {
  Linear<Real> in_proj;           // fusion_width -> width
  Parameter<Real>* queries = nullptr;  // [n_miss, width]
  struct Layer {
    AttentionBlock<Real> cross, self_attn;
  };
  std::vector<Layer> layers;
  Linear<Real> head1, head2;

  QueryCrossAttentionDecoder() = default;
  QueryCrossAttentionDecoder(ParamRegistry<Real>& reg, const std::string& name,
                             const ModelConfig& cfg) {
    const std::size_t w = cfg.decoder_width;
    in_proj = Linear<Real>(reg, name + ".in_proj", cfg.fusion_width, w);
    queries = reg.add(name + ".queries", Shape{cfg.n_miss, w}, {Init::normal, 0.1});
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
      const std::string lname = name + ".layer" + std::to_string(i);
      layers.push_back(Layer{AttentionBlock<Real>(reg, lname + ".cross", w, cfg.decoder_heads),
                             AttentionBlock<Real>(reg, lname + ".self", w, cfg.decoder_heads)});
    }
    // The head reads the attended tokens next to the raw query embeddings
    // (per-point identity undiluted by the layer norms). It only ever sees
    // n_miss tokens, so a wide hidden layer is nearly free next to the
    // attention over all fused tokens.
    head1 = Linear<Real>(reg, name + ".head1", 2 * w, cfg.decoder_head_hidden());
    head2 = Linear<Real>(reg, name + ".head2", cfg.decoder_head_hidden(), 3);
  }

  Tensor<Real> operator()(Ctx<Real>& ctx, const Tensor<Real>& fused_flat) const {
    auto kv = in_proj(ctx, fused_flat);
    Tensor<Real> q_embed = ctx.use(*queries);
    Tensor<Real> q = q_embed;
    for (const auto& layer : layers) {
      q = layer.cross(ctx, q, kv);
      q = layer.self_attn(ctx, q, q);
    }
    auto readout = concat<Real>({q, q_embed}, 1);  // [n_miss, 2w]
    return head2(ctx, relu(head1(ctx, readout)));  // [n_miss, 3]
  }
};

// Alternate decoder: the same queries-attend skeleton produces a coarse
// set, then a refinement stage lifts the coarse coordinates back to
// tokens, attends to the fused features again, and emits per-point
// deltas. Identical I/O contract.
template <typename Real>
struct TransformerUpsamplingDecoder {
  Linear<Real> in_proj;
  Parameter<Real>* queries = nullptr;
  struct Layer {
    AttentionBlock<Real> cross, self_attn;
  };
  std::vector<Layer> stage1;
  Linear<Real> coarse_head1, coarse_head2;
  Linear<Real> lift;  // 3 -> width
  Layer stage2;
  Linear<Real> delta_head;

  TransformerUpsamplingDecoder() = default;
  TransformerUpsamplingDecoder(ParamRegistry<Real>& reg, const std::string& name,
                               const ModelConfig& cfg) {
    const std::size_t w = cfg.decoder_width;
    in_proj = Linear<Real>(reg, name + ".in_proj", cfg.fusion_width, w);
    queries = reg.add(name + ".queries", Shape{cfg.n_miss, w}, {Init::normal, 0.1});
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
      const std::string lname = name + ".stage1." + std::to_string(i);
      stage1.push_back(Layer{AttentionBlock<Real>(reg, lname + ".cross", w, cfg.decoder_heads),
                             AttentionBlock<Real>(reg, lname + ".self", w, cfg.decoder_heads)});
    }
    coarse_head1 = Linear<Real>(reg, name + ".coarse_head1", 2 * w, cfg.decoder_head_hidden());
    coarse_head2 = Linear<Real>(reg, name + ".coarse_head2", cfg.decoder_head_hidden(), 3);
    lift = Linear<Real>(reg, name + ".lift", 3, w);
    stage2 = Layer{AttentionBlock<Real>(reg, name + ".stage2.cross", w, cfg.decoder_heads),
                   AttentionBlock<Real>(reg, name + ".stage2.self", w, cfg.decoder_heads)};
    delta_head = Linear<Real>(reg, name + ".delta_head", w, 3);
  }

  Tensor<Real> operator()(Ctx<Real>& ctx, const Tensor<Real>& fused_flat) const {
    auto kv = in_proj(ctx, fused_flat);
    Tensor<Real> q_embed = ctx.use(*queries);
    Tensor<Real> q = q_embed;
    for (const auto& layer : stage1) {
      q = layer.cross(ctx, q, kv);
      q = layer.self_attn(ctx, q, q);
    }
    auto readout = concat<Real>({q, q_embed}, 1);
    auto coarse = coarse_head2(ctx, relu(coarse_head1(ctx, readout)));  // [n_miss, 3]
    auto tokens = add(relu(lift(ctx, coarse)), q);
    tokens = stage2.cross(ctx, tokens, kv);
    tokens = stage2.self_attn(ctx, tokens, tokens);
    return add(coarse, delta_head(ctx, tokens));
  }
};

// Concatenate partial ++ missing, FPS-select n_out of the union. Every
// output point exists verbatim in the union; gradients reach only the
// selected missing points.
template <typename Real>
Tensor<Real> merge_and_resample(Ctx<Real>& ctx, const PointCloud<Real>& partial,
                                const Tensor<Real>& missing, std::size_t n_out,
                                std::size_t fps_start = 0) {
  (void)ctx;
  partial.validate();
  require_shape(missing.ndim() == 2 && missing.shape()[1] == 3,
                "merge_and_resample: missing must be [M, 3], got " + shape_str(missing.shape()));
  const std::size_t n_partial = partial.size();
  const std::size_t n_missing = missing.shape()[0];
  if (n_out > n_partial + n_missing)
    throw ArgumentError("merge_and_resample: n_out " + std::to_string(n_out) +
                        " exceeds union size " + std::to_string(n_partial + n_missing));

  std::vector<Vec3<Real>> union_pts;
  union_pts.reserve(n_partial + n_missing);
  union_pts.insert(union_pts.end(), partial.points.begin(), partial.points.end());
  const auto& mv = missing.data();
  for (std::size_t i = 0; i < n_missing; ++i)
    union_pts.push_back({mv[i * 3 + 0], mv[i * 3 + 1], mv[i * 3 + 2]});

  const auto picked = fps(union_pts, n_out, fps_start);
  auto union_tensor = concat<Real>({coords_tensor(partial.points), missing}, 0);
  return gather_rows(union_tensor, picked, Shape{n_out});
}

// Value-level variant used outside training (e.g. merging in the input's
// original frame after de-normalizing the prediction).
template <typename Real>
PointCloud<Real> merge_and_resample(const PointCloud<Real>& partial, const PointCloud<Real>& missing,
                                    std::size_t n_out, std::size_t fps_start = 0) {
  partial.validate();
  if (n_out > partial.size() + missing.size())
    throw ArgumentError("merge_and_resample: n_out " + std::to_string(n_out) +
                        " exceeds union size " + std::to_string(partial.size() + missing.size()));
  std::vector<Vec3<Real>> union_pts;
  union_pts.reserve(partial.size() + missing.size());
  union_pts.insert(union_pts.end(), partial.points.begin(), partial.points.end());
  union_pts.insert(union_pts.end(), missing.points.begin(), missing.points.end());
  const auto picked = fps(union_pts, n_out, fps_start);
  PointCloud<Real> out;
  out.provenance = Provenance::predicted;
  out.transform = partial.transform;
  out.points.reserve(n_out);
  for (std::size_t i : picked) out.points.push_back(union_pts[i]);
  return out;
}

}  // namespace pcfuse
