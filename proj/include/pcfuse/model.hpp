// SPDX-License-Identifier: Apache-2.0
//
// The completion network: B independent branch encoders over the same
// partial cloud, positional encodings, pairwise self-fusion, point
// generation, and the FPS merge back into the input.
#pragma once

#include <string>
#include <variant>
#include <vector>

#include "pcfuse/config.hpp"
#include "pcfuse/decoder.hpp"
#include "pcfuse/encoder.hpp"
#include "pcfuse/fusion.hpp"
#include "pcfuse/geometry.hpp"
#include "pcfuse/layers.hpp"
#include "pcfuse/rng.hpp"

namespace pcfuse {

template <typename Real>
class CompletionModel {
 public:
  explicit CompletionModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    for (std::size_t b = 0; b < cfg_.branches; ++b) {
      const std::string bname = "branch" + std::to_string(b);
      branches_.emplace_back(registry_, bname, cfg_, static_cast<int>(b));
      std::vector<PositionalEncoder<Real>> encs;
      for (std::size_t l = 0; l < cfg_.levels.size(); ++l)
        encs.emplace_back(registry_, bname + ".level" + std::to_string(l) + ".pe",
                          cfg_.pos_hidden, cfg_.levels[l].width);
      pos_encoders_.push_back(std::move(encs));
    }
    fusion_ = FusionNetwork<Real>(registry_, cfg_);
    if (cfg_.decoder == DecoderKind::query_cross_attention)
      decoder_ = QueryCrossAttentionDecoder<Real>(registry_, "decoder", cfg_);
    else
      decoder_ = TransformerUpsamplingDecoder<Real>(registry_, "decoder", cfg_);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry<Real>& params() { return registry_; }
  const ParamRegistry<Real>& params() const { return registry_; }

  // Each parameter draws from a stream derived from (seed, name); branch
  // names differ, so branches never share initial weights.
  void init(std::uint64_t seed) { registry_.init_values(seed); }

  // Encode every branch on its own input cloud and add positional
  // encodings. All inputs must be distinct clouds or the same cloud.
  std::vector<FeaturePyramid<Real>> encode_branches(
      Ctx<Real>& ctx, const std::vector<const PointCloud<Real>*>& inputs,
      std::size_t fps_start = 0) const {
    if (inputs.size() != branches_.size())
      throw ContractError("expected " + std::to_string(branches_.size()) + " branch inputs, got " +
                          std::to_string(inputs.size()));
    std::vector<FeaturePyramid<Real>> pyramids;
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      auto pyr = branches_[b](ctx, *inputs[b], fps_start);
      pyramids.push_back(add_positional_encoding(ctx, pyr, pos_encoders_[b]));
    }
    return pyramids;
  }

  FusedFeatures<Real> fuse(Ctx<Real>& ctx,
                           const std::vector<FeaturePyramid<Real>>& pyramids) const {
    return fusion_(ctx, pyramids);
  }

  Tensor<Real> decode_missing(Ctx<Real>& ctx, const FusedFeatures<Real>& fused) const {
    if (fused.token_sets.empty()) throw ArgumentError("decode_missing: empty fused features");
    return std::visit([&](const auto& d) { return d(ctx, fused.flat); }, decoder_);
  }

  // Full pipeline on one partial cloud (every branch receives it).
  Tensor<Real> forward(Ctx<Real>& ctx, const PointCloud<Real>& partial,
                       std::size_t fps_start = 0) const {
    std::vector<const PointCloud<Real>*> inputs(branches_.size(), &partial);
    return forward_multi(ctx, inputs, partial, fps_start);
  }

  // Per-branch inputs (augmentation hook); the merge still integrates the
  // untransformed partial cloud.
  Tensor<Real> forward_multi(Ctx<Real>& ctx, const std::vector<const PointCloud<Real>*>& inputs,
                             const PointCloud<Real>& merge_partial,
                             std::size_t fps_start = 0) const {
    auto pyramids = encode_branches(ctx, inputs, fps_start);
    auto fused = fuse(ctx, pyramids);
    auto missing = decode_missing(ctx, fused);
    return merge_and_resample(ctx, merge_partial, missing, cfg_.n_out, fps_start);
  }

  // Inference without a tape. Input is assumed to be in normalized model
  // space (see complete_raw for arbitrary frames).
  PointCloud<Real> complete(const PointCloud<Real>& partial, std::size_t fps_start = 0) const {
    Ctx<Real> ctx(nullptr);
    auto out = forward(ctx, partial, fps_start);
    PointCloud<Real> cloud;
    cloud.provenance = Provenance::predicted;
    cloud.transform = partial.transform;
    cloud.points.reserve(out.shape()[0]);
    const auto& d = out.data();
    for (std::size_t i = 0; i < out.shape()[0]; ++i)
      cloud.points.push_back({d[i * 3 + 0], d[i * 3 + 1], d[i * 3 + 2]});
    return cloud;
  }

  // Predicted missing points only, in the input's frame.
  PointCloud<Real> predict_missing(const PointCloud<Real>& partial,
                                   std::size_t fps_start = 0) const {
    Ctx<Real> ctx(nullptr);
    std::vector<const PointCloud<Real>*> inputs(branches_.size(), &partial);
    auto pyramids = encode_branches(ctx, inputs, fps_start);
    auto missing = decode_missing(ctx, fuse(ctx, pyramids));
    PointCloud<Real> out;
    out.provenance = Provenance::predicted;
    const auto& d = missing.data();
    out.points.reserve(missing.shape()[0]);
    for (std::size_t i = 0; i < missing.shape()[0]; ++i)
      out.points.push_back({d[i * 3 + 0], d[i * 3 + 1], d[i * 3 + 2]});
    return out;
  }

  // Completion of a cloud in an arbitrary frame: normalize a copy for the
  // network, de-normalize the predicted missing points, and merge with
  // the caller's original points so that every output point is verbatim
  // from (partial union predicted).
  PointCloud<Real> complete_raw(const PointCloud<Real>& partial, std::size_t fps_start = 0) const {
    auto [normalized, tf] = normalize_unit_sphere(partial);
    PointCloud<Real> missing = denormalize(predict_missing(normalized, fps_start), tf);
    return merge_and_resample(partial, missing, cfg_.n_out, fps_start);
  }

  const std::vector<BranchEncoder<Real>>& branch_encoders() const { return branches_; }
  const std::vector<std::vector<PositionalEncoder<Real>>>& positional_encoders() const {
    return pos_encoders_;
  }
  const FusionNetwork<Real>& fusion_network() const { return fusion_; }

 private:
  ModelConfig cfg_;
  ParamRegistry<Real> registry_;
  std::vector<BranchEncoder<Real>> branches_;
  std::vector<std::vector<PositionalEncoder<Real>>> pos_encoders_;
  FusionNetwork<Real> fusion_;
  std::variant<QueryCrossAttentionDecoder<Real>, TransformerUpsamplingDecoder<Real>> decoder_;
};

// ---------------------------------------------------------------------------
// Parameter/FLOP accounting. FLOPs are measured by running one forward
// pass at the configured input size with the tape's counter: matmuls
// count multiply-accumulates as 2, softmax/layer_norm 5 per element,
// element-wise ops 1, gathers and reshapes 0.
// ---------------------------------------------------------------------------
struct ComplexityReport {
  std::uint64_t param_count = 0;
  std::uint64_t forward_flops = 0;
  std::size_t input_points = 0;
};

template <typename Real = float>
ComplexityReport complexity(const ModelConfig& cfg, std::uint64_t seed = 0) {
  CompletionModel<Real> model(cfg);
  model.init(seed);
  Rng rng(derive_seed(seed, "complexity-input"));
  PointCloud<Real> cloud;
  cloud.provenance = Provenance::partial;
  cloud.points.reserve(cfg.input_points);
  for (std::size_t i = 0; i < cfg.input_points; ++i) {
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    cloud.points.push_back({static_cast<Real>(r * std::cos(phi)),
                            static_cast<Real>(r * std::sin(phi)), static_cast<Real>(z)});
  }
  Tape<Real> tape;
  Ctx<Real> ctx(&tape);
  (void)model.forward(ctx, cloud);
  return ComplexityReport{model.params().total_count(), tape.flops(), cfg.input_points};
}

}  // namespace pcfuse
