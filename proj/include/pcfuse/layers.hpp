// SPDX-License-Identifier: Apache-2.0
//
// Named parameters, forward contexts, and the attention building blocks
// shared by the encoder, fusion network, and decoder.
#pragma once

#include <cmath>
#include <deque>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pcfuse/common.hpp"
#include "pcfuse/rng.hpp"
#include "pcfuse/tensor.hpp"

namespace pcfuse {

enum class Init { uniform_fan_in, zeros, ones, normal };

struct InitDesc {
  Init kind = Init::uniform_fan_in;
  double arg = 0;  // stddev for Init::normal
};

template <typename Real>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<Real> value;
  InitDesc init;

  std::size_t count() const { return value.size(); }
};

// Owns all parameters of one model, in creation order. Names are unique.
template <typename Real>
class ParamRegistry {
 public:
  Parameter<Real>* add(std::string name, Shape shape, InitDesc init) {
    if (!names_.insert(name).second)
      throw ContractError("duplicate parameter name '" + name + "'");
    params_.push_back(Parameter<Real>{std::move(name), shape, std::vector<Real>(numel(shape), 0),
                                      init});
    return &params_.back();
  }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.count();
    return n;
  }

  std::size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  Parameter<Real>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  // Seeded initialization. Each parameter gets its own stream derived
  // from its name, so values do not depend on creation order.
  void init_values(std::uint64_t seed) {
    for (auto& p : params_) {
      Rng rng(derive_seed(seed, p.name));
      switch (p.init.kind) {
        case Init::zeros:
          std::fill(p.value.begin(), p.value.end(), Real(0));
          break;
        case Init::ones:
          std::fill(p.value.begin(), p.value.end(), Real(1));
          break;
        case Init::normal:
          for (auto& v : p.value) v = static_cast<Real>(rng.normal() * p.init.arg);
          break;
        case Init::uniform_fan_in: {
          const std::size_t fan_in = p.shape.empty() ? 1 : p.shape[0];
          const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
          for (auto& v : p.value) v = static_cast<Real>(rng.uniform(-bound, bound));
          break;
        }
      }
    }
  }

 private:
  std::deque<Parameter<Real>> params_;  // deque: stable addresses
  std::unordered_set<std::string> names_;
};

// One forward pass. Tracking contexts bind each used parameter as a tape
// leaf exactly once; frozen contexts (tape == nullptr) emit constants for
// allocation-light inference. Bindings snapshot parameter values at first
// use: create a fresh context after mutating parameters.
template <typename Real>
class Ctx {
 public:
  explicit Ctx(Tape<Real>* tape) : tape_(tape) {}

  Tensor<Real> use(Parameter<Real>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    Tensor<Real> t = tape_ ? tape_->leaf(p.shape, p.value, true)
                           : Tensor<Real>(p.shape, p.value);
    bound_.emplace(&p, t);
    if (tape_) order_.push_back(&p);
    return t;
  }

  Tape<Real>* tape() const { return tape_; }
  bool tracking() const { return tape_ != nullptr; }

  // Parameters bound on this context, in first-use order.
  const std::vector<Parameter<Real>*>& bound_params() const { return order_; }

  int node_of(Parameter<Real>& p) const {
    auto it = bound_.find(&p);
    return it == bound_.end() ? -1 : it->second.node();
  }

 private:
  Tape<Real>* tape_;
  std::unordered_map<Parameter<Real>*, Tensor<Real>> bound_;
  std::vector<Parameter<Real>*> order_;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename Real>
struct Linear {
  Parameter<Real>* w = nullptr;  // [in, out]
  Parameter<Real>* b = nullptr;  // [out]

  Linear() = default;
  Linear(ParamRegistry<Real>& reg, const std::string& name, std::size_t in, std::size_t out,
         InitDesc wi = {Init::uniform_fan_in, 0}, InitDesc bi = {Init::zeros, 0}) {
    w = reg.add(name + ".w", Shape{in, out}, wi);
    b = reg.add(name + ".b", Shape{out}, bi);
  }

  std::size_t in_width() const { return w->shape[0]; }
  std::size_t out_width() const { return w->shape[1]; }

  Tensor<Real> operator()(Ctx<Real>& ctx, const Tensor<Real>& x) const {
    return add(matmul(x, ctx.use(*w)), ctx.use(*b));
  }
};

template <typename Real>
struct LayerNorm {
  Parameter<Real>* gamma = nullptr;
  Parameter<Real>* beta = nullptr;
  Real eps = Real(1e-5);

  LayerNorm() = default;
  LayerNorm(ParamRegistry<Real>& reg, const std::string& name, std::size_t width) {
    gamma = reg.add(name + ".gamma", Shape{width}, {Init::ones, 0});
    beta = reg.add(name + ".beta", Shape{width}, {Init::zeros, 0});
  }

  Tensor<Real> operator()(Ctx<Real>& ctx, const Tensor<Real>& x) const {
    return layer_norm(x, ctx.use(*gamma), ctx.use(*beta), eps);
  }
};

// Scaled dot-product multi-head attention. Q comes from q_in, K/V from
// kv_in; an optional additive [H, Mq, Mk] logit bias carries positional
// information. attn_out, when set, receives the post-softmax weights.
template <typename Real>
struct MultiHeadAttention {
  Linear<Real> wq, wk, wv, wo;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamRegistry<Real>& reg, const std::string& name, std::size_t width,
                     std::size_t heads_)
      : wq(reg, name + ".wq", width, width),
        wk(reg, name + ".wk", width, width),
        wv(reg, name + ".wv", width, width),
        wo(reg, name + ".wo", width, width),
        heads(heads_) {
    if (heads == 0 || width % heads != 0)
      throw ConfigError("attention head count " + std::to_string(heads_) +
                        " does not divide width " + std::to_string(width));
  }

  Tensor<Real> operator()(Ctx<Real>& ctx, const Tensor<Real>& q_in, const Tensor<Real>& kv_in,
                          const Tensor<Real>* logit_bias = nullptr,
                          std::vector<Real>* attn_out = nullptr) const {
    require_shape(q_in.ndim() == 2 && kv_in.ndim() == 2 && q_in.shape()[1] == kv_in.shape()[1],
                  "attention: widths disagree, " + shape_str(q_in.shape()) + " vs " +
                      shape_str(kv_in.shape()));
    const std::size_t width = q_in.shape()[1];
    const std::size_t d = width / heads;
    auto q = split_heads(wq(ctx, q_in), heads);                      // [H, Mq, d]
    auto k = split_heads(wk(ctx, kv_in), heads);                     // [H, Mk, d]
    auto v = split_heads(wv(ctx, kv_in), heads);                     // [H, Mk, d]
    auto logits = scale(matmul(q, transpose_last2(k)),
                        Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(d))));
    if (logit_bias) logits = add(logits, *logit_bias);
    auto weights = softmax_rows(logits);                             // [H, Mq, Mk]
    if (attn_out) *attn_out = weights.data();
    return wo(ctx, merge_heads(matmul(weights, v)));                 // [Mq, width]
  }
};

// Post-norm residual attention: layer_norm(x + attention(x, context)).
template <typename Real>
struct AttentionBlock {
  MultiHeadAttention<Real> mha;
  LayerNorm<Real> ln;

  AttentionBlock() = default;
  AttentionBlock(ParamRegistry<Real>& reg, const std::string& name, std::size_t width,
                 std::size_t heads)
      : mha(reg, name + ".attn", width, heads), ln(reg, name + ".ln", width) {}

  Tensor<Real> operator()(Ctx<Real>& ctx, const Tensor<Real>& x, const Tensor<Real>& context,
                          const Tensor<Real>* logit_bias = nullptr,
                          std::vector<Real>* attn_out = nullptr) const {
    return ln(ctx, add(x, mha(ctx, x, context, logit_bias, attn_out)));
  }
};

}  // namespace pcfuse
