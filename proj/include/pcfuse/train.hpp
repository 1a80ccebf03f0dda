// SPDX-License-Identifier: Apache-2.0
//
// Training loop: adaptive-moment gradient descent on the configured loss
// over per-sample tapes. Bitwise reproducible given (seed, config,
// dataset) on a fixed platform.
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <unordered_map>
#include <vector>

#include "pcfuse/checkpoint.hpp"
#include "pcfuse/config.hpp"
#include "pcfuse/dataset.hpp"
#include "pcfuse/loss.hpp"
#include "pcfuse/metrics.hpp"
#include "pcfuse/model.hpp"
#include "pcfuse/rng.hpp"

namespace pcfuse {

template <typename Real>
struct Adam {
  OptimizerConfig cfg;
  std::uint64_t t = 0;
  std::vector<std::vector<Real>> m, v;  // registry order

  void init(const ParamRegistry<Real>& reg) {
    t = 0;
    m.clear();
    v.clear();
    for (const auto& p : reg) {
      m.emplace_back(p.count(), Real(0));
      v.emplace_back(p.count(), Real(0));
    }
  }

  void step(ParamRegistry<Real>& reg, const std::vector<std::vector<Real>>& grads) {
    ++t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    std::size_t i = 0;
    for (auto& p : reg) {
      auto& mi = m[i];
      auto& vi = v[i];
      const auto& gi = grads[i];
      for (std::size_t j = 0; j < p.count(); ++j) {
        const double g = gi[j];
        const double mj = cfg.beta1 * mi[j] + (1.0 - cfg.beta1) * g;
        const double vj = cfg.beta2 * vi[j] + (1.0 - cfg.beta2) * g * g;
        mi[j] = static_cast<Real>(mj);
        vi[j] = static_cast<Real>(vj);
        const double update = cfg.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
        p.value[j] = static_cast<Real>(p.value[j] - update);
      }
      ++i;
    }
  }
};

// Post-backward gradients keyed by parameter name; parameters that did
// not participate in the forward pass map to zero tensors.
template <typename Real>
std::map<std::string, std::vector<Real>> gradients_by_name(const Ctx<Real>& ctx,
                                                           const Tape<Real>& tape,
                                                           const ParamRegistry<Real>& reg) {
  std::map<std::string, std::vector<Real>> out;
  for (const auto& p : reg) out[p.name] = std::vector<Real>(p.count(), Real(0));
  for (Parameter<Real>* p : ctx.bound_params()) out[p->name] = tape.grad(ctx.node_of(*p));
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0;  // mean per-sample loss, computed pre-update
};

template <typename Real>
struct TrainOutput {
  std::vector<EpochLog> log;
  std::uint64_t adam_step = 0;
  std::uint64_t rng_state = 0;
};

// Called after the epochs selected by checkpoint_every (and never for the
// final epoch, whose checkpoint the caller writes from the return value).
template <typename Real>
using CheckpointHook = std::function<void(std::size_t epoch, const Adam<Real>& adam,
                                          std::uint64_t rng_state)>;

template <typename Real>
TrainOutput<Real> train_model(CompletionModel<Real>& model, const std::vector<Sample<Real>>& data,
                              const TrainConfig& cfg, const CheckpointHook<Real>& hook = nullptr,
                              Adam<Real>* adam_out = nullptr,
                              const std::function<void(const EpochLog&)>& on_epoch = nullptr) {
  cfg.validate();
  if (data.empty()) throw ArgumentError("train: dataset is empty");
  const LossFn<Real> loss_fn = LossRegistry<Real>::instance().resolve(cfg.loss);

  model.init(derive_seed(cfg.seed, "init"));
  Adam<Real> adam;
  adam.cfg = cfg.opt;
  adam.init(model.params());

  std::unordered_map<const Parameter<Real>*, std::size_t> param_index;
  {
    std::size_t i = 0;
    for (const auto& p : model.params()) param_index[&p] = i++;
  }

  Rng order_rng(derive_seed(cfg.seed, "order"));
  Rng aug_rng(derive_seed(cfg.seed, "augment"));

  std::vector<std::vector<Real>> grads;
  for (const auto& p : model.params()) grads.emplace_back(p.count(), Real(0));

  TrainOutput<Real> out;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    adam.cfg.lr = cfg.opt.lr_at(epoch, cfg.epochs);
    order_rng.shuffle(order);
    double epoch_loss = 0;

    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      for (auto& g : grads) std::fill(g.begin(), g.end(), Real(0));

      for (std::size_t bi = begin; bi < end; ++bi) {
        const Sample<Real>& sample = data[order[bi]];
        Tape<Real> tape;
        Ctx<Real> ctx(&tape);

        Tensor<Real> pred;
        std::vector<PointCloud<Real>> aug_clouds;
        if (cfg.augment && cfg.augment->enabled()) {
          // Branch 0 sees the original cloud; the others see augmented
          // copies (random z-rotation and/or Gaussian jitter).
          std::vector<const PointCloud<Real>*> inputs;
          inputs.push_back(&sample.partial);
          aug_clouds.reserve(model.config().branches - 1);
          for (std::size_t b = 1; b < model.config().branches; ++b) {
            PointCloud<Real> c = sample.partial;
            if (cfg.augment->rotate_range > 0)
              c = rotate_z(c, aug_rng.uniform(-cfg.augment->rotate_range,
                                              cfg.augment->rotate_range));
            if (cfg.augment->noise_sigma > 0) c = add_noise(c, cfg.augment->noise_sigma, aug_rng);
            aug_clouds.push_back(std::move(c));
            inputs.push_back(&aug_clouds.back());
          }
          pred = model.forward_multi(ctx, inputs, sample.partial);
        } else {
          pred = model.forward(ctx, sample.partial);
        }

        Tensor<Real> loss = loss_fn(sample.gt, pred, cfg.loss.params);
        const double loss_value = static_cast<double>(loss.scalar());
        if (!std::isfinite(loss_value))
          throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch) +
                                ", sample '" + sample.name + "'");
        epoch_loss += loss_value;
        tape.backward(loss);
        for (Parameter<Real>* p : ctx.bound_params()) {
          const auto& g = tape.grad(ctx.node_of(*p));
          auto& acc = grads[param_index.at(p)];
          for (std::size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
        }
      }

      const Real inv_batch = Real(1) / static_cast<Real>(end - begin);
      for (auto& g : grads)
        for (auto& x : g) x *= inv_batch;
      adam.step(model.params(), grads);
    }

    EpochLog entry{epoch, epoch_loss / static_cast<double>(data.size())};
    out.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (hook && cfg.checkpoint_every != 0 && epoch % cfg.checkpoint_every == 0 &&
        epoch != cfg.epochs)
      hook(epoch, adam, order_rng.state());
  }

  out.adam_step = adam.t;
  out.rng_state = order_rng.state();
  if (adam_out) *adam_out = std::move(adam);
  return out;
}

// Evaluation: deterministic inference per sample, then batch metrics.
template <typename Real>
MetricsReport evaluate_model(const CompletionModel<Real>& model,
                             const std::vector<Sample<Real>>& data, double tau) {
  if (data.empty()) throw ArgumentError("evaluate: dataset is empty");
  std::vector<PointCloud<Real>> predictions;
  predictions.reserve(data.size());
  for (const auto& s : data) predictions.push_back(model.complete(s.partial));
  std::vector<EvalPair<Real>> pairs;
  pairs.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    pairs.push_back(EvalPair<Real>{&data[i].gt, &predictions[i], data[i].category});
  return evaluate_batch(pairs, tau);
}

// Assembles a checkpoint from the model + optimizer + rng state.
template <typename Real>
Checkpoint<Real> make_checkpoint(const CompletionModel<Real>& model, const TrainConfig& cfg,
                                 const Adam<Real>& adam, std::size_t epoch,
                                 std::uint64_t rng_state) {
  Checkpoint<Real> ck;
  ck.model_config = model.config();
  ck.loss = cfg.loss;
  ck.epoch = epoch;
  ck.adam_step = adam.t;
  ck.rng_state = rng_state;
  for (const auto& p : model.params())
    ck.tensors.push_back(NamedTensor<Real>{p.name, p.shape, p.value});
  std::size_t i = 0;
  for (const auto& p : model.params()) {
    ck.tensors.push_back(NamedTensor<Real>{"adam.m." + p.name, p.shape, adam.m[i]});
    ck.tensors.push_back(NamedTensor<Real>{"adam.v." + p.name, p.shape, adam.v[i]});
    ++i;
  }
  return ck;
}

// CSV epoch log with a fixed two-column layout.
inline std::string train_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,mean_cd\n";
  char buf[64];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", e.epoch, e.mean_loss);
    out += buf;
  }
  return out;
}

}  // namespace pcfuse
