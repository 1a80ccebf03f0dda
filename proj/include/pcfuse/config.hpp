// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcfuse/common.hpp"
#include "pcfuse/loss.hpp"

namespace pcfuse {

enum class ExtractorKind { set_abstraction_knn, graph_feature };
enum class DecoderKind { query_cross_attention, transformer_upsampling };
enum class FusionMode { single_direction, double_direction };

inline std::string to_string(ExtractorKind k) {
  return k == ExtractorKind::set_abstraction_knn ? "set_abstraction_knn" : "graph_feature";
}
inline std::string to_string(DecoderKind k) {
  return k == DecoderKind::query_cross_attention ? "query_cross_attention"
                                                 : "transformer_upsampling";
}
inline std::string to_string(FusionMode m) {
  return m == FusionMode::single_direction ? "single" : "double";
}

inline ExtractorKind extractor_from_string(const std::string& s) {
  if (s == "set_abstraction_knn" || s == "sa" || s == "pointnet2")
    return ExtractorKind::set_abstraction_knn;
  if (s == "graph_feature" || s == "dgcnn") return ExtractorKind::graph_feature;
  throw ConfigError("unknown extractor '" + s + "' (expected sa|dgcnn)");
}
inline DecoderKind decoder_from_string(const std::string& s) {
  if (s == "query_cross_attention" || s == "xmfnet") return DecoderKind::query_cross_attention;
  if (s == "transformer_upsampling" || s == "transformer")
    return DecoderKind::transformer_upsampling;
  throw ConfigError("unknown decoder '" + s + "' (expected xmfnet|transformer)");
}
inline FusionMode fusion_from_string(const std::string& s) {
  if (s == "single") return FusionMode::single_direction;
  if (s == "double") return FusionMode::double_direction;
  throw ConfigError("unknown fusion mode '" + s + "' (expected single|double)");
}

// Per-level target point count and channel width.
struct LevelSpec {
  std::size_t points = 0;
  std::size_t width = 0;
};

struct ModelConfig {
  std::size_t branches = 3;
  std::vector<LevelSpec> levels = {{128, 64}, {64, 128}, {32, 256}};
  std::size_t knn_k = 16;
  std::size_t heads = 4;
  std::size_t fusion_width = 512;
  std::size_t fusion_depth = 1;
  FusionMode fusion_mode = FusionMode::double_direction;
  ExtractorKind extractor = ExtractorKind::set_abstraction_knn;
  DecoderKind decoder = DecoderKind::query_cross_attention;
  std::size_t n_miss = 128;
  std::size_t n_out = 256;
  std::size_t decoder_layers = 2;
  std::size_t decoder_width = 128;
  std::size_t decoder_heads = 4;
  std::size_t input_points = 256;
  std::size_t pos_hidden = 32;      // positional-encoding MLP hidden width
  std::size_t pt_bias_hidden = 16;  // point-transformer pairwise-offset MLP hidden width
  std::size_t head_hidden = 0;      // coordinate-head hidden width; 0 = 4 * decoder_width

  std::size_t decoder_head_hidden() const {
    return head_hidden == 0 ? 4 * decoder_width : head_hidden;
  }

  void validate() const {
    if (branches < 2) throw ConfigError("branches must be >= 2");
    if (branches > 4) throw ConfigError("branches must be <= 4");
    if (levels.size() != 3) throw ConfigError("exactly 3 encoder levels required");
    std::size_t prev_points = input_points;
    std::size_t prev_width = 0;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (levels[l].points == 0 || levels[l].points >= prev_points)
        throw ConfigError("level point counts must strictly decrease from the input size");
      if (levels[l].width < prev_width)
        throw ConfigError("level widths must be nondecreasing");
      if (knn_k > prev_points)
        throw ConfigError("knn_k exceeds the point count feeding level " + std::to_string(l));
      if (levels[l].width % heads != 0)
        throw ConfigError("heads must divide every level width");
      prev_points = levels[l].points;
      prev_width = levels[l].width;
    }
    if (fusion_width % heads != 0) throw ConfigError("heads must divide fusion_width");
    if (fusion_depth < 1) throw ConfigError("fusion_depth must be >= 1");
    if (n_miss < 1) throw ConfigError("n_miss must be >= 1");
    if (n_out > input_points + n_miss)
      throw ConfigError("n_out exceeds input_points + n_miss");
    if (decoder_layers < 1) throw ConfigError("decoder_layers must be >= 1");
    if (decoder_width % decoder_heads != 0)
      throw ConfigError("decoder_heads must divide decoder_width");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["branches"] = branches;
    nlohmann::json lv = nlohmann::json::array();
    for (const auto& l : levels) lv.push_back({{"points", l.points}, {"width", l.width}});
    j["levels"] = lv;
    j["knn_k"] = knn_k;
    j["heads"] = heads;
    j["fusion_width"] = fusion_width;
    j["fusion_depth"] = fusion_depth;
    j["fusion_mode"] = to_string(fusion_mode);
    j["extractor"] = to_string(extractor);
    j["decoder"] = to_string(decoder);
    j["n_miss"] = n_miss;
    j["n_out"] = n_out;
    j["decoder_layers"] = decoder_layers;
    j["decoder_width"] = decoder_width;
    j["decoder_heads"] = decoder_heads;
    j["input_points"] = input_points;
    j["pos_hidden"] = pos_hidden;
    j["pt_bias_hidden"] = pt_bias_hidden;
    j["head_hidden"] = head_hidden;
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.branches = j.at("branches").get<std::size_t>();
    c.levels.clear();
    for (const auto& l : j.at("levels"))
      c.levels.push_back({l.at("points").get<std::size_t>(), l.at("width").get<std::size_t>()});
    c.knn_k = j.at("knn_k").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.fusion_width = j.at("fusion_width").get<std::size_t>();
    c.fusion_depth = j.at("fusion_depth").get<std::size_t>();
    c.fusion_mode = fusion_from_string(j.at("fusion_mode").get<std::string>());
    c.extractor = extractor_from_string(j.at("extractor").get<std::string>());
    c.decoder = decoder_from_string(j.at("decoder").get<std::string>());
    c.n_miss = j.at("n_miss").get<std::size_t>();
    c.n_out = j.at("n_out").get<std::size_t>();
    c.decoder_layers = j.at("decoder_layers").get<std::size_t>();
    c.decoder_width = j.at("decoder_width").get<std::size_t>();
    c.decoder_heads = j.at("decoder_heads").get<std::size_t>();
    c.input_points = j.at("input_points").get<std::size_t>();
    c.pos_hidden = j.at("pos_hidden").get<std::size_t>();
    c.pt_bias_hidden = j.at("pt_bias_hidden").get<std::size_t>();
    c.head_hidden = j.at("head_hidden").get<std::size_t>();
    return c;
  }
};

struct OptimizerConfig {
  double lr = 1e-3;
  double lr_final = -1;          // < 0: constant lr; otherwise cosine decay to this value
  std::size_t warmup_epochs = 0;  // linear ramp to lr over the first epochs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  double lr_at(std::size_t epoch, std::size_t total_epochs) const {
    if (warmup_epochs > 0 && epoch <= warmup_epochs)
      return lr * static_cast<double>(epoch) / static_cast<double>(warmup_epochs);
    if (lr_final < 0 || total_epochs <= 1) return lr;
    const std::size_t start = warmup_epochs + 1;
    const std::size_t span = total_epochs > start ? total_epochs - start : 1;
    const double t = static_cast<double>(epoch - start) / static_cast<double>(span);
    return lr_final + (lr - lr_final) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
  }
};

struct AugmentConfig {
  double rotate_range = 0;  // radians; random z-rotation in [-r, r]
  double noise_sigma = 0;   // additive Gaussian jitter

  bool enabled() const { return rotate_range > 0 || noise_sigma > 0; }
};

struct TrainConfig {
  ModelConfig model;
  OptimizerConfig opt;
  std::size_t epochs = 200;
  std::size_t batch_size = 2;
  std::uint64_t seed = 1;
  LossKind loss;
  std::optional<AugmentConfig> augment;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only

  void validate() const {
    model.validate();
    loss.validate();
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(opt.lr >= 0)) throw ConfigError("learning rate must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// key = value config files ('#' comments, commas for lists).
// ---------------------------------------------------------------------------
namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::size_t> parse_size_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      out.push_back(std::stoull(trim(cur)));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(std::stoull(trim(cur)));
  return out;
}

}  // namespace detail

inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  return kv;
}

// Applies key/value settings onto a TrainConfig. Unknown keys are
// rejected so typos fail loudly.
inline void apply_kv(TrainConfig& cfg, const std::map<std::string, std::string>& kv) {
  AugmentConfig aug = cfg.augment.value_or(AugmentConfig{});
  for (const auto& [key, value] : kv) {
    try {
      if (key == "branches") cfg.model.branches = std::stoull(value);
      else if (key == "level_points") {
        auto xs = detail::parse_size_list(value);
        if (xs.size() != cfg.model.levels.size())
          throw ConfigError("level_points needs " + std::to_string(cfg.model.levels.size()) +
                            " entries");
        for (std::size_t i = 0; i < xs.size(); ++i) cfg.model.levels[i].points = xs[i];
      } else if (key == "level_widths") {
        auto xs = detail::parse_size_list(value);
        if (xs.size() != cfg.model.levels.size())
          throw ConfigError("level_widths needs " + std::to_string(cfg.model.levels.size()) +
                            " entries");
        for (std::size_t i = 0; i < xs.size(); ++i) cfg.model.levels[i].width = xs[i];
      } else if (key == "knn_k") cfg.model.knn_k = std::stoull(value);
      else if (key == "heads") cfg.model.heads = std::stoull(value);
      else if (key == "fusion_width") cfg.model.fusion_width = std::stoull(value);
      else if (key == "fusion_depth") cfg.model.fusion_depth = std::stoull(value);
      else if (key == "fusion") cfg.model.fusion_mode = fusion_from_string(value);
      else if (key == "extractor") cfg.model.extractor = extractor_from_string(value);
      else if (key == "decoder") cfg.model.decoder = decoder_from_string(value);
      else if (key == "n_miss") cfg.model.n_miss = std::stoull(value);
      else if (key == "n_out") cfg.model.n_out = std::stoull(value);
      else if (key == "decoder_layers") cfg.model.decoder_layers = std::stoull(value);
      else if (key == "decoder_width") cfg.model.decoder_width = std::stoull(value);
      else if (key == "decoder_heads") cfg.model.decoder_heads = std::stoull(value);
      else if (key == "input_points") cfg.model.input_points = std::stoull(value);
      else if (key == "pos_hidden") cfg.model.pos_hidden = std::stoull(value);
      else if (key == "pt_bias_hidden") cfg.model.pt_bias_hidden = std::stoull(value);
      else if (key == "head_hidden") cfg.model.head_hidden = std::stoull(value);
      else if (key == "epochs") cfg.epochs = std::stoull(value);
      else if (key == "batch_size") cfg.batch_size = std::stoull(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "lr") cfg.opt.lr = std::stod(value);
      else if (key == "lr_final") cfg.opt.lr_final = std::stod(value);
      else if (key == "lr_warmup") cfg.opt.warmup_epochs = std::stoull(value);
      else if (key == "beta1") cfg.opt.beta1 = std::stod(value);
      else if (key == "beta2") cfg.opt.beta2 = std::stod(value);
      else if (key == "adam_eps") cfg.opt.eps = std::stod(value);
      else if (key == "loss") cfg.loss = LossKind::parse(value);
      else if (key.rfind("loss_param.", 0) == 0)
        cfg.loss.params[key.substr(11)] = std::stod(value);
      else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoull(value);
      else if (key == "aug_rotate") aug.rotate_range = std::stod(value);
      else if (key == "aug_noise") aug.noise_sigma = std::stod(value);
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("bad value for config key '" + key + "': '" + value + "'");
    }
  }
  if (aug.enabled()) cfg.augment = aug;
}

}  // namespace pcfuse
