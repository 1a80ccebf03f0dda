// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints: length-prefixed name/shape/raw-data records in a binary
// file (all integers little-endian) plus a JSON metadata sidecar at
// <path>.json. save -> load -> save is byte-identical.
#pragma once

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcfuse/common.hpp"
#include "pcfuse/config.hpp"
#include "pcfuse/io.hpp"
#include "pcfuse/model.hpp"

namespace pcfuse {

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

template <typename Real>
void put_real_le(std::string& out, Real v) {
  if constexpr (sizeof(Real) == 4) {
    put_f32_le(out, static_cast<float>(v));
  } else {
    std::uint64_t bits;
    double d = static_cast<double>(v);
    std::memcpy(&bits, &d, sizeof bits);
    put_u64_le(out, bits);
  }
}

template <typename Real>
Real get_real_le(const unsigned char* p) {
  if constexpr (sizeof(Real) == 4) {
    return static_cast<Real>(get_f32_le(p));
  } else {
    const std::uint64_t bits = get_u64_le(p);
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return static_cast<Real>(d);
  }
}

}  // namespace detail

template <typename Real>
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<Real> values;
};

template <typename Real>
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelConfig model_config;
  LossKind loss;
  std::size_t epoch = 0;
  std::uint64_t adam_step = 0;
  std::uint64_t rng_state = 0;
  std::vector<NamedTensor<Real>> tensors;  // parameters first, then optimizer state
};

template <typename Real>
std::string encode_checkpoint(const Checkpoint<Real>& ck) {
  std::string out = "PCCK";
  detail::put_u32_le(out, Checkpoint<Real>::kFormatVersion);
  detail::put_u32_le(out, static_cast<std::uint32_t>(sizeof(Real)));
  detail::put_u32_le(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    detail::put_u32_le(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_u32_le(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) detail::put_u64_le(out, d);
    detail::put_u64_le(out, static_cast<std::uint64_t>(t.values.size() * sizeof(Real)));
    for (Real v : t.values) detail::put_real_le(out, v);
  }
  return out;
}

template <typename Real>
nlohmann::json checkpoint_metadata(const Checkpoint<Real>& ck) {
  nlohmann::json loss_params = nlohmann::json::object();
  for (const auto& [k, v] : ck.loss.params) loss_params[k] = v;
  return nlohmann::json{{"format_version", Checkpoint<Real>::kFormatVersion},
                        {"real_size", sizeof(Real)},
                        {"model", ck.model_config.to_json()},
                        {"loss", {{"name", ck.loss.name}, {"params", loss_params}}},
                        {"epoch", ck.epoch},
                        {"adam_step", ck.adam_step},
                        {"rng_state", ck.rng_state}};
}

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<Real>& ck) {
  atomic_write_file(path, encode_checkpoint(ck));
  atomic_write_file(path.string() + ".json", checkpoint_metadata(ck).dump(2) + "\n");
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 16 || bytes.compare(0, 4, "PCCK") != 0)
    throw DataError("'" + path.string() + "' is not a checkpoint file");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t version = detail::get_u32_le(p + 4);
  if (version != Checkpoint<Real>::kFormatVersion)
    throw DataError("'" + path.string() + "': unsupported checkpoint version " +
                    std::to_string(version));
  const std::uint32_t real_size = detail::get_u32_le(p + 8);
  if (real_size != sizeof(Real))
    throw DataError("'" + path.string() + "': stores " + std::to_string(real_size) +
                    "-byte reals, build expects " + std::to_string(sizeof(Real)));
  const std::uint32_t count = detail::get_u32_le(p + 12);

  Checkpoint<Real> ck;
  std::size_t off = 16;
  auto need = [&](std::size_t n) {
    if (off + n > bytes.size()) throw DataError("'" + path.string() + "': truncated checkpoint");
  };
  for (std::uint32_t i = 0; i < count; ++i) {
    need(4);
    const std::uint32_t name_len = detail::get_u32_le(p + off);
    off += 4;
    need(name_len);
    NamedTensor<Real> t;
    t.name = bytes.substr(off, name_len);
    off += name_len;
    need(4);
    const std::uint32_t ndim = detail::get_u32_le(p + off);
    off += 4;
    need(8 * ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(static_cast<std::size_t>(detail::get_u64_le(p + off)));
      off += 8;
    }
    need(8);
    const std::uint64_t payload = detail::get_u64_le(p + off);
    off += 8;
    need(payload);
    if (payload != numel(t.shape) * sizeof(Real))
      throw DataError("'" + path.string() + "': record '" + t.name + "' payload size mismatch");
    t.values.resize(numel(t.shape));
    for (auto& v : t.values) {
      v = detail::get_real_le<Real>(p + off);
      off += sizeof(Real);
    }
    ck.tensors.push_back(std::move(t));
  }
  if (off != bytes.size())
    throw DataError("'" + path.string() + "': trailing bytes after last record");

  const std::filesystem::path meta_path = path.string() + ".json";
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + meta_path.string() + "': " + e.what());
  }
  ck.model_config = ModelConfig::from_json(meta.at("model"));
  ck.loss = LossKind::parse(meta.at("loss").at("name").get<std::string>());
  for (const auto& [k, v] : meta.at("loss").at("params").items())
    ck.loss.params[k] = v.template get<double>();
  ck.epoch = meta.at("epoch").get<std::size_t>();
  ck.adam_step = meta.at("adam_step").get<std::uint64_t>();
  ck.rng_state = meta.at("rng_state").get<std::uint64_t>();
  return ck;
}

// Copies checkpointed parameter records into the model; name or shape
// mismatches indicate a config/code mismatch.
template <typename Real>
void apply_parameters(CompletionModel<Real>& model, const Checkpoint<Real>& ck) {
  std::size_t applied = 0;
  for (const auto& t : ck.tensors) {
    if (t.name.rfind("adam.", 0) == 0) continue;
    Parameter<Real>* p = model.params().find(t.name);
    if (!p) throw DataError("checkpoint parameter '" + t.name + "' not present in model");
    if (p->shape != t.shape)
      throw DataError("checkpoint parameter '" + t.name + "' has shape " + shape_str(t.shape) +
                      ", model expects " + shape_str(p->shape));
    p->value = t.values;
    ++applied;
  }
  if (applied != model.params().size())
    throw DataError("checkpoint is missing " + std::to_string(model.params().size() - applied) +
                    " model parameters");
}

// Rebuilds the model a checkpoint was trained with.
template <typename Real>
CompletionModel<Real> model_from_checkpoint(const Checkpoint<Real>& ck) {
  CompletionModel<Real> model(ck.model_config);
  apply_parameters(model, ck);
  return model;
}

}  // namespace pcfuse
