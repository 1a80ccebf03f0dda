// SPDX-License-Identifier: Apache-2.0
//
// pcfuse command-line interface: dataset generation, training,
// evaluation, single-cloud completion, gradient checking, and
// parameter/FLOP accounting.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
// divergence.

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pcfuse/pcfuse.hpp"

namespace fs = std::filesystem;
using Real = float;

namespace {

struct ModelFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> branches;
  std::optional<std::string> fusion;
  std::optional<std::string> extractor;
  std::optional<std::string> decoder;
  std::optional<std::string> loss;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;

  void attach(CLI::App* cmd, bool with_train_flags) {
    cmd->add_option("--config", config_path, "key = value config file");
    cmd->add_option("--seed", seed, "master seed");
    cmd->add_option("--branches", branches, "encoder branch count")
        ->check(CLI::Range(std::size_t(2), std::size_t(4)));
    cmd->add_option("--fusion", fusion, "fusion mode: single|double");
    cmd->add_option("--extractor", extractor, "feature extractor: sa|dgcnn");
    cmd->add_option("--decoder", decoder, "generation decoder: xmfnet|transformer");
    cmd->add_option("--loss", loss, "loss function name (built in: cd)");
    if (with_train_flags) {
      cmd->add_option("--epochs", epochs, "training epochs");
      cmd->add_option("--batch-size", batch_size, "samples per optimizer step");
    }
  }

  pcfuse::TrainConfig build() const {
    pcfuse::TrainConfig cfg;
    if (!config_path.empty())
      pcfuse::apply_kv(cfg, pcfuse::parse_kv_text(pcfuse::read_file(config_path)));
    std::map<std::string, std::string> kv;
    if (seed) kv["seed"] = std::to_string(*seed);
    if (branches) kv["branches"] = std::to_string(*branches);
    if (fusion) kv["fusion"] = *fusion;
    if (extractor) kv["extractor"] = *extractor;
    if (decoder) kv["decoder"] = *decoder;
    if (loss) kv["loss"] = *loss;
    if (epochs) kv["epochs"] = std::to_string(*epochs);
    if (batch_size) kv["batch_size"] = std::to_string(*batch_size);
    pcfuse::apply_kv(cfg, kv);
    cfg.validate();
    return cfg;
  }
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw pcfuse::DataError("cannot create '" + dir.string() + "': " + ec.message());
}

int run(int argc, char** argv) {
  CLI::App app{"view-free multi-branch self-fusion point cloud completion"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic shape dataset");
  std::string gen_out;
  pcfuse::GenConfig gen_cfg;
  std::string gen_families;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_cfg.count, "number of shapes");
  gen->add_option("--points", gen_cfg.points, "ground-truth points per shape");
  gen->add_option("--keep-ratio", gen_cfg.keep_ratio, "partial-view keep ratio in (0,1)");
  gen->add_option("--seed", gen_cfg.seed, "dataset seed");
  gen->add_option("--families", gen_families, "comma-separated shape families");

  // train
  auto* train = app.add_subcommand("train", "train a completion model");
  std::string train_data, train_out;
  std::string train_split = "all";
  ModelFlags train_flags;
  train->add_option("--data", train_data, "dataset manifest.json")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--split", train_split, "seed-parity subset: all|train|val");
  train_flags.attach(train, true);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_out;
  std::string eval_split = "all";
  double eval_tau = 0.001;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset manifest.json")->required();
  eval->add_option("--out", eval_out, "output directory")->required();
  eval->add_option("--split", eval_split, "seed-parity subset: all|train|val");
  eval->add_option("--tau", eval_tau, "F-score threshold (default 0.001)");

  // complete
  auto* complete = app.add_subcommand("complete", "complete a single partial cloud");
  std::string comp_ckpt, comp_in, comp_out;
  bool comp_normalize = false;
  std::size_t comp_fps_start = 0;
  complete->add_option("--checkpoint", comp_ckpt, "checkpoint file")->required();
  complete->add_option("--input", comp_in, "partial cloud (.pcf or ASCII x y z)")->required();
  complete->add_option("--out", comp_out, "output .pcf path")->required();
  complete->add_flag("--normalize", comp_normalize,
                     "normalize the input to the unit sphere for the network and merge in the "
                     "original frame (default: input is already in model space)");
  complete->add_option("--fps-start", comp_fps_start, "FPS start index for the merge");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient report");
  std::uint64_t gc_seed = 1;
  gradcheck->add_option("--seed", gc_seed, "suite seed");

  // complexity
  auto* complexity_cmd = app.add_subcommand("complexity", "parameter count and forward FLOPs");
  ModelFlags cx_flags;
  std::string cx_json;
  complexity_cmd->add_option("--json", cx_json, "also write the report as JSON");
  cx_flags.attach(complexity_cmd, false);

  // export-plot
  auto* export_plot = app.add_subcommand("export-plot", "dump a cloud as CSV for plotting");
  std::string ep_in, ep_out;
  export_plot->add_option("--input", ep_in, "cloud file (.pcf or ASCII)")->required();
  export_plot->add_option("--out", ep_out, "output .csv path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // bad usage is a config error; --help stays 0
  }

  if (*gen) {
    if (!gen_families.empty()) {
      gen_cfg.families.clear();
      std::string cur;
      for (char c : gen_families + ",") {
        if (c == ',') {
          if (!cur.empty()) gen_cfg.families.push_back(pcfuse::family_from_string(cur));
          cur.clear();
        } else {
          cur += c;
        }
      }
    }
    const auto manifest = pcfuse::generate_dataset<Real>(gen_cfg, gen_out);
    std::printf("wrote %zu shapes to %s\n", manifest.entries.size(), gen_out.c_str());
    return 0;
  }

  if (*train) {
    const pcfuse::TrainConfig cfg = train_flags.build();
    ensure_dir(train_out);
    const auto data = pcfuse::split_by_parity(pcfuse::load_dataset<Real>(train_data),
                                              pcfuse::split_from_string(train_split));
    pcfuse::CompletionModel<Real> model(cfg.model);
    pcfuse::Adam<Real> adam;
    const fs::path out_dir = train_out;
    auto hook = [&](std::size_t epoch, const pcfuse::Adam<Real>& a, std::uint64_t rng_state) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_epoch%04zu.pcck", epoch);
      pcfuse::save_checkpoint(out_dir / name, pcfuse::make_checkpoint(model, cfg, a, epoch,
                                                                      rng_state));
    };
    auto on_epoch = [](const pcfuse::EpochLog& e) {
      std::printf("epoch %zu mean_cd %.9g\n", e.epoch, e.mean_loss);
      std::fflush(stdout);
    };
    const auto result = pcfuse::train_model<Real>(model, data, cfg, hook, &adam, on_epoch);
    pcfuse::save_checkpoint(out_dir / "checkpoint.pcck",
                            pcfuse::make_checkpoint(model, cfg, adam, cfg.epochs,
                                                    result.rng_state));
    pcfuse::atomic_write_file(out_dir / "train_log.csv", pcfuse::train_log_csv(result.log));
    std::printf("final mean_cd %.9g (checkpoint: %s)\n", result.log.back().mean_loss,
                (out_dir / "checkpoint.pcck").string().c_str());
    return 0;
  }

  if (*eval) {
    const auto ck = pcfuse::load_checkpoint<Real>(eval_ckpt);
    auto model = pcfuse::model_from_checkpoint(ck);
    const auto data = pcfuse::split_by_parity(pcfuse::load_dataset<Real>(eval_data),
                                              pcfuse::split_from_string(eval_split));
    const auto report = pcfuse::evaluate_model(model, data, eval_tau);
    ensure_dir(eval_out);
    pcfuse::atomic_write_file(fs::path(eval_out) / "eval.csv", report.to_csv());
    pcfuse::atomic_write_file(fs::path(eval_out) / "eval.json", report.to_json().dump(2) + "\n");
    std::printf("mean_cd_x1e3 %.9g fscore@%g %.9g over %zu samples\n", report.mean_cd_times_1e3,
                report.tau, report.f_score_at_tau, report.count);
    return 0;
  }

  if (*complete) {
    const auto ck = pcfuse::load_checkpoint<Real>(comp_ckpt);
    auto model = pcfuse::model_from_checkpoint(ck);
    const auto input = pcfuse::read_cloud<Real>(comp_in);
    const auto output = comp_normalize ? model.complete_raw(input, comp_fps_start)
                                       : model.complete(input, comp_fps_start);
    pcfuse::write_pcf(comp_out, output);
    std::printf("wrote %zu points to %s\n", output.size(), comp_out.c_str());
    return 0;
  }

  if (*gradcheck) {
    const auto cases = pcfuse::run_gradcheck_suite(gc_seed);
    std::printf("%-20s %-12s %s\n", "op", "max_rel_err", "status");
    bool all_pass = true;
    for (const auto& c : cases) {
      std::printf("%-20s %-12.3e %s\n", c.op.c_str(), c.max_rel_err, c.pass ? "PASS" : "FAIL");
      all_pass = all_pass && c.pass;
    }
    std::printf("gradcheck: %zu ops, %s\n", cases.size(), all_pass ? "all PASS" : "FAILURES");
    return 0;  // failures are report entries, not process errors
  }

  if (*complexity_cmd) {
    const pcfuse::TrainConfig cfg = cx_flags.build();
    const auto report = pcfuse::complexity<Real>(cfg.model, cfg.seed);
    std::printf("branches %zu params %llu flops %llu (forward @ %zu input points)\n",
                cfg.model.branches, static_cast<unsigned long long>(report.param_count),
                static_cast<unsigned long long>(report.forward_flops), report.input_points);
    if (!cx_json.empty()) {
      nlohmann::json j{{"branches", cfg.model.branches},
                       {"param_count", report.param_count},
                       {"forward_flops", report.forward_flops},
                       {"input_points", report.input_points}};
      pcfuse::atomic_write_file(cx_json, j.dump(2) + "\n");
    }
    return 0;
  }

  if (*export_plot) {
    const auto cloud = pcfuse::read_cloud<Real>(ep_in);
    pcfuse::write_csv(ep_out, cloud);
    std::printf("wrote %zu points to %s\n", cloud.size(), ep_out.c_str());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const pcfuse::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const pcfuse::ArgumentError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const pcfuse::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const pcfuse::DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
