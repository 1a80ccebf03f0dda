// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Each test case prints one pass/fail line; run the
// whole binary or one criterion via --test-case=criterion-N*.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "pcfuse/pcfuse.hpp"

using namespace pcfuse;
namespace fs = std::filesystem;

namespace {

void report(int criterion, const char* name, bool pass, const std::string& detail) {
  std::printf("criterion %d (%s): %s%s%s\n", criterion, name, pass ? "PASS" : "FAIL",
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
}

fs::path work_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("pcfuse_acceptance_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// The desk-scale default configuration: three branches over 256-point
// inputs, levels (128, 64, 32) at widths (64, 128, 256).
ModelConfig desk_config() { return ModelConfig{}; }

ModelConfig small_config(std::size_t branches) {
  ModelConfig cfg;
  cfg.branches = branches;
  cfg.input_points = 64;
  cfg.levels = {{32, 16}, {16, 32}, {8, 32}};
  cfg.knn_k = 8;
  cfg.heads = 4;
  cfg.fusion_width = 512;
  cfg.n_miss = 32;
  cfg.n_out = 64;
  cfg.decoder_layers = 1;
  cfg.decoder_width = 32;
  cfg.decoder_heads = 4;
  cfg.pos_hidden = 8;
  cfg.pt_bias_hidden = 8;
  return cfg;
}

// Ablation-probe configuration (criterion 7): two branches over 128-point
// inputs, CPU-sized so 10 training runs fit the budget.
ModelConfig probe_config() {
  ModelConfig cfg;
  cfg.branches = 2;
  cfg.input_points = 128;
  cfg.levels = {{64, 32}, {32, 64}, {16, 128}};
  cfg.knn_k = 8;
  cfg.heads = 4;
  cfg.fusion_width = 512;
  cfg.n_miss = 64;
  cfg.n_out = 128;
  cfg.decoder_layers = 2;
  cfg.decoder_width = 64;
  cfg.decoder_heads = 4;
  cfg.pos_hidden = 16;
  cfg.pt_bias_hidden = 8;
  return cfg;
}

PointCloud<double> random_cloud_d(Rng& rng, std::size_t n) {
  PointCloud<double> c;
  c.points.resize(n);
  for (auto& p : c.points) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  return c;
}

// Brute-force references, written independently of the library kernels.
std::vector<std::size_t> fps_oracle(const std::vector<Vec3<double>>& pts, std::size_t m,
                                    std::size_t start) {
  std::vector<std::size_t> picked{start};
  std::vector<bool> used(pts.size(), false);
  used[start] = true;
  while (picked.size() < m) {
    double best = -1;
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (used[i]) continue;
      double nearest = std::numeric_limits<double>::max();
      for (std::size_t s : picked) {
        const double dx = pts[i][0] - pts[s][0];
        const double dy = pts[i][1] - pts[s][1];
        const double dz = pts[i][2] - pts[s][2];
        nearest = std::min(nearest, dx * dx + dy * dy + dz * dz);
      }
      if (nearest > best) {
        best = nearest;
        best_i = i;
      }
    }
    picked.push_back(best_i);
    used[best_i] = true;
  }
  return picked;
}

double chamfer_oracle(const PointCloud<double>& a, const PointCloud<double>& b) {
  auto one_way = [](const PointCloud<double>& from, const PointCloud<double>& to) {
    double total = 0;
    for (const auto& p : from.points) {
      double best = std::numeric_limits<double>::max();
      for (const auto& q : to.points) {
        const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      total += best;
    }
    return total / static_cast<double>(from.size());
  };
  return one_way(a, b) + one_way(b, a);
}

struct TrainRun {
  double epoch1_cd = 0;
  double final_cd = 0;
};

TrainRun run_training(CompletionModel<float>& model, const std::vector<Sample<float>>& data,
                      const TrainConfig& cfg) {
  auto out = train_model<float>(model, data, cfg);
  return TrainRun{out.log.front().mean_loss, out.log.back().mean_loss};
}

}  // namespace

TEST_CASE("criterion-1-gradient-suite") {
  const auto t0 = std::chrono::steady_clock::now();
  bool all = true;
  double worst = 0;
  std::string worst_op;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto& c : run_gradcheck_suite(seed)) {
      if (c.max_rel_err > worst) {
        worst = c.max_rel_err;
        worst_op = c.op;
      }
      all = all && c.pass;
    }
  }
  const double secs = seconds_since(t0);
  char detail[160];
  std::snprintf(detail, sizeof(detail), "20 seeds x 22 ops, worst rel err %.3e (%s), %.1fs",
                worst, worst_op.c_str(), secs);
  const bool pass = all && secs <= 120.0;
  report(1, "gradient suite", pass, detail);
  CHECK(pass);
}

TEST_CASE("criterion-2-oracle-equivalence") {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  bool fps_ok = true, knn_ok = true;
  double worst_cd_rel = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 2 + rng.index(63);
    auto cloud = random_cloud_d(rng, n);
    const std::size_t m = 1 + rng.index(n);
    const std::size_t start = rng.index(n);
    if (fps(cloud.points, m, start) != fps_oracle(cloud.points, m, start)) fps_ok = false;

    const std::size_t k = 1 + rng.index(n);
    auto got = knn(cloud.points, cloud.points, k);
    for (std::size_t q = 0; q < n && knn_ok; ++q) {
      std::vector<std::pair<double, std::size_t>> all;
      for (std::size_t r = 0; r < n; ++r) {
        const double dx = cloud.points[q][0] - cloud.points[r][0];
        const double dy = cloud.points[q][1] - cloud.points[r][1];
        const double dz = cloud.points[q][2] - cloud.points[r][2];
        all.emplace_back(dx * dx + dy * dy + dz * dz, r);
      }
      std::sort(all.begin(), all.end());
      for (std::size_t j = 0; j < k; ++j)
        if (got.at(q, j) != all[j].second) knn_ok = false;
    }

    auto other = random_cloud_d(rng, 1 + rng.index(64));
    const double got_cd = chamfer_distance(cloud, other);
    const double want_cd = chamfer_oracle(cloud, other);
    worst_cd_rel = std::max(worst_cd_rel,
                            std::abs(got_cd - want_cd) / std::max(1e-30, std::abs(want_cd)));
  }
  const double secs = seconds_since(t0);
  const bool pass = fps_ok && knn_ok && worst_cd_rel <= 1e-9 && secs <= 60.0;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "200 clouds: fps %s, knn %s, chamfer worst rel %.3e, %.1fs",
                fps_ok ? "exact" : "MISMATCH", knn_ok ? "exact" : "MISMATCH", worst_cd_rel, secs);
  report(2, "oracle equivalence", pass, detail);
  CHECK(pass);
}

TEST_CASE("criterion-3-loss-identities") {
  Rng rng(333);
  bool identity_ok = true, symmetry_ok = true, f_identity_ok = true;
  double worst_perm = 0, worst_scale = 0;
  for (int rep = 0; rep < 100; ++rep) {
    auto a = random_cloud_d(rng, 2 + rng.index(48));
    auto b = random_cloud_d(rng, 2 + rng.index(48));

    if (chamfer_distance(a, a) != 0.0) identity_ok = false;
    if (f_score(a, a, rng.uniform(1e-6, 1.0)) != 1.0) f_identity_ok = false;
    if (chamfer_distance(a, b) != chamfer_distance(b, a)) symmetry_ok = false;

    const double base = chamfer_distance(a, b);
    auto a2 = a;
    auto b2 = b;
    rng.shuffle(a2.points);
    rng.shuffle(b2.points);
    worst_perm = std::max(worst_perm, std::abs(chamfer_distance(a2, b2) - base) /
                                          std::max(1.0, std::abs(base)));

    const double s = rng.uniform(0.2, 4.0);
    auto as = a;
    auto bs = b;
    for (auto& p : as.points)
      for (int c = 0; c < 3; ++c) p[c] *= s;
    for (auto& p : bs.points)
      for (int c = 0; c < 3; ++c) p[c] *= s;
    worst_scale = std::max(worst_scale, std::abs(chamfer_distance(as, bs) - s * s * base) /
                                            std::max(1e-30, s * s * base));
  }
  const bool pass =
      identity_ok && symmetry_ok && f_identity_ok && worst_perm <= 1e-9 && worst_scale <= 1e-7;
  char detail[200];
  std::snprintf(detail, sizeof(detail),
                "100 pairs: CD(Y,Y)=0 %s, symmetry %s, F(Y,Y)=1 %s, perm %.3e, scale %.3e",
                identity_ok ? "ok" : "VIOLATED", symmetry_ok ? "ok" : "VIOLATED",
                f_identity_ok ? "ok" : "VIOLATED", worst_perm, worst_scale);
  report(3, "loss identities", pass, detail);
  CHECK(pass);
}

TEST_CASE("criterion-4-fusion-counting") {
  Rng rng(44);
  bool pass = true;
  std::string detail;
  for (std::size_t b : {2, 3, 4}) {
    auto cfg = small_config(b);
    CompletionModel<float> model(cfg);
    model.init(100 + b);
    Ctx<float> ctx(nullptr);
    PointCloud<float> cloud;
    for (std::size_t i = 0; i < cfg.input_points; ++i)
      cloud.points.push_back({static_cast<float>(rng.uniform(-1, 1)),
                              static_cast<float>(rng.uniform(-1, 1)),
                              static_cast<float>(rng.uniform(-1, 1))});
    std::vector<const PointCloud<float>*> inputs(b, &cloud);
    auto fused = model.fuse(ctx, model.encode_branches(ctx, inputs));
    const std::size_t expect = b * (b - 1) * 3;
    if (fused.token_sets.size() != expect) pass = false;
    for (const auto& ts : fused.token_sets)
      if (ts.tokens.shape()[1] != 512) pass = false;
    detail += "B=" + std::to_string(b) + ":" + std::to_string(fused.token_sets.size()) + " ";
  }
  report(4, "fusion counting", pass, detail + "(expected 6/18/36 at width 512)");
  CHECK(pass);
}

TEST_CASE("criterion-5-complexity-ordering") {
  auto two = desk_config();
  two.branches = 2;
  auto three = desk_config();
  three.branches = 3;
  auto four = desk_config();
  four.branches = 4;
  const auto p2 = complexity<float>(two).param_count;
  const auto p3 = complexity<float>(three).param_count;
  const auto p4 = complexity<float>(four).param_count;
  const bool pass = p2 < p3 && p3 < p4;
  char detail[120];
  std::snprintf(detail, sizeof(detail), "params %llu < %llu < %llu",
                static_cast<unsigned long long>(p2), static_cast<unsigned long long>(p3),
                static_cast<unsigned long long>(p4));
  report(5, "complexity ordering", pass, detail);
  CHECK(pass);
}

TEST_CASE("criterion-6-overfit-probe") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = work_dir("overfit");
  GenConfig gen;
  gen.count = 8;
  gen.points = 256;
  gen.keep_ratio = 0.5;
  gen.seed = 1;
  generate_dataset<float>(gen, dir / "data");
  auto data = load_dataset<float>(dir / "data" / "manifest.json");

  TrainConfig cfg;
  cfg.model = desk_config();  // B = 3, N = 256 inputs, N_out = 256
  cfg.epochs = 200;
  cfg.batch_size = 1;
  cfg.seed = 1;

  CompletionModel<float> model(cfg.model);
  const auto run = run_training(model, data, cfg);
  const auto metrics = evaluate_model(model, data, 0.01);
  const double secs = seconds_since(t0);

  const bool cd_ok = run.final_cd <= 0.2 * run.epoch1_cd;
  const bool f_ok = metrics.f_score_at_tau >= 0.8;
  const bool time_ok = secs <= 1200.0;
  const bool pass = cd_ok && f_ok && time_ok;
  char detail[200];
  std::snprintf(detail, sizeof(detail),
                "epoch-1 CD %.4g, final CD %.4g (ratio %.3f <= 0.2: %s), F@0.01 %.3f >= 0.8: %s, "
                "%.0fs",
                run.epoch1_cd, run.final_cd, run.final_cd / run.epoch1_cd, cd_ok ? "yes" : "NO",
                metrics.f_score_at_tau, f_ok ? "yes" : "NO", secs);
  report(6, "overfit probe", pass, detail);
  CHECK(pass);
}

TEST_CASE("criterion-7-ablation-direction") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = work_dir("ablation");
  GenConfig gen;
  gen.count = 64;
  gen.points = 128;
  gen.keep_ratio = 0.5;
  gen.seed = 7;
  generate_dataset<float>(gen, dir / "data");
  auto data = load_dataset<float>(dir / "data" / "manifest.json");

  auto run_mode = [&](FusionMode mode, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.model = probe_config();
    cfg.model.fusion_mode = mode;
    cfg.epochs = 20;
    cfg.batch_size = 8;
    cfg.seed = seed;
    CompletionModel<float> model(cfg.model);
    return run_training(model, data, cfg).final_cd;
  };

  double single_sum = 0, double_sum = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double s = run_mode(FusionMode::single_direction, seed);
    const double d = run_mode(FusionMode::double_direction, seed);
    single_sum += s;
    double_sum += d;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "[s%.4g d%.4g] ", s, d);
    per_seed += buf;
  }
  const double secs = seconds_since(t0);
  const bool pass = double_sum / 5.0 <= single_sum / 5.0 && secs <= 3600.0;
  char detail[256];
  std::snprintf(detail, sizeof(detail),
                "mean final CD: single %.5g, double %.5g %s, %.0fs",
                single_sum / 5.0, double_sum / 5.0, per_seed.c_str(), secs);
  report(7, "ablation direction (double <= single)", pass, detail);
  CHECK(pass);
}

TEST_CASE("criterion-8-determinism") {
  const auto dir = work_dir("determinism");
  GenConfig gen;
  gen.count = 4;
  gen.points = 64;
  gen.seed = 11;
  generate_dataset<float>(gen, dir / "data");
  auto data = load_dataset<float>(dir / "data" / "manifest.json");

  TrainConfig cfg;
  cfg.model = small_config(2);
  cfg.model.input_points = 32;
  cfg.model.levels = {{16, 8}, {8, 16}, {4, 16}};
  cfg.model.knn_k = 4;
  cfg.model.heads = 2;
  cfg.model.decoder_heads = 2;
  cfg.model.fusion_width = 64;
  cfg.model.n_miss = 16;
  cfg.model.n_out = 32;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.seed = 99;

  auto run_once = [&](const fs::path& out) {
    CompletionModel<float> model(cfg.model);
    Adam<float> adam;
    auto result = train_model<float>(model, data, cfg, nullptr, &adam);
    save_checkpoint(out / "checkpoint.pcck",
                    make_checkpoint(model, cfg, adam, cfg.epochs, result.rng_state));
    atomic_write_file(out / "train_log.csv", train_log_csv(result.log));
    const auto metrics = evaluate_model(model, data, 0.001);
    atomic_write_file(out / "eval.csv", metrics.to_csv());
    atomic_write_file(out / "eval.json", metrics.to_json().dump(2) + "\n");
  };
  fs::create_directories(dir / "run1");
  fs::create_directories(dir / "run2");
  run_once(dir / "run1");
  run_once(dir / "run2");

  bool identical = true;
  for (const char* f : {"checkpoint.pcck", "checkpoint.pcck.json", "train_log.csv", "eval.csv",
                        "eval.json"})
    if (read_file(dir / "run1" / f) != read_file(dir / "run2" / f)) identical = false;

  // checkpoint round trip reproduces forward outputs bitwise
  auto ck = load_checkpoint<float>(dir / "run1" / "checkpoint.pcck");
  auto rebuilt = model_from_checkpoint(ck);
  CompletionModel<float> fresh(cfg.model);
  Adam<float> adam;
  auto result = train_model<float>(fresh, data, cfg, nullptr, &adam);
  (void)result;
  bool bitwise_forward = true;
  for (const auto& s : data)
    if (fresh.complete(s.partial).points != rebuilt.complete(s.partial).points)
      bitwise_forward = false;

  const bool pass = identical && bitwise_forward;
  report(8, "determinism",
         pass,
         std::string("artifact files ") + (identical ? "byte-identical" : "DIFFER") +
             ", round-trip forward " + (bitwise_forward ? "bitwise" : "DIFFERS"));
  CHECK(pass);
}

TEST_CASE("criterion-9-end-to-end-contract") {
  auto cfg = small_config(2);
  CompletionModel<float> model(cfg);
  model.init(909);
  Rng rng(910);
  bool size_ok = true, verbatim_ok = true;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = cfg.input_points + rng.index(64);
    PointCloud<float> partial;
    for (std::size_t i = 0; i < n; ++i)
      partial.points.push_back({static_cast<float>(rng.uniform(-1, 1)),
                                static_cast<float>(rng.uniform(-1, 1)),
                                static_cast<float>(rng.uniform(-1, 1))});
    auto missing = model.predict_missing(partial);
    auto out = model.complete(partial);
    if (out.size() != cfg.n_out) size_ok = false;
    std::set<std::array<float, 3>> unioned(partial.points.begin(), partial.points.end());
    unioned.insert(missing.points.begin(), missing.points.end());
    for (const auto& p : out.points)
      if (unioned.count(p) == 0) verbatim_ok = false;
  }
  const bool pass = size_ok && verbatim_ok;
  report(9, "end-to-end contract",
         pass,
         std::string("100 inputs: |output| == N_out ") + (size_ok ? "ok" : "VIOLATED") +
             ", union membership " + (verbatim_ok ? "verbatim" : "VIOLATED"));
  CHECK(pass);
}
