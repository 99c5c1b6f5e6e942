// Runs the end-to-end acceptance checks and prints one PASS/FAIL line each.
// Usage: acceptance [--only 1,5,8] [--workdir DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grad_check.hpp"
#include "oracles.hpp"
#include "pisa/experiments.hpp"
#include "pisa/hungarian.hpp"

using namespace pisa;
using pisa::testing::brute_force_assignment;
using pisa::testing::grad_check;
using pisa::testing::random_set;
using pisa::testing::random_tensor;
using pisa::testing::shuffled;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

ElementSet concat(const ElementSet& a, const ElementSet& b) {
  ElementSet out(a.dim());
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(a[i]);
  for (std::size_t i = 0; i < b.size(); ++i) out.push_back(b[i]);
  return out;
}

struct MatchedError {
  double max = std::numeric_limits<double>::infinity();
  double mean = std::numeric_limits<double>::infinity();
};

// Per-feature absolute error after optimal matching; infinite when sizes differ.
MatchedError matched_error(const ElementSet& a, const ElementSet& b) {
  if (a.size() != b.size()) return {};
  if (a.empty()) return {0.0, 0.0};
  CostMatrix cost(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) cost(i, j) = squared_distance(a[i], b[j]);
  const Assignment m = hungarian(cost);
  MatchedError e{0.0, 0.0};
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t c = 0; c < a.dim(); ++c) {
      const double d = std::abs(a[i][c] - b[m.mapping[i]][c]);
      e.max = std::max(e.max, d);
      e.mean += d;
    }
  e.mean /= static_cast<double>(a.size() * a.dim());
  return e;
}

RunConfig base_config() {
  RunConfig c;
  c.seed = 2024;
  return c;
}

struct Shared {
  fs::path workdir;
  std::optional<TrainResult> trained96;

  const TrainResult& model96() {
    if (!trained96) {
      RunConfig c = base_config();
      c.d_z = 96;
      trained96 = cmd_train(c, workdir / "train_dz96");
    }
    return *trained96;
  }
};

Outcome permutation_invariance() {
  const PisaParams<float> params = init_pisa<float>(PisaConfig{}, 11);
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const ElementSet x = random_set(rng, 1 + t % 16, 6);
    worst = std::max(worst, max_abs_diff(encode(x, params).z, encode(shuffled(x, rng), params).z));
  }
  return {worst <= 1e-6, fmt("max |dz| %.3g over 1000 sets", worst)};
}

Outcome additivity() {
  const PisaParams<float> params = init_pisa<float>(PisaConfig{}, 12);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> size(0, 16);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n0 = size(rng);
    const std::size_t n1 = std::uniform_int_distribution<std::size_t>(0, 16 - n0)(rng);
    const ElementSet x0 = random_set(rng, n0, 6), x1 = random_set(rng, n1, 6);
    const auto z0 = encode(x0, params), z1 = encode(x1, params, n0);
    const auto zu = encode_no_rho(concat(key_ordered(x0, params), key_ordered(x1, params)), params);
    std::vector<float> sum(z0.z.size());
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = z0.z[i] + z1.z[i];
    worst = std::max(worst, max_abs_diff(sum, zu.z));
  }
  return {worst <= 1e-5, fmt("max |dz| %.3g over 1000 pairs", worst)};
}

Outcome gradients() {
  std::mt19937_64 rng(3);
  double worst = 0.0;
  std::size_t instances = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> w = random_tensor(Shape{3, 4}, rng), a = random_tensor(Shape{5, 4}, rng);
    Tensor<double> b = random_tensor(Shape{3}, rng), x = random_tensor(Shape{4}, rng);
    Tensor<double> c = random_tensor(Shape{5, 3}, rng);
    Tensor<double> labels(Shape{5, 1});
    for (std::size_t i = 0; i < 5; ++i) labels[i] = static_cast<double>((i + trial) % 2);
    const std::vector<std::size_t> offsets{0, 2, 2, 5};
    const std::vector<std::size_t> index{2, 0, 2, 1};
    auto build = [&](Tape<double>& t) {
      auto W = t.leaf(w), A = t.leaf(a), B = t.leaf(b), X = t.leaf(x), C = t.leaf(c);
      auto h = add_bias(matmul_t(A, W), B);
      auto g = ew_mul(relu(h), sigmoid(C));
      auto s = segment_sum(sub(g, scale(C, 0.3)), offsets);
      auto r = gather_rows(s, index);
      auto v = matvec(W, X);
      std::vector<Var<double>> parts{add(v, B), v};
      auto red = reduce_sum<double>(t, parts, Shape{3});
      auto cat = concat_cols(h, C);
      auto logits = matmul_t(cat, t.constant(Tensor<double>::matrix(1, 6, {0.3, -0.2, 0.5, 0.1, 0.7, -0.4})));
      return add(add(mean(square(r)), sum(square(red))), bce_with_logits(logits, labels));
    };
    worst = std::max(worst, grad_check(build, {&w, &a, &b, &x, &c}).max_rel_error);
    ++instances;
  }
  PisaConfig cfg;
  cfg.d_x = 2;
  cfg.d_z = 4;
  cfg.n_max = 4;
  cfg.hidden = 5;
  cfg.size_hidden = 3;
  for (Variant v : {Variant::kPisa, Variant::kNoRho, Variant::kHungarian, Variant::kDeepSet}) {
    for (int trial = 0; trial < 6; ++trial) {
      auto params = init_pisa<double>(cfg, 500 + trial, v == Variant::kDeepSet);
      const std::vector<ElementSet> sets{random_set(rng, 1 + trial % 4, 2), random_set(rng, 3, 2), ElementSet(2)};
      worst = std::max(worst, grad_check([&](Tape<double>& t) { return pisa_loss(params, t, sets, v).total; },
                                         params.trainable())
                                  .max_rel_error);
      ++instances;
    }
  }
  return {worst < 1e-4, fmt("max rel err %.3g", worst) + " over " + std::to_string(instances) + " instances"};
}

Outcome hungarian_oracle() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> value(0, 99);
  std::size_t mismatches = 0, total = 0;
  for (std::size_t n = 2; n <= 7; ++n) {
    for (int t = 0; t < 200; ++t) {
      CostMatrix cost(n, n);
      std::vector<std::vector<double>> rows(n, std::vector<double>(n));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) cost(i, j) = rows[i][j] = value(rng);
      if (hungarian(cost).cost != brute_force_assignment(rows)) ++mismatches;
      ++total;
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in " + std::to_string(total) + " matrices"};
}

Outcome reconstruction(Shared& shared, std::size_t d_z, double min_corr, double min_card) {
  ReconstructionReport r;
  if (d_z == 96) {
    r = shared.model96().final_report;
  } else {
    RunConfig c = base_config();
    c.d_z = d_z;
    r = cmd_train(c, shared.workdir / ("train_dz" + std::to_string(d_z))).final_report;
  }
  return {r.correlation >= min_corr && r.cardinality_accuracy >= min_card,
          fmt("corr %.5f", r.correlation) + fmt(" card_acc %.4f", r.cardinality_accuracy)};
}

Outcome ablation(Shared& shared) {
  RunConfig c = base_config();
  const auto rows = cmd_ablate(c, shared.workdir / "ablate");
  double pisa = 0, no_rho = 0, hung = 0, deep = 0;
  for (const AblationRow& r : rows) {
    const double v = r.report.correlation;
    switch (r.variant) {
      case Variant::kPisa: pisa = v; break;
      case Variant::kNoRho: no_rho = v; break;
      case Variant::kHungarian: hung = v; break;
      case Variant::kDeepSet: deep = v; break;
    }
  }
  const bool ok = pisa >= no_rho - 0.02 && pisa >= hung + 0.05 && pisa >= deep + 0.05;
  return {ok, fmt("pisa %.4f", pisa) + fmt(" no_rho %.4f", no_rho) + fmt(" hungarian %.4f", hung) +
                  fmt(" deepset %.4f", deep)};
}

Outcome interpolation(Shared& shared) {
  const RunConfig c = base_config();
  const PisaParams<float>& params = shared.model96().params;
  const InterpolationResult r = run_interpolation(params, c);
  bool finite = true, endpoints = true;
  for (std::size_t t = 0; t < r.rows.size(); ++t) {
    finite = finite && std::isfinite(r.rows[t].arc_length);
    InterpolationTrace trace;
    interpolation_trial(params, r.inputs[t].first, r.inputs[t].second, t, c.grid, c.forced_n, &trace);
    const ElementSet d0 = decode(encode(r.inputs[t].first, params), params, c.forced_n);
    const ElementSet d1 = decode(encode(r.inputs[t].second, params), params, c.forced_n);
    endpoints = endpoints && trace.sets.front() == d0 && trace.sets.back() == d1;
  }
  const bool ok = finite && endpoints && r.rows.size() == 100 && r.mean_ratio <= 5.0;
  return {ok, fmt("mean ratio %.4f", r.mean_ratio) + (finite ? " finite" : " NON-FINITE") +
                  (endpoints ? " endpoints exact" : " ENDPOINT MISMATCH")};
}

Outcome fusion(Shared& shared) {
  const RunConfig c = base_config();
  const FusionTrainResult trained = cmd_fusion_train(c, shared.workdir / "fusion");
  const FusionEvalResult r = evaluate_fusion(trained.params, trained.filter, c);
  const bool ok = r.final_coverage >= 0.95 && r.final_correlation >= 0.99 && r.filter_accuracy >= 0.99;
  std::string layers;
  for (double v : r.coverage_by_layer) layers += fmt(" %.3f", v);
  return {ok, fmt("coverage %.4f", r.final_coverage) + fmt(" corr %.5f", r.final_correlation) +
                  fmt(" filter acc %.4f", r.filter_accuracy) + "; coverage by layer" + layers};
}

Outcome latent_algebra(Shared& shared) {
  const PisaParams<float>& params = shared.model96().params;
  std::mt19937_64 rng(10);
  double restore = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const ElementSet x = random_set(rng, t % 16, 6), e = random_set(rng, 1, 6);
    const auto z = encode(x, params);
    const auto removed = latent_remove(latent_insert(z, e[0], params), x.size() + 1, e[0], params);
    restore = std::max(restore, max_abs_diff(removed.z, z.z));
  }
  std::size_t good = 0, good_mean = 0;
  for (int t = 0; t < 200; ++t) {
    const ElementSet x = random_set(rng, t % 16, 6), e = random_set(rng, 1, 6);
    const ElementSet inserted = decode(latent_insert(encode(x, params), e[0], params), params);
    const ElementSet direct = decode(encode(concat(x, e), params), params);
    const MatchedError err = matched_error(inserted, direct);
    if (err.max < 1e-2) ++good;
    if (err.mean < 1e-2) ++good_mean;
  }
  const double frac = good / 200.0;
  return {restore <= 1e-5 && frac >= 0.95,
          fmt("restore err %.3g", restore) + fmt("; insert matches enlarged encode in %.1f%% of 200", 100 * frac) +
              fmt(" (mean-error reading %.1f%%)", good_mean / 2.0)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(Shared& shared) {
  RunConfig c = base_config();
  c.steps = 600;
  c.eval_every = 200;
  c.eval_batch = 256;
  cmd_train(c, shared.workdir / "det_a");
  cmd_train(c, shared.workdir / "det_b");
  bool same = true;
  for (const char* f : {"checkpoint.pisa", "train.csv", "manifest.json"}) {
    const std::string a = slurp(shared.workdir / "det_a" / f), b = slurp(shared.workdir / "det_b" / f);
    same = same && !a.empty() && a == b;
  }
  return {same, same ? "checkpoints and CSVs bitwise identical" : "outputs differ"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path workdir = fs::temp_directory_path() / "pisa_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
    } else if (arg == "--workdir" && i + 1 < argc) {
      workdir = argv[++i];
    } else {
      std::fprintf(stderr, "usage: acceptance [--only 1,2,...] [--workdir DIR]\n");
      return 2;
    }
  }
  fs::create_directories(workdir);
  Shared shared{workdir, std::nullopt};

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"permutation invariance", permutation_invariance},
      {"additivity", additivity},
      {"gradient correctness", gradients},
      {"hungarian oracle", hungarian_oracle},
      {"reconstruction d_z=96", [&] { return reconstruction(shared, 96, 0.99, 0.99); }},
      {"reconstruction d_z=48", [&] { return reconstruction(shared, 48, 0.85, 0.0); }},
      {"ablation ordering", [&] { return ablation(shared); }},
      {"interpolation smoothness", [&] { return interpolation(shared); }},
      {"fusion", [&] { return fusion(shared); }},
      {"latent algebra", [&] { return latent_algebra(shared); }},
      {"determinism", [&] { return determinism(shared); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %s: %s (%s; %.1fs)\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
