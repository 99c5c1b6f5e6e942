#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "pisa/errors.hpp"
#include "pisa/experiments.hpp"

using nlohmann::json;
using namespace pisa;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::map<std::string, std::string> fields;  // raw flag text by config key
};

std::string dashed(std::string s) {
  for (char& c : s)
    if (c == '_') c = '-';
  return s;
}

void add_common(CLI::App* cmd, Common& c, bool needs_checkpoint) {
  cmd->add_option("--config", c.config, "JSON run configuration");
  cmd->add_option("--out", c.out, "Output directory");
  if (needs_checkpoint) cmd->add_option("--checkpoint", c.checkpoint, "Checkpoint file")->required();
  const json defaults = RunConfig{};
  for (const auto& [key, value] : defaults.items()) {
    std::string names = "--" + key;
    if (dashed(key) != key) names += ",--" + dashed(key);
    if (key == "d_z") names += ",--dz";
    cmd->add_option_function<std::string>(
        names, [&c, key = key](const std::string& v) { c.fields[key] = v; }, "Override config field " + key);
  }
}

json overrides_from(const Common& c) {
  const json defaults = RunConfig{};
  json o = json::object();
  for (const auto& [key, text] : c.fields) {
    const json& d = defaults.at(key);
    if (d.is_string()) {
      o[key] = text;
      continue;
    }
    json v;
    try {
      v = json::parse(text);
    } catch (const json::parse_error&) {
      throw ConfigError("--" + key + ": expected a number, got '" + text + "'");
    }
    if (!v.is_number()) throw ConfigError("--" + key + ": expected a number, got '" + text + "'");
    o[key] = v;
  }
  return o;
}

std::optional<std::filesystem::path> out_dir(const Common& c) {
  if (c.out.empty()) return std::nullopt;
  return std::filesystem::path(c.out);
}

RunConfig resolve(const Common& c, const std::string& experiment) {
  json o = overrides_from(c);
  if (!o.contains("experiment")) o["experiment"] = experiment;
  return resolve_config(c.config.empty() ? std::nullopt : std::optional<std::string>(c.config), o);
}

void print_report(const ReconstructionReport& r) {
  std::printf("eval_corr %.6f\ncard_acc %.6f\nmse_mean %.6g\n", r.correlation, r.cardinality_accuracy, r.mse_mean);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Permutation-invariant set autoencoder experiments"};
  app.require_subcommand(1);

  Common train_c, eval_c, interp_c, ablate_c, ftrain_c, feval_c;
  auto* train = app.add_subcommand("train", "Train the autoencoder on random sets");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out batch");
  auto* interp = app.add_subcommand("interpolate", "Latent interpolation between random sets");
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every variant");
  auto* ftrain = app.add_subcommand("fusion-train", "Train the fusion autoencoder and filter");
  auto* feval = app.add_subcommand("fusion-eval", "Evaluate fusion on random worlds");
  add_common(train, train_c, false);
  add_common(eval, eval_c, true);
  add_common(interp, interp_c, true);
  add_common(ablate, ablate_c, false);
  add_common(ftrain, ftrain_c, false);
  add_common(feval, feval_c, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const RunConfig cfg = resolve(train_c, "train");
      const TrainResult r = cmd_train(cfg, out_dir(train_c), [](const TrainRow& row) {
        std::fprintf(stderr, "step %zu mse %.6g size %.6g corr %.6f card_acc %.4f\n", row.step, row.loss_mse,
                     row.loss_size, row.eval_corr, row.card_acc);
      });
      print_report(r.final_report);
    } else if (eval->parsed()) {
      print_report(cmd_eval(eval_c.checkpoint, resolve(eval_c, "eval"), out_dir(eval_c)));
    } else if (interp->parsed()) {
      const InterpolationResult r = cmd_interpolate(interp_c.checkpoint, resolve(interp_c, "interpolate"),
                                                    out_dir(interp_c));
      std::printf("trials %zu\nmean_ratio %.6f\n", r.rows.size(), r.mean_ratio);
    } else if (ablate->parsed()) {
      for (const AblationRow& row : cmd_ablate(resolve(ablate_c, "ablate"), out_dir(ablate_c)))
        std::printf("%-10s corr %.6f card_acc %.4f mse %.6g\n", variant_name(row.variant).c_str(),
                    row.report.correlation, row.report.cardinality_accuracy, row.report.mse_mean);
    } else if (ftrain->parsed()) {
      const RunConfig cfg = resolve(ftrain_c, "fusion-train");
      cmd_fusion_train(cfg, out_dir(ftrain_c), [&](std::size_t step, const FusionStepStats& s) {
        if (step % cfg.eval_every == 0)
          std::fprintf(stderr, "step %zu recon %.6g filter %.6g\n", step, s.recon, s.filter_bce);
      });
    } else if (feval->parsed()) {
      const FusionEvalResult r = cmd_fusion_eval(feval_c.checkpoint, resolve(feval_c, "fusion-eval"), out_dir(feval_c));
      std::printf("coverage %.6f\ncorrelation %.6f\nfilter_accuracy %.6f\n", r.final_coverage, r.final_correlation,
                  r.filter_accuracy);
      for (std::size_t l = 0; l < r.coverage_by_layer.size(); ++l)
        std::printf("layer %zu coverage %.6f\n", l, r.coverage_by_layer[l]);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
