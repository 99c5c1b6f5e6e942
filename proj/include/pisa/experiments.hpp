#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pisa/fusion.hpp"
#include "pisa/metrics.hpp"
#include "pisa/model.hpp"
#include "pisa/training.hpp"

namespace pisa {

struct RunConfig {
  std::string experiment = "train";
  std::optional<std::uint64_t> seed;
  std::size_t d_x = 6;
  std::size_t d_z = 96;
  std::size_t n_max = 16;
  std::size_t hidden = 0;
  std::size_t batch_size = 64;
  std::size_t steps = 50000;
  double learning_rate = 1e-3;
  std::size_t eval_batch = 1024;
  std::size_t eval_every = 5000;
  std::string variant = "pisa";

  // interpolation
  std::size_t grid = 100;
  std::size_t forced_n = 8;
  std::size_t trials = 100;

  // ablation
  std::size_t ablation_steps = 5000;

  // fusion
  std::size_t n_agents = 7;
  std::size_t n_objects = 10;
  double comm_radius = 0.5;
  double obs_radius = 0.35;
  std::size_t fusion_steps = 10000;
  std::size_t fusion_warmup_steps = 20000;
  std::size_t worlds_per_step = 2;
  std::size_t max_layers = 6;
  std::size_t fusion_layers = 0;  // 0: each world's comm-graph diameter
  std::size_t fusion_eval_worlds = 50;
  std::size_t pairs_per_class = 64;
  double filter_threshold = 0.5;
  std::size_t filter_hidden = 64;

  // Throws ConfigError on a missing seed or non-positive sizes.
  void validate() const;
  std::uint64_t seed_value() const;
  PisaConfig pisa_config() const;
  WorldConfig world_config() const;
  Variant parsed_variant() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Unknown keys are rejected; missing keys keep their defaults.
void from_json(const nlohmann::json& j, RunConfig& c);

// Overlays `overrides` onto the file at `path` (if any) and validates.
RunConfig resolve_config(const std::optional<std::string>& path, const nlohmann::json& overrides);

// Derived seeds so that each stream is independent of the others.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
inline constexpr std::uint64_t kStreamInit = 1, kStreamTrain = 2, kStreamEval = 3, kStreamInterp = 4,
                               kStreamFusionInit = 5, kStreamFusionTrain = 6, kStreamFusionEval = 7;

std::vector<ElementSet> eval_sets(const RunConfig& config);

// ---- persistence ----------------------------------------------------------------

void save_pisa(const std::filesystem::path& path, PisaParams<float>& params, const RunConfig& config);
// Rebuilds parameters from the config echoed in the checkpoint.
PisaParams<float> load_pisa(const std::filesystem::path& path, RunConfig* echoed = nullptr);

void save_fusion(const std::filesystem::path& path, PisaParams<float>& params, FilterParams<float>& filter,
                 const RunConfig& config);
std::pair<PisaParams<float>, FilterParams<float>> load_fusion(const std::filesystem::path& path,
                                                              RunConfig* echoed = nullptr);

void write_manifest(const std::filesystem::path& dir, const std::string& command, const RunConfig& config,
                    const nlohmann::json& extra = {});

// ---- commands -------------------------------------------------------------------

struct TrainRow {
  std::size_t step = 0;
  double loss_mse = 0.0;
  double loss_size = 0.0;
  double eval_corr = 0.0;
  double card_acc = 0.0;
};

struct TrainResult {
  PisaParams<float> params;
  std::vector<TrainRow> rows;
  ReconstructionReport final_report;
};

// Train on streamed random sets; rows at step 0, every eval_every steps and
// at the last step. Writes train.csv, checkpoint.pisa and manifest.json when
// `out` is set.
TrainResult cmd_train(const RunConfig& config, const std::optional<std::filesystem::path>& out,
                      const std::function<void(const TrainRow&)>& on_row = {});

ReconstructionReport cmd_eval(const std::filesystem::path& checkpoint, const RunConfig& config,
                              const std::optional<std::filesystem::path>& out);

struct InterpolationRow {
  std::size_t trial = 0;
  double arc_length = 0.0;
  double baseline = 0.0;
  std::optional<double> ratio;  // absent when the baseline is zero
};

InterpolationRow interpolation_trial(const PisaParams<float>& params, const ElementSet& x0, const ElementSet& x1,
                                     std::size_t trial, std::size_t grid, std::size_t forced_n,
                                     InterpolationTrace* trace = nullptr);

struct InterpolationResult {
  std::vector<InterpolationRow> rows;
  std::vector<std::pair<ElementSet, ElementSet>> inputs;
  InterpolationTrace example;  // trial 0, every grid point
  double mean_ratio = 0.0;
};

InterpolationResult run_interpolation(const PisaParams<float>& params, const RunConfig& config);
InterpolationResult cmd_interpolate(const std::filesystem::path& checkpoint, const RunConfig& config,
                                    const std::optional<std::filesystem::path>& out);

struct AblationRow {
  Variant variant;
  ReconstructionReport report;
};

std::vector<AblationRow> cmd_ablate(const RunConfig& config, const std::optional<std::filesystem::path>& out);

struct FusionTrainResult {
  PisaParams<float> params;
  FilterParams<float> filter;
};

FusionTrainResult cmd_fusion_train(const RunConfig& config, const std::optional<std::filesystem::path>& out,
                                   const std::function<void(std::size_t, const FusionStepStats&)>& on_step = {});

struct FusionEvalRow {
  std::size_t world = 0;
  std::size_t agent = 0;
  std::size_t layer = 0;
  double coverage = 0.0;
  std::optional<double> corr;
};

struct FusionEvalResult {
  std::vector<FusionEvalRow> rows;
  double filter_accuracy = 0.0;
  double final_coverage = 0.0;     // mean over agents and worlds at the last layer
  double final_correlation = 0.0;  // pooled over every final belief
  std::vector<double> coverage_by_layer;  // mean over worlds whose rollout reached the layer
};

FusionEvalResult evaluate_fusion(const PisaParams<float>& params, const FilterParams<float>& filter,
                                 const RunConfig& config);
FusionEvalResult cmd_fusion_eval(const std::filesystem::path& checkpoint, const RunConfig& config,
                                 const std::optional<std::filesystem::path>& out);

}  // namespace pisa
