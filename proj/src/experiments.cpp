#include "pisa/experiments.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "pisa/checkpoint.hpp"
#include "pisa/data.hpp"

namespace pisa {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config -----------------------------------------------------------------------

#define PISA_CONFIG_FIELDS(X)                                                                                  \
  X(experiment) X(d_x) X(d_z) X(n_max) X(hidden) X(batch_size) X(steps) X(learning_rate) X(eval_batch)          \
  X(eval_every) X(variant) X(grid) X(forced_n) X(trials) X(ablation_steps) X(n_agents) X(n_objects)             \
  X(comm_radius) X(obs_radius) X(fusion_steps) X(fusion_warmup_steps) X(worlds_per_step) X(max_layers)         \
  X(fusion_layers) X(fusion_eval_worlds) X(pairs_per_class) X(filter_threshold) X(filter_hidden)

namespace {

bool non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

}  // namespace

void to_json(json& j, const RunConfig& c) {
  j = json::object();
#define PISA_PUT(name) j[#name] = c.name;
  PISA_CONFIG_FIELDS(PISA_PUT)
#undef PISA_PUT
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
}

void from_json(const json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "seed") {
        if (value.is_null()) {
          c.seed.reset();
        } else if (non_negative_integer(value)) {
          c.seed = value.get<std::uint64_t>();
        } else {
          throw ConfigError("seed must be a non-negative integer");
        }
        continue;
      }
#define PISA_GET(name)                                                                                  \
  if (key == #name) {                                                                                   \
    if constexpr (std::is_same_v<decltype(c.name), std::size_t>) {                                      \
      if (!non_negative_integer(value)) throw ConfigError(#name " must be a non-negative integer");    \
    } else if constexpr (std::is_same_v<decltype(c.name), double>) {                                    \
      if (!value.is_number()) throw ConfigError(#name " must be a number");                             \
    } else {                                                                                            \
      if (!value.is_string()) throw ConfigError(#name " must be a string");                             \
    }                                                                                                   \
    c.name = value.get<decltype(c.name)>();                                                             \
    continue;                                                                                           \
  }
      PISA_CONFIG_FIELDS(PISA_GET)
#undef PISA_GET
    } catch (const json::exception& e) {
      throw ConfigError("config field '" + key + "': " + e.what());
    }
    throw ConfigError("unknown config field '" + key + "'");
  }
}

void RunConfig::validate() const {
  if (!seed) throw ConfigError("seed is required (config field \"seed\" or --seed)");
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(d_x, "d_x");
  positive(d_z, "d_z");
  positive(n_max, "n_max");
  positive(batch_size, "batch_size");
  positive(eval_batch, "eval_batch");
  positive(eval_every, "eval_every");
  positive(grid, "grid");
  positive(trials, "trials");
  positive(n_agents, "n_agents");
  positive(worlds_per_step, "worlds_per_step");
  positive(fusion_eval_worlds, "fusion_eval_worlds");
  positive(filter_hidden, "filter_hidden");
  if (grid < 2) throw ConfigError("grid must be at least 2");
  if (forced_n > n_max) throw ConfigError("forced_n exceeds n_max");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(comm_radius >= 0.0) || !(obs_radius >= 0.0)) throw ConfigError("radii must be non-negative");
  if (!(filter_threshold > 0.0 && filter_threshold < 1.0)) throw ConfigError("filter_threshold must be in (0, 1)");
  try {
    parse_variant(variant);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::uint64_t RunConfig::seed_value() const {
  if (!seed) throw ConfigError("seed is required");
  return *seed;
}

PisaConfig RunConfig::pisa_config() const {
  PisaConfig p;
  p.d_x = d_x;
  p.d_z = d_z;
  p.n_max = n_max;
  p.hidden = hidden;
  return p;
}

WorldConfig RunConfig::world_config() const {
  WorldConfig w;
  w.n_agents = n_agents;
  w.n_objects = n_objects;
  w.comm_radius = comm_radius;
  w.obs_radius = obs_radius;
  return w;
}

Variant RunConfig::parsed_variant() const { return parse_variant(variant); }

RunConfig resolve_config(const std::optional<std::string>& path, const json& overrides) {
  RunConfig c;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config " + *path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + *path + ": " + e.what());
    }
    from_json(j, c);
  }
  if (!overrides.is_null()) from_json(overrides, c);
  c.validate();
  return c;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<ElementSet> eval_sets(const RunConfig& config) {
  return sample_batch(derive_seed(config.seed_value(), kStreamEval), config.eval_batch, config.d_x,
                      {0, config.n_max})
      .sets;
}

// ---- persistence --------------------------------------------------------------------

namespace {

std::string config_text(const RunConfig& config) { return json(config).dump(); }

RunConfig config_from_checkpoint(const Checkpoint& ckpt) {
  RunConfig c;
  try {
    from_json(json::parse(ckpt.config_json), c);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint config echo is not valid JSON: ") + e.what());
  }
  return c;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

// Evaluation settings come from `config`, set shapes from the trained model.
RunConfig with_model_shape(RunConfig config, const RunConfig& trained) {
  config.d_x = trained.d_x;
  config.d_z = trained.d_z;
  config.n_max = trained.n_max;
  config.hidden = trained.hidden;
  config.variant = trained.variant;
  config.validate();
  return config;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
}

}  // namespace

void save_pisa(const fs::path& path, PisaParams<float>& params, const RunConfig& config) {
  save_checkpoint(path.string(), params.named_tensors(), config_text(config));
}

PisaParams<float> load_pisa(const fs::path& path, RunConfig* echoed) {
  const Checkpoint ckpt = load_checkpoint(path.string());
  const RunConfig c = config_from_checkpoint(ckpt);
  PisaParams<float> params = init_pisa<float>(c.pisa_config(), 0, ckpt.find("deepset.inner.0.weight") != nullptr);
  apply_checkpoint(ckpt, params.named_tensors());
  if (echoed) *echoed = c;
  return params;
}

void save_fusion(const fs::path& path, PisaParams<float>& params, FilterParams<float>& filter,
                 const RunConfig& config) {
  NamedTensors<float> all = params.named_tensors();
  for (auto& entry : filter.named_tensors()) all.push_back(entry);
  save_checkpoint(path.string(), all, config_text(config));
}

std::pair<PisaParams<float>, FilterParams<float>> load_fusion(const fs::path& path, RunConfig* echoed) {
  const Checkpoint ckpt = load_checkpoint(path.string());
  const RunConfig c = config_from_checkpoint(ckpt);
  PisaParams<float> params = init_pisa<float>(c.pisa_config(), 0);
  FilterParams<float> filter = init_filter<float>(c.d_x, 0, {c.filter_hidden, c.filter_hidden});
  apply_checkpoint(ckpt, params.named_tensors());
  apply_checkpoint(ckpt, filter.named_tensors());
  if (echoed) *echoed = c;
  return {std::move(params), std::move(filter)};
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& config, const json& extra) {
  json m;
  m["command"] = command;
  m["config"] = config;
  if (!extra.is_null()) m["outputs"] = extra;
  open_out(dir / "manifest.json") << m.dump(2) << "\n";
}

// ---- train / eval -------------------------------------------------------------------

namespace {

TrainRow eval_row(const PisaParams<float>& params, std::span<const ElementSet> eval, Variant variant,
                  std::size_t step, ReconstructionReport* report_out) {
  TrainRow row;
  row.step = step;
  Tape<float> tape(false);
  const LossGraph<float> loss = pisa_loss(params, tape, eval, variant);
  row.loss_mse = loss.mse.value().item();
  row.loss_size = loss.size.value().item();
  const ReconstructionReport report = evaluate_reconstruction(params, eval, variant);
  row.eval_corr = report.correlation;
  row.card_acc = report.cardinality_accuracy;
  if (report_out) *report_out = report;
  return row;
}

void write_train_csv(const fs::path& path, const std::vector<TrainRow>& rows) {
  std::ofstream out = open_out(path);
  out << "step,loss_mse,loss_size,eval_corr,card_acc\n";
  for (const TrainRow& r : rows)
    out << r.step << ',' << r.loss_mse << ',' << r.loss_size << ',' << r.eval_corr << ',' << r.card_acc << '\n';
}

TrainResult train_variant(const RunConfig& config, Variant variant, std::size_t steps,
                          const std::function<void(const TrainRow&)>& on_row) {
  const std::uint64_t seed = config.seed_value();
  TrainResult result{init_pisa<float>(config.pisa_config(), derive_seed(seed, kStreamInit), variant == Variant::kDeepSet),
                     {},
                     {}};
  auto trainable = result.params.trainable();
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  Adam<float> opt(trainable, adam);
  Rng rng(derive_seed(seed, kStreamTrain));
  const std::vector<ElementSet> eval = eval_sets(config);
  const CardinalityRange range{0, config.n_max};

  auto emit = [&](std::size_t step) {
    result.rows.push_back(eval_row(result.params, eval, variant, step, &result.final_report));
    if (on_row) on_row(result.rows.back());
  };
  emit(0);
  std::vector<ElementSet> batch;
  for (std::size_t step = 1; step <= steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < config.batch_size; ++b) batch.push_back(sample_set(rng, config.d_x, range));
    train_step(result.params, opt, std::span<const ElementSet>(batch), variant);
    if (step % config.eval_every == 0 || step == steps) emit(step);
  }
  return result;
}

}  // namespace

TrainResult cmd_train(const RunConfig& config, const std::optional<fs::path>& out,
                      const std::function<void(const TrainRow&)>& on_row) {
  config.validate();
  TrainResult result = train_variant(config, config.parsed_variant(), config.steps, on_row);
  if (out) {
    ensure_dir(*out);
    write_train_csv(*out / "train.csv", result.rows);
    save_pisa(*out / "checkpoint.pisa", result.params, config);
    write_manifest(*out, "train", config,
                   {{"checkpoint", "checkpoint.pisa"},
                    {"metrics", "train.csv"},
                    {"final_eval_corr", result.final_report.correlation},
                    {"final_card_acc", result.final_report.cardinality_accuracy}});
  }
  return result;
}

ReconstructionReport cmd_eval(const fs::path& checkpoint, const RunConfig& config, const std::optional<fs::path>& out) {
  config.validate();
  RunConfig trained;
  const PisaParams<float> params = load_pisa(checkpoint, &trained);
  const std::vector<ElementSet> eval = eval_sets(with_model_shape(config, trained));
  const ReconstructionReport r = evaluate_reconstruction(params, std::span<const ElementSet>(eval), trained.parsed_variant());
  if (out) {
    ensure_dir(*out);
    {
      std::ofstream f = open_out(*out / "eval.csv");
      f << "metric,value\n";
      f << "correlation," << r.correlation << "\nmse_mean," << r.mse_mean << "\nmse_sum," << r.mse_sum
        << "\ncard_acc," << r.cardinality_accuracy << "\n";
    }
    std::ofstream f = open_out(*out / "eval_by_cardinality.csv");
    f << "n,sets,corr,corr_status,mse\n";
    for (const CardinalityRow& row : r.per_cardinality) {
      f << row.n << ',' << row.sets << ',';
      if (row.correlation) {
        f << *row.correlation << ",ok,";
      } else {
        f << ",undefined,";
      }
      f << row.mse << '\n';
    }
    write_manifest(*out, "eval", config,
                   {{"checkpoint", checkpoint.string()}, {"metrics", "eval.csv"}, {"per_cardinality", "eval_by_cardinality.csv"}});
  }
  return r;
}

// ---- interpolation ------------------------------------------------------------------

InterpolationRow interpolation_trial(const PisaParams<float>& params, const ElementSet& x0, const ElementSet& x1,
                                     std::size_t trial, std::size_t grid, std::size_t forced_n,
                                     InterpolationTrace* trace) {
  InterpolationTrace t = interpolate_decode(encode(x0, params), encode(x1, params), grid,
                                            std::optional<std::size_t>(forced_n), params);
  InterpolationRow row;
  row.trial = trial;
  row.arc_length = arc_length(t);
  row.baseline = min_assignment_length(x0, x1);
  if (row.baseline > 0.0) row.ratio = row.arc_length / row.baseline;
  if (trace) *trace = std::move(t);
  return row;
}

InterpolationResult run_interpolation(const PisaParams<float>& params, const RunConfig& config) {
  InterpolationResult result;
  Rng rng(derive_seed(config.seed_value(), kStreamInterp));
  const CardinalityRange fixed{config.forced_n, config.forced_n};
  double ratio_sum = 0.0;
  std::size_t ratio_count = 0;
  for (std::size_t trial = 0; trial < config.trials; ++trial) {
    ElementSet x0 = sample_set(rng, config.d_x, fixed);
    ElementSet x1 = sample_set(rng, config.d_x, fixed);
    const InterpolationRow row = interpolation_trial(params, x0, x1, trial, config.grid, config.forced_n,
                                                     trial == 0 ? &result.example : nullptr);
    if (row.ratio) {
      ratio_sum += *row.ratio;
      ++ratio_count;
    }
    result.rows.push_back(row);
    result.inputs.emplace_back(std::move(x0), std::move(x1));
  }
  result.mean_ratio = ratio_count ? ratio_sum / static_cast<double>(ratio_count) : 0.0;
  return result;
}

InterpolationResult cmd_interpolate(const fs::path& checkpoint, const RunConfig& config,
                                    const std::optional<fs::path>& out) {
  config.validate();
  RunConfig trained;
  const PisaParams<float> params = load_pisa(checkpoint, &trained);
  InterpolationResult result = run_interpolation(params, with_model_shape(config, trained));
  if (out) {
    ensure_dir(*out);
    {
      std::ofstream f = open_out(*out / "interpolate.csv");
      f << "trial,arc_length,baseline,ratio,status\n";
      for (const InterpolationRow& r : result.rows) {
        f << r.trial << ',' << r.arc_length << ',' << r.baseline << ',';
        if (r.ratio) {
          f << *r.ratio << ",ok\n";
        } else {
          f << ",zero_baseline\n";
        }
      }
    }
    std::ofstream f = open_out(*out / "interpolate_trace.csv");
    f << "alpha,slot";
    for (std::size_t c = 0; c < config.d_x; ++c) f << ",x" << c;
    f << '\n';
    for (std::size_t k = 0; k < result.example.sets.size(); ++k) {
      const ElementSet& s = result.example.sets[k];
      for (std::size_t i = 0; i < s.size(); ++i) {
        f << result.example.alphas[k] << ',' << i + 1;
        for (double v : s[i]) f << ',' << v;
        f << '\n';
      }
    }
    write_manifest(*out, "interpolate", config,
                   {{"checkpoint", checkpoint.string()},
                    {"metrics", "interpolate.csv"},
                    {"trace", "interpolate_trace.csv"},
                    {"mean_ratio", result.mean_ratio}});
  }
  return result;
}

// ---- ablation ------------------------------------------------------------------------

std::vector<AblationRow> cmd_ablate(const RunConfig& config, const std::optional<fs::path>& out) {
  config.validate();
  std::vector<AblationRow> rows;
  for (Variant v : {Variant::kPisa, Variant::kNoRho, Variant::kHungarian, Variant::kDeepSet}) {
    rows.push_back({v, train_variant(config, v, config.ablation_steps, {}).final_report});
  }
  if (out) {
    ensure_dir(*out);
    std::ofstream f = open_out(*out / "ablate.csv");
    f << "variant,eval_corr,card_acc,mse_mean\n";
    for (const AblationRow& r : rows)
      f << variant_name(r.variant) << ',' << r.report.correlation << ',' << r.report.cardinality_accuracy << ','
        << r.report.mse_mean << '\n';
    write_manifest(*out, "ablate", config, {{"metrics", "ablate.csv"}});
  }
  return rows;
}

// ---- fusion --------------------------------------------------------------------------

FusionTrainResult cmd_fusion_train(const RunConfig& config, const std::optional<fs::path>& out,
                                   const std::function<void(std::size_t, const FusionStepStats&)>& on_step) {
  config.validate();
  if (config.d_x != kObjectDim) throw ConfigError("fusion objects have d_x = " + std::to_string(kObjectDim));
  if (config.n_objects > config.n_max) throw ConfigError("n_objects exceeds n_max");
  const std::uint64_t seed = config.seed_value();
  FusionTrainResult r{init_pisa<float>(config.pisa_config(), derive_seed(seed, kStreamInit)),
                      init_filter<float>(config.d_x, derive_seed(seed, kStreamFusionInit),
                                         {config.filter_hidden, config.filter_hidden})};
  FusionTrainConfig fc;
  fc.world = config.world_config();
  fc.warmup_steps = config.fusion_warmup_steps;
  fc.warmup_batch = config.batch_size;
  fc.steps = config.fusion_steps;
  fc.worlds_per_step = config.worlds_per_step;
  fc.max_layers = config.max_layers;
  fc.pairs_per_class = config.pairs_per_class;
  fc.adam.learning_rate = config.learning_rate;
  fc.seed = derive_seed(seed, kStreamFusionTrain);

  std::optional<std::ofstream> csv;
  if (out) {
    ensure_dir(*out);
    csv = open_out(*out / "fusion_train.csv");
    *csv << "step,stage,loss_recon,loss_filter,sets,pairs\n";
  }
  train_fusion(r.params, r.filter, fc, [&](std::size_t step, const FusionStepStats& s) {
    if (csv && (step % config.eval_every == 0 || step == fc.warmup_steps + fc.steps)) {
      *csv << step << ',' << (step <= fc.warmup_steps ? "warmup" : "rollout") << ',' << s.recon << ','
           << s.filter_bce << ',' << s.sets << ',' << s.pairs << '\n';
    }
    if (on_step) on_step(step, s);
  });
  if (out) {
    csv->close();
    save_fusion(*out / "fusion.pisa", r.params, r.filter, config);
    write_manifest(*out, "fusion-train", config, {{"checkpoint", "fusion.pisa"}, {"metrics", "fusion_train.csv"}});
  }
  return r;
}

namespace {

std::optional<double> try_correlation(std::span<const double> truth, std::span<const double> pred) {
  try {
    return correlation(truth, pred);
  } catch (const ContractError&) {
  } catch (const UndefinedError&) {
  }
  return std::nullopt;
}

void append_provenance(const TaggedSet& belief, const World& world, std::vector<double>& truth,
                       std::vector<double>& pred) {
  for (std::size_t i = 0; i < belief.size(); ++i) {
    if (belief.ids[i] < 0) continue;
    const auto obj = world.objects[static_cast<std::size_t>(belief.ids[i])];
    for (std::size_t c = 0; c < obj.size(); ++c) {
      truth.push_back(obj[c]);
      pred.push_back(belief.set[i][c]);
    }
  }
}

}  // namespace

FusionEvalResult evaluate_fusion(const PisaParams<float>& params, const FilterParams<float>& filter,
                                 const RunConfig& config) {
  FusionEvalResult result;
  Rng rng(derive_seed(config.seed_value(), kStreamFusionEval));
  const WorldConfig wc = config.world_config();
  const UnionOptions options{config.filter_threshold, config.n_max};
  std::vector<double> pooled_truth, pooled_pred;
  double cov_sum = 0.0, correct = 0.0;
  std::size_t cov_count = 0, pair_count = 0;
  std::vector<double> layer_sum;
  std::vector<std::size_t> layer_count;
  for (std::size_t w = 0; w < config.fusion_eval_worlds; ++w) {
    const World world = generate_world(rng, wc, config.n_max);
    const std::size_t layers = config.fusion_layers ? config.fusion_layers : comm_diameter(world);
    const auto rollout = fusion_rollout(world, layers, params, filter, options);
    for (std::size_t a = 0; a < rollout.size(); ++a) {
      for (const AgentBelief<float>& b : rollout[a]) {
        std::vector<double> truth, pred;
        append_provenance(b.belief, world, truth, pred);
        const FusionEvalRow row{w, a, b.layer, coverage(b.belief.set, world), try_correlation(truth, pred)};
        if (layer_sum.size() <= b.layer) {
          layer_sum.resize(b.layer + 1, 0.0);
          layer_count.resize(b.layer + 1, 0);
        }
        layer_sum[b.layer] += row.coverage;
        ++layer_count[b.layer];
        result.rows.push_back(row);
      }
      const TaggedSet& last = rollout[a].back().belief;
      cov_sum += coverage(last.set, world);
      ++cov_count;
      append_provenance(last, world, pooled_truth, pooled_pred);
    }
    const LabeledPairs pairs = sample_filter_pairs(rollout, rng, config.pairs_per_class);
    if (!pairs.labels.empty()) {
      correct += filter_accuracy(pairs, filter, config.filter_threshold) * static_cast<double>(pairs.labels.size());
      pair_count += pairs.labels.size();
    }
  }
  result.final_coverage = cov_count ? cov_sum / static_cast<double>(cov_count) : 0.0;
  result.filter_accuracy = pair_count ? correct / static_cast<double>(pair_count) : 0.0;
  result.final_correlation = try_correlation(pooled_truth, pooled_pred).value_or(0.0);
  for (std::size_t l = 0; l < layer_sum.size(); ++l)
    result.coverage_by_layer.push_back(layer_sum[l] / static_cast<double>(layer_count[l]));
  return result;
}

FusionEvalResult cmd_fusion_eval(const fs::path& checkpoint, const RunConfig& config,
                                 const std::optional<fs::path>& out) {
  config.validate();
  RunConfig trained;
  const auto [params, filter] = load_fusion(checkpoint, &trained);
  FusionEvalResult r = evaluate_fusion(params, filter, with_model_shape(config, trained));
  if (out) {
    ensure_dir(*out);
    {
      std::ofstream f = open_out(*out / "fusion_eval.csv");
      f << "world,agent,layer,coverage,corr,status\n";
      for (const FusionEvalRow& row : r.rows) {
        f << row.world << ',' << row.agent << ',' << row.layer << ',' << row.coverage << ',';
        if (row.corr) {
          f << *row.corr << ",ok\n";
        } else {
          f << ",undefined\n";
        }
      }
    }
    write_manifest(*out, "fusion-eval", config,
                   {{"checkpoint", checkpoint.string()},
                    {"metrics", "fusion_eval.csv"},
                    {"final_coverage", r.final_coverage},
                    {"final_correlation", r.final_correlation},
                    {"filter_accuracy", r.filter_accuracy},
                    {"coverage_by_layer", r.coverage_by_layer}});
  }
  return r;
}

}  // namespace pisa
