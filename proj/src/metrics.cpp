#include "pisa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pisa/hungarian.hpp"
#include "pisa/losses.hpp"

namespace pisa {

double correlation(std::span<const double> truth, std::span<const double> pred) {
  if (truth.size() != pred.size()) throw ContractError("correlation: lengths differ");
  if (truth.size() < 2) throw ContractError("correlation: need at least two values");
  const double n = static_cast<double>(truth.size());
  double mt = 0.0, mp = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    mt += truth[i];
    mp += pred[i];
  }
  mt /= n;
  mp /= n;
  double stt = 0.0, spp = 0.0, stp = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double dt = truth[i] - mt, dp = pred[i] - mp;
    stt += dt * dt;
    spp += dp * dp;
    stp += dt * dp;
  }
  if (stt == 0.0 || spp == 0.0) throw UndefinedError("correlation: zero variance");
  return std::clamp(stp / std::sqrt(stt * spp), -1.0, 1.0);
}

double cardinality_accuracy(std::span<const std::size_t> truth, std::span<const std::size_t> predicted) {
  if (truth.size() != predicted.size()) throw ContractError("cardinality_accuracy: lengths differ");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

template <typename T>
Reconstruction reconstruct(const PisaParams<T>& params, std::span<const ElementSet> sets, Variant variant) {
  Reconstruction rec;
  rec.targets = decoder_targets(params, sets, variant);
  if (sets.empty()) return rec;
  Tape<T> tape(false);
  Var<T> z = encode_for_variant(params, tape, rec.targets, variant);
  const Tensor<T>& raw = cardinality_head(params, tape, z).value();
  const double n_max = static_cast<double>(params.config.n_max);
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const double r = static_cast<double>(raw[s]);
    rec.predicted_n.push_back(r > 0.0 ? static_cast<std::size_t>(std::min(std::round(r), n_max)) : 0);
  }
  const Tensor<T>& out = decode_slots(params, tape, z, rec.predicted_n).value();
  const std::size_t d = params.config.d_x;
  std::size_t row = 0;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    ElementSet decoded(d);
    std::vector<double> buf(d);
    for (std::size_t i = 0; i < rec.predicted_n[s]; ++i, ++row) {
      for (std::size_t c = 0; c < d; ++c) buf[c] = static_cast<double>(out.at(row, c));
      decoded.push_back(buf);
    }
    rec.outputs.push_back(std::move(decoded));
  }
  return rec;
}

namespace {

// (target index, output index) pairs used for scoring.
std::vector<std::pair<std::size_t, std::size_t>> match_slots(const ElementSet& target, const ElementSet& output,
                                                             bool min_cost) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  const std::size_t m = std::min(target.size(), output.size());
  if (!min_cost) {
    for (std::size_t i = 0; i < m; ++i) pairs.emplace_back(i, i);
    return pairs;
  }
  // Pad to square with zero-cost dummies; only real-real pairs are kept.
  const std::size_t k = std::max(target.size(), output.size());
  CostMatrix cost(k, k);
  for (std::size_t r = 0; r < output.size(); ++r)
    for (std::size_t c = 0; c < target.size(); ++c) cost(r, c) = squared_distance(output[r], target[c]);
  const Assignment a = hungarian(cost);
  for (std::size_t r = 0; r < output.size(); ++r) {
    if (a.mapping[r] < target.size()) pairs.emplace_back(a.mapping[r], r);
  }
  return pairs;
}

std::optional<double> try_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2) return std::nullopt;
  try {
    return correlation(a, b);
  } catch (const UndefinedError&) {
    return std::nullopt;
  }
}

}  // namespace

template <typename T>
ReconstructionReport evaluate_reconstruction(const PisaParams<T>& params, std::span<const ElementSet> sets,
                                             Variant variant) {
  const Reconstruction rec = reconstruct(params, sets, variant);
  const std::size_t n_max = params.config.n_max;
  ReconstructionReport report;
  std::vector<double> all_t, all_p;
  std::vector<std::vector<double>> by_n_t(n_max + 1), by_n_p(n_max + 1);
  std::vector<double> by_n_sq(n_max + 1, 0.0);
  std::vector<std::size_t> by_n_sets(n_max + 1, 0), by_n_scalars(n_max + 1, 0);
  std::vector<std::size_t> truth_n;
  double sq_total = 0.0;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const ElementSet& target = rec.targets[s];
    const ElementSet& output = rec.outputs[s];
    const std::size_t n = target.size();
    truth_n.push_back(n);
    ++by_n_sets[n];
    double set_sq = 0.0;
    for (auto [ti, oi] : match_slots(target, output, variant == Variant::kHungarian)) {
      for (std::size_t c = 0; c < target.dim(); ++c) {
        const double t = target[ti][c], p = output[oi][c];
        all_t.push_back(t);
        all_p.push_back(p);
        by_n_t[n].push_back(t);
        by_n_p[n].push_back(p);
        set_sq += (t - p) * (t - p);
        ++by_n_scalars[n];
      }
    }
    sq_total += set_sq;
    by_n_sq[n] += set_sq;
  }
  report.correlation = all_t.size() >= 2 ? correlation(all_t, all_p) : 0.0;
  report.mse_mean = all_t.empty() ? 0.0 : sq_total / static_cast<double>(all_t.size());
  report.mse_sum = sets.empty() ? 0.0 : sq_total / static_cast<double>(sets.size());
  report.cardinality_accuracy = cardinality_accuracy(truth_n, rec.predicted_n);
  for (std::size_t n = 0; n <= n_max; ++n) {
    CardinalityRow row;
    row.n = n;
    row.sets = by_n_sets[n];
    row.correlation = try_correlation(by_n_t[n], by_n_p[n]);
    row.mse = by_n_scalars[n] ? by_n_sq[n] / static_cast<double>(by_n_scalars[n]) : 0.0;
    report.per_cardinality.push_back(row);
  }
  return report;
}

template <typename T>
InterpolationTrace interpolate_decode(const LatentState<T>& z0, const LatentState<T>& z1, std::size_t grid,
                                      std::optional<std::size_t> forced_n, const PisaParams<T>& params) {
  if (grid < 2) throw ContractError("interpolate_decode: grid needs at least two points");
  if (z0.z.size() != z1.z.size()) throw DimensionError("interpolate_decode: latent sizes differ");
  InterpolationTrace trace;
  trace.forced_n = forced_n;
  for (std::size_t k = 0; k < grid; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(grid - 1);
    LatentState<T> z;
    z.z.resize(z0.z.size());
    // Endpoints are taken verbatim so they decode identically to z0 / z1.
    if (k == 0) {
      z.z = z0.z;
    } else if (k + 1 == grid) {
      z.z = z1.z;
    } else {
      const T a = static_cast<T>(alpha);
      for (std::size_t i = 0; i < z.z.size(); ++i) z.z[i] = (T(1) - a) * z0.z[i] + a * z1.z[i];
    }
    trace.alphas.push_back(alpha);
    trace.sets.push_back(decode(z, params, forced_n));
  }
  return trace;
}

double arc_length(const InterpolationTrace& trace) {
  if (trace.sets.empty()) return 0.0;
  const std::size_t n = trace.sets.front().size();
  for (const ElementSet& s : trace.sets) {
    if (s.size() != n) {
      throw ContractError("arc_length: cardinality drifts along the trace" +
                          std::string(trace.forced_n ? "" : " (decode with forced_n)"));
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < trace.sets.size(); ++k)
    for (std::size_t i = 0; i < n; ++i) total += euclidean_distance(trace.sets[k][i], trace.sets[k + 1][i]);
  return total;
}

double min_assignment_length(const ElementSet& x0, const ElementSet& x1) {
  if (x0.size() != x1.size()) throw ContractError("min_assignment_length: set sizes differ");
  if (x0.empty()) return 0.0;
  CostMatrix cost(x0.size(), x1.size());
  for (std::size_t r = 0; r < x0.size(); ++r)
    for (std::size_t c = 0; c < x1.size(); ++c) cost(r, c) = euclidean_distance(x0[r], x1[c]);
  return hungarian(cost).cost;
}

#define PISA_INSTANTIATE_METRICS(T)                                                                         \
  template Reconstruction reconstruct<T>(const PisaParams<T>&, std::span<const ElementSet>, Variant);       \
  template ReconstructionReport evaluate_reconstruction<T>(const PisaParams<T>&, std::span<const ElementSet>, \
                                                           Variant);                                        \
  template InterpolationTrace interpolate_decode<T>(const LatentState<T>&, const LatentState<T>&,           \
                                                    std::size_t, std::optional<std::size_t>,                \
                                                    const PisaParams<T>&);

PISA_INSTANTIATE_METRICS(float)
PISA_INSTANTIATE_METRICS(double)

}  // namespace pisa
