#include "pisa/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace pisa {

void PisaConfig::validate() const {
  if (d_x < 1 || d_z < 1 || n_max < 1) throw ConfigError("PisaConfig: d_x, d_z and n_max must be >= 1");
  if (size_hidden < 1) throw ConfigError("PisaConfig: size_hidden must be >= 1");
}

template <typename T>
NamedTensors<T> PisaParams<T>::named_tensors() {
  NamedTensors<T> out;
  rho.collect("rho", out);
  psi_key.collect("psi_key", out);
  psi_val.collect("psi_val", out);
  lambda_enc.collect("lambda_enc", out);
  phi_key.collect("phi_key", out);
  phi_dec.collect("phi_dec", out);
  lambda_dec.collect("lambda_dec", out);
  if (deepset) {
    deepset->inner.collect("deepset_inner", out);
    deepset->outer.collect("deepset_outer", out);
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>*> PisaParams<T>::trainable() {
  std::vector<Tensor<T>*> out;
  for (auto& [name, t] : named_tensors()) {
    if (t->requires_grad()) out.push_back(t);
  }
  return out;
}

template <typename T>
PisaParams<T> init_pisa(const PisaConfig& config, std::uint64_t seed, bool with_deepset) {
  config.validate();
  Rng rng(seed);
  const std::size_t h = config.hidden_width();
  PisaParams<T> p;
  p.config = config;
  p.rho = init_linear<T>(config.d_x, 1, false, rng);
  p.rho.weight.set_requires_grad(false);
  p.psi_key = init_linear<T>(config.n_max, config.d_z, false, rng);
  p.psi_val = init_mlp<T>({config.d_x, h, config.d_z}, rng);
  p.lambda_enc = init_linear<T>(1, config.d_z, false, rng);
  p.phi_key = init_linear<T>(config.n_max, config.d_z, false, rng);
  p.phi_dec = init_mlp<T>({config.d_z, h, config.d_x}, rng);
  p.lambda_dec = init_mlp<T>({config.d_z, config.size_hidden, 1}, rng);
  if (with_deepset) {
    p.deepset = DeepSetEncoder<T>{init_mlp<T>({config.d_x, h, config.d_z}, rng),
                                  init_mlp<T>({config.d_z, h, config.d_z}, rng)};
  }
  return p;
}

std::vector<std::size_t> KeyAssignment::order() const {
  std::vector<std::size_t> out(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) out.at(keys[i] - 1) = i;
  return out;
}

template <typename T>
double rho_project(const PisaParams<T>& params, std::span<const double> element) {
  const Tensor<T>& w = params.rho.weight;
  if (element.size() != w.cols()) throw DimensionError("rho: element dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < element.size(); ++i) acc += static_cast<double>(w[i]) * element[i];
  return acc;
}

template <typename T>
KeyAssignment assign_keys(const ElementSet& set, const PisaParams<T>& params) {
  const std::size_t n = set.size();
  if (n > params.config.n_max) {
    throw CapacityError("assign_keys: " + std::to_string(n) + " elements exceed n_max " +
                        std::to_string(params.config.n_max));
  }
  std::vector<double> proj(n);
  for (std::size_t i = 0; i < n; ++i) proj[i] = rho_project(params, set[i]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (proj[a] != proj[b]) return proj[a] < proj[b];
    const auto ra = set[a], rb = set[b];
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  KeyAssignment ka;
  ka.keys.resize(n);
  for (std::size_t rank = 0; rank < n; ++rank) ka.keys[order[rank]] = rank + 1;
  return ka;
}

template <typename T>
ElementSet key_ordered(const ElementSet& set, const PisaParams<T>& params) {
  return set.permuted(assign_keys(set, params).order());
}

template <typename T>
Tensor<T> stack_rows(std::span<const ElementSet> sets, std::size_t d_x) {
  std::size_t rows = 0;
  for (const ElementSet& s : sets) {
    if (s.dim() != d_x && !s.empty()) throw DimensionError("stack_rows: element dimension mismatch");
    rows += s.size();
  }
  Tensor<T> out(Shape{rows, d_x});
  std::size_t k = 0;
  for (const ElementSet& s : sets)
    for (double v : s.flat()) out[k++] = static_cast<T>(v);
  return out;
}

namespace {

template <typename T>
Tensor<T> onehot_rows(std::span<const std::size_t> slots, std::size_t width) {
  Tensor<T> out(Shape{slots.size(), width});
  for (std::size_t i = 0; i < slots.size(); ++i) out.at(i, slots[i]) = T(1);
  return out;
}

template <typename T>
Var<T> cardinality_term(const PisaParams<T>& params, Tape<T>& tape, std::span<const ElementSet> sets) {
  Tensor<T> counts(Shape{sets.size(), 1});
  for (std::size_t s = 0; s < sets.size(); ++s) counts[s] = static_cast<T>(sets[s].size());
  return params.lambda_enc.forward(tape, tape.constant(std::move(counts)));
}

template <typename T>
LatentState<T> single_latent(Var<T> z, std::optional<std::vector<std::size_t>> keys) {
  const Tensor<T>& v = z.value();
  return {std::vector<T>(v.data().begin(), v.data().end()), std::move(keys)};
}

template <typename T>
Var<T> latent_var(Tape<T>& tape, const LatentState<T>& z, const PisaParams<T>& params) {
  if (z.z.size() != params.config.d_z) throw DimensionError("latent size does not match d_z");
  return tape.constant(Tensor<T>(Shape{1, z.z.size()}, z.z));
}

}  // namespace

template <typename T>
Var<T> encode_key_ordered(const PisaParams<T>& params, Tape<T>& tape, std::span<const ElementSet> sets,
                          std::span<const std::size_t> key_offsets) {
  const PisaConfig& cfg = params.config;
  if (!key_offsets.empty() && key_offsets.size() != sets.size()) {
    throw ContractError("encode: one key offset per set required");
  }
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> slots;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const std::size_t off = key_offsets.empty() ? 0 : key_offsets[s];
    if (sets[s].size() + off > cfg.n_max) {
      throw CapacityError("encode: keys up to " + std::to_string(sets[s].size() + off) + " exceed n_max " +
                          std::to_string(cfg.n_max));
    }
    for (std::size_t j = 0; j < sets[s].size(); ++j) slots.push_back(j + off);
    offsets.push_back(offsets.back() + sets[s].size());
  }
  Var<T> x = tape.constant(stack_rows<T>(sets, cfg.d_x));
  Var<T> keys = params.psi_key.forward(tape, tape.constant(onehot_rows<T>(slots, cfg.n_max)));
  Var<T> vals = mlp_forward(params.psi_val, tape, x);
  Var<T> pooled = segment_sum(ew_mul(keys, vals), std::span<const std::size_t>(offsets));
  return add(pooled, cardinality_term(params, tape, sets));
}

template <typename T>
Var<T> encode_deepset_batch(const PisaParams<T>& params, Tape<T>& tape, std::span<const ElementSet> sets) {
  if (!params.deepset) throw ContractError("encode_deepset: parameters carry no Deep Sets encoder");
  std::vector<std::size_t> offsets{0};
  for (const ElementSet& s : sets) offsets.push_back(offsets.back() + s.size());
  Var<T> x = tape.constant(stack_rows<T>(sets, params.config.d_x));
  Var<T> pooled = segment_sum(mlp_forward(params.deepset->inner, tape, x), std::span<const std::size_t>(offsets));
  return add(mlp_forward(params.deepset->outer, tape, pooled), cardinality_term(params, tape, sets));
}

template <typename T>
Var<T> cardinality_head(const PisaParams<T>& params, Tape<T>& tape, Var<T> z) {
  return mlp_forward(params.lambda_dec, tape, z);
}

template <typename T>
Var<T> decode_slots(const PisaParams<T>& params, Tape<T>& tape, Var<T> z, std::span<const std::size_t> counts) {
  const PisaConfig& cfg = params.config;
  if (z.value().rows() != counts.size()) throw DimensionError("decode: one count per latent required");
  std::vector<std::size_t> slots, owner;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    if (counts[s] > cfg.n_max) {
      throw CapacityError("decode: " + std::to_string(counts[s]) + " slots exceed n_max " +
                          std::to_string(cfg.n_max));
    }
    for (std::size_t j = 0; j < counts[s]; ++j) {
      slots.push_back(j);
      owner.push_back(s);
    }
  }
  Var<T> queries = params.phi_key.forward(tape, tape.constant(onehot_rows<T>(slots, cfg.n_max)));
  Var<T> hidden = ew_mul(gather_rows(z, std::span<const std::size_t>(owner)), queries);
  return mlp_forward(params.phi_dec, tape, hidden);
}

template <typename T>
LatentState<T> encode(const ElementSet& set, const PisaParams<T>& params, std::size_t key_offset) {
  if (set.size() + key_offset > params.config.n_max) {
    throw CapacityError("encode: keys exceed n_max");
  }
  const ElementSet ordered = key_ordered(set, params);
  Tape<T> tape(false);
  const std::size_t off[] = {key_offset};
  Var<T> z = encode_key_ordered(params, tape, std::span<const ElementSet>(&ordered, 1), off);
  std::vector<std::size_t> keys(set.size());
  std::iota(keys.begin(), keys.end(), key_offset + 1);
  return single_latent(z, std::optional(std::move(keys)));
}

template <typename T>
LatentState<T> encode_no_rho(const ElementSet& set, const PisaParams<T>& params) {
  Tape<T> tape(false);
  Var<T> z = encode_key_ordered(params, tape, std::span<const ElementSet>(&set, 1));
  std::vector<std::size_t> keys(set.size());
  std::iota(keys.begin(), keys.end(), 1);
  return single_latent(z, std::optional(std::move(keys)));
}

template <typename T>
LatentState<T> encode_deepset(const ElementSet& set, const PisaParams<T>& params) {
  Tape<T> tape(false);
  return single_latent(encode_deepset_batch(params, tape, std::span<const ElementSet>(&set, 1)),
                       std::optional<std::vector<std::size_t>>());
}

template <typename T>
T raw_cardinality(const LatentState<T>& z, const PisaParams<T>& params) {
  Tape<T> tape(false);
  return cardinality_head(params, tape, latent_var(tape, z, params)).value()[0];
}

template <typename T>
std::size_t predict_cardinality(const LatentState<T>& z, const PisaParams<T>& params) {
  const double raw = static_cast<double>(raw_cardinality(z, params));
  const double n_max = static_cast<double>(params.config.n_max);
  if (!(raw > 0.0)) return 0;  // negative or NaN
  return static_cast<std::size_t>(std::min(std::round(raw), n_max));
}

template <typename T>
ElementSet decode(const LatentState<T>& z, const PisaParams<T>& params, std::optional<std::size_t> forced_n) {
  const std::size_t n = forced_n ? *forced_n : predict_cardinality(z, params);
  if (n > params.config.n_max) throw CapacityError("decode: forced_n exceeds n_max");
  Tape<T> tape(false);
  const std::size_t counts[] = {n};
  const Tensor<T>& out = decode_slots(params, tape, latent_var(tape, z, params), counts).value();
  std::vector<double> flat(out.data().begin(), out.data().end());
  return ElementSet(params.config.d_x, std::move(flat));
}

namespace {

template <typename T>
std::vector<T> keyed_contribution(std::span<const double> element, std::size_t key, const PisaParams<T>& params) {
  ElementSet single(params.config.d_x);
  single.push_back(element);
  Tape<T> tape(false);
  const std::size_t off[] = {key - 1};
  const Tensor<T>& z = encode_key_ordered(params, tape, std::span<const ElementSet>(&single, 1), off).value();
  return {z.data().begin(), z.data().end()};
}

template <typename T>
const std::vector<std::size_t>& require_keys(const LatentState<T>& z) {
  if (!z.occupied_keys) throw ContractError("latent state carries no key bookkeeping");
  return *z.occupied_keys;
}

}  // namespace

template <typename T>
LatentState<T> latent_insert(const LatentState<T>& z, std::span<const double> element, const PisaParams<T>& params) {
  const auto& keys = require_keys(z);
  if (keys.size() >= params.config.n_max) throw CapacityError("latent_insert: every key is occupied");
  std::size_t key = 1;
  for (std::size_t k : keys) {
    if (k == key) ++key;
    else if (k > key) break;
  }
  const std::vector<T> delta = keyed_contribution(element, key, params);
  LatentState<T> out = z;
  for (std::size_t i = 0; i < out.z.size(); ++i) out.z[i] += delta[i];
  out.occupied_keys->insert(std::lower_bound(out.occupied_keys->begin(), out.occupied_keys->end(), key), key);
  return out;
}

template <typename T>
LatentState<T> latent_remove(const LatentState<T>& z, std::size_t key, std::span<const double> known,
                             const PisaParams<T>& params) {
  const auto& keys = require_keys(z);
  auto it = std::lower_bound(keys.begin(), keys.end(), key);
  if (it == keys.end() || *it != key) throw KeyError("latent_remove: key " + std::to_string(key) + " is not occupied");
  const std::vector<T> delta = keyed_contribution(known, key, params);
  LatentState<T> out = z;
  for (std::size_t i = 0; i < out.z.size(); ++i) out.z[i] -= delta[i];
  out.occupied_keys->erase(out.occupied_keys->begin() + (it - keys.begin()));
  return out;
}

#define PISA_INSTANTIATE_MODEL(T)                                                                        \
  template struct PisaParams<T>;                                                                         \
  template PisaParams<T> init_pisa<T>(const PisaConfig&, std::uint64_t, bool);                           \
  template double rho_project<T>(const PisaParams<T>&, std::span<const double>);                         \
  template KeyAssignment assign_keys<T>(const ElementSet&, const PisaParams<T>&);                        \
  template ElementSet key_ordered<T>(const ElementSet&, const PisaParams<T>&);                           \
  template Tensor<T> stack_rows<T>(std::span<const ElementSet>, std::size_t);                            \
  template Var<T> encode_key_ordered<T>(const PisaParams<T>&, Tape<T>&, std::span<const ElementSet>,     \
                                        std::span<const std::size_t>);                                   \
  template Var<T> encode_deepset_batch<T>(const PisaParams<T>&, Tape<T>&, std::span<const ElementSet>);  \
  template Var<T> cardinality_head<T>(const PisaParams<T>&, Tape<T>&, Var<T>);                           \
  template Var<T> decode_slots<T>(const PisaParams<T>&, Tape<T>&, Var<T>, std::span<const std::size_t>); \
  template LatentState<T> encode<T>(const ElementSet&, const PisaParams<T>&, std::size_t);               \
  template LatentState<T> encode_no_rho<T>(const ElementSet&, const PisaParams<T>&);                     \
  template LatentState<T> encode_deepset<T>(const ElementSet&, const PisaParams<T>&);                    \
  template T raw_cardinality<T>(const LatentState<T>&, const PisaParams<T>&);                            \
  template std::size_t predict_cardinality<T>(const LatentState<T>&, const PisaParams<T>&);              \
  template ElementSet decode<T>(const LatentState<T>&, const PisaParams<T>&, std::optional<std::size_t>); \
  template LatentState<T> latent_insert<T>(const LatentState<T>&, std::span<const double>,               \
                                           const PisaParams<T>&);                                        \
  template LatentState<T> latent_remove<T>(const LatentState<T>&, std::size_t, std::span<const double>,  \
                                           const PisaParams<T>&);

PISA_INSTANTIATE_MODEL(float)
PISA_INSTANTIATE_MODEL(double)

}  // namespace pisa
