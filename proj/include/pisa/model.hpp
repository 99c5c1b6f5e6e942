#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pisa/autodiff.hpp"
#include "pisa/element_set.hpp"
#include "pisa/nn.hpp"

namespace pisa {

struct PisaConfig {
  std::size_t d_x = 6;
  std::size_t d_z = 96;
  std::size_t n_max = 16;
  // Hidden width of psi_val / phi_dec; 0 selects max(2 * d_z, 64).
  std::size_t hidden = 0;
  std::size_t size_hidden = 64;

  std::size_t hidden_width() const { return hidden ? hidden : std::max<std::size_t>(2 * d_z, 64); }
  void validate() const;
};

// Deep Sets encoder used by the ablation: outer(sum_i inner(x_i)).
template <typename T>
struct DeepSetEncoder {
  Mlp<T> inner;
  Mlp<T> outer;
};

template <typename T>
struct PisaParams {
  PisaConfig config;
  LinearLayer<T> rho;         // d_x -> 1, frozen
  LinearLayer<T> psi_key;     // onehot(n_max) -> d_z, no bias
  Mlp<T> psi_val;             // d_x -> H -> d_z
  LinearLayer<T> lambda_enc;  // n -> n * w, weight [d_z x 1], no bias
  LinearLayer<T> phi_key;     // onehot(n_max) -> d_z, no bias
  Mlp<T> phi_dec;             // d_z -> H -> d_x
  Mlp<T> lambda_dec;          // d_z -> 64 -> 1
  std::optional<DeepSetEncoder<T>> deepset;

  // Every tensor, including the frozen rho (checkpoint order).
  NamedTensors<T> named_tensors();
  // Tensors updated by the optimizer; rho is excluded.
  std::vector<Tensor<T>*> trainable();
};

template <typename T>
PisaParams<T> init_pisa(const PisaConfig& config, std::uint64_t seed, bool with_deepset = false);

// Key k (1-based) for every input element.
struct KeyAssignment {
  std::vector<std::size_t> keys;

  // order()[k - 1] is the input index that holds key k.
  std::vector<std::size_t> order() const;
};

template <typename T>
struct LatentState {
  std::vector<T> z;
  // Sorted 1-based keys in use; bookkeeping for insert/remove only.
  std::optional<std::vector<std::size_t>> occupied_keys;
};

// Scalar projection through the frozen rho layer.
template <typename T>
double rho_project(const PisaParams<T>& params, std::span<const double> element);

// Ranks of the rho projections (ascending) become keys 1..n; ties fall back to
// lexicographic order of the raw features.
template <typename T>
KeyAssignment assign_keys(const ElementSet& set, const PisaParams<T>& params);

// The set rearranged so that row j holds the element with key j + 1.
template <typename T>
ElementSet key_ordered(const ElementSet& set, const PisaParams<T>& params);

// ---- batched graph builders (training and batched inference) ---------------

// Rows of every set stacked into [N x d_x].
template <typename T>
Tensor<T> stack_rows(std::span<const ElementSet> sets, std::size_t d_x);

// Keyed encoder over sets already in key order: row j of set s is bound to key
// j + 1 + key_offsets[s] (offsets default to 0). Returns z as [S x d_z].
template <typename T>
Var<T> encode_key_ordered(const PisaParams<T>& params, Tape<T>& tape, std::span<const ElementSet> sets,
                          std::span<const std::size_t> key_offsets = {});

// Deep Sets ablation encoder, [S x d_z].
template <typename T>
Var<T> encode_deepset_batch(const PisaParams<T>& params, Tape<T>& tape, std::span<const ElementSet> sets);

// Raw (unrounded) cardinality prediction, [S x 1].
template <typename T>
Var<T> cardinality_head(const PisaParams<T>& params, Tape<T>& tape, Var<T> z);

// Decoder outputs for slots 1..counts[s] of every latent, stacked [sum(counts) x d_x].
template <typename T>
Var<T> decode_slots(const PisaParams<T>& params, Tape<T>& tape, Var<T> z, std::span<const std::size_t> counts);

// ---- single-set operations ---------------------------------------------------

template <typename T>
LatentState<T> encode(const ElementSet& set, const PisaParams<T>& params, std::size_t key_offset = 0);

// Ablation: key i is the input position i, so the result depends on input order.
template <typename T>
LatentState<T> encode_no_rho(const ElementSet& set, const PisaParams<T>& params);

template <typename T>
LatentState<T> encode_deepset(const ElementSet& set, const PisaParams<T>& params);

template <typename T>
T raw_cardinality(const LatentState<T>& z, const PisaParams<T>& params);

// clamp(round(lambda_dec(z)), 0, n_max)
template <typename T>
std::size_t predict_cardinality(const LatentState<T>& z, const PisaParams<T>& params);

// Output row i is the reconstruction for key i + 1.
template <typename T>
ElementSet decode(const LatentState<T>& z, const PisaParams<T>& params,
                  std::optional<std::size_t> forced_n = std::nullopt);

// Adds `element` under the smallest unoccupied key.
template <typename T>
LatentState<T> latent_insert(const LatentState<T>& z, std::span<const double> element, const PisaParams<T>& params);

// Subtracts the contribution of `known` stored under `key`.
template <typename T>
LatentState<T> latent_remove(const LatentState<T>& z, std::size_t key, std::span<const double> known,
                             const PisaParams<T>& params);

}  // namespace pisa
