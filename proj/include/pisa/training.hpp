#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pisa/adam.hpp"
#include "pisa/element_set.hpp"
#include "pisa/model.hpp"

namespace pisa {

// Full model and the three ablations.
enum class Variant {
  kPisa,       // rho keys, key-correspondence loss
  kNoRho,      // input-order keys
  kHungarian,  // rho keys, Hungarian-matched loss
  kDeepSet,    // Deep Sets encoder, key-correspondence loss
};

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

// Sets arranged in decoder slot order for `variant`: rho-key order, or input
// order for kNoRho.
template <typename T>
std::vector<ElementSet> decoder_targets(const PisaParams<T>& params, std::span<const ElementSet> sets, Variant variant);

// z [S x d_z] for sets already in decoder_targets() order.
template <typename T>
Var<T> encode_for_variant(const PisaParams<T>& params, Tape<T>& tape, std::span<const ElementSet> targets,
                          Variant variant);

template <typename T>
struct LossGraph {
  Var<T> total;
  Var<T> mse;
  Var<T> size;
};

// Training objective on a batch. Decoding is teacher-forced with the true
// cardinalities; mse is pooled over every element and feature of the batch.
template <typename T>
LossGraph<T> pisa_loss(const PisaParams<T>& params, Tape<T>& tape, std::span<const ElementSet> sets, Variant variant);

struct StepStats {
  double mse = 0.0;
  double size = 0.0;
};

// One optimizer step on `sets`.
template <typename T>
StepStats train_step(PisaParams<T>& params, Adam<T>& opt, std::span<const ElementSet> sets, Variant variant);

}  // namespace pisa
