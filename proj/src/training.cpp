#include "pisa/training.hpp"

#include "pisa/losses.hpp"

namespace pisa {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kPisa: return "pisa";
    case Variant::kNoRho: return "no_rho";
    case Variant::kHungarian: return "hungarian";
    case Variant::kDeepSet: return "deepset";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::kPisa, Variant::kNoRho, Variant::kHungarian, Variant::kDeepSet}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + name + "'");
}

template <typename T>
std::vector<ElementSet> decoder_targets(const PisaParams<T>& params, std::span<const ElementSet> sets,
                                        Variant variant) {
  std::vector<ElementSet> out;
  out.reserve(sets.size());
  for (const ElementSet& s : sets) {
    if (s.size() > params.config.n_max) throw CapacityError("set exceeds n_max");
    out.push_back(variant == Variant::kNoRho ? s : key_ordered(s, params));
  }
  return out;
}

template <typename T>
Var<T> encode_for_variant(const PisaParams<T>& params, Tape<T>& tape, std::span<const ElementSet> targets,
                          Variant variant) {
  if (variant == Variant::kDeepSet) return encode_deepset_batch(params, tape, targets);
  return encode_key_ordered(params, tape, targets);
}

template <typename T>
LossGraph<T> pisa_loss(const PisaParams<T>& params, Tape<T>& tape, std::span<const ElementSet> sets,
                       Variant variant) {
  const std::vector<ElementSet> targets = decoder_targets(params, sets, variant);
  std::vector<std::size_t> counts;
  for (const ElementSet& s : targets) counts.push_back(s.size());
  Var<T> z = encode_for_variant(params, tape, targets, variant);
  Var<T> size = size_loss(cardinality_head(params, tape, z), counts);
  Var<T> x_hat = decode_slots(params, tape, z, counts);
  Tensor<T> target = variant == Variant::kHungarian
                         ? hungarian_targets(x_hat.value(), targets, params.config.d_x)
                         : stack_rows<T>(targets, params.config.d_x);
  Var<T> mse = mse_to(x_hat, target);
  return {add(mse, size), mse, size};
}

template <typename T>
StepStats train_step(PisaParams<T>& params, Adam<T>& opt, std::span<const ElementSet> sets, Variant variant) {
  std::vector<Tensor<T>*> trainable = params.trainable();
  opt.zero_grad(trainable);
  Tape<T> tape;
  LossGraph<T> loss = pisa_loss(params, tape, sets, variant);
  tape.backward(loss.total);
  opt.step(trainable);
  return {static_cast<double>(loss.mse.value().item()), static_cast<double>(loss.size.value().item())};
}

#define PISA_INSTANTIATE_TRAINING(T)                                                                         \
  template std::vector<ElementSet> decoder_targets<T>(const PisaParams<T>&, std::span<const ElementSet>,    \
                                                      Variant);                                             \
  template Var<T> encode_for_variant<T>(const PisaParams<T>&, Tape<T>&, std::span<const ElementSet>,        \
                                        Variant);                                                           \
  template LossGraph<T> pisa_loss<T>(const PisaParams<T>&, Tape<T>&, std::span<const ElementSet>, Variant); \
  template StepStats train_step<T>(PisaParams<T>&, Adam<T>&, std::span<const ElementSet>, Variant);

PISA_INSTANTIATE_TRAINING(float)
PISA_INSTANTIATE_TRAINING(double)

}  // namespace pisa
