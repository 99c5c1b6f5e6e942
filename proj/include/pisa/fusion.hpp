#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "pisa/adam.hpp"
#include "pisa/element_set.hpp"
#include "pisa/model.hpp"
#include "pisa/nn.hpp"

namespace pisa {

// Object features: standardized 2-D position followed by appearance dims.
inline constexpr std::size_t kObjectDim = 6;

struct World {
  std::vector<std::array<double, 2>> agents;
  std::vector<std::array<double, 2>> object_positions;
  ElementSet objects{kObjectDim};  // provenance id of object j is j
  std::vector<std::vector<std::size_t>> comm;  // symmetric adjacency lists, no self loops
  std::vector<std::vector<std::size_t>> obs;   // agent -> observed object ids

  std::size_t num_agents() const { return agents.size(); }
};

struct WorldConfig {
  std::size_t n_agents = 7;
  std::size_t n_objects = 10;
  double comm_radius = 0.5;
  double obs_radius = 0.35;
  std::size_t max_retries = 10000;
};

World generate_world(Rng& rng, const WorldConfig& config, std::size_t n_max = 16);

// Features of `n` independent objects drawn like those of generate_world.
ElementSet sample_objects(Rng& rng, std::size_t n);

// Hop diameter of the communication graph.
std::size_t comm_diameter(const World& world);

// Elements with provenance ids; -1 marks a slot that no object produced.
struct TaggedSet {
  ElementSet set{kObjectDim};
  std::vector<long> ids;

  std::size_t size() const { return set.size(); }
};

TaggedSet local_observe(const World& world, std::size_t agent);

template <typename T>
struct FilterParams {
  Mlp<T> g;  // [a, b] (2 d_x) -> logit

  NamedTensors<T> named_tensors();
  std::vector<Tensor<T>*> trainable();
};

template <typename T>
FilterParams<T> init_filter(std::size_t d_x, std::uint64_t seed, std::vector<std::size_t> hidden = {64, 64});

// (sigmoid(g(a,b)) + sigmoid(g(b,a))) / 2
template <typename T>
double pair_same_prob(std::span<const double> a, std::span<const double> b, const FilterParams<T>& filter);

// Symmetric probability matrix over the rows of `elements`, computed in one batch.
template <typename T>
std::vector<double> same_prob_matrix(const ElementSet& elements, const FilterParams<T>& filter);

struct UnionOptions {
  double threshold = 0.5;
  std::size_t n_max = 16;
};

// Duplicates (probability > threshold) merged by union-find. Each component
// keeps its first element in (set index, element index) order; when more than
// n_max components remain the largest are retained.
template <typename T>
TaggedSet filter_union(std::span<const TaggedSet> sets, const FilterParams<T>& filter, UnionOptions options = {});

template <typename T>
ElementSet filter_union(std::span<const ElementSet> sets, const FilterParams<T>& filter, UnionOptions options = {});

// Latent plus the provenance of each key (ids[k - 1] belongs to key k).
template <typename T>
struct Message {
  LatentState<T> z;
  std::vector<long> ids;
};

template <typename T>
Message<T> encode_message(const TaggedSet& set, const PisaParams<T>& params);

// Decode with the predicted cardinality; provenance follows the key slots.
template <typename T>
TaggedSet decode_message(const Message<T>& message, const PisaParams<T>& params);

template <typename T>
struct LayerResult {
  Message<T> message;
  TaggedSet merged;               // the set that was encoded
  std::vector<TaggedSet> decoded;  // decodes of the incoming messages
};

// Decode every incoming latent, merge duplicates, re-encode.
template <typename T>
LayerResult<T> fusion_layer(std::span<const Message<T>> incoming, const PisaParams<T>& params,
                            const FilterParams<T>& filter, UnionOptions options = {});

template <typename T>
struct AgentBelief {
  std::size_t layer = 0;
  TaggedSet encoded;     // set fed to the encoder at this layer
  TaggedSet belief;      // decode of the resulting latent
  Message<T> message;
  std::vector<TaggedSet> incoming;  // decoded neighbour messages (layers >= 1)
};

// beliefs[agent][layer] for layers 0..L. Layer 0 encodes local observations;
// each later layer receives the previous latents of its neighbours and itself.
template <typename T>
std::vector<std::vector<AgentBelief<T>>> fusion_rollout(const World& world, std::size_t layers,
                                                        const PisaParams<T>& params, const FilterParams<T>& filter,
                                                        UnionOptions options = {});

// Fraction of objects that some belief element lies within `tolerance` of in
// every feature (each element is compared with its nearest object).
double coverage(const ElementSet& belief, const World& world, double tolerance = 0.1);

// Pearson r between belief elements and the objects named by their provenance;
// slots without provenance are skipped.
double provenance_correlation(std::span<const TaggedSet> beliefs, const World& world);

struct LabeledPairs {
  ElementSet a{kObjectDim}, b{kObjectDim};
  std::vector<double> labels;
};

// Equal numbers of same-object and different-object pairs drawn from decoded
// messages of different senders; at most `per_class` of each.
template <typename T>
LabeledPairs sample_filter_pairs(const std::vector<std::vector<AgentBelief<T>>>& rollout, Rng& rng,
                                 std::size_t per_class);

template <typename T>
double filter_accuracy(const LabeledPairs& pairs, const FilterParams<T>& filter, double threshold = 0.5);

struct FusionTrainConfig {
  WorldConfig world;
  // Autoencoder-only steps on random object sets before any rollout.
  std::size_t warmup_steps = 20000;
  std::size_t warmup_batch = 64;
  std::size_t steps = 4000;
  std::size_t worlds_per_step = 2;
  std::size_t max_layers = 6;   // rollout depth is min(diameter, max_layers)
  std::size_t pairs_per_class = 64;
  AdamConfig adam;
  // The rollout stage decays the learning rate linearly to this fraction.
  double final_lr_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct FusionStepStats {
  double recon = 0.0;
  double filter_bce = 0.0;
  std::size_t sets = 0;
  std::size_t pairs = 0;
};

// Step indices passed to the callback run over warmup then rollout steps.
// One rollout step: roll out fresh worlds without gradients, then train the
// autoencoder on every encoder input of every layer and the filter on
// balanced provenance-labelled pairs.
template <typename T>
FusionStepStats fusion_train_step(PisaParams<T>& params, FilterParams<T>& filter, Adam<T>& pisa_opt,
                                  Adam<T>& filter_opt, const FusionTrainConfig& config, Rng& rng);

template <typename T>
void train_fusion(PisaParams<T>& params, FilterParams<T>& filter, const FusionTrainConfig& config,
                  const std::function<void(std::size_t, const FusionStepStats&)>& on_step = {});

}  // namespace pisa
