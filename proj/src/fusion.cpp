#include "pisa/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <string>

#include "pisa/losses.hpp"
#include "pisa/metrics.hpp"
#include "pisa/training.hpp"

namespace pisa {

namespace {

double dist2d(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

// Hop distances from `source`; unreachable agents stay at max().
std::vector<std::size_t> bfs(const World& world, std::size_t source) {
  std::vector<std::size_t> dist(world.num_agents(), std::numeric_limits<std::size_t>::max());
  std::deque<std::size_t> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (std::size_t v : world.comm[u]) {
      if (dist[v] == std::numeric_limits<std::size_t>::max()) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  // The smaller index stays root, so every root is its component's first element.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
};

template <typename T>
Tensor<T> pair_rows(const ElementSet& a, const ElementSet& b) {
  const std::size_t d = a.dim();
  Tensor<T> out(Shape{a.size(), 2 * d});
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t c = 0; c < d; ++c) {
      out.at(i, c) = static_cast<T>(a[i][c]);
      out.at(i, d + c) = static_cast<T>(b[i][c]);
    }
  return out;
}

// Symmetrized probabilities for row-aligned pairs (a[i], b[i]).
template <typename T>
std::vector<double> pair_probs(const ElementSet& a, const ElementSet& b, const FilterParams<T>& filter) {
  if (a.empty()) return {};
  Tape<T> tape(false);
  const Tensor<T> ab = mlp_forward(filter.g, tape, tape.constant(pair_rows<T>(a, b))).value();
  const Tensor<T> ba = mlp_forward(filter.g, tape, tape.constant(pair_rows<T>(b, a))).value();
  auto sig = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  std::vector<double> p(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    p[i] = 0.5 * (sig(static_cast<double>(ab[i])) + sig(static_cast<double>(ba[i])));
  return p;
}

template <typename T>
TaggedSet merge_decoded(std::span<const TaggedSet> sets, const FilterParams<T>& filter, UnionOptions options) {
  TaggedSet all;
  for (const TaggedSet& s : sets) {
    if (s.set.dim() != kObjectDim) throw DimensionError("filter_union: element dimension mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      all.set.push_back(s.set[i]);
      all.ids.push_back(s.ids.empty() ? -1 : s.ids[i]);
    }
  }
  const std::size_t m = all.size();
  const std::vector<double> p = same_prob_matrix(all.set, filter);
  UnionFind uf(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      if (p[i * m + j] > options.threshold) uf.unite(i, j);

  std::vector<std::size_t> roots, sizes(m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    ++sizes[uf.find(i)];
    if (uf.find(i) == i) roots.push_back(i);
  }
  if (roots.size() > options.n_max) {
    std::stable_sort(roots.begin(), roots.end(), [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });
    roots.resize(options.n_max);
    std::sort(roots.begin(), roots.end());
  }
  TaggedSet out;
  for (std::size_t r : roots) {
    out.set.push_back(all.set[r]);
    out.ids.push_back(all.ids[r]);
  }
  return out;
}

// Position standardized to zero mean and unit variance, appearance ~ N(0, 1).
void object_features(const std::array<double, 2>& p, Rng& rng, std::vector<double>& f) {
  const double scale = std::sqrt(12.0);
  std::normal_distribution<double> normal;
  f[0] = (p[0] - 0.5) * scale;
  f[1] = (p[1] - 0.5) * scale;
  for (std::size_t c = 2; c < kObjectDim; ++c) f[c] = normal(rng);
}

}  // namespace

ElementSet sample_objects(Rng& rng, std::size_t n) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ElementSet out(kObjectDim);
  std::vector<double> f(kObjectDim);
  for (std::size_t j = 0; j < n; ++j) {
    const std::array<double, 2> p{unit(rng), unit(rng)};
    object_features(p, rng, f);
    out.push_back(f);
  }
  return out;
}

World generate_world(Rng& rng, const WorldConfig& config, std::size_t n_max) {
  if (config.n_agents == 0) throw ContractError("generate_world: need at least one agent");
  if (config.n_objects > n_max) throw CapacityError("generate_world: more objects than n_max");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t attempt = 0; attempt < config.max_retries; ++attempt) {
    World w;
    for (std::size_t i = 0; i < config.n_agents; ++i) w.agents.push_back({unit(rng), unit(rng)});
    std::vector<double> f(kObjectDim);
    for (std::size_t j = 0; j < config.n_objects; ++j) {
      const std::array<double, 2> p{unit(rng), unit(rng)};
      w.object_positions.push_back(p);
      object_features(p, rng, f);
      w.objects.push_back(f);
    }
    w.comm.assign(config.n_agents, {});
    w.obs.assign(config.n_agents, {});
    std::vector<bool> seen(config.n_objects, false);
    for (std::size_t i = 0; i < config.n_agents; ++i) {
      for (std::size_t k = 0; k < config.n_agents; ++k)
        if (k != i && dist2d(w.agents[i], w.agents[k]) <= config.comm_radius) w.comm[i].push_back(k);
      for (std::size_t j = 0; j < config.n_objects; ++j)
        if (dist2d(w.agents[i], w.object_positions[j]) <= config.obs_radius) {
          w.obs[i].push_back(j);
          seen[j] = true;
        }
    }
    const auto hops = bfs(w, 0);
    const bool connected =
        std::none_of(hops.begin(), hops.end(), [](std::size_t h) { return h == std::numeric_limits<std::size_t>::max(); });
    if (connected && std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) return w;
  }
  throw GenerationError("generate_world: no connected, fully observed world after " +
                        std::to_string(config.max_retries) + " attempts");
}

std::size_t comm_diameter(const World& world) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < world.num_agents(); ++i)
    for (std::size_t h : bfs(world, i)) {
      if (h == std::numeric_limits<std::size_t>::max()) throw ContractError("comm_diameter: graph is disconnected");
      d = std::max(d, h);
    }
  return d;
}

TaggedSet local_observe(const World& world, std::size_t agent) {
  if (agent >= world.num_agents()) throw ContractError("local_observe: agent index out of range");
  TaggedSet out;
  for (std::size_t j : world.obs[agent]) {
    out.set.push_back(world.objects[j]);
    out.ids.push_back(static_cast<long>(j));
  }
  return out;
}

template <typename T>
NamedTensors<T> FilterParams<T>::named_tensors() {
  NamedTensors<T> out;
  g.collect("filter.g", out);
  return out;
}

template <typename T>
std::vector<Tensor<T>*> FilterParams<T>::trainable() {
  std::vector<Tensor<T>*> out;
  for (auto& [name, t] : named_tensors()) out.push_back(t);
  return out;
}

template <typename T>
FilterParams<T> init_filter(std::size_t d_x, std::uint64_t seed, std::vector<std::size_t> hidden) {
  Rng rng(seed);
  std::vector<std::size_t> sizes{2 * d_x};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  return {init_mlp<T>(sizes, rng)};
}

template <typename T>
double pair_same_prob(std::span<const double> a, std::span<const double> b, const FilterParams<T>& filter) {
  if (a.size() != b.size() || 2 * a.size() != filter.g.in_features())
    throw DimensionError("pair_same_prob: element size does not match the filter");
  ElementSet sa(a.size()), sb(b.size());
  sa.push_back(a);
  sb.push_back(b);
  return pair_probs(sa, sb, filter).front();
}

template <typename T>
std::vector<double> same_prob_matrix(const ElementSet& elements, const FilterParams<T>& filter) {
  const std::size_t m = elements.size();
  std::vector<double> out(m * m, 1.0);
  ElementSet a(elements.dim()), b(elements.dim());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      a.push_back(elements[i]);
      b.push_back(elements[j]);
    }
  const std::vector<double> p = pair_probs(a, b, filter);
  std::size_t k = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j, ++k) out[i * m + j] = out[j * m + i] = p[k];
  return out;
}

template <typename T>
TaggedSet filter_union(std::span<const TaggedSet> sets, const FilterParams<T>& filter, UnionOptions options) {
  return merge_decoded(sets, filter, options);
}

template <typename T>
ElementSet filter_union(std::span<const ElementSet> sets, const FilterParams<T>& filter, UnionOptions options) {
  std::vector<TaggedSet> tagged;
  for (const ElementSet& s : sets) tagged.push_back({s, {}});
  return merge_decoded(std::span<const TaggedSet>(tagged), filter, options).set;
}

template <typename T>
Message<T> encode_message(const TaggedSet& set, const PisaParams<T>& params) {
  Message<T> m;
  m.z = encode(set.set, params);
  for (std::size_t i : assign_keys(set.set, params).order()) m.ids.push_back(set.ids.empty() ? -1 : set.ids[i]);
  return m;
}

template <typename T>
TaggedSet decode_message(const Message<T>& message, const PisaParams<T>& params) {
  TaggedSet out;
  out.set = decode(message.z, params);
  for (std::size_t i = 0; i < out.size(); ++i) out.ids.push_back(i < message.ids.size() ? message.ids[i] : -1);
  return out;
}

template <typename T>
LayerResult<T> fusion_layer(std::span<const Message<T>> incoming, const PisaParams<T>& params,
                            const FilterParams<T>& filter, UnionOptions options) {
  if (incoming.empty()) throw ContractError("fusion_layer: no incoming messages");
  LayerResult<T> r;
  for (const Message<T>& m : incoming) r.decoded.push_back(decode_message(m, params));
  r.merged = filter_union(std::span<const TaggedSet>(r.decoded), filter, options);
  r.message = encode_message(r.merged, params);
  return r;
}

template <typename T>
std::vector<std::vector<AgentBelief<T>>> fusion_rollout(const World& world, std::size_t layers,
                                                        const PisaParams<T>& params, const FilterParams<T>& filter,
                                                        UnionOptions options) {
  const std::size_t n = world.num_agents();
  std::vector<std::vector<AgentBelief<T>>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    AgentBelief<T> b;
    b.encoded = local_observe(world, i);
    b.message = encode_message(b.encoded, params);
    b.belief = decode_message(b.message, params);
    out[i].push_back(std::move(b));
  }
  for (std::size_t l = 1; l <= layers; ++l) {
    for (std::size_t i = 0; i < n; ++i) {
      AgentBelief<T> b;
      b.layer = l;
      // Previous beliefs are the decodes of the previous messages.
      b.incoming.push_back(out[i][l - 1].belief);
      for (std::size_t k : world.comm[i]) b.incoming.push_back(out[k][l - 1].belief);
      b.encoded = filter_union(std::span<const TaggedSet>(b.incoming), filter, options);
      b.message = encode_message(b.encoded, params);
      b.belief = decode_message(b.message, params);
      out[i].push_back(std::move(b));
    }
  }
  return out;
}

double coverage(const ElementSet& belief, const World& world, double tolerance) {
  const std::size_t m = world.objects.size();
  if (m == 0) return 1.0;
  std::vector<bool> hit(m, false);
  for (std::size_t i = 0; i < belief.size(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      const double d = squared_distance(belief[i], world.objects[j]);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    bool close = true;
    for (std::size_t c = 0; c < belief.dim(); ++c) close = close && std::abs(belief[i][c] - world.objects[best][c]) <= tolerance;
    if (close) hit[best] = true;
  }
  return static_cast<double>(std::count(hit.begin(), hit.end(), true)) / static_cast<double>(m);
}

double provenance_correlation(std::span<const TaggedSet> beliefs, const World& world) {
  std::vector<double> truth, pred;
  for (const TaggedSet& b : beliefs)
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (b.ids[i] < 0) continue;
      const auto obj = world.objects[static_cast<std::size_t>(b.ids[i])];
      for (std::size_t c = 0; c < obj.size(); ++c) {
        truth.push_back(obj[c]);
        pred.push_back(b.set[i][c]);
      }
    }
  return correlation(truth, pred);
}

template <typename T>
LabeledPairs sample_filter_pairs(const std::vector<std::vector<AgentBelief<T>>>& rollout, Rng& rng,
                                 std::size_t per_class) {
  struct Ref {
    const TaggedSet* s;
    std::size_t i;
  };
  std::vector<std::pair<Ref, Ref>> pos, neg;
  for (const auto& agent : rollout)
    for (const AgentBelief<T>& b : agent)
      for (std::size_t s = 0; s < b.incoming.size(); ++s)
        for (std::size_t t = s + 1; t < b.incoming.size(); ++t) {
          const TaggedSet& u = b.incoming[s];
          const TaggedSet& v = b.incoming[t];
          for (std::size_t i = 0; i < u.size(); ++i)
            for (std::size_t j = 0; j < v.size(); ++j) {
              if (u.ids[i] < 0 || v.ids[j] < 0) continue;
              (u.ids[i] == v.ids[j] ? pos : neg).push_back({{&u, i}, {&v, j}});
            }
        }
  const std::size_t k = std::min({pos.size(), neg.size(), per_class});
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  LabeledPairs out;
  for (std::size_t n = 0; n < k; ++n) {
    for (const auto* list : {&pos, &neg}) {
      const auto& [x, y] = (*list)[n];
      out.a.push_back(x.s->set[x.i]);
      out.b.push_back(y.s->set[y.i]);
      out.labels.push_back(list == &pos ? 1.0 : 0.0);
    }
  }
  return out;
}

template <typename T>
double filter_accuracy(const LabeledPairs& pairs, const FilterParams<T>& filter, double threshold) {
  if (pairs.labels.empty()) return 0.0;
  const std::vector<double> p = pair_probs(pairs.a, pairs.b, filter);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < p.size(); ++i) hits += (p[i] > threshold) == (pairs.labels[i] > 0.5);
  return static_cast<double>(hits) / static_cast<double>(p.size());
}

template <typename T>
FusionStepStats fusion_train_step(PisaParams<T>& params, FilterParams<T>& filter, Adam<T>& pisa_opt,
                                  Adam<T>& filter_opt, const FusionTrainConfig& config, Rng& rng) {
  UnionOptions options;
  options.n_max = params.config.n_max;
  std::vector<ElementSet> sets;
  LabeledPairs pairs;
  for (std::size_t w = 0; w < config.worlds_per_step; ++w) {
    const World world = generate_world(rng, config.world, params.config.n_max);
    const std::size_t layers = std::min(comm_diameter(world), config.max_layers);
    const auto rollout = fusion_rollout(world, layers, params, filter, options);
    for (const auto& agent : rollout)
      for (const AgentBelief<T>& b : agent) sets.push_back(b.encoded.set);
    const LabeledPairs p = sample_filter_pairs(rollout, rng, config.pairs_per_class);
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
      pairs.a.push_back(p.a[i]);
      pairs.b.push_back(p.b[i]);
      pairs.labels.push_back(p.labels[i]);
    }
  }
  FusionStepStats stats;
  stats.sets = sets.size();
  stats.pairs = pairs.labels.size();
  stats.recon = train_step(params, pisa_opt, std::span<const ElementSet>(sets), Variant::kPisa).mse;

  if (!pairs.labels.empty()) {
    // Both orders of every pair, so g learns the symmetric relation directly.
    const std::size_t k = pairs.labels.size();
    Tensor<T> rows(Shape{2 * k, 2 * kObjectDim});
    Tensor<T> labels(Shape{2 * k, 1});
    const Tensor<T> ab = pair_rows<T>(pairs.a, pairs.b), ba = pair_rows<T>(pairs.b, pairs.a);
    std::copy(ab.data().begin(), ab.data().end(), rows.data().begin());
    std::copy(ba.data().begin(), ba.data().end(), rows.data().begin() + static_cast<std::ptrdiff_t>(ab.numel()));
    for (std::size_t i = 0; i < k; ++i) labels[i] = labels[k + i] = static_cast<T>(pairs.labels[i]);
    auto trainable = filter.trainable();
    filter_opt.zero_grad(trainable);
    Tape<T> tape;
    Var<T> loss = bce_with_logits(mlp_forward(filter.g, tape, tape.constant(std::move(rows))), labels);
    tape.backward(loss);
    filter_opt.step(trainable);
    stats.filter_bce = static_cast<double>(loss.value().item());
  }
  return stats;
}

template <typename T>
void train_fusion(PisaParams<T>& params, FilterParams<T>& filter, const FusionTrainConfig& config,
                  const std::function<void(std::size_t, const FusionStepStats&)>& on_step) {
  Rng rng(config.seed);
  auto pisa_params = params.trainable();
  auto filter_params = filter.trainable();
  Adam<T> pisa_opt(pisa_params, config.adam);
  Adam<T> filter_opt(filter_params, config.adam);
  std::uniform_int_distribution<std::size_t> count(0, config.world.n_objects);
  for (std::size_t step = 1; step <= config.warmup_steps; ++step) {
    std::vector<ElementSet> sets;
    for (std::size_t b = 0; b < config.warmup_batch; ++b) sets.push_back(sample_objects(rng, count(rng)));
    FusionStepStats stats;
    stats.sets = sets.size();
    stats.recon = train_step(params, pisa_opt, std::span<const ElementSet>(sets), Variant::kPisa).mse;
    if (on_step) on_step(step, stats);
  }
  for (std::size_t step = 1; step <= config.steps; ++step) {
    const double progress = static_cast<double>(step - 1) / static_cast<double>(std::max<std::size_t>(config.steps, 1));
    const double lr = config.adam.learning_rate * (1.0 - (1.0 - config.final_lr_fraction) * progress);
    pisa_opt.set_learning_rate(lr);
    filter_opt.set_learning_rate(lr);
    const FusionStepStats stats = fusion_train_step(params, filter, pisa_opt, filter_opt, config, rng);
    if (on_step) on_step(config.warmup_steps + step, stats);
  }
}

#define PISA_INSTANTIATE_FUSION(T)                                                                               \
  template struct FilterParams<T>;                                                                               \
  template FilterParams<T> init_filter<T>(std::size_t, std::uint64_t, std::vector<std::size_t>);                 \
  template double pair_same_prob<T>(std::span<const double>, std::span<const double>, const FilterParams<T>&);   \
  template std::vector<double> same_prob_matrix<T>(const ElementSet&, const FilterParams<T>&);                   \
  template TaggedSet filter_union<T>(std::span<const TaggedSet>, const FilterParams<T>&, UnionOptions);          \
  template ElementSet filter_union<T>(std::span<const ElementSet>, const FilterParams<T>&, UnionOptions);        \
  template Message<T> encode_message<T>(const TaggedSet&, const PisaParams<T>&);                                 \
  template TaggedSet decode_message<T>(const Message<T>&, const PisaParams<T>&);                                 \
  template LayerResult<T> fusion_layer<T>(std::span<const Message<T>>, const PisaParams<T>&,                     \
                                          const FilterParams<T>&, UnionOptions);                                 \
  template std::vector<std::vector<AgentBelief<T>>> fusion_rollout<T>(const World&, std::size_t,                 \
                                                                      const PisaParams<T>&,                      \
                                                                      const FilterParams<T>&, UnionOptions);     \
  template LabeledPairs sample_filter_pairs<T>(const std::vector<std::vector<AgentBelief<T>>>&, Rng&,            \
                                               std::size_t);                                                     \
  template double filter_accuracy<T>(const LabeledPairs&, const FilterParams<T>&, double);                       \
  template FusionStepStats fusion_train_step<T>(PisaParams<T>&, FilterParams<T>&, Adam<T>&, Adam<T>&,            \
                                                const FusionTrainConfig&, Rng&);                                 \
  template void train_fusion<T>(PisaParams<T>&, FilterParams<T>&, const FusionTrainConfig&,                      \
                                const std::function<void(std::size_t, const FusionStepStats&)>&);

PISA_INSTANTIATE_FUSION(float)
PISA_INSTANTIATE_FUSION(double)

}  // namespace pisa
