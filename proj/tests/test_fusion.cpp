#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "pisa/fusion.hpp"

using namespace pisa;
using pisa::testing::random_set;

namespace {

// logit = 5 - 100 * |a - b|_1, built from relu(a - b) and relu(b - a).
FilterParams<float> distance_filter(std::size_t d = kObjectDim) {
  LinearLayer<float> first{Tensor<float>(Shape{2 * d, 2 * d}), Tensor<float>(Shape{2 * d})};
  for (std::size_t c = 0; c < d; ++c) {
    first.weight.at(c, c) = 1.0f;
    first.weight.at(c, d + c) = -1.0f;
    first.weight.at(d + c, c) = -1.0f;
    first.weight.at(d + c, d + c) = 1.0f;
  }
  LinearLayer<float> second{Tensor<float>(Shape{1, 2 * d}), Tensor<float>(Shape{1})};
  for (std::size_t c = 0; c < 2 * d; ++c) second.weight.at(0, c) = -100.0f;
  (*second.bias)[0] = 5.0f;
  return {Mlp<float>{{first, second}}};
}

TaggedSet tagged(const ElementSet& s, long first_id) {
  TaggedSet t;
  t.set = s;
  for (std::size_t i = 0; i < s.size(); ++i) t.ids.push_back(first_id + static_cast<long>(i));
  return t;
}

ElementSet jitter(const ElementSet& s, std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> n(0.0, sigma);
  ElementSet out(s.dim());
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::vector<double> r(s[i].begin(), s[i].end());
    for (double& v : r) v += n(rng);
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("generate_world") {
  Rng rng(1);
  SUBCASE("single agent with a huge observation radius") {
    WorldConfig cfg{1, 10, 0.1, 10.0};
    const World w = generate_world(rng, cfg);
    CHECK(w.comm[0].empty());
    CHECK(w.obs[0].size() == 10);
    CHECK(local_observe(w, 0).size() == 10);
    CHECK(comm_diameter(w) == 0);
  }
  SUBCASE("comm radius above sqrt(2) gives a complete graph") {
    const World w = generate_world(rng, WorldConfig{5, 4, 1.5, 0.3});
    for (std::size_t i = 0; i < 5; ++i) CHECK(w.comm[i].size() == 4);
    CHECK(comm_diameter(w) == 1);
  }
  SUBCASE("demo scale invariants") {
    for (int t = 0; t < 20; ++t) {
      const World w = generate_world(rng, WorldConfig{});
      CHECK(w.num_agents() == 7);
      CHECK(w.objects.size() == 10);
      std::set<long> seen;
      for (std::size_t i = 0; i < 7; ++i) {
        for (std::size_t k : w.comm[i]) {
          CHECK(k != i);
          CHECK(std::count(w.comm[k].begin(), w.comm[k].end(), i) == 1);
        }
        const TaggedSet obs = local_observe(w, i);
        for (std::size_t e = 0; e < obs.size(); ++e) {
          seen.insert(obs.ids[e]);
          CHECK(obs.set[e][0] == w.objects[static_cast<std::size_t>(obs.ids[e])][0]);
        }
      }
      CHECK(seen.size() == 10);
      CHECK_NOTHROW(comm_diameter(w));
      for (std::size_t j = 0; j < 10; ++j) {
        CHECK(std::abs(w.objects[j][0]) <= std::sqrt(3.0) + 1e-12);
        CHECK(std::abs(w.objects[j][1]) <= std::sqrt(3.0) + 1e-12);
      }
    }
  }
  SUBCASE("unsatisfiable layouts raise a generation error") {
    CHECK_THROWS_AS(generate_world(rng, WorldConfig{5, 10, 0.0, 0.0, 20}), GenerationError);
    CHECK_THROWS_AS(generate_world(rng, WorldConfig{2, 17, 1.0, 1.0}), CapacityError);
  }
  SUBCASE("agent without observations") {
    World w = generate_world(rng, WorldConfig{2, 1, 2.0, 2.0});
    w.obs[1].clear();
    CHECK(local_observe(w, 1).size() == 0);
    CHECK_THROWS_AS(local_observe(w, 2), ContractError);
  }
}

TEST_CASE("pair_same_prob") {
  std::mt19937_64 rng(2);
  const auto untrained = init_filter<float>(kObjectDim, 3);
  const auto perfect = distance_filter();
  for (int t = 0; t < 50; ++t) {
    const ElementSet x = random_set(rng, 2, kObjectDim);
    const double p = pair_same_prob(x[0], x[1], untrained);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
    CHECK(p == doctest::Approx(pair_same_prob(x[1], x[0], untrained)).epsilon(1e-12));
    CHECK(pair_same_prob(x[0], x[0], perfect) > 0.99);
    CHECK(pair_same_prob(x[0], x[1], perfect) < 0.01);
  }
  const auto m = same_prob_matrix(random_set(rng, 4, kObjectDim), untrained);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(m[i * 4 + j] == m[j * 4 + i]);
}

TEST_CASE("filter_union") {
  std::mt19937_64 rng(4);
  const auto perfect = distance_filter();
  const ElementSet x = random_set(rng, 5, kObjectDim);

  SUBCASE("single set without duplicates is unchanged") {
    const std::vector<ElementSet> in{x};
    CHECK(filter_union(std::span<const ElementSet>(in), perfect) == x);
  }
  SUBCASE("two copies collapse to one") {
    const std::vector<ElementSet> in{x, x};
    CHECK(filter_union(std::span<const ElementSet>(in), perfect) == x);
  }
  SUBCASE("three noisy copies keep one representative each") {
    const ElementSet four = random_set(rng, 4, kObjectDim);
    const std::vector<TaggedSet> in{tagged(jitter(four, rng, 1e-3), 0), tagged(jitter(four, rng, 1e-3), 0),
                                    tagged(jitter(four, rng, 1e-3), 0)};
    const TaggedSet out = filter_union(std::span<const TaggedSet>(in), perfect);
    REQUIRE(out.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(out.ids[i] == static_cast<long>(i));
      CHECK(out.set[i][0] == in[0].set[i][0]);
      for (std::size_t c = 0; c < kObjectDim; ++c) CHECK(std::abs(out.set[i][c] - four[i][c]) < 1e-2);
    }
  }
  SUBCASE("duplicate-free inputs are concatenated") {
    const ElementSet y = random_set(rng, 3, kObjectDim);
    const std::vector<TaggedSet> in{tagged(x, 0), tagged(y, 5)};
    const TaggedSet out = filter_union(std::span<const TaggedSet>(in), perfect);
    CHECK(out.size() == 8);
    CHECK(out.ids == std::vector<long>{0, 1, 2, 3, 4, 5, 6, 7});
  }
  SUBCASE("representative comes from the lowest set index") {
    const ElementSet y = jitter(x, rng, 1e-4);
    const std::vector<TaggedSet> in{tagged(y, 0), tagged(x, 0)};
    CHECK(filter_union(std::span<const TaggedSet>(in), perfect).set == y);
  }
  SUBCASE("capped at n_max, largest components first") {
    const ElementSet many = random_set(rng, 6, kObjectDim);
    ElementSet dup(kObjectDim);
    dup.push_back(many[5]);
    const std::vector<ElementSet> in{many, dup};
    const ElementSet out = filter_union(std::span<const ElementSet>(in), perfect, UnionOptions{0.5, 3});
    REQUIRE(out.size() == 3);
    CHECK(std::equal(out[0].begin(), out[0].end(), many[0].begin()));
    CHECK(std::equal(out[1].begin(), out[1].end(), many[1].begin()));
    CHECK(std::equal(out[2].begin(), out[2].end(), many[5].begin()));
  }
  SUBCASE("idempotent") {
    const auto untrained = init_filter<float>(kObjectDim, 9);
    for (int t = 0; t < 20; ++t) {
      const std::vector<ElementSet> in{random_set(rng, 4, kObjectDim), random_set(rng, 5, kObjectDim)};
      for (const auto* f : {&perfect, &untrained}) {
        const ElementSet once = filter_union(std::span<const ElementSet>(in), *f);
        const std::vector<ElementSet> again{once};
        CHECK(filter_union(std::span<const ElementSet>(again), *f) == once);
      }
    }
  }
  SUBCASE("empty input") { CHECK(filter_union(std::span<const ElementSet>(), perfect).empty()); }
}

TEST_CASE("coverage") {
  Rng rng(5);
  const World w = generate_world(rng, WorldConfig{});
  CHECK(coverage(w.objects, w) == 1.0);
  CHECK(coverage(ElementSet(kObjectDim), w) == 0.0);
  ElementSet nine(kObjectDim);
  for (std::size_t j = 1; j < 10; ++j) nine.push_back(w.objects[j]);
  CHECK(coverage(nine, w) == doctest::Approx(0.9));
  ElementSet off(kObjectDim);
  std::vector<double> shifted(w.objects[0].begin(), w.objects[0].end());
  shifted[3] += 0.2;
  off.push_back(shifted);
  CHECK(coverage(off, w) == 0.0);
  shifted[3] -= 0.15;
  off = ElementSet(kObjectDim);
  off.push_back(shifted);
  CHECK(coverage(off, w) == doctest::Approx(0.1));

  TaggedSet exact;
  exact.set = w.objects;
  for (long j = 0; j < 10; ++j) exact.ids.push_back(j);
  CHECK(provenance_correlation(std::span<const TaggedSet>(&exact, 1), w) == doctest::Approx(1.0));
}

TEST_CASE("fusion machinery") {
  PisaConfig cfg;
  cfg.d_z = 32;
  const auto params = init_pisa<float>(cfg, 6);
  const auto perfect = distance_filter();
  Rng rng(7);
  const World w = generate_world(rng, WorldConfig{});

  SUBCASE("messages have a fixed size and carry provenance in key order") {
    for (std::size_t i = 0; i < w.num_agents(); ++i) {
      const TaggedSet obs = local_observe(w, i);
      const Message<float> m = encode_message(obs, params);
      CHECK(m.z.z.size() == 32);
      const ElementSet ordered = key_ordered(obs.set, params);
      for (std::size_t k = 0; k < obs.size(); ++k) {
        const auto obj = w.objects[static_cast<std::size_t>(m.ids[k])];
        CHECK(std::equal(obj.begin(), obj.end(), ordered[k].begin()));
      }
      const TaggedSet d = decode_message(m, params);
      CHECK(d.ids.size() == d.size());
      for (std::size_t s = 0; s < d.size(); ++s) CHECK(d.ids[s] == (s < m.ids.size() ? m.ids[s] : -1));
    }
  }
  SUBCASE("rollout shape and determinism") {
    const auto a = fusion_rollout(w, 3, params, perfect);
    const auto b = fusion_rollout(w, 3, params, perfect);
    REQUIRE(a.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) {
      REQUIRE(a[i].size() == 4);
      CHECK(a[i][0].encoded.set == local_observe(w, i).set);
      CHECK(a[i][0].belief.set == decode(encode(local_observe(w, i).set, params), params));
      for (std::size_t l = 0; l < 4; ++l) {
        CHECK(a[i][l].layer == l);
        CHECK(a[i][l].message.z.z == b[i][l].message.z.z);
        CHECK(a[i][l].belief.set == b[i][l].belief.set);
        CHECK(a[i][l].message.z.z.size() == 32);
        CHECK(a[i][l].encoded.size() <= 16);
      }
      CHECK(a[i][1].incoming.size() == w.comm[i].size() + 1);
    }
  }
  SUBCASE("fusion_layer decodes, merges and re-encodes") {
    std::vector<Message<float>> incoming;
    for (std::size_t i = 0; i < 3; ++i) incoming.push_back(encode_message(local_observe(w, i), params));
    const LayerResult<float> r = fusion_layer(std::span<const Message<float>>(incoming), params, perfect);
    CHECK(r.decoded.size() == 3);
    const TaggedSet expected = filter_union(std::span<const TaggedSet>(r.decoded), perfect);
    CHECK(r.merged.set == expected.set);
    CHECK(r.message.z.z == encode(expected.set, params).z);
    CHECK_THROWS_AS(fusion_layer(std::span<const Message<float>>(), params, perfect), ContractError);
  }
}

TEST_CASE("filter pair sampling is balanced") {
  PisaConfig cfg;
  cfg.d_z = 32;
  const auto params = init_pisa<float>(cfg, 8);
  const auto perfect = distance_filter();
  Rng rng(9);
  const World w = generate_world(rng, WorldConfig{});
  const auto rollout = fusion_rollout(w, 2, params, perfect);
  for (std::size_t k : {1u, 8u, 32u}) {
    const LabeledPairs p = sample_filter_pairs(rollout, rng, k);
    const auto pos = std::count(p.labels.begin(), p.labels.end(), 1.0);
    CHECK(static_cast<std::size_t>(pos) * 2 == p.labels.size());
    CHECK(static_cast<std::size_t>(pos) <= k);
    CHECK(p.a.size() == p.labels.size());
  }
}

TEST_CASE("fusion training step") {
  PisaConfig cfg;
  cfg.d_z = 32;
  auto params = init_pisa<float>(cfg, 10);
  auto filter = init_filter<float>(kObjectDim, 11);
  FusionTrainConfig fc;
  fc.warmup_steps = 2;
  fc.steps = 3;
  fc.worlds_per_step = 1;
  fc.max_layers = 2;
  auto params2 = params;
  auto filter2 = filter;
  std::vector<FusionStepStats> a, b;
  train_fusion(params, filter, fc, [&](std::size_t, const FusionStepStats& s) { a.push_back(s); });
  train_fusion(params2, filter2, fc, [&](std::size_t, const FusionStepStats& s) { b.push_back(s); });
  REQUIRE(a.size() == 5);
  CHECK(a[0].pairs == 0);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a[i].sets > 0);
    CHECK(a[i].recon == b[i].recon);
    CHECK(a[i].filter_bce == b[i].filter_bce);
    CHECK(a[i].pairs % 2 == 0);
  }
  const auto wa = filter.g.layers[0].weight.data(), wb = filter2.g.layers[0].weight.data();
  CHECK(std::equal(wa.begin(), wa.end(), wb.begin()));
}
