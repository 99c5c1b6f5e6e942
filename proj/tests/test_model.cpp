#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "grad_check.hpp"
#include "oracles.hpp"
#include "pisa/losses.hpp"
#include "pisa/model.hpp"
#include "pisa/training.hpp"

using namespace pisa;
using pisa::testing::random_set;
using pisa::testing::shuffled;

namespace {

PisaConfig small_config() {
  PisaConfig cfg;
  cfg.d_x = 6;
  cfg.d_z = 24;
  cfg.n_max = 16;
  return cfg;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

ElementSet concat(const ElementSet& a, const ElementSet& b) {
  ElementSet out = a;
  for (std::size_t i = 0; i < b.size(); ++i) out.push_back(b[i]);
  return out;
}

}  // namespace

TEST_CASE("assign_keys") {
  auto params = init_pisa<float>(small_config(), 3);
  std::mt19937_64 rng(1);
  SUBCASE("singleton gets key 1") {
    CHECK(assign_keys(random_set(rng, 1, 6), params).keys == std::vector<std::size_t>{1});
  }
  SUBCASE("permutation invariant pairing") {
    const ElementSet x = random_set(rng, 9, 6);
    const ElementSet ordered = key_ordered(x, params);
    for (int t = 0; t < 20; ++t) CHECK(key_ordered(shuffled(x, rng), params) == ordered);
  }
  SUBCASE("rank order of independently computed projections") {
    const ElementSet x = random_set(rng, 5, 6);
    std::vector<std::pair<double, std::size_t>> proj;
    for (std::size_t i = 0; i < 5; ++i) {
      double p = 0.0;
      for (std::size_t c = 0; c < 6; ++c) p += static_cast<double>(params.rho.weight[c]) * x[i][c];
      proj.emplace_back(p, i);
    }
    std::sort(proj.begin(), proj.end());
    std::vector<std::size_t> expected(5);
    for (std::size_t r = 0; r < 5; ++r) expected[proj[r].second] = r + 1;
    CHECK(assign_keys(x, params).keys == expected);
  }
  SUBCASE("ties fall back to lexicographic order") {
    ElementSet x(6);
    x.push_back(std::vector<double>{1, 0, 0, 0, 0, 0});
    x.push_back(std::vector<double>{1, 0, 0, 0, 0, 0});
    CHECK(assign_keys(x, params).keys == std::vector<std::size_t>{1, 2});
  }
  SUBCASE("capacity") { CHECK_THROWS_AS(assign_keys(random_set(rng, 17, 6), params), CapacityError); }
  CHECK_FALSE(params.rho.weight.requires_grad());
  const auto trainable = params.trainable();
  CHECK(std::find(trainable.begin(), trainable.end(), &params.rho.weight) == trainable.end());
}

TEST_CASE("encode") {
  auto params = init_pisa<float>(small_config(), 4);
  std::mt19937_64 rng(2);
  SUBCASE("empty set encodes to zero") {
    auto z = encode(ElementSet(6), params);
    CHECK(std::all_of(z.z.begin(), z.z.end(), [](float v) { return v == 0.0f; }));
    CHECK(z.occupied_keys->empty());
  }
  SUBCASE("permutation invariance is exact") {
    for (int t = 0; t < 50; ++t) {
      const ElementSet x = random_set(rng, 1 + t % 16, 6);
      CHECK(encode(shuffled(x, rng), params).z == encode(x, params).z);
    }
  }
  SUBCASE("additivity with key offsets") {
    for (int t = 0; t < 50; ++t) {
      const std::size_t n0 = t % 9, n1 = (t * 7) % (17 - n0);
      const ElementSet x0 = random_set(rng, n0, 6), x1 = random_set(rng, n1, 6);
      auto z0 = encode(x0, params);
      auto z1 = encode(x1, params, n0);
      // Union encoded with the combined keys: x0's keys first, then x1's.
      const ElementSet joint = concat(key_ordered(x0, params), key_ordered(x1, params));
      auto zu = encode_no_rho(joint, params);
      std::vector<float> sum(z0.z.size());
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = z0.z[i] + z1.z[i];
      CHECK(max_abs_diff(sum, zu.z) < 1e-5);
      if (n1) CHECK(z1.occupied_keys->front() == n0 + 1);
    }
  }
  SUBCASE("capacity with offset") {
    CHECK_THROWS_AS(encode(random_set(rng, 10, 6), params, 7), CapacityError);
    CHECK_NOTHROW(encode(random_set(rng, 10, 6), params, 6));
  }
}

TEST_CASE("predict_cardinality clamps") {
  auto params = init_pisa<float>(small_config(), 5);
  LatentState<float> zero{std::vector<float>(24, 0.0f), std::nullopt};
  const std::size_t untrained = predict_cardinality(zero, params);
  CHECK(untrained <= 16);
  for (auto& l : params.lambda_dec.layers) {
    std::fill(l.weight.data().begin(), l.weight.data().end(), 0.0f);
    std::fill(l.bias->data().begin(), l.bias->data().end(), 0.0f);
  }
  (*params.lambda_dec.layers.back().bias)[0] = -3.2f;
  CHECK(predict_cardinality(zero, params) == 0);
  (*params.lambda_dec.layers.back().bias)[0] = 6.6f;
  CHECK(predict_cardinality(zero, params) == 7);
  (*params.lambda_dec.layers.back().bias)[0] = 100.0f;
  CHECK(predict_cardinality(zero, params) == 16);
}

TEST_CASE("decode") {
  auto params = init_pisa<float>(small_config(), 6);
  std::mt19937_64 rng(3);
  auto z = encode(random_set(rng, 5, 6), params);
  CHECK(decode(z, params, 0).empty());
  CHECK(decode(z, params, 5).size() == 5);
  CHECK(decode(z, params) == decode(z, params));
  CHECK(decode(z, params, 4) == decode(z, params, 4));
  // Slot i does not depend on how many slots are requested.
  auto three = decode(z, params, 3), five = decode(z, params, 5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 6; ++c) CHECK(three[i][c] == doctest::Approx(five[i][c]).epsilon(1e-6));
  CHECK_THROWS_AS(decode(z, params, 17), CapacityError);
}

TEST_CASE("latent insert and remove") {
  auto params = init_pisa<float>(small_config(), 7);
  std::mt19937_64 rng(4);
  SUBCASE("insert into empty latent equals encoding the singleton") {
    const ElementSet e = random_set(rng, 1, 6);
    auto z = latent_insert(encode(ElementSet(6), params), e[0], params);
    auto direct = encode(e, params);
    CHECK(max_abs_diff(z.z, direct.z) < 1e-6);
    CHECK(*z.occupied_keys == std::vector<std::size_t>{1});
  }
  SUBCASE("insert then remove restores the latent") {
    for (int t = 0; t < 100; ++t) {
      const ElementSet x = random_set(rng, t % 16, 6);
      const ElementSet e = random_set(rng, 1, 6);
      auto z = encode(x, params);
      auto inserted = latent_insert(z, e[0], params);
      CHECK(inserted.occupied_keys->size() == z.occupied_keys->size() + 1);
      CHECK(inserted.occupied_keys->back() == x.size() + 1);
      auto removed = latent_remove(inserted, x.size() + 1, e[0], params);
      CHECK(max_abs_diff(removed.z, z.z) < 1e-5);
      CHECK(*removed.occupied_keys == *z.occupied_keys);
    }
  }
  SUBCASE("removing the only element yields zero") {
    const ElementSet e = random_set(rng, 1, 6);
    auto removed = latent_remove(encode(e, params), 1, e[0], params);
    CHECK(max_abs_diff(removed.z, std::vector<float>(24, 0.0f)) < 1e-5);
    CHECK(removed.occupied_keys->empty());
  }
  SUBCASE("insert fills the smallest free key") {
    const ElementSet x = random_set(rng, 3, 6);
    const ElementSet ordered = key_ordered(x, params);
    auto z = latent_remove(encode(x, params), 2, ordered[1], params);
    auto again = latent_insert(z, ordered[1], params);
    CHECK(*again.occupied_keys == std::vector<std::size_t>{1, 2, 3});
    CHECK(max_abs_diff(again.z, encode(x, params).z) < 1e-5);
  }
  SUBCASE("errors") {
    const ElementSet x = random_set(rng, 2, 6);
    auto z = encode(x, params);
    CHECK_THROWS_AS(latent_remove(z, 3, x[0], params), KeyError);
    auto full = encode(random_set(rng, 16, 6), params);
    CHECK_THROWS_AS(latent_insert(full, x[0], params), CapacityError);
  }
}

TEST_CASE("encode_no_rho ablation") {
  auto params = init_pisa<float>(small_config(), 8);
  std::mt19937_64 rng(5);
  const ElementSet single = random_set(rng, 1, 6);
  CHECK(encode_no_rho(single, params).z == encode(single, params).z);
  const ElementSet x = random_set(rng, 6, 6);
  CHECK(encode_no_rho(key_ordered(x, params), params).z == encode(x, params).z);
  bool witnessed = false;
  for (int t = 0; t < 20 && !witnessed; ++t) {
    const ElementSet pair = random_set(rng, 2, 6);
    const ElementSet swapped = pair.permuted(std::vector<std::size_t>{1, 0});
    witnessed = max_abs_diff(encode_no_rho(pair, params).z, encode_no_rho(swapped, params).z) > 1e-6;
  }
  CHECK(witnessed);
}

TEST_CASE("encode_deepset ablation") {
  auto params = init_pisa<float>(small_config(), 9, true);
  std::mt19937_64 rng(6);
  const ElementSet x = random_set(rng, 7, 6);
  for (int t = 0; t < 10; ++t) {
    CHECK(max_abs_diff(encode_deepset(shuffled(x, rng), params).z, encode_deepset(x, params).z) <= 1e-6);
  }
  Tape<float> tape(false);
  auto zeros = tape.constant(Tensor<float>(Shape{1, 24}));
  const auto outer_zero = mlp_forward(params.deepset->outer, tape, zeros).value();
  const auto empty = encode_deepset(ElementSet(6), params);
  CHECK(std::equal(empty.z.begin(), empty.z.end(), outer_zero.data().begin()));
  const auto other = encode_deepset(random_set(rng, 7, 6), params);
  CHECK(max_abs_diff(other.z, encode_deepset(x, params).z) > 1e-3);
  auto plain = init_pisa<float>(small_config(), 9);
  CHECK_THROWS_AS(encode_deepset(x, plain), ContractError);
}

TEST_CASE("full training loss gradients match finite differences") {
  PisaConfig cfg;
  cfg.d_x = 2;
  cfg.d_z = 4;
  cfg.n_max = 4;
  cfg.hidden = 5;
  cfg.size_hidden = 3;
  std::mt19937_64 rng(77);
  for (Variant v : {Variant::kPisa, Variant::kNoRho, Variant::kDeepSet}) {
    for (int trial = 0; trial < 7; ++trial) {
      auto params = init_pisa<double>(cfg, 1000 + trial, v == Variant::kDeepSet);
      std::vector<ElementSet> sets{random_set(rng, 1 + trial % 4, 2), random_set(rng, 3, 2), ElementSet(2)};
      auto res = pisa::testing::grad_check(
          [&](Tape<double>& t) { return pisa_loss(params, t, sets, v).total; }, params.trainable());
      INFO(variant_name(v), " ", res.worst);
      CHECK(res.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("decoder slot i reconstructs the element with key i") {
  PisaConfig cfg;
  cfg.d_x = 3;
  cfg.d_z = 32;
  cfg.n_max = 4;
  auto params = init_pisa<float>(cfg, 21);
  std::mt19937_64 rng(8);
  const std::vector<ElementSet> sets{random_set(rng, 4, 3), random_set(rng, 3, 3), random_set(rng, 2, 3)};
  auto trainable = params.trainable();
  AdamConfig ac;
  ac.learning_rate = 3e-3;
  Adam<float> opt(trainable, ac);
  for (int step = 0; step < 3000; ++step) train_step(params, opt, sets, Variant::kPisa);
  for (const ElementSet& x : sets) {
    const ElementSet ordered = key_ordered(x, params);
    const ElementSet out = decode(encode(x, params), params, x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double per_key = squared_distance(ordered[k], out[k]) / 3.0;
      CHECK(per_key < 1e-3);
    }
    CHECK(predict_cardinality(encode(x, params), params) == x.size());
  }
}
