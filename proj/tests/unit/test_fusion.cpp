#include <random>

#include "doctest.h"
#include "segfuse/errors.hpp"
#include "segfuse/fusion.hpp"
#include "support/oracles.hpp"

using namespace segfuse;

namespace {

FusionWeights weights(std::vector<std::pair<ModelId, double>> w) {
  return FusionWeights{GroupKey::component(Component::Shell), std::move(w)};
}

}  // namespace

TEST_CASE("group_predictions") {
  std::vector<MaskInstance> inst;
  std::int64_t id = 0;
  for (ObjectId obj : {0, 1}) {
    for (const ModelId m : {"a", "b", "c"}) {
      for (Component c : kComponents) {
        const double score = 0.1 + 0.01 * static_cast<double>(id);
        inst.push_back(fixture::instance(fixture::block(4, 4, 0, 0, 2, 2), id++, c, score, m, obj));
      }
    }
  }
  const auto vertical = group_predictions(inst, GroupingMode::Vertical);
  CHECK(vertical.size() == 4);
  for (const auto& g : vertical) {
    CHECK(g.members.size() == 6);
    for (std::size_t i = 1; i < g.members.size(); ++i)
      CHECK(g.members[i - 1].score >= g.members[i].score);
  }
  const auto horizontal = group_predictions(inst, GroupingMode::Horizontal);
  CHECK(horizontal.size() == 2);
  for (const auto& g : horizontal) CHECK(g.members.size() == 12);

  inst[0].object_id.reset();
  CHECK_THROWS_AS(group_predictions(inst, GroupingMode::Horizontal), DataError);
}

TEST_CASE("compute_weights") {
  const GroupKey k = GroupKey::component(Component::Shell);
  const std::vector<std::pair<ModelId, double>> equal{{"a", 0.7}, {"b", 0.7}, {"c", 0.7}};
  for (const auto& [m, w] : compute_weights(equal, k, NormalizationMode::Fraction).weights)
    CHECK(w == doctest::Approx(1.0 / 3.0));
  const std::vector<std::pair<ModelId, double>> single{{"a", 0.4}};
  CHECK(compute_weights(single, k, NormalizationMode::Fraction).weights[0].second == 1.0);

  const std::vector<std::pair<ModelId, double>> shell_aps{
      {"r101", 0.9176}, {"r50", 0.9119}, {"x101", 0.9179}};
  const auto w = compute_weights(shell_aps, k, NormalizationMode::Fraction);
  CHECK(w.weight_of("r50") == doctest::Approx(0.33191).epsilon(1e-5 / 0.33));
  CHECK(w.weight_of("r101") == doctest::Approx(0.33399).epsilon(1e-5 / 0.33));
  CHECK(w.weight_of("x101") == doctest::Approx(0.33410).epsilon(1e-5 / 0.33));
  const double sum = w.weight_of("r50") + w.weight_of("r101") + w.weight_of("x101");
  CHECK(std::abs(sum - 1.0) < 1e-12);

  const std::vector<std::pair<ModelId, double>> zeros{{"a", 0.0}, {"b", 0.0}};
  for (const auto& [m, v] : compute_weights(zeros, k, NormalizationMode::Fraction).weights)
    CHECK(v == 0.5);
}

TEST_CASE("compute_weights from an AP table") {
  ApTable t;
  const GroupKey k = GroupKey::component(Component::Meat);
  t.cells[{"a", k}] = 0.2;
  t.cells[{"b", k}] = 0.6;
  const auto w = compute_weights(t, k, NormalizationMode::Fraction);
  CHECK(w.weight_of("a") == doctest::Approx(0.25));
  CHECK(w.weight_of("b") == doctest::Approx(0.75));
}

TEST_CASE("fuse_soft examples") {
  const SoftMask left{2, 2, {1, 0, 1, 0}};
  const SoftMask right{2, 2, {0, 1, 0, 1}};
  const auto fused = fuse_soft({{"a", left}, {"b", right}}, weights({{"a", 0.6}, {"b", 0.4}}));
  CHECK(fused.values == std::vector<double>{0.6, 0.4, 0.6, 0.4});

  const auto same = fuse_soft({{"a", left}, {"b", left}, {"c", left}},
                              weights({{"a", 0.2}, {"b", 0.3}, {"c", 0.5}}));
  CHECK(same.values == left.values);
  const auto degenerate = fuse_soft({{"a", left}, {"b", right}}, weights({{"a", 1.0}, {"b", 0.0}}));
  CHECK(degenerate.values == left.values);

  CHECK_THROWS_AS(fuse_soft({{"a", left}, {"b", SoftMask{1, 2, {0, 0}}}},
                            weights({{"a", 0.5}, {"b", 0.5}})),
                  ShapeError);
}

TEST_CASE("fuse_logits examples") {
  std::mt19937_64 rng(3);
  const LogitMap a = fixture::random_logits(rng, 3, 4, 5);
  CHECK(fuse_logits({{"a", a}, {"b", a}}, weights({{"a", 0.3}, {"b", 0.7}})) == a);

  const auto mixed =
      fuse_logits({{"a", LogitMap(1, 2, 1, 1.0)}, {"b", LogitMap(1, 2, 1, 3.0)}},
                  weights({{"a", 0.5}, {"b", 0.5}}));
  for (double v : mixed.data()) CHECK(v == 2.0);

  const auto three = fuse_logits({{"a", LogitMap(1, 1, 1, 1.0)},
                                  {"b", LogitMap(1, 1, 1, 2.0)},
                                  {"c", LogitMap(1, 1, 1, 4.0)}},
                                 weights({{"a", 0.5}, {"b", 0.25}, {"c", 0.25}}));
  CHECK(three.at(0, 0, 0) == 2.0);

  CHECK_THROWS_AS(fuse_logits({{"a", a}, {"b", LogitMap(3, 4, 4, 0.0)}},
                              weights({{"a", 0.5}, {"b", 0.5}})),
                  ShapeError);
}

TEST_CASE("fused values lie between the operands") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::map<ModelId, LogitMap> maps;
    std::vector<std::pair<ModelId, double>> ws;
    double total = 0.0;
    for (const ModelId m : {"a", "b", "c"}) {
      maps.emplace(m, fixture::random_logits(rng, 2, 3, 2));
      ws.push_back({m, u(rng) + 1e-3});
      total += ws.back().second;
    }
    for (auto& [m, w] : ws) w /= total;
    const LogitMap out = fuse_logits(maps, weights(ws));
    for (std::size_t i = 0; i < out.size(); ++i) {
      double lo = 1e300, hi = -1e300;
      for (const auto& [m, map] : maps) {
        lo = std::min(lo, map.data()[i]);
        hi = std::max(hi, map.data()[i]);
      }
      CHECK(out.data()[i] >= lo);
      CHECK(out.data()[i] <= hi);
    }
  }
}

TEST_CASE("binarize") {
  CHECK(binarize(SoftMask{1, 2, {0, 0}}, 0.5).count() == 0);
  CHECK(binarize(SoftMask{1, 2, {1, 1}}, 0.5).count() == 2);
  CHECK(binarize(SoftMask{1, 2, {0.5, 0.4999}}, 0.5).bits == std::vector<std::uint8_t>{1, 0});
  CHECK_THROWS_AS(binarize(SoftMask{1, 1, {0}}, 1.0), ArgumentError);
}

TEST_CASE("fuse_group") {
  const auto m1 = fixture::block(6, 6, 0, 0, 4, 4);
  const auto m2 = fixture::block(6, 6, 0, 0, 4, 3);
  MaskGroup g{GroupKey::component(Component::Shell),
              {fixture::instance(m1, 0, Component::Shell, 0.9, "a", 0),
               fixture::instance(m2, 1, Component::Shell, 0.8, "b", 0)}};
  const auto out = fuse_group(g, weights({{"a", 0.6}, {"b", 0.4}}), 0.5, "ensemble");
  REQUIRE(out.size() == 1);
  CHECK(rle_decode(out[0].mask) == m1);
  CHECK(out[0].score == doctest::Approx(0.6 * 0.9 + 0.4 * 0.8));
  CHECK(out[0].model_id == "ensemble");
  CHECK(out[0].object_id == 0);

  const auto minority = fuse_group(g, weights({{"a", 0.4}, {"b", 0.6}}), 0.5, "ensemble");
  CHECK(rle_decode(minority[0].mask) == m2);
}
