#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "frtpad/adapter.hpp"
#include "helpers.hpp"

using namespace frtpad;
using frtpad::testing::random_dtensor;
using frtpad::testing::random_tensor;

namespace {

EdgeMatrix from_rows(std::initializer_list<std::initializer_list<int>> rows) {
  EdgeMatrix e(rows.size());
  std::size_t i = 0;
  for (const auto& r : rows) {
    std::size_t j = 0;
    for (int v : r) e.set(i, j++, v != 0);
    ++i;
  }
  return e;
}

EdgeMatrix permute(const EdgeMatrix& e, const std::vector<std::size_t>& perm) {
  // Vertex k of the permuted graph is vertex perm[k] of the original.
  EdgeMatrix out(e.size());
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = 0; j < e.size(); ++j) out.set(i, j, e(perm[i], perm[j]));
  return out;
}

template <typename T>
BasicTensor<T> permute_rows(const BasicTensor<T>& m, const std::vector<std::size_t>& perm) {
  BasicTensor<T> out(m.shape());
  const std::size_t cols = m.dim(1);
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < cols; ++c) out.at(i, c) = m.at(perm[i], c);
  return out;
}

template <typename T>
std::vector<GatHead<T>> make_heads(ad::Tape<T>& tape, std::size_t count, std::size_t d_in,
                                   std::size_t d_out, Rng& rng) {
  std::vector<GatHead<T>> heads;
  for (std::size_t h = 0; h < count; ++h) {
    heads.push_back({tape.constant(random_tensor({d_in, d_out}, rng).template cast<T>()),
                     tape.constant(random_tensor({d_out, 1}, rng).template cast<T>()),
                     tape.constant(random_tensor({d_out, 1}, rng).template cast<T>())});
  }
  return heads;
}

FeatureStack random_stack(const AdapterConfig& cfg, Rng& rng) {
  FeatureStack s;
  for (const auto& l : cfg.levels) s.levels.push_back(random_tensor(l.shape(), rng));
  return s;
}

AdapterConfig small_adapter(Topology topology = Topology::kStepByStep) {
  return frtpad::testing::small_model(true, topology).adapter;
}

}  // namespace

TEST_CASE("build_edges examples") {
  CHECK(build_edges({Topology::kStepByStep, 3, true}) == from_rows({{1, 1, 0}, {1, 1, 1}, {0, 1, 1}}));
  CHECK(build_edges({Topology::kDense, 3, true}) == from_rows({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}}));
  CHECK(build_edges({Topology::kStepByStep, 1, true}) == from_rows({{1}}));
  CHECK(build_edges({Topology::kStepByStep, 3, false}) == from_rows({{0, 1, 0}, {1, 0, 1}, {0, 1, 0}}));
  CHECK_THROWS(build_edges({Topology::kDense, 0, true}));
}

TEST_CASE("edge matrices are symmetric with per-topology edge counts for n in [1, 32]") {
  for (std::size_t n = 1; n <= 32; ++n) {
    for (bool loops : {true, false}) {
      const auto chain = build_edges({Topology::kStepByStep, n, loops});
      const auto dense = build_edges({Topology::kDense, n, loops});
      CHECK(chain.symmetric());
      CHECK(dense.symmetric());
      CHECK(chain.edge_count() == n - 1);
      CHECK(dense.edge_count() == n * (n - 1) / 2);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(chain(i, i) == loops);
        CHECK(dense(i, i) == loops);
      }
    }
  }
}

TEST_CASE("topology names round trip") {
  for (Topology t : {Topology::kStepByStep, Topology::kDense}) CHECK(topology_from_string(to_string(t)) == t);
  CHECK_THROWS(topology_from_string("ring"));
}

TEST_CASE("attention_scores examples") {
  ad::FTape tape;
  const auto dense2 = build_edges({Topology::kDense, 2, true});
  auto v = tape.constant(Tensor::matrix({{3, 0}, {5, 0}}));
  SUBCASE("identity weight reduction") {
    GatHead<float> h{tape.constant(Tensor::matrix({{1, 0}, {0, 1}})), tape.constant(Tensor::matrix({{1}, {0}})),
                     tape.constant(Tensor::matrix({{0}, {0}}))};
    CHECK(attention_scores(v, h, dense2).value() == Tensor::matrix({{3, 3}, {5, 5}}));
  }
  SUBCASE("zero attention vectors") {
    GatHead<float> h{tape.constant(Tensor::matrix({{1, 2}, {3, 4}})), tape.constant(Tensor(Shape{2, 1})),
                     tape.constant(Tensor(Shape{2, 1}))};
    for (float x : attention_scores(v, h, dense2).value().data()) CHECK(x == 0.0f);
  }
  SUBCASE("dimension mismatch") {
    GatHead<float> h{tape.constant(Tensor(Shape{3, 2})), tape.constant(Tensor(Shape{2, 1})),
                     tape.constant(Tensor(Shape{2, 1}))};
    CHECK_THROWS_AS(attention_scores(v, h, dense2), ShapeError);
    GatHead<float> ok{tape.constant(Tensor(Shape{2, 2})), tape.constant(Tensor(Shape{2, 1})),
                      tape.constant(Tensor(Shape{2, 1}))};
    CHECK_THROWS_AS(attention_scores(v, ok, build_edges({Topology::kDense, 3, true})), ShapeError);
  }
}

TEST_CASE("attention matches a direct double-loop evaluation") {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + trial % 7, d = 5, k = 4;
    const auto topo = trial % 2 ? Topology::kDense : Topology::kStepByStep;
    const auto edges = build_edges({topo, n, true});
    const auto v0 = random_dtensor({n, d}, rng);
    const auto w0 = random_dtensor({d, k}, rng);
    const auto q1 = random_dtensor({k, 1}, rng);
    const auto q2 = random_dtensor({k, 1}, rng);
    ad::Tape<double> tape;
    GatHead<double> h{tape.constant(w0), tape.constant(q1), tape.constant(q2)};
    const auto v = tape.constant(v0);
    const auto a = attention_scores(v, h, edges);
    const auto as = normalize_attention(a, edges);

    std::vector<double> s(n, 0.0), r(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < k; ++c) {
        double wv = 0.0;
        for (std::size_t j = 0; j < d; ++j) wv += v0.at(i, j) * w0.at(j, c);
        s[i] += wv * q1[c];
        r[i] += wv * q2[c];
      }
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (edges(i, j)) z += std::exp(s[i] + r[j]);
      for (std::size_t j = 0; j < n; ++j) {
        const double expect_a = edges(i, j) ? s[i] + r[j] : 0.0;
        CHECK(a.value().at(i, j) == doctest::Approx(expect_a).epsilon(1e-12));
        const double expect_s = edges(i, j) ? std::exp(s[i] + r[j]) / z : 0.0;
        CHECK(as.value().at(i, j) == doctest::Approx(expect_s).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("normalize_attention examples") {
  ad::FTape tape;
  SUBCASE("uniform dense") {
    const auto e = build_edges({Topology::kDense, 4, true});
    for (float x : normalize_attention(tape.constant(Tensor(Shape{4, 4}, 1.5f)), e).value().data())
      CHECK(x == doctest::Approx(0.25f));
  }
  SUBCASE("two neighbors") {
    const auto e = build_edges({Topology::kDense, 2, true});
    const float l2 = std::numbers::ln2_v<float>;
    auto y = normalize_attention(tape.constant(Tensor::matrix({{l2, 0}, {0, 0}})), e).value();
    CHECK(y.at(0, 0) == doctest::Approx(2.0f / 3.0f));
    CHECK(y.at(0, 1) == doctest::Approx(1.0f / 3.0f));
  }
  SUBCASE("chain ends never attend to each other") {
    const auto e = build_edges({Topology::kStepByStep, 3, true});
    Rng rng(1);
    auto y = normalize_attention(tape.constant(random_tensor({3, 3}, rng, -5, 5)), e).value();
    CHECK(y.at(0, 2) == 0.0f);
    CHECK(y.at(2, 0) == 0.0f);
  }
  SUBCASE("isolated vertex") {
    const auto e = build_edges({Topology::kStepByStep, 1, false});
    CHECK_THROWS_AS(normalize_attention(tape.constant(Tensor(Shape{1, 1})), e), std::invalid_argument);
  }
}

TEST_CASE("gat_layer with uniform attention and identity weight averages neighbors") {
  ad::FTape tape;
  const auto e = build_edges({Topology::kStepByStep, 3, true});
  auto v = tape.constant(Tensor::matrix({{1, 2}, {3, 4}, {5, 9}}));
  std::vector<GatHead<float>> heads{{tape.constant(Tensor::matrix({{1, 0}, {0, 1}})),
                                     tape.constant(Tensor(Shape{2, 1})), tape.constant(Tensor(Shape{2, 1}))}};
  auto y = gat_layer(v, e, heads, HeadCombine::kConcat).value();
  CHECK(y.at(0, 0) == doctest::Approx(2.0f));
  CHECK(y.at(0, 1) == doctest::Approx(3.0f));
  CHECK(y.at(1, 0) == doctest::Approx(3.0f));
  CHECK(y.at(1, 1) == doctest::Approx(5.0f));
  CHECK(y.at(2, 0) == doctest::Approx(4.0f));
  CHECK(y.at(2, 1) == doctest::Approx(6.5f));
}

TEST_CASE("gat_layer head combination shapes") {
  Rng rng(2);
  ad::FTape tape;
  const auto e = build_edges({Topology::kDense, 4, true});
  auto v = tape.constant(random_tensor({4, 5}, rng));
  const auto heads = make_heads(tape, 2, 5, 3, rng);
  CHECK(gat_layer(v, e, heads, HeadCombine::kConcat).shape() == Shape{4, 6});
  CHECK(gat_layer(v, e, heads, HeadCombine::kAverage).shape() == Shape{4, 3});
  CHECK_THROWS(gat_layer(v, e, std::vector<GatHead<float>>{}, HeadCombine::kAverage));
}

TEST_CASE("gat_layer is equivariant under vertex relabeling") {
  Rng rng(41);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + trial % 12;
    const auto topo = trial % 2 ? Topology::kDense : Topology::kStepByStep;
    const auto edges = build_edges({topo, n, true});
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto v0 = random_tensor({n, 6}, rng);
    ad::FTape tape;
    const auto heads = make_heads(tape, 2, 6, 4, rng);
    const auto combine = trial % 3 ? HeadCombine::kConcat : HeadCombine::kAverage;
    const auto base = gat_layer(tape.constant(v0), edges, heads, combine).value();
    const auto moved =
        gat_layer(tape.constant(permute_rows(v0, perm)), permute(edges, perm), heads, combine).value();
    const auto expected = permute_rows(base, perm);
    for (std::size_t i = 0; i < expected.numel(); ++i) CHECK(std::abs(moved[i] - expected[i]) <= 1e-5f);
  }
}

TEST_CASE("dense graph over identical vertices gives identical outputs") {
  Rng rng(3);
  ad::FTape tape;
  const auto row = random_tensor({1, 5}, rng);
  Tensor v0(Shape{4, 5});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 5; ++c) v0.at(i, c) = row.at(0, c);
  const auto heads = make_heads(tape, 2, 5, 3, rng);
  const auto y = gat_layer(tape.constant(v0), build_edges({Topology::kDense, 4, true}), heads,
                           HeadCombine::kConcat)
                     .value();
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t c = 0; c < 6; ++c) CHECK(y.at(i, c) == y.at(0, c));
}

TEST_CASE("combine_latent examples") {
  ad::FTape tape;
  CHECK(combine_latent(tape.constant(Tensor::matrix({{2, 3}, {4, 5}}))).value() == Tensor::vector({8, 15}));
  CHECK(combine_latent(tape.constant(Tensor::matrix({{1, 1}, {1, 1}, {7, -2}}))).value() ==
        Tensor::vector({7, -2}));
  CHECK(combine_latent(tape.constant(Tensor::matrix({{2, 0}, {4, 2}, {1, 3}}))).value() ==
        Tensor::vector({3, 3}));
  CHECK_THROWS(combine_latent(tape.constant(Tensor::matrix({{1, 2}}))));
}

TEST_CASE("project_features") {
  const auto cfg = AdapterConfig{};
  ParamSet p;
  Rng rng(4);
  init_adapter_params(p, cfg, rng);
  SUBCASE("default shape contract") {
    ad::FTape tape(&p);
    CHECK(project_features(tape, random_stack(cfg, rng), cfg).shape() == Shape{4, 64});
  }
  SUBCASE("zero stack with zero biases gives zero vertices") {
    FeatureStack s;
    for (const auto& l : cfg.levels) s.levels.emplace_back(l.shape());
    ad::FTape tape(&p);
    for (float x : project_features(tape, s, cfg).value().data()) CHECK(x == 0.0f);
  }
  SUBCASE("deterministic") {
    const auto s = random_stack(cfg, rng);
    ad::FTape t1(&p), t2(&p);
    CHECK(frtpad::testing::bitwise_equal(project_features(t1, s, cfg).value(),
                                         project_features(t2, s, cfg).value()));
  }
  SUBCASE("level count and shape mismatch") {
    auto s = random_stack(cfg, rng);
    ad::FTape tape(&p);
    auto wrong = s;
    wrong.levels[1] = Tensor(Shape{31, 8, 8});
    CHECK_THROWS_AS(project_features(tape, wrong, cfg), ShapeError);
    s.levels.pop_back();
    CHECK_THROWS_AS(project_features(tape, s, cfg), ShapeError);
  }
}

TEST_CASE("adapt") {
  Rng rng(5);
  for (Topology topo : {Topology::kStepByStep, Topology::kDense}) {
    const auto cfg = small_adapter(topo);
    ParamSet p;
    init_adapter_params(p, cfg, rng);
    const auto stack = random_stack(cfg, rng);
    ad::FTape t1(&p), t2(&p);
    const auto a = adapt(t1, stack, cfg).value();
    CHECK(a.shape() == Shape{cfg.output_dim});
    CHECK(frtpad::testing::bitwise_equal(a, adapt(t2, stack, cfg).value()));

    ParamSet zero;
    for (const auto& e : p) zero.add(e.name, Tensor(e.value.shape()));
    ad::FTape t3(&zero);
    for (float x : adapt(t3, stack, cfg).value().data()) CHECK(x == 0.0f);
  }
}

TEST_CASE("adapter config validation") {
  AdapterConfig c;
  c.levels.resize(1);
  CHECK_THROWS(c.validate());
  c = AdapterConfig{};
  c.heads = 0;
  CHECK_THROWS(c.validate());
  CHECK_NOTHROW(AdapterConfig{}.validate());
}

TEST_CASE("q1 receives no gradient under literal scores but does with leaky scores") {
  // With literal scores A(i,j) = s_i + r_j, the row term s_i is constant
  // across each softmax row and cancels. Leaky scores break the cancellation
  // only on rows whose scores straddle zero, so q1 is checked over several
  // instances.
  Rng rng(6);
  for (bool leaky : {false, true}) {
    std::map<std::string, bool> q1_moved;
    for (int trial = 0; trial < 10; ++trial) {
      auto cfg = small_adapter(Topology::kStepByStep);
      cfg.leaky_scores = leaky;
      ParamSet p;
      init_adapter_params(p, cfg, rng);
      const auto stack = random_stack(cfg, rng);
      const auto head = random_tensor({cfg.output_dim}, rng);
      ad::FTape tape(&p);
      tape.backward(ad::sum(ad::mul(adapt(tape, stack, cfg), tape.constant(head))));
      const auto g = tape.param_grads();
      float overall = 0.0f;
      for (std::size_t i = 0; i < p.size(); ++i)
        for (float x : g.at(i).data()) overall = std::max(overall, std::abs(x));
      for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& name = p.entry(i).name;
        float mx = 0.0f;
        for (float x : g.at(i).data()) mx = std::max(mx, std::abs(x));
        INFO(name << " leaky=" << leaky << " max|g|=" << mx << " overall=" << overall);
        if (!name.ends_with(".q1")) CHECK(mx > 1e-4f * overall);
        else if (!leaky) CHECK(mx <= 1e-6f * overall);  // zero up to float rounding
        else q1_moved[name] = q1_moved[name] || mx > 1e-4f * overall;
      }
    }
    for (const auto& [name, moved] : q1_moved) {
      INFO(name);
      CHECK(moved);
    }
  }
}

TEST_CASE("dense graph with literal scores collapses vertices after the first layer") {
  // Every row of A_s is softmax(r), so all first-layer outputs coincide and
  // the second layer's attention vectors have nothing to choose between.
  Rng rng(7);
  auto cfg = small_adapter(Topology::kDense);
  ParamSet p;
  init_adapter_params(p, cfg, rng);
  const auto stack = random_stack(cfg, rng);
  ad::FTape tape(&p);
  const auto v = project_features(tape, stack, cfg);
  std::vector<GatHead<float>> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::string base = "adapter.gat1.head" + std::to_string(h) + ".";
    heads.push_back({tape.param(base + "W"), tape.param(base + "q1"), tape.param(base + "q2")});
  }
  const auto y = gat_layer(v, build_edges(cfg.graph()), heads, HeadCombine::kConcat).value();
  for (std::size_t i = 1; i < y.dim(0); ++i)
    for (std::size_t c = 0; c < y.dim(1); ++c) CHECK(y.at(i, c) == doctest::Approx(y.at(0, c)).epsilon(1e-5));

  ad::FTape full(&p);
  full.backward(ad::sum(adapt(full, stack, cfg)));
  const auto g = full.param_grads();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& name = p.entry(i).name;
    if (!name.starts_with("adapter.gat2") || name.ends_with(".W")) continue;
    float mx = 0.0f;
    for (float x : g.at(i).data()) mx = std::max(mx, std::abs(x));
    INFO(name << " max|g|=" << mx);
    CHECK(mx <= 1e-6f);
  }
}
