#include <doctest.h>

#include <cmath>
#include <memory>

#include "support.hpp"
#include "warmstart/adam.hpp"
#include "warmstart/autodiff.hpp"

using namespace warmstart;

namespace {

using P = std::shared_ptr<Parameter<double>>;

P leaf(const std::string& name, Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = scale * standard_normal(rng);
  return std::make_shared<Parameter<double>>(name, std::move(t));
}

// Numeric vs analytic gradients of sum(f(leaves) * w) for fixed random w.
double max_rel_error(const std::vector<P>& leaves, const std::function<Var(Graph<double>&, std::vector<Var>&)>& f,
                     std::uint64_t seed = 3) {
  Rng rng(seed);
  Tensor<double> weights;
  auto run = [&](bool track, bool backward) {
    Graph<double> g(track);
    std::vector<Var> vars;
    for (auto& p : leaves) vars.push_back(g.parameter(*p));
    Var out = f(g, vars);
    if (weights.empty()) {
      weights = Tensor<double>(g.value(out).shape());
      for (auto& w : weights.storage()) w = standard_normal(rng);
    }
    Var loss = weighted_sum(g, out, weights);
    if (backward) g.backward(loss);
    return g.value(loss).item();
  };
  for (auto& p : leaves) p->zero_grad();
  run(true, true);
  double worst = 0.0;
  const double eps = 1e-6;
  for (auto& p : leaves) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double up = run(false, false);
      p->value[i] = orig - eps;
      const double down = run(false, false);
      p->value[i] = orig;
      const double num = (up - down) / (2 * eps);
      const double rel = std::abs(num - p->grad[i]) / std::max({std::abs(num), std::abs(p->grad[i]), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("elementwise and dense ops match finite differences") {
    Rng rng(11);
    auto a = leaf("a", {3, 4}, rng), b = leaf("b", {3, 4}, rng), c = leaf("c", {4, 5}, rng), d = leaf("d", {5, 4}, rng);
    auto bias = leaf("bias", {4}, rng);
    CHECK(max_rel_error({a, b}, [](auto& g, auto& v) { return add(g, v[0], v[1]); }) < 1e-6);
    CHECK(max_rel_error({a, bias}, [](auto& g, auto& v) { return add_bias(g, v[0], v[1]); }) < 1e-6);
    CHECK(max_rel_error({a}, [](auto& g, auto& v) { return scale(g, v[0], 0.37); }) < 1e-6);
    CHECK(max_rel_error({a, c}, [](auto& g, auto& v) { return matmul(g, v[0], v[1]); }) < 1e-6);
    CHECK(max_rel_error({a, d}, [](auto& g, auto& v) { return matmul_bt(g, v[0], v[1]); }) < 1e-6);
    CHECK(max_rel_error({a}, [](auto& g, auto& v) { return gelu(g, v[0]); }) < 1e-5);
    CHECK(max_rel_error({a}, [](auto& g, auto& v) { return softmax(g, v[0], 1); }) < 1e-5);
  }

  TEST_CASE("layer norm gradient covers input, gain and bias") {
    Rng rng(12);
    auto x = leaf("x", {4, 6}, rng), gain = leaf("g", {6}, rng), bias = leaf("b", {6}, rng);
    CHECK(max_rel_error({x, gain, bias}, [](auto& g, auto& v) { return layer_norm(g, v[0], v[1], v[2]); }) < 1e-4);
  }

  TEST_CASE("embedding, selection and cross-entropy") {
    Rng rng(13);
    auto table = leaf("t", {6, 3}, rng);
    const std::vector<std::int32_t> ids = {1, 4, 1, 0, 5};
    CHECK(max_rel_error({table}, [&](auto& g, auto& v) { return embedding(g, v[0], std::span(ids)); }) < 1e-6);
    const std::vector<std::size_t> rows = {2, 0, 2};
    CHECK(max_rel_error({table}, [&](auto& g, auto& v) { return select_rows(g, v[0], std::span(rows)); }) < 1e-6);
    auto logits = leaf("l", {4, 5}, rng);
    const std::vector<std::int32_t> targets = {0, 3, 4, 1};
    const std::vector<std::uint8_t> mask = {1, 0, 1, 1};
    CHECK(max_rel_error({logits}, [&](auto& g, auto& v) {
            return cross_entropy(g, v[0], std::span(targets), std::span(mask));
          }) < 1e-5);
  }

  TEST_CASE("masked multi-head attention") {
    Rng rng(14);
    auto q = leaf("q", {2 * 3, 4}, rng), k = leaf("k", {2 * 4, 4}, rng), v = leaf("v", {2 * 4, 4}, rng);
    AttentionSpec spec;
    spec.batch = 2;
    spec.query_len = 3;
    spec.key_len = 4;
    spec.heads = 2;
    spec.key_valid = {1, 1, 0, 1, 1, 1, 1, 0};
    CHECK(max_rel_error({q, k, v}, [&](auto& g, auto& x) { return attention(g, x[0], x[1], x[2], spec); }) < 1e-5);
    auto qc = leaf("qc", {2 * 4, 4}, rng);
    AttentionSpec causal = spec;
    causal.query_len = 4;
    causal.causal = true;
    CHECK(max_rel_error({qc, k, v}, [&](auto& g, auto& x) { return attention(g, x[0], x[1], x[2], causal); }) < 1e-5);
  }

  TEST_CASE("shape errors name the dimension family") {
    Graph<double> g;
    Var a = g.constant(Tensor<double>({2, 3}));
    Var b = g.constant(Tensor<double>({2, 3}));
    CHECK_THROWS_AS(matmul(g, a, b), Error);
    try {
      matmul(g, a, b);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::dimension);
    }
  }

  TEST_CASE("cross-entropy over an empty selection is degenerate") {
    Graph<double> g;
    Var l = g.constant(Tensor<double>({2, 3}));
    const std::vector<std::int32_t> t = {0, 1};
    const std::vector<std::uint8_t> m = {0, 0};
    try {
      cross_entropy(g, l, std::span(t), std::span(m));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::degenerate);
    }
  }

  TEST_CASE("non-finite values are reported") {
    auto code_of = [](auto&& fn) {
      try {
        fn();
      } catch (const Error& e) {
        return e.code();
      }
      return ErrorCode::io;
    };
    Graph<double> g;
    Tensor<double> x({1, 2});
    x[0] = std::numeric_limits<double>::infinity();
    CHECK(code_of([&] { g.constant(x); }) == ErrorCode::non_finite);
    Var big = g.constant(Tensor<double>({1, 2}, 1e300));
    CHECK(code_of([&] { scale(g, big, 1e300); }) == ErrorCode::non_finite);
  }

  TEST_CASE("dropout with rate zero is the identity and otherwise rescales") {
    Rng rng(5);
    Graph<double> g;
    Tensor<double> x({50, 4}, 1.0);
    Var a = g.constant(x);
    CHECK(g.value(dropout(g, a, 0.0, rng)) == x);
    const auto& y = g.value(dropout(g, a, 0.5, rng));
    for (double v : y.storage()) CHECK((v == 0.0 || v == 2.0));
  }

  TEST_CASE("adam skips frozen parameters and applies bias correction") {
    Rng rng(6);
    auto p = leaf("p", {3}, rng);
    auto f = leaf("f", {3}, rng);
    f->frozen = true;
    const auto before_p = p->value, before_f = f->value;
    p->grad.fill(2.0);
    f->grad.fill(2.0);
    Adam<double> adam;
    std::vector<ParamPtr<double>> params = {p, f};
    adam.step(params, 0.1);
    CHECK(f->value == before_f);
    // First step: m_hat / sqrt(v_hat) = sign(g), so each entry moves by lr.
    for (std::size_t i = 0; i < 3; ++i) CHECK(p->value[i] == doctest::Approx(before_p[i] - 0.1).epsilon(1e-6));
  }
}
