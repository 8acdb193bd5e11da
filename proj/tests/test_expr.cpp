#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "contractify/expr.hpp"
#include "test_helpers.hpp"

using namespace contractify;
using Catch::Matchers::ContainsSubstring;

namespace {

// y = x^2 on a scalar input, returning (graph, root) for gradient probes.
std::pair<ExprGraph, int> square_graph() {
  GraphBuilder b;
  int x = b.input(1);
  int y = b.square(x);
  b.output(y);
  return {b.build(), y};
}

}  // namespace

TEST_CASE("scalar primitives evaluate to textbook values", "[expr]") {
  GraphBuilder b;
  int x = b.input(1);
  b.output(b.relu(x));
  b.output(b.sin(x));
  b.output(b.tanh(x));
  ExprGraph g = b.build();

  std::vector<double> at_minus1 = eval_graph(g, std::vector<double>{-1.0}, {});
  CHECK(at_minus1[0] == 0.0);  // relu(-1)

  std::vector<double> at_zero = eval_graph(g, std::vector<double>{0.0}, {});
  CHECK(at_zero[1] == 0.0);  // sin(0)
  CHECK(at_zero[2] == 0.0);  // tanh(0)

  auto [sq, root] = square_graph();
  CHECK(eval_graph(sq, std::vector<double>{3.0}, {})[0] == 9.0);
  Gradients grad = gradient(sq, root, std::vector<double>{3.0}, {});
  CHECK(grad.input[0] == Catch::Approx(6.0).margin(1e-14));
}

TEST_CASE("subgradient conventions at kinks are fixed", "[expr]") {
  GraphBuilder b;
  int x = b.input(2);
  int c0 = component(b, x, 0, 2);
  int c1 = component(b, x, 1, 2);
  int r = b.relu(c0);
  int m = b.min(c0, c1);
  b.output(r);
  b.output(m);
  ExprGraph g = b.build();

  // relu at exactly zero contributes slope 0
  Gradients gr = gradient(g, r, std::vector<double>{0.0, 1.0}, {});
  CHECK(gr.input[0] == 0.0);

  // min ties route the cotangent to the first argument
  Gradients gm = gradient(g, m, std::vector<double>{1.0, 1.0}, {});
  CHECK(gm.input[0] == 1.0);
  CHECK(gm.input[1] == 0.0);
}

TEST_CASE("reverse-mode gradients match central differences", "[expr]") {
  // fixed composite touching every smooth primitive plus matvec/dot plumbing
  GraphBuilder b;
  int x = b.input(2);
  int th = b.param(2);
  int c0 = component(b, x, 0, 2);
  int c1 = component(b, x, 1, 2);
  int p0 = component(b, th, 0, 2);
  int s = b.sin(b.mul(c0, c1));
  int t = b.tanh(b.add(c0, p0));
  int q = b.power(b.scale(c1, 0.5), 3);
  int mv = b.matvec(b.constant({0.3, -0.7, 1.1, 0.4}), x, 2, 2);
  int d = b.dot(mv, x);
  int y = b.add(b.add(s, t), b.sub(q, b.neg(d)));
  b.output(y);
  ExprGraph g = b.build();

  std::vector<double> xs = {0.8, -0.6};
  std::vector<double> ps = {0.25, -1.0};
  Gradients ad = gradient(g, y, xs, ps);
  testutil::FdGrads fd = testutil::fd_gradient(g, xs, ps);
  for (int i = 0; i < 2; ++i) {
    CHECK(testutil::rel_err(ad.input[i], fd.input[i]) < 1e-7);
    CHECK(testutil::rel_err(ad.param[i], fd.param[i]) < 1e-7);
  }

  // fuzz: random graphs, points resampled away from relu/min kinks
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    testutil::RandomGraph rg = testutil::random_scalar_graph(rng);
    int root = rg.graph.outputs()[0];
    std::vector<double> pt;
    bool clear = false;
    for (int attempt = 0; attempt < 200 && !clear; ++attempt) {
      pt = testutil::sample_box(rg.box, rng);
      clear = testutil::kink_clear(rg.graph, pt, rg.params, 1e-3);
    }
    if (!clear) continue;  // graph is kinked almost everywhere; skip the draw
    Gradients a = gradient(rg.graph, root, pt, rg.params);
    testutil::FdGrads f = testutil::fd_gradient(rg.graph, pt, rg.params);
    for (std::size_t i = 0; i < a.input.size(); ++i)
      CHECK(testutil::rel_err(a.input[i], f.input[i]) < 1e-5);
    for (std::size_t i = 0; i < a.param.size(); ++i)
      CHECK(testutil::rel_err(a.param[i], f.param[i]) < 1e-5);
  }
}

TEST_CASE("evaluation is pure and bit-stable", "[expr]") {
  std::mt19937_64 rng(7);
  testutil::RandomGraph rg = testutil::random_scalar_graph(rng);
  std::vector<double> pt = testutil::sample_box(rg.box, rng);

  std::vector<double> first = eval_graph(rg.graph, pt, rg.params);
  for (int k = 0; k < 5; ++k) {
    std::vector<double> again = eval_graph(rg.graph, pt, rg.params);
    REQUIRE(again.size() == first.size());
    CHECK(std::memcmp(again.data(), first.data(), first.size() * sizeof(double)) == 0);
  }

  // the tape-filling overload agrees with the value-returning one
  Tape t;
  eval_graph(rg.graph, pt, rg.params, t);
  int root = rg.graph.outputs()[0];
  CHECK(t.val[static_cast<std::size_t>(rg.graph.value_offset(root))] == first[0]);
}

TEST_CASE("builder and evaluator reject malformed graphs loudly", "[expr]") {
  GraphBuilder b;
  int x2 = b.input(2);
  int s = b.constant(1.0);
  CHECK_THROWS_AS(b.add(x2, s), std::invalid_argument);
  CHECK_THROWS_WITH(b.matvec(b.constant({1.0, 2.0, 3.0}), x2, 2, 2),
                    ContainsSubstring("rows*cols"));
  CHECK_THROWS_AS(b.dot(x2, s), std::invalid_argument);
  CHECK_THROWS_AS(b.power(s, 1), std::invalid_argument);
  CHECK_THROWS_AS(b.add(x2, 99), std::invalid_argument);  // node index out of range

  GraphBuilder empty;
  empty.input(1);
  CHECK_THROWS_WITH(empty.build(), ContainsSubstring("no outputs"));

  GraphBuilder ok;
  int xi = ok.input(2);
  ok.output(xi);
  ExprGraph g = ok.build();
  CHECK_THROWS_WITH(eval_graph(g, std::vector<double>{1.0}, {}),
                    ContainsSubstring("input length"));
  CHECK_THROWS_WITH(gradient(g, xi, std::vector<double>{1.0, 2.0}, {}),
                    ContainsSubstring("not scalar"));
}

TEST_CASE("graphs splice and reassemble without changing semantics", "[expr]") {
  // inner graph sin(u) spliced onto u = x1 + x2
  GraphBuilder inner;
  int u = inner.input(1);
  inner.output(inner.sin(u));
  ExprGraph ig = inner.build();

  GraphBuilder outer;
  int x = outer.input(2);
  int sum = outer.add(component(outer, x, 0, 2), component(outer, x, 1, 2));
  int spliced = inline_graph(outer, ig, {sum});
  outer.output(spliced);
  ExprGraph og = outer.build();
  double got = eval_graph(og, std::vector<double>{0.3, 0.4}, {})[0];
  CHECK(got == Catch::Approx(std::sin(0.7)).margin(1e-15));

  // parametric graphs cannot be spliced
  GraphBuilder pg;
  int pu = pg.input(1);
  int pp = pg.param(1);
  pg.output(pg.add(pu, pp));
  ExprGraph pgg = pg.build();
  GraphBuilder host;
  int hx = host.input(1);
  CHECK_THROWS_WITH(inline_graph(host, pgg, {hx}), ContainsSubstring("parametric"));

  // component / assemble round-trips the identity
  GraphBuilder rt;
  int v = rt.input(3);
  std::vector<int> parts;
  for (int i = 0; i < 3; ++i) parts.push_back(component(rt, v, i, 3));
  rt.output(assemble(rt, parts));
  ExprGraph rtg = rt.build();
  std::vector<double> xs = {1.5, -2.0, 0.25};
  std::vector<double> back = eval_graph(rtg, xs, {});
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(back[static_cast<std::size_t>(i)] == xs[static_cast<std::size_t>(i)]);
}
