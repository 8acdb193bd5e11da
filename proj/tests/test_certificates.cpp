#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <random>
#include <vector>

#include "contractify/certificates.hpp"
#include "contractify/systems.hpp"

using namespace contractify;
using Catch::Matchers::ContainsSubstring;

namespace {

std::vector<double> sample(const IntervalBox& box, std::mt19937_64& rng) {
  std::vector<double> x(static_cast<std::size_t>(box.size()));
  for (int i = 0; i < box.size(); ++i) {
    std::uniform_real_distribution<double> d(box[i].lo, box[i].hi);
    x[static_cast<std::size_t>(i)] = d(rng);
  }
  return x;
}

MetricNet random_metric(int n, int rows_k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  MetricNet m;
  m.mu = 0.1;
  m.n = n;
  m.rows_k = rows_k;
  Mlp::Layer l0;
  l0.w = Eigen::MatrixXd::NullaryExpr(6, n, [&] { return u(rng); });
  l0.b = Eigen::VectorXd::NullaryExpr(6, [&] { return u(rng); });
  l0.act = Act::tanh;
  Mlp::Layer l1;
  l1.w = Eigen::MatrixXd::NullaryExpr(rows_k * n, 6, [&] { return u(rng); });
  l1.b = Eigen::VectorXd::NullaryExpr(rows_k * n, [&] { return u(rng); });
  l1.act = Act::id;
  m.R.layers = {l0, l1};
  return m;
}

LyapunovFn quad_lyap(const Eigen::MatrixXd& P, double rho_V, double kappa = 0.1) {
  LyapunovFn v;
  v.form = LyapunovFn::Form::quadratic;
  v.P = P;
  v.rho_V = rho_V;
  v.kappa = kappa;
  return v;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("metric evaluation is symmetric and floored by mu", "[certificates]") {
  // constant metrics reproduce their quadratic shape exactly
  MetricNet id2 = constant_metric_from(2.0 * Eigen::Matrix2d::Identity(), 1.0);
  Eigen::MatrixXd m = metric_eval(id2, Eigen::Vector2d(0.3, -0.8));
  CHECK(m(0, 0) == Catch::Approx(2.0).margin(1e-12));
  CHECK(m(1, 1) == Catch::Approx(2.0).margin(1e-12));
  CHECK(m(0, 1) == Catch::Approx(0.0).margin(1e-12));

  Eigen::Matrix2d diag;
  diag << 4.0, 0.0, 0.0, 1.0;
  MetricNet d = constant_metric_from(diag, 1.0);
  Eigen::MatrixXd md = metric_eval(d, Eigen::Vector2d(1.0, 1.0));
  CHECK(md(0, 0) == Catch::Approx(4.0).margin(1e-12));
  CHECK(md(1, 1) == Catch::Approx(1.0).margin(1e-12));

  // mu above the shape's floor cannot be embedded
  CHECK_THROWS_AS(constant_metric_from(Eigen::Matrix2d::Identity(), 2.0),
                  std::invalid_argument);

  // neural metrics stay uniformly positive definite by construction
  std::mt19937_64 rng(31);
  MetricNet net = random_metric(2, 2, rng);
  validate_metric(net);
  for (int k = 0; k < 1000; ++k) {
    Eigen::Vector2d x(4.0 * (rng() % 1000) / 999.0 - 2.0, 4.0 * (rng() % 1000) / 999.0 - 2.0);
    Eigen::MatrixXd mx = metric_eval(net, x);
    CHECK((mx - mx.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(mx).eigenvalues().minCoeff();
    CHECK(lmin >= net.mu - 1e-9);
  }

  MetricNet bad = net;
  bad.rows_k = 3;  // R still maps 2 -> 4
  CHECK_THROWS_WITH(validate_metric(bad), ContainsSubstring("R must map"));
}

TEST_CASE("the contraction gap has its closed-form values on stubs", "[certificates]") {
  IntervalBox box = IntervalBox::cube(2, -1.0, 1.0);
  LyapunovFn lyap = quad_lyap(Eigen::Matrix2d::Identity(), 1e9);

  // identity map at rate 0.5: G = (1 - 0.25) |delta|^2
  ContractionTask tid = make_task(make_scale_stub(1.0, box),
                                  constant_metric_from(Eigen::Matrix2d::Identity(), 1.0), lyap,
                                  0.5, 0.2);
  double g = g_value(tid, {0.3, -0.2}, {0.1, 0.0});
  CHECK(g == Catch::Approx(0.0075).margin(1e-12));
  CHECK(g_value(tid, {0.3, -0.2}, {0.0, 0.0}) == 0.0);

  // halving map at rate 0.6 contracts everywhere
  ContractionTask thalf = make_task(make_scale_stub(0.5, box),
                                    constant_metric_from(Eigen::Matrix2d::Identity(), 1.0), lyap,
                                    0.6, 0.2);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> delta = {u(rng), u(rng)};
    double gk = g_value(thalf, {0.1, 0.1}, delta);
    double n2 = delta[0] * delta[0] + delta[1] * delta[1];
    CHECK(gk == Catch::Approx((0.25 - 0.36) * n2).margin(1e-12));
  }
}

TEST_CASE("the expanded gap equals the direct quadratic form", "[certificates]") {
  ClosedLoopSystem vdp = make_vdp();
  std::mt19937_64 rng(53);
  MetricNet metric = random_metric(2, 2, rng);
  LyapunovFn lyap = quad_lyap(Eigen::Matrix2d::Identity(), 0.5);
  ContractionTask t = make_task(vdp, metric, lyap, 0.99, 0.05);

  std::uniform_real_distribution<double> du(-0.05, 0.05);
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> x = sample(vdp.box, rng);
    std::vector<double> delta = {du(rng), du(rng)};
    std::vector<double> xd = {x[0] + delta[0], x[1] + delta[1]};
    std::vector<double> fx = step(vdp, x);
    std::vector<double> fxd = step(vdp, xd);
    Eigen::Vector2d df(fx[0] - fxd[0], fx[1] - fxd[1]);
    Eigen::Vector2d dv(delta[0], delta[1]);
    Eigen::Vector2d xe(x[0], x[1]);
    Eigen::Vector2d fe(fx[0], fx[1]);
    double direct = df.dot(metric_eval(metric, fe) * df) -
                    0.99 * 0.99 * dv.dot(metric_eval(metric, xe) * dv);
    double expanded = g_value(t, x, delta);
    CHECK(std::abs(direct - expanded) <=
          1e-10 * std::max({1.0, std::abs(direct), std::abs(expanded)}));
  }
}

TEST_CASE("Lyapunov evaluation, residual, and validation behave", "[certificates]") {
  LyapunovFn v = quad_lyap(Eigen::Matrix2d::Identity(), 1.0, 0.5);
  CHECK(lyap_eval(v, Eigen::Vector2d(3.0, 4.0)) == 25.0);
  CHECK(lyap_eval(v, std::vector<double>{3.0, 4.0}) == 25.0);

  ClosedLoopSystem half = make_scale_stub(0.5, IntervalBox::cube(2, -1.0, 1.0));
  CHECK(f_residual(v, half, {1.0, 1.0}) == Catch::Approx(-0.5).margin(1e-12));
  CHECK(f_residual(v, half, {0.0, 0.0}) == 0.0);

  LyapunovFn bad_kappa = v;
  bad_kappa.kappa = 1.0;
  CHECK_THROWS_AS(validate_lyapunov(bad_kappa), std::invalid_argument);
  LyapunovFn asym = v;
  asym.P(0, 1) = 0.5;  // symmetry broken one-sided
  CHECK_THROWS_AS(validate_lyapunov(asym), std::invalid_argument);
  LyapunovFn indef = v;
  indef.P << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(validate_lyapunov(indef), std::invalid_argument);
}

TEST_CASE("the violation loss is the min over the disjunction's margins", "[certificates]") {
  IntervalBox box = IntervalBox::cube(2, -1.0, 1.0);
  LyapunovFn lyap = quad_lyap(Eigen::Matrix2d::Identity(), 0.25);

  // expanding stub: positive gap inside the levelset is a real violation
  ContractionTask texp = make_task(make_scale_stub(2.0, box),
                                   constant_metric_from(Eigen::Matrix2d::Identity(), 1.0), lyap,
                                   0.9, 0.1);
  double viol = violation_loss(texp, {0.0, 0.0}, {0.1, 0.0});
  CHECK(viol == Catch::Approx((4.0 - 0.81) * 0.01).margin(1e-12));

  // outside the levelset the same gap is excused
  CHECK(violation_loss(texp, {0.9, 0.9}, {0.1, 0.0}) < 0.0);

  // zero displacement can never violate
  ContractionTask tvdp = make_task(make_vdp(),
                                   constant_metric_from(Eigen::Matrix2d::Identity(), 1.0), lyap,
                                   0.99, 0.05);
  std::mt19937_64 rng(71);
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> x = sample(tvdp.B, rng);
    CHECK(violation_loss(tvdp, x, {0.0, 0.0}) <= 0.0);
  }
}

TEST_CASE("the fused violation graph agrees with its scalar reference", "[certificates]") {
  ClosedLoopSystem vdp = make_vdp();
  std::mt19937_64 rng(11);
  MetricNet metric = random_metric(2, 2, rng);
  LyapunovFn lyap = quad_lyap(0.5 * Eigen::Matrix2d::Identity(), 0.3);
  ContractionTask t = make_task(vdp, metric, lyap, 0.95, 0.05);

  ViolationGraph vg = build_violation_graph(vdp, metric, lyap, 0.95, lyap.rho_V);
  std::vector<double> theta = pack(metric.R);

  std::uniform_real_distribution<double> du(-0.05, 0.05);
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> x = sample(vdp.box, rng);
    std::vector<double> z = {x[0], x[1], du(rng), du(rng)};
    std::vector<double> out = eval_graph(vg.graph, z, theta);
    double l_ref = violation_loss(t, {z[0], z[1]}, {z[2], z[3]});
    double g_ref = g_value(t, {z[0], z[1]}, {z[2], z[3]});
    CHECK(std::abs(out[0] - l_ref) <= 1e-10 * std::max(1.0, std::abs(l_ref)));
    CHECK(std::abs(out[1] - g_ref) <= 1e-10 * std::max(1.0, std::abs(g_ref)));
  }

  // the focus box covers the levelset but never leaves the domain
  REQUIRE(vg.focus.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(vg.focus[i].lo >= vdp.box[i].lo - 1e-12);
    CHECK(vg.focus[i].hi <= vdp.box[i].hi + 1e-12);
  }
  for (int k = 0; k < 2000; ++k) {
    std::vector<double> x = sample(vdp.box, rng);
    if (lyap_eval(lyap, x) <= lyap.rho_V) CHECK(vg.focus.contains(x));
  }
}

TEST_CASE("metric and Lyapunov files round-trip bit for bit", "[certificates]") {
  std::mt19937_64 rng(29);
  MetricNet metric = random_metric(2, 2, rng);
  std::string mpath = temp_path("contractify_metric_roundtrip.json");
  save_metric(metric, 0.97, 0.42, 0.01, 0.05, mpath);
  MetricNet back = load_metric(mpath);

  std::vector<double> a = pack(metric.R), b = pack(back.R);
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  CHECK(back.mu == metric.mu);
  CHECK(back.rows_k == metric.rows_k);

  nlohmann::json mj = nlohmann::json::parse(read_text_file(mpath));
  CHECK(mj.at("rho_c").get<double>() == 0.97);
  CHECK(mj.at("rho_V").get<double>() == 0.42);
  CHECK(mj.at("kappa").get<double>() == 0.01);
  CHECK(mj.at("epsilon").get<double>() == 0.05);
  std::remove(mpath.c_str());

  Eigen::Matrix2d P;
  P << 0.25224, -0.06931, -0.06931, 0.04805;
  LyapunovFn lyap = quad_lyap(P, 0.113281, 0.01);
  std::string lpath = temp_path("contractify_lyap_roundtrip.json");
  save_lyapunov(lyap, lpath);
  LyapunovFn lback = load_lyapunov(lpath);
  std::remove(lpath.c_str());
  CHECK(lback.form == LyapunovFn::Form::quadratic);
  CHECK((lback.P - lyap.P).cwiseAbs().maxCoeff() == 0.0);
  CHECK(lback.rho_V == lyap.rho_V);
  CHECK(lback.kappa == lyap.kappa);
}

TEST_CASE("exact quadratic extrema over boxes match brute force", "[certificates]") {
  Eigen::Matrix2d I2 = Eigen::Matrix2d::Identity();
  CHECK(exact_quad_min(I2, IntervalBox({{1.0, 2.0}, {1.0, 2.0}})) ==
        Catch::Approx(2.0).margin(1e-12));
  CHECK(exact_quad_min(I2, IntervalBox({{-1.0, 2.0}, {-1.0, 1.0}})) == 0.0);
  CHECK(exact_quad_max(I2, IntervalBox({{1.0, 2.0}, {1.0, 2.0}})) ==
        Catch::Approx(8.0).margin(1e-12));

  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(2, 2, [&] { return u(rng); });
    Eigen::MatrixXd P = a.transpose() * a + 0.05 * Eigen::Matrix2d::Identity();
    double lo0 = u(rng), lo1 = u(rng);
    IntervalBox box({{lo0, lo0 + 1.0}, {lo1, lo1 + 1.0}});
    double mn = exact_quad_min(P, box);
    double mx = exact_quad_max(P, box);

    double smin = std::numeric_limits<double>::infinity();
    double smax = -smin;
    for (int i = 0; i <= 60; ++i)
      for (int j = 0; j <= 60; ++j) {
        Eigen::Vector2d x(box[0].lo + box[0].width() * i / 60.0,
                          box[1].lo + box[1].width() * j / 60.0);
        double v = x.dot(P * x);
        smin = std::min(smin, v);
        smax = std::max(smax, v);
      }
    CHECK(mn <= smin + 1e-9);
    CHECK(mn >= smin - 0.05);  // grid resolution slack
    CHECK(mx >= smax - 1e-9);
    CHECK(mx <= smax + 0.05);
  }
}

TEST_CASE("task hashes key on every certified ingredient", "[certificates]") {
  ClosedLoopSystem vdp = make_vdp();
  std::mt19937_64 rng(97);
  MetricNet metric = random_metric(2, 2, rng);
  LyapunovFn lyap = quad_lyap(Eigen::Matrix2d::Identity(), 0.25);

  std::string h1 = task_hash("contraction", vdp, &metric, lyap, 0.99, 0.25, 0.05, vdp.box);
  std::string h2 = task_hash("contraction", vdp, &metric, lyap, 0.99, 0.25, 0.05, vdp.box);
  CHECK(h1 == h2);
  CHECK(h1 != task_hash("contraction", vdp, &metric, lyap, 0.995, 0.25, 0.05, vdp.box));
  CHECK(h1 != task_hash("invariance", vdp, nullptr, lyap, 0.99, 0.25, 0.05, vdp.box));
  MetricNet other = random_metric(2, 2, rng);
  CHECK(h1 != task_hash("contraction", vdp, &other, lyap, 0.99, 0.25, 0.05, vdp.box));

  ContractionTask t = make_task(vdp, metric, lyap, 0.99, 0.05);
  CHECK(t.B.size() == 2);  // domain defaults to the system box
  CHECK_THROWS_AS(make_task(vdp, metric, lyap, 1.0, 0.05), std::invalid_argument);
  CHECK_THROWS_AS(make_task(vdp, metric, lyap, 0.99, 0.0), std::invalid_argument);
}
