#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "contractify/cegis.hpp"

using namespace contractify;
using Catch::Matchers::ContainsSubstring;

namespace {

ContractionTask stub_task(double c, double rho_c) {
  IntervalBox box = IntervalBox::cube(2, -1.0, 1.0);
  LyapunovFn lyap;
  lyap.form = LyapunovFn::Form::quadratic;
  lyap.P = Eigen::Matrix2d::Identity();
  lyap.rho_V = 1e9;  // levelset clauses stay inert
  lyap.kappa = 0.01;
  return make_task(make_scale_stub(c, box),
                   constant_metric_from(Eigen::Matrix2d::Identity(), 1.0), lyap, rho_c, 0.1);
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.hidden = {4};
  cfg.rounds = 2;
  cfg.epochs = 2;
  cfg.batch = 32;
  cfg.pgd_steps = 10;
  cfg.schedule = {0.5, 1.0};
  cfg.rho_c = 0.9;
  cfg.seed = 3;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST_CASE("training configurations are validated field by field", "[cegis]") {
  CHECK_NOTHROW(validate_train_config(TrainConfig{}));

  TrainConfig bad = TrainConfig{};
  bad.eta = 0.0;
  CHECK_THROWS_WITH(validate_train_config(bad), ContainsSubstring("eta"));

  bad = TrainConfig{};
  bad.schedule = {0.5, 0.5};
  CHECK_THROWS_WITH(validate_train_config(bad), ContainsSubstring("schedule"));
  bad.schedule = {0.5, 1.2};
  CHECK_THROWS_AS(validate_train_config(bad), std::invalid_argument);
  bad.schedule = {};
  CHECK_THROWS_AS(validate_train_config(bad), std::invalid_argument);

  bad = TrainConfig{};
  bad.rho_c = 1.0;
  CHECK_THROWS_WITH(validate_train_config(bad), ContainsSubstring("rho_c"));

  bad = TrainConfig{};
  bad.batch = 0;
  CHECK_THROWS_AS(validate_train_config(bad), std::invalid_argument);

  bad = TrainConfig{};
  bad.tau = -1e-9;
  CHECK_THROWS_AS(validate_train_config(bad), std::invalid_argument);
}

TEST_CASE("counterexample mining respects constraints and finds violations", "[cegis]") {
  TrainConfig cfg = small_config();

  // the expanding stub violates everywhere: mining must surface that
  ContractionTask expanding = stub_task(2.0, 0.9);
  std::vector<CexPair> batch = pgd_mine(expanding, cfg, 64, 1);
  REQUIRE(batch.size() == 64);
  double worst = -1e300;
  for (const CexPair& p : batch) {
    REQUIRE(p.x.size() == 2);
    REQUIRE(p.delta.size() == 2);
    CHECK(expanding.B.contains(p.x));
    CHECK(expanding.B.contains({p.x[0] + p.delta[0], p.x[1] + p.delta[1]}));
    CHECK(std::abs(p.delta[0]) <= expanding.epsilon + 1e-12);
    CHECK(std::abs(p.delta[1]) <= expanding.epsilon + 1e-12);
    // the recorded violation is the actual loss at the pair
    double ref = violation_loss(expanding, p.x, p.delta);
    CHECK(std::abs(p.violation - ref) <= 1e-9 * std::max(1.0, std::abs(ref)));
    worst = std::max(worst, p.violation);
  }
  CHECK(worst > 0.0);

  // the contracting stub admits no violation at a generous rate
  ContractionTask contracting = stub_task(0.5, 0.9);
  std::vector<CexPair> clean = pgd_mine(contracting, cfg, 64, 1);
  for (const CexPair& p : clean) CHECK(p.violation <= 1e-12);

  // mining replays bit for bit under the same stream id
  std::vector<CexPair> again = pgd_mine(expanding, cfg, 64, 1);
  REQUIRE(again.size() == batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(again[i].x == batch[i].x);
    CHECK(again[i].delta == batch[i].delta);
  }
  std::vector<CexPair> other = pgd_mine(expanding, cfg, 64, 2);
  bool differs = false;
  for (std::size_t i = 0; i < batch.size() && !differs; ++i)
    differs = other[i].x != batch[i].x || other[i].delta != batch[i].delta;
  CHECK(differs);

  CHECK_THROWS_AS(pgd_mine(expanding, cfg, 0, 1), std::invalid_argument);
}

TEST_CASE("the counterexample pool is FIFO capped", "[cegis]") {
  CexDataset ds;
  ds.cap = 4;
  for (int i = 0; i < 10; ++i) {
    CexPair p;
    p.violation = i;
    ds.push(p);
  }
  CHECK(ds.size() == 4);
  CHECK(ds.pairs.front().violation == 6.0);  // oldest six were evicted
  CHECK(ds.pairs.back().violation == 9.0);
  ds.clear();
  CHECK(ds.size() == 0);
}

TEST_CASE("metric training runs, logs, and reproduces bit for bit", "[cegis]") {
  ClosedLoopSystem vdp = make_vdp();
  LyapunovFn lyap;
  lyap.form = LyapunovFn::Form::quadratic;
  lyap.P << 0.25224, -0.06931, -0.06931, 0.04805;
  lyap.P = Eigen::Matrix2d(lyap.P);
  lyap.rho_V = 0.113281;
  lyap.kappa = 0.01;

  TrainConfig cfg = small_config();
  TrainResult a = train_metric(vdp, lyap, cfg);
  validate_metric(a.metric);
  CHECK(a.metric.mu == cfg.mu);
  REQUIRE(!a.log.empty());
  long prev_iter = -1;
  for (const TrainLogRow& row : a.log) {
    CHECK(row.iteration > prev_iter);
    prev_iter = row.iteration;
    CHECK((row.scale == 0.5 || row.scale == 1.0));
    CHECK(std::isfinite(row.max_violation));
    CHECK(std::isfinite(row.mean_loss));
    CHECK(row.dataset_size > 0);
  }
  CHECK(std::isfinite(a.final_max_violation));

  std::string csv = train_log_csv(a.log);
  CHECK(csv.rfind("iteration,scale,max_violation,mean_loss,dataset_size\n", 0) == 0);

  TrainResult b = train_metric(vdp, lyap, cfg);
  std::vector<double> pa = pack(a.metric.R), pb = pack(b.metric.R);
  REQUIRE(pa.size() == pb.size());
  CHECK(std::memcmp(pa.data(), pb.data(), pa.size() * sizeof(double)) == 0);
  REQUIRE(b.log.size() == a.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(b.log[i].max_violation == a.log[i].max_violation);
    CHECK(b.log[i].mean_loss == a.log[i].mean_loss);
  }
}

TEST_CASE("update events chain and divergence rolls back to the checkpoint", "[cegis]") {
  ClosedLoopSystem vdp = make_vdp();
  LyapunovFn lyap;
  lyap.form = LyapunovFn::Form::quadratic;
  lyap.P << 0.25224, -0.06931, -0.06931, 0.04805;
  lyap.rho_V = 0.113281;
  lyap.kappa = 0.01;

  TrainConfig cfg = small_config();
  cfg.rounds = 1;
  cfg.schedule = {1.0};
  std::vector<UpdateEvent> events;
  cfg.observer = [&](const UpdateEvent& e) { events.push_back(e); };
  TrainResult res = train_metric(vdp, lyap, cfg);
  (void)res;

  REQUIRE(!events.empty());
  for (std::size_t i = 0; i < events.size(); ++i) {
    const UpdateEvent& e = events[i];
    CHECK(e.lr == cfg.eta);
    CHECK(e.step == static_cast<long>(i));
    REQUIRE(e.params_before.size() == e.params_after.size());
    REQUIRE(e.grad.size() == e.params_before.size());
    if (i > 0) CHECK(e.params_before == events[i - 1].params_after);
    bool moved = false;
    for (std::size_t k = 0; k < e.params_before.size() && !moved; ++k)
      moved = e.params_before[k] != e.params_after[k];
    CHECK(moved);
  }

  // an absurd learning rate overflows the weights; training must notice,
  // restore the last finite checkpoint, and say so
  TrainConfig wild = small_config();
  wild.eta = 1e300;
  wild.rounds = 1;
  wild.schedule = {1.0};
  TrainResult blown = train_metric(vdp, lyap, wild);
  CHECK(blown.diverged);
  CHECK_NOTHROW(validate_metric(blown.metric));  // finite weights survived
}

TEST_CASE("warm start anchors the origin metric at the Lyapunov shape", "[cegis]") {
  // halving stub with P = I: already clean at rate 0.9, so mining never finds a
  // violation and training must return the warm-start weights untouched
  IntervalBox box = IntervalBox::cube(2, -1.0, 1.0);
  ClosedLoopSystem sys = make_scale_stub(0.5, box);
  LyapunovFn lyap;
  lyap.form = LyapunovFn::Form::quadratic;
  lyap.P = Eigen::Matrix2d::Identity();
  lyap.rho_V = 0.5;
  lyap.kappa = 0.25;

  TrainConfig cfg = small_config();
  cfg.rho_c = 0.9;
  TrainResult res = train_metric(sys, lyap, cfg);
  CHECK(!res.diverged);
  CHECK(res.final_max_violation <= 0.0);

  // with c = 2mu/lambda_min(P) = 0.2 the anchored metric is M(0) = cP = 0.2 I
  Eigen::MatrixXd m0 = metric_eval(res.metric, Eigen::Vector2d::Zero());
  CHECK((m0 - 0.2 * Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-12);

  // disabling the anchor leaves the random zero-bias init: M(0) = mu I
  cfg.warm_start = false;
  TrainResult cold = train_metric(sys, lyap, cfg);
  Eigen::MatrixXd c0 = metric_eval(cold.metric, Eigen::Vector2d::Zero());
  CHECK((c0 - cfg.mu * Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("quadratic Lyapunov synthesis certifies the oscillator region", "[cegis]") {
  ClosedLoopSystem vdp = make_vdp();
  SynthResult res = synth_quadratic_lyapunov(vdp, vdp.box);

  // linearization: f(x) = x + h rhs(x) around the origin
  Eigen::Matrix2d a_ref;
  a_ref << 1.0, -0.05, 0.05, 0.85;
  CHECK((res.A - a_ref).cwiseAbs().maxCoeff() < 1e-6);

  // discrete Lyapunov residual of the unnormalized shape
  Eigen::Matrix2d resid =
      res.A.transpose() * res.P_raw * res.A - res.P_raw + Eigen::Matrix2d::Identity();
  CHECK(resid.cwiseAbs().maxCoeff() < 1e-8);

  // normalized so the shape peaks at one over the domain
  CHECK(exact_quad_max(res.lyap.P, vdp.box) == Catch::Approx(1.0).margin(1e-9));

  CHECK(res.scan.certified);
  CHECK(res.scan.rho_star == res.lyap.rho_V);
  CHECK(res.invariance.status == Status::Verified);
  CHECK(res.lyap.rho_V >= 0.08);
  CHECK(res.lyap.rho_V <= 0.14);

  // sanity: the certified levelset is forward invariant under simulation
  std::mt19937_64 rng(15);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> x;
    do {
      x = {vdp.box[0].lo + vdp.box[0].width() * (rng() % 1000) / 999.0,
           vdp.box[1].lo + vdp.box[1].width() * (rng() % 1000) / 999.0};
    } while (lyap_eval(res.lyap, x) > res.lyap.rho_V);
    std::vector<double> y = step(vdp, x);
    CHECK(lyap_eval(res.lyap, y) <= res.lyap.rho_V + 1e-12);
  }
}

TEST_CASE("synthesis rejects unstable linearizations and bad options", "[cegis]") {
  IntervalBox box = IntervalBox::cube(2, -1.0, 1.0);
  ClosedLoopSystem expanding = make_scale_stub(2.0, box);
  CHECK((jacobian_at_origin(expanding) - 2.0 * Eigen::Matrix2d::Identity())
            .cwiseAbs()
            .maxCoeff() < 1e-6);
  CHECK_THROWS_WITH(synth_quadratic_lyapunov(expanding, box), ContainsSubstring("Schur"));

  SynthOptions opts;
  opts.kappa = 1.5;
  CHECK_THROWS_AS(synth_quadratic_lyapunov(make_vdp(), make_vdp().box, opts),
                  std::invalid_argument);
}
