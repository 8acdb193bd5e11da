#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstddef>
#include <string>

#include "contractify/diagnostics.hpp"

using namespace contractify;

namespace {

ContractionTask stub_task(double c, double rho_c) {
  IntervalBox box = IntervalBox::cube(2, -1.0, 1.0);
  LyapunovFn lyap;
  lyap.form = LyapunovFn::Form::quadratic;
  lyap.P = Eigen::Matrix2d::Identity();
  lyap.rho_V = 1e9;
  lyap.kappa = 0.01;
  return make_task(make_scale_stub(c, box),
                   constant_metric_from(Eigen::Matrix2d::Identity(), 1.0), lyap, rho_c, 0.1);
}

}  // namespace

TEST_CASE("grid scans classify the stub systems correctly", "[diagnostics]") {
  GridOptions opts;
  opts.resolution = 16;

  // halving map at rate 0.6: every cell should witness contraction
  GridResult good = grid_scan(stub_task(0.5, 0.6), opts);
  CHECK(good.resolution == 16);
  REQUIRE(good.min_g.size() == 16u * 16u);
  REQUIRE(good.x1.size() == good.min_g.size());
  REQUIRE(good.x2.size() == good.min_g.size());
  for (double g : good.min_g) CHECK(g <= 0.0);

  // identity map at rate 0.9: G = (1 - 0.81)|δ|² > 0 for every nonzero δ
  GridResult bad = grid_scan(stub_task(1.0, 0.9), opts);
  for (double g : bad.min_g) CHECK(g > 0.0);

  // cell centers stay inside the domain and are row-major with x2 outer
  CHECK(good.x1.front() == Catch::Approx(-1.0 + 1.0 / 16.0).margin(1e-12));
  CHECK(good.x2.front() == Catch::Approx(-1.0 + 1.0 / 16.0).margin(1e-12));
  CHECK(good.x1[1] > good.x1[0]);
  CHECK(good.x2[1] == good.x2[0]);
  CHECK(good.x1.back() == Catch::Approx(1.0 - 1.0 / 16.0).margin(1e-12));
}

TEST_CASE("grid exports render CSV and binary PGM", "[diagnostics]") {
  GridOptions opts;
  opts.resolution = 16;
  GridResult good = grid_scan(stub_task(0.5, 0.6), opts);
  GridResult bad = grid_scan(stub_task(1.0, 0.9), opts);

  std::string csv = grid_csv(good);
  CHECK(csv.rfind("x1,x2,minG\n", 0) == 0);
  std::size_t rows = 0;
  for (char c : csv)
    if (c == '\n') ++rows;
  CHECK(rows == 1u + 16u * 16u);

  std::string pgm = grid_pgm(good);
  std::string header = "P5\n16 16\n255\n";
  REQUIRE(pgm.rfind(header, 0) == 0);
  REQUIRE(pgm.size() == header.size() + 16u * 16u);
  for (std::size_t i = header.size(); i < pgm.size(); ++i)
    CHECK(static_cast<unsigned char>(pgm[i]) == 255);  // all contracting → white

  std::string grey = grid_pgm(bad);
  for (std::size_t i = header.size(); i < grey.size(); ++i)
    CHECK(static_cast<unsigned char>(grey[i]) == 128);  // all undecided → grey

  GridResult mangled = good;
  mangled.min_g.pop_back();
  CHECK_THROWS_AS(grid_pgm(mangled), std::invalid_argument);
}

TEST_CASE("grid scan rejects bad options and non-planar systems", "[diagnostics]") {
  GridOptions opts;
  opts.resolution = 15;
  CHECK_THROWS_AS(grid_scan(stub_task(0.5, 0.6), opts), std::invalid_argument);
  opts.resolution = 16;
  opts.pgd_steps = -1;
  CHECK_THROWS_AS(grid_scan(stub_task(0.5, 0.6), opts), std::invalid_argument);
}

TEST_CASE("Monte Carlo area ratios track the analytic ellipse areas", "[diagnostics]") {
  LyapunovFn lyap;
  lyap.form = LyapunovFn::Form::quadratic;
  lyap.P = Eigen::Matrix2d::Identity();
  lyap.rho_V = 1.0;
  lyap.kappa = 0.01;
  IntervalBox box = IntervalBox::cube(2, -1.0, 1.0);

  // disk of radius 0.5 inside disk of radius 1 → area ratio 1/4
  double r = monte_carlo_ratio(lyap, 0.25, 1.0, box, 100000, 1);
  CHECK(r == Catch::Approx(0.25).margin(0.02));

  // empty numerator → exactly zero
  CHECK(monte_carlo_ratio(lyap, 0.0, 1.0, box, 10000, 1) == 0.0);

  // equal levels → exactly one
  CHECK(monte_carlo_ratio(lyap, 0.5, 0.5, box, 10000, 1) == 1.0);

  // reference set misses the sampling box entirely → NaN sentinel
  IntervalBox far = IntervalBox::cube(2, 2.0, 3.0);
  CHECK(std::isnan(monte_carlo_ratio(lyap, 0.001, 0.002, far, 10000, 1)));

  // deterministic in the seed
  CHECK(monte_carlo_ratio(lyap, 0.25, 1.0, box, 10000, 42) ==
        monte_carlo_ratio(lyap, 0.25, 1.0, box, 10000, 42));

  CHECK_THROWS_AS(monte_carlo_ratio(lyap, 0.25, 1.0, box, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(monte_carlo_ratio(lyap, -0.1, 1.0, box, 10, 1), std::invalid_argument);
}

TEST_CASE("report tables render deterministically with pending stand-ins", "[diagnostics]") {
  ReportRow done;
  done.system = "vdp";
  done.rho_roa = 0.113281;
  done.metric_type = "neural";
  done.verified_rho = 0.084961;
  done.ratio = 0.7321;
  done.runtime_s = 812.4;

  ReportRow blank;  // nothing filled in yet

  std::string table = render_report({done, blank});
  CHECK(table.rfind("| system | rho_ROA | metric | verified rho | r | runtime (s) |\n", 0) == 0);
  CHECK(table.find("| vdp | 0.113281 | neural | 0.084961 | 73.2% | 812.4 |") != std::string::npos);
  CHECK(table.find("| pending | pending | pending | pending | pending | pending |") !=
        std::string::npos);

  // byte-stable across calls
  CHECK(render_report({done, blank}) == table);
  CHECK(render_report({}).find("|---|") != std::string::npos);
}
