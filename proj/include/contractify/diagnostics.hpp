#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "contractify/certificates.hpp"
#include "contractify/util.hpp"

namespace contractify {

/** Raster diagnostic of the contraction inequality over a planar slice of B. */
struct GridResult {
  int resolution = 0;           // cells per axis
  std::vector<double> x1;       // cell-center coordinates, row-major (x2 outer)
  std::vector<double> x2;
  std::vector<double> min_g;    // min G(x,δ) over the δ sample set per cell
};

struct GridOptions {
  int resolution = 128;    // grid cells per axis, at least 16
  int pgd_steps = 10;      // descent steps refining the stencil minimizer
  double pgd_stepsize = 0.0;  // 0 → ε/8
};

namespace grid_detail {

/** Project δ onto the ∞-norm annulus a ≤ ‖δ‖∞ ≤ eps. G(x,0) = 0 identically,
    so descent must be kept off the origin or every cell would read as
    contracting; the floor a is the smallest stencil magnitude. */
inline void project_annulus(std::vector<double>& d, double a, double eps) {
  double m = 0.0;
  size_t big = 0;
  for (size_t i = 0; i < d.size(); ++i) {
    d[i] = std::clamp(d[i], -eps, eps);
    if (std::fabs(d[i]) > m) {
      m = std::fabs(d[i]);
      big = i;
    }
  }
  if (m < a) d[big] = d[big] < 0.0 ? -a : a;
}

}  // namespace grid_detail

/** Sample min_δ G(x,δ) at every cell center of a resolution² grid over B.
    The δ pool is a fixed stencil (8 directions × 4 magnitudes up to ε) plus a
    short projected-descent refinement of the stencil minimizer, kept on the
    annulus ‖δ‖∞ ∈ [ε/4, ε]. Cells where even this minimum is positive expand
    in every sampled direction — the raster's grey region. */
inline GridResult grid_scan(const ContractionTask& task, const GridOptions& opts = {}) {
  validate_task(task);
  if (task.sys.n != 2) throw std::invalid_argument("grid_scan: only planar systems");
  if (opts.resolution < 16) throw std::invalid_argument("grid_scan: resolution must be >= 16");
  if (opts.pgd_steps < 0) throw std::invalid_argument("grid_scan: negative descent steps");

  double eps = task.epsilon;
  double floor_mag = 0.25 * eps;
  double beta = opts.pgd_stepsize > 0.0 ? opts.pgd_stepsize : eps / 8.0;

  // 8 unit directions at 45° spacing × 4 magnitudes; ∞-norm ≤ eps throughout
  std::vector<std::vector<double>> stencil;
  for (int k = 0; k < 8; ++k) {
    double ang = k * std::acos(-1.0) / 4.0;
    double cx = std::cos(ang), cy = std::sin(ang);
    double unit = std::max(std::fabs(cx), std::fabs(cy));
    for (double frac : {0.25, 0.5, 0.75, 1.0})
      stencil.push_back({frac * eps * cx / unit, frac * eps * cy / unit});
  }

  GridResult out;
  out.resolution = opts.resolution;
  const IntervalBox& B = task.B;
  int res = opts.resolution;
  out.x1.reserve(static_cast<size_t>(res) * res);
  out.x2.reserve(static_cast<size_t>(res) * res);
  out.min_g.reserve(static_cast<size_t>(res) * res);

  std::vector<double> x(2), d(2), probe(2), grad(2);
  for (int row = 0; row < res; ++row) {
    x[1] = B[1].lo + (row + 0.5) * B[1].width() / res;
    for (int col = 0; col < res; ++col) {
      x[0] = B[0].lo + (col + 0.5) * B[0].width() / res;

      double best = std::numeric_limits<double>::infinity();
      std::vector<double> best_d = stencil.front();
      for (const auto& s : stencil) {
        double g = g_value(task, x, s);
        if (g < best) {
          best = g;
          best_d = s;
        }
      }

      // refine the stencil minimizer by sign descent on δ (central differences)
      d = best_d;
      for (int it = 0; it < opts.pgd_steps; ++it) {
        for (int i = 0; i < 2; ++i) {
          double h = 1e-6 * eps;
          probe = d;
          probe[i] = d[i] + h;
          double gp = g_value(task, x, probe);
          probe[i] = d[i] - h;
          double gm = g_value(task, x, probe);
          grad[i] = (gp - gm) / (2.0 * h);
        }
        for (int i = 0; i < 2; ++i) d[i] -= beta * (grad[i] > 0.0 ? 1.0 : grad[i] < 0.0 ? -1.0 : 0.0);
        grid_detail::project_annulus(d, floor_mag, eps);
        best = std::min(best, g_value(task, x, d));
      }

      out.x1.push_back(x[0]);
      out.x2.push_back(x[1]);
      out.min_g.push_back(best);
    }
  }
  return out;
}

/** CSV dump of a grid scan: header then one row per cell. */
inline std::string grid_csv(const GridResult& g) {
  std::string s = "x1,x2,minG\n";
  for (size_t i = 0; i < g.min_g.size(); ++i)
    s += repr(g.x1[i]) + "," + repr(g.x2[i]) + "," + repr(g.min_g[i]) + "\n";
  return s;
}

/** Binary PGM (P5, maxval 255) raster of a grid scan: white where min G ≤ 0
    (some sampled displacement still contracts), grey where every sample
    expands. Rows run top-to-bottom, so the image keeps x2 increasing upward. */
inline std::string grid_pgm(const GridResult& g) {
  int res = g.resolution;
  if (res <= 0 || g.min_g.size() != static_cast<size_t>(res) * res)
    throw std::invalid_argument("grid_pgm: malformed grid result");
  std::string s = "P5\n" + std::to_string(res) + " " + std::to_string(res) + "\n255\n";
  s.reserve(s.size() + static_cast<size_t>(res) * res);
  for (int row = res - 1; row >= 0; --row)
    for (int col = 0; col < res; ++col) {
      double v = g.min_g[static_cast<size_t>(row) * res + col];
      s.push_back(v <= 0.0 ? static_cast<char>(255) : static_cast<char>(128));
    }
  return s;
}

/** Monte-Carlo area ratio r = area({V<rho_star}∩B) / area({V<rho_roa}∩B),
    sampled uniformly over B. Returns NaN when the reference set gets no hits
    (callers report the ratio as undefined). */
inline double monte_carlo_ratio(const LyapunovFn& lyap, double rho_star, double rho_roa,
                                const IntervalBox& B, long samples = 1000000,
                                std::uint64_t seed = 0) {
  if (samples < 1) throw std::invalid_argument("monte_carlo_ratio: need at least one sample");
  if (!(rho_star >= 0.0) || !(rho_roa >= 0.0))
    throw std::invalid_argument("monte_carlo_ratio: levels must be nonnegative");
  auto rng = make_rng(seed, 0x61726561ull);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> x(B.size());
  long hit_star = 0, hit_roa = 0;
  for (long s = 0; s < samples; ++s) {
    for (int i = 0; i < B.size(); ++i) x[i] = B[i].lo + unit(rng) * B[i].width();
    double v = lyap_eval(lyap, x);
    if (v < rho_star) ++hit_star;
    if (v < rho_roa) ++hit_roa;
  }
  if (hit_roa == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(hit_star) / static_cast<double>(hit_roa);
}

/** One line of the results table; fields left unset render as "pending". */
struct ReportRow {
  std::string system;
  double rho_roa = std::numeric_limits<double>::quiet_NaN();
  std::string metric_type;  // "constant" | "neural" | ""
  double verified_rho = std::numeric_limits<double>::quiet_NaN();
  double ratio = std::numeric_limits<double>::quiet_NaN();  // r in [0,1]
  double runtime_s = std::numeric_limits<double>::quiet_NaN();
};

namespace report_detail {

inline std::string cell(double v, const char* fmt) {
  if (!std::isfinite(v)) return "pending";
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace report_detail

/** Markdown results table: system | rho_ROA | metric | verified rho | r | runtime.
    Deterministic formatting, so identical inputs give identical bytes. */
inline std::string render_report(const std::vector<ReportRow>& rows) {
  std::string s =
      "| system | rho_ROA | metric | verified rho | r | runtime (s) |\n"
      "|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    using report_detail::cell;
    std::string ratio = std::isfinite(r.ratio) ? cell(100.0 * r.ratio, "%.1f%%") : "pending";
    s += "| " + (r.system.empty() ? std::string("pending") : r.system) + " | " +
         cell(r.rho_roa, "%.6g") + " | " +
         (r.metric_type.empty() ? std::string("pending") : r.metric_type) + " | " +
         cell(r.verified_rho, "%.6g") + " | " + ratio + " | " + cell(r.runtime_s, "%.1f") +
         " |\n";
  }
  return s;
}

}  // namespace contractify
