#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace contractify {

inline double step_down(double v) {
  return std::nextafter(v, -std::numeric_limits<double>::infinity());
}
inline double step_up(double v) {
  return std::nextafter(v, std::numeric_limits<double>::infinity());
}

/** Closed interval [lo, hi]; arithmetic rounds endpoints outward one step. */
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  Interval() = default;
  Interval(double v) : lo(v), hi(v) {}
  Interval(double l, double h) : lo(l), hi(h) {}

  double width() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
  double mag() const { return std::max(std::fabs(lo), std::fabs(hi)); }
  bool contains(double v) const { return lo <= v && v <= hi; }
  bool contains(const Interval& o) const { return lo <= o.lo && o.hi <= hi; }
};

inline Interval outward(double lo, double hi) { return {step_down(lo), step_up(hi)}; }

inline Interval operator+(Interval a, Interval b) { return outward(a.lo + b.lo, a.hi + b.hi); }
inline Interval operator-(Interval a, Interval b) { return outward(a.lo - b.hi, a.hi - b.lo); }
inline Interval operator-(Interval a) { return {-a.hi, -a.lo}; }

inline Interval operator*(Interval a, Interval b) {
  double p1 = a.lo * b.lo, p2 = a.lo * b.hi, p3 = a.hi * b.lo, p4 = a.hi * b.hi;
  return outward(std::min(std::min(p1, p2), std::min(p3, p4)),
                 std::max(std::max(p1, p2), std::max(p3, p4)));
}

inline Interval scale_iv(Interval a, double k) {
  double x = k * a.lo, y = k * a.hi;
  return outward(std::min(x, y), std::max(x, y));
}

inline Interval square_iv(Interval a) {
  double m = a.mag();
  double lo = (a.lo <= 0.0 && a.hi >= 0.0) ? 0.0 : std::min(a.lo * a.lo, a.hi * a.hi);
  return {lo == 0.0 ? 0.0 : step_down(lo), step_up(m * m)};
}

inline Interval pow_iv(Interval a, int p) {
  if (p < 2) throw std::invalid_argument("pow_iv: exponent must be >= 2");
  auto ipow = [](double v, int e) {
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= v;
    return r;
  };
  if (p % 2 == 0) {
    double hi = std::max(ipow(a.lo, p), ipow(a.hi, p));
    if (a.lo <= 0.0 && a.hi >= 0.0) return {0.0, step_up(step_up(hi))};
    double lo = std::min(ipow(a.lo, p), ipow(a.hi, p));
    return {step_down(step_down(lo)), step_up(step_up(hi))};
  }
  return {step_down(step_down(ipow(a.lo, p))), step_up(step_up(ipow(a.hi, p)))};
}

inline Interval relu_iv(Interval a) { return {std::max(0.0, a.lo), std::max(0.0, a.hi)}; }

inline Interval tanh_iv(Interval a) {
  double lo = std::max(-1.0, step_down(std::tanh(a.lo)));
  double hi = std::min(1.0, step_up(std::tanh(a.hi)));
  return {lo, hi};
}

namespace detail {
constexpr double kPi = 3.141592653589793238462643383279502884;
// Does c + 2k*pi land in [lo, hi] for some integer k?  Padded outward so that
// rounding in the reduction can only widen the resulting sin bound.
inline bool hits_phase(double lo, double hi, double c) {
  constexpr double pad = 1e-9;
  double k = std::ceil((lo - pad - c) / (2.0 * kPi));
  return c + 2.0 * kPi * k <= hi + pad;
}
}  // namespace detail

inline Interval sin_iv(Interval a) {
  using detail::kPi;
  if (a.hi - a.lo >= 2.0 * kPi) return {-1.0, 1.0};
  double slo = std::min(std::sin(a.lo), std::sin(a.hi));
  double shi = std::max(std::sin(a.lo), std::sin(a.hi));
  double lo = detail::hits_phase(a.lo, a.hi, -0.5 * kPi) ? -1.0 : std::max(-1.0, step_down(step_down(slo)));
  double hi = detail::hits_phase(a.lo, a.hi, 0.5 * kPi) ? 1.0 : std::min(1.0, step_up(step_up(shi)));
  return {lo, hi};
}

inline Interval cos_iv(Interval a) { return sin_iv(a + Interval(0.5 * detail::kPi)); }

inline Interval min_iv(Interval a, Interval b) {
  return {std::min(a.lo, b.lo), std::min(a.hi, b.hi)};
}

inline Interval hull(Interval a, Interval b) {
  return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)};
}

inline Interval intersect(Interval a, Interval b) {
  Interval r{std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
  if (r.lo > r.hi) {
    // Disjoint only through rounding of two sound enclosures; collapse to the touch point.
    double m = 0.5 * (r.lo + r.hi);
    return {m, m};
  }
  return r;
}

inline Interval sqrt_iv(Interval a) {
  double lo = a.lo <= 0.0 ? 0.0 : step_down(std::sqrt(a.lo));
  double hi = a.hi <= 0.0 ? 0.0 : step_up(std::sqrt(a.hi));
  return {std::max(0.0, lo), hi};
}

inline Interval abs_iv(Interval a) {
  if (a.lo >= 0.0) return a;
  if (a.hi <= 0.0) return {-a.hi, -a.lo};
  return {0.0, a.mag()};
}

/** Axis-aligned box: one closed interval per dimension. */
struct IntervalBox {
  std::vector<Interval> dims;

  IntervalBox() = default;
  explicit IntervalBox(std::vector<Interval> d) : dims(std::move(d)) {}

  int size() const { return static_cast<int>(dims.size()); }
  Interval& operator[](int i) { return dims[i]; }
  const Interval& operator[](int i) const { return dims[i]; }

  bool contains(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != size()) return false;
    for (int i = 0; i < size(); ++i)
      if (!dims[i].contains(x[i])) return false;
    return true;
  }

  std::vector<double> center() const {
    std::vector<double> c(dims.size());
    for (size_t i = 0; i < dims.size(); ++i) c[i] = dims[i].mid();
    return c;
  }

  static IntervalBox cube(int n, double lo, double hi) {
    return IntervalBox(std::vector<Interval>(n, Interval(lo, hi)));
  }
};

inline void check_box(const IntervalBox& b) {
  for (int i = 0; i < b.size(); ++i) {
    const Interval& d = b[i];
    if (!(d.lo <= d.hi) || !std::isfinite(d.lo) || !std::isfinite(d.hi))
      throw std::invalid_argument("box dimension " + std::to_string(i) + " is invalid");
  }
}

}  // namespace contractify
