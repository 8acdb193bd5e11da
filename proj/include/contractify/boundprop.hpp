#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "contractify/expr.hpp"
#include "contractify/interval.hpp"

namespace contractify {

/** Interval value per graph node component, indexed via ExprGraph value offsets. */
struct IntervalTape {
  std::vector<Interval> val;
};

inline Interval interval_primitive(Kind op, const std::vector<Interval>& in, int exponent = 0,
                                   double factor = 1.0) {
  switch (op) {
    case Kind::add: return in.at(0) + in.at(1);
    case Kind::sub: return in.at(0) - in.at(1);
    case Kind::mul: return in.at(0) * in.at(1);
    case Kind::square: return square_iv(in.at(0));
    case Kind::power: return pow_iv(in.at(0), exponent);
    case Kind::sin: return sin_iv(in.at(0));
    case Kind::relu: return relu_iv(in.at(0));
    case Kind::tanh: return tanh_iv(in.at(0));
    case Kind::min: return min_iv(in.at(0), in.at(1));
    case Kind::neg: return -in.at(0);
    case Kind::scale: return scale_iv(in.at(0), factor);
    default: throw std::invalid_argument("interval_primitive: not a pointwise primitive");
  }
}

inline void propagate_box(const ExprGraph& g, const IntervalBox& box,
                          std::span<const double> params, IntervalTape& t) {
  if (box.size() != g.input_dim())
    throw std::invalid_argument("propagate_box: box dims != graph inputs");
  if (static_cast<int>(params.size()) != g.param_dim())
    throw std::invalid_argument("propagate_box: param length mismatch");
  t.val.resize(g.value_size());
  const auto& nodes = g.nodes();
  for (size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    Interval* out = t.val.data() + g.value_offset(static_cast<int>(i));
    const Interval* x = n.a >= 0 ? t.val.data() + g.value_offset(n.a) : nullptr;
    const Interval* y = n.b >= 0 ? t.val.data() + g.value_offset(n.b) : nullptr;
    switch (n.kind) {
      case Kind::input:
        for (int j = 0; j < n.dim; ++j) out[j] = box[n.offset + j];
        break;
      case Kind::parameter:
        for (int j = 0; j < n.dim; ++j) out[j] = Interval(params[n.offset + j]);
        break;
      case Kind::constant:
        for (int j = 0; j < n.dim; ++j) out[j] = Interval(g.constants()[n.offset + j]);
        break;
      case Kind::add:
        for (int j = 0; j < n.dim; ++j) out[j] = x[j] + y[j];
        break;
      case Kind::sub:
        for (int j = 0; j < n.dim; ++j) out[j] = x[j] - y[j];
        break;
      case Kind::mul:
        for (int j = 0; j < n.dim; ++j) out[j] = x[j] * y[j];
        break;
      case Kind::matvec:
        for (int r = 0; r < n.rows; ++r) {
          Interval s(0.0);
          for (int c = 0; c < n.cols; ++c) s = s + x[r * n.cols + c] * y[c];
          out[r] = s;
        }
        break;
      case Kind::dot: {
        Interval s(0.0);
        int d = g.node_dim(n.a);
        // x·x is a sum of squares; detect the shared child for the tighter rule
        if (n.a == n.b)
          for (int j = 0; j < d; ++j) s = s + square_iv(x[j]);
        else
          for (int j = 0; j < d; ++j) s = s + x[j] * y[j];
        out[0] = s;
        break;
      }
      case Kind::square:
        for (int j = 0; j < n.dim; ++j) out[j] = square_iv(x[j]);
        break;
      case Kind::power:
        for (int j = 0; j < n.dim; ++j) out[j] = pow_iv(x[j], n.exponent);
        break;
      case Kind::sin:
        for (int j = 0; j < n.dim; ++j) out[j] = sin_iv(x[j]);
        break;
      case Kind::relu:
        for (int j = 0; j < n.dim; ++j) out[j] = relu_iv(x[j]);
        break;
      case Kind::tanh:
        for (int j = 0; j < n.dim; ++j) out[j] = tanh_iv(x[j]);
        break;
      case Kind::min:
        for (int j = 0; j < n.dim; ++j) out[j] = min_iv(x[j], y[j]);
        break;
      case Kind::neg:
        for (int j = 0; j < n.dim; ++j) out[j] = -x[j];
        break;
      case Kind::scale:
        for (int j = 0; j < n.dim; ++j) out[j] = scale_iv(x[j], n.factor);
        break;
    }
  }
}

inline std::vector<Interval> propagate_box(const ExprGraph& g, const IntervalBox& box,
                                           std::span<const double> params) {
  IntervalTape t;
  propagate_box(g, box, params, t);
  std::vector<Interval> out;
  for (int id : g.outputs()) {
    const Interval* v = t.val.data() + g.value_offset(id);
    out.insert(out.end(), v, v + g.node_dim(id));
  }
  return out;
}

/** Affine function of the graph inputs: off + coef·x. */
struct AffineForm {
  std::vector<double> coef;
  double off = 0.0;
};

inline Interval concretize(const AffineForm& f, const IntervalBox& box) {
  Interval s(f.off);
  for (size_t i = 0; i < f.coef.size(); ++i)
    if (f.coef[i] != 0.0) s = s + scale_iv(box[static_cast<int>(i)], f.coef[i]);
  return s;
}

/** Sound affine envelope of each output component over a box, with the
    concretized interval (always at least as tight as plain IBP). */
struct LinearBounds {
  std::vector<AffineForm> lower, upper;
  std::vector<Interval> conc;
};

namespace linrelax_detail {

struct Pair {
  AffineForm lo, hi;
  Interval conc;
};

inline Pair const_pair(double v, int nin) {
  Pair p;
  p.lo.coef.assign(nin, 0.0);
  p.hi.coef.assign(nin, 0.0);
  p.lo.off = p.hi.off = v;
  p.conc = Interval(v);
  return p;
}

inline void add_scaled(AffineForm& dst, double k, const AffineForm& src) {
  for (size_t i = 0; i < dst.coef.size(); ++i) dst.coef[i] += k * src.coef[i];
  dst.off += k * src.off;
}

// k times the affine enclosure of p, picking the correct side for the bound direction.
inline void accum_side(AffineForm& dst, double k, const Pair& p, bool want_lower) {
  if (k == 0.0) return;
  const AffineForm& side = (k > 0.0) == want_lower ? p.lo : p.hi;
  add_scaled(dst, k, side);
}

inline Pair affine_unary(const Pair& p, double slope_lo, double off_lo, double slope_hi,
                         double off_hi, Interval conc, const IntervalBox& box) {
  Pair r;
  int nin = static_cast<int>(p.lo.coef.size());
  r.lo.coef.assign(nin, 0.0);
  r.hi.coef.assign(nin, 0.0);
  r.lo.off = off_lo;
  r.hi.off = off_hi;
  accum_side(r.lo, slope_lo, p, true);
  accum_side(r.hi, slope_hi, p, false);
  r.conc = intersect(conc, Interval(concretize(r.lo, box).lo, concretize(r.hi, box).hi));
  return r;
}

// McCormick product of two bounded quantities.
inline Pair product(const Pair& a, const Pair& b, const IntervalBox& box) {
  int nin = static_cast<int>(a.lo.coef.size());
  double al = a.conc.lo, au = a.conc.hi, bl = b.conc.lo, bu = b.conc.hi;
  auto make_lower = [&](double ka, double kb, double c) {
    AffineForm f;
    f.coef.assign(nin, 0.0);
    f.off = c;
    accum_side(f, ka, a, true);
    accum_side(f, kb, b, true);
    return f;
  };
  auto make_upper = [&](double ka, double kb, double c) {
    AffineForm f;
    f.coef.assign(nin, 0.0);
    f.off = c;
    accum_side(f, ka, a, false);
    accum_side(f, kb, b, false);
    return f;
  };
  AffineForm lo1 = make_lower(bl, al, -al * bl);
  AffineForm lo2 = make_lower(bu, au, -au * bu);
  AffineForm hi1 = make_upper(bl, au, -au * bl);
  AffineForm hi2 = make_upper(bu, al, -al * bu);
  Pair r;
  r.lo = concretize(lo1, box).lo >= concretize(lo2, box).lo ? lo1 : lo2;
  r.hi = concretize(hi1, box).hi <= concretize(hi2, box).hi ? hi1 : hi2;
  r.conc = intersect(a.conc * b.conc,
                     Interval(concretize(r.lo, box).lo, concretize(r.hi, box).hi));
  return r;
}

inline Pair sum(std::vector<Pair>&& terms, const IntervalBox& box) {
  int nin = terms.empty() ? 0 : static_cast<int>(terms[0].lo.coef.size());
  Pair r = const_pair(0.0, nin);
  Interval c(0.0);
  for (auto& t : terms) {
    add_scaled(r.lo, 1.0, t.lo);
    add_scaled(r.hi, 1.0, t.hi);
    c = c + t.conc;
  }
  r.conc = intersect(c, Interval(concretize(r.lo, box).lo, concretize(r.hi, box).hi));
  return r;
}

constexpr double kEnvelopeSlack = 1e-13;

// Lines anchored at the endpoints with the interval's minimal derivative: sound
// whenever the derivative's minimum over [l,h] sits at an endpoint.
inline Pair endpoint_slope(const Pair& p, double fl, double fh, double slope, Interval conc,
                           const IntervalBox& box) {
  double l = p.conc.lo, h = p.conc.hi;
  double pad = kEnvelopeSlack * (1.0 + std::fabs(fl) + std::fabs(fh) + std::fabs(slope) * (h - l));
  return affine_unary(p, slope, fl - slope * l - pad, slope, fh - slope * h + pad, conc, box);
}

// Convex function: tangent at midpoint below, chord above.
inline Pair convex_envelope(const Pair& p, double fm, double dfm, double m, double fl, double fh,
                            Interval conc, const IntervalBox& box) {
  double l = p.conc.lo, h = p.conc.hi;
  double chord = h > l ? (fh - fl) / (h - l) : 0.0;
  double pad = kEnvelopeSlack * (1.0 + std::fabs(fl) + std::fabs(fh));
  return affine_unary(p, dfm, fm - dfm * m - pad, chord, fl - chord * l + pad, conc, box);
}

inline Pair concave_envelope(const Pair& p, double fm, double dfm, double m, double fl, double fh,
                             Interval conc, const IntervalBox& box) {
  double l = p.conc.lo, h = p.conc.hi;
  double chord = h > l ? (fh - fl) / (h - l) : 0.0;
  double pad = kEnvelopeSlack * (1.0 + std::fabs(fl) + std::fabs(fh));
  return affine_unary(p, chord, fl - chord * l - pad, dfm, fm - dfm * m + pad, conc, box);
}

inline Pair flat(const Pair& p, Interval conc) {
  Pair r = const_pair(0.0, static_cast<int>(p.lo.coef.size()));
  r.lo.off = conc.lo;
  r.hi.off = conc.hi;
  r.conc = conc;
  return r;
}

}  // namespace linrelax_detail

inline LinearBounds linear_relax(const ExprGraph& g, const IntervalBox& box,
                                 std::span<const double> params) {
  using namespace linrelax_detail;
  if (box.size() != g.input_dim())
    throw std::invalid_argument("linear_relax: box dims != graph inputs");
  if (static_cast<int>(params.size()) != g.param_dim())
    throw std::invalid_argument("linear_relax: param length mismatch");
  int nin = g.input_dim();
  std::vector<Pair> vals(g.value_size());
  const auto& nodes = g.nodes();
  for (size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    Pair* out = vals.data() + g.value_offset(static_cast<int>(i));
    const Pair* x = n.a >= 0 ? vals.data() + g.value_offset(n.a) : nullptr;
    const Pair* y = n.b >= 0 ? vals.data() + g.value_offset(n.b) : nullptr;
    switch (n.kind) {
      case Kind::input:
        for (int j = 0; j < n.dim; ++j) {
          Pair p = const_pair(0.0, nin);
          p.lo.coef[n.offset + j] = 1.0;
          p.hi.coef[n.offset + j] = 1.0;
          p.conc = box[n.offset + j];
          out[j] = p;
        }
        break;
      case Kind::parameter:
        for (int j = 0; j < n.dim; ++j) out[j] = const_pair(params[n.offset + j], nin);
        break;
      case Kind::constant:
        for (int j = 0; j < n.dim; ++j) out[j] = const_pair(g.constants()[n.offset + j], nin);
        break;
      case Kind::add:
        for (int j = 0; j < n.dim; ++j) {
          Pair p = x[j];
          add_scaled(p.lo, 1.0, y[j].lo);
          add_scaled(p.hi, 1.0, y[j].hi);
          p.conc = intersect(x[j].conc + y[j].conc,
                             Interval(concretize(p.lo, box).lo, concretize(p.hi, box).hi));
          out[j] = p;
        }
        break;
      case Kind::sub:
        for (int j = 0; j < n.dim; ++j) {
          Pair p = x[j];
          add_scaled(p.lo, -1.0, y[j].hi);
          add_scaled(p.hi, -1.0, y[j].lo);
          p.conc = intersect(x[j].conc - y[j].conc,
                             Interval(concretize(p.lo, box).lo, concretize(p.hi, box).hi));
          out[j] = p;
        }
        break;
      case Kind::mul:
        for (int j = 0; j < n.dim; ++j) out[j] = product(x[j], y[j], box);
        break;
      case Kind::matvec:
        for (int r = 0; r < n.rows; ++r) {
          std::vector<Pair> terms;
          terms.reserve(n.cols);
          for (int c = 0; c < n.cols; ++c) terms.push_back(product(x[r * n.cols + c], y[c], box));
          out[r] = sum(std::move(terms), box);
        }
        break;
      case Kind::dot: {
        int d = g.node_dim(n.a);
        std::vector<Pair> terms;
        terms.reserve(d);
        for (int j = 0; j < d; ++j) terms.push_back(product(x[j], y[j], box));
        out[0] = sum(std::move(terms), box);
        break;
      }
      case Kind::square:
        for (int j = 0; j < n.dim; ++j) {
          double l = x[j].conc.lo, h = x[j].conc.hi, m = 0.5 * (l + h);
          out[j] = convex_envelope(x[j], m * m, 2.0 * m, m, l * l, h * h, square_iv(x[j].conc), box);
        }
        break;
      case Kind::power:
        for (int j = 0; j < n.dim; ++j) {
          double l = x[j].conc.lo, h = x[j].conc.hi, m = 0.5 * (l + h);
          auto ipow = [](double v, int e) {
            double r = 1.0;
            for (int k = 0; k < e; ++k) r *= v;
            return r;
          };
          int p = n.exponent;
          Interval conc = pow_iv(x[j].conc, p);
          double fl = ipow(l, p), fh = ipow(h, p), fm = ipow(m, p), dfm = p * ipow(m, p - 1);
          if (p % 2 == 0)
            out[j] = convex_envelope(x[j], fm, dfm, m, fl, fh, conc, box);
          else if (l >= 0.0)
            out[j] = convex_envelope(x[j], fm, dfm, m, fl, fh, conc, box);
          else if (h <= 0.0)
            out[j] = concave_envelope(x[j], fm, dfm, m, fl, fh, conc, box);
          else
            out[j] = flat(x[j], conc);  // inflection inside: fall back to interval lines
        }
        break;
      case Kind::sin:
        for (int j = 0; j < n.dim; ++j) {
          double l = x[j].conc.lo, h = x[j].conc.hi;
          Interval conc = sin_iv(x[j].conc);
          // cos has an interior minimum only at odd multiples of pi
          if (h - l < detail::kPi && !detail::hits_phase(l, h, detail::kPi)) {
            double slope = std::min(std::cos(l), std::cos(h));
            out[j] = endpoint_slope(x[j], std::sin(l), std::sin(h), slope, conc, box);
          } else {
            out[j] = flat(x[j], conc);
          }
        }
        break;
      case Kind::relu:
        for (int j = 0; j < n.dim; ++j) {
          double l = x[j].conc.lo, h = x[j].conc.hi;
          if (l >= 0.0) {
            out[j] = x[j];
          } else if (h <= 0.0) {
            out[j] = const_pair(0.0, nin);
          } else {
            double up = h / (h - l);
            double alpha = 0.5 * (l + h) < 0.0 ? 0.0 : 1.0;  // static lower-slope heuristic
            out[j] = affine_unary(x[j], alpha, 0.0, up, -up * l, relu_iv(x[j].conc), box);
          }
        }
        break;
      case Kind::tanh:
        for (int j = 0; j < n.dim; ++j) {
          double l = x[j].conc.lo, h = x[j].conc.hi, m = 0.5 * (l + h);
          double tl = std::tanh(l), th = std::tanh(h), tm = std::tanh(m);
          Interval conc = tanh_iv(x[j].conc);
          if (l >= 0.0)
            out[j] = concave_envelope(x[j], tm, 1.0 - tm * tm, m, tl, th, conc, box);
          else if (h <= 0.0)
            out[j] = convex_envelope(x[j], tm, 1.0 - tm * tm, m, tl, th, conc, box);
          else
            out[j] = endpoint_slope(x[j], tl, th, std::min(1.0 - tl * tl, 1.0 - th * th), conc, box);
        }
        break;
      case Kind::min:
        for (int j = 0; j < n.dim; ++j) {
          const Pair& a = x[j];
          const Pair& buf = y[j];
          if (a.conc.hi <= buf.conc.lo) {
            out[j] = a;
          } else if (buf.conc.hi <= a.conc.lo) {
            out[j] = buf;
          } else {
            Pair r = const_pair(0.0, nin);
            r.hi = a.conc.hi <= buf.conc.hi ? a.hi : buf.hi;  // min ≤ either argument
            r.lo.off = std::min(a.conc.lo, buf.conc.lo);
            r.conc = min_iv(a.conc, buf.conc);
            out[j] = r;
          }
        }
        break;
      case Kind::neg:
        for (int j = 0; j < n.dim; ++j) {
          Pair p = const_pair(0.0, nin);
          add_scaled(p.lo, -1.0, x[j].hi);
          add_scaled(p.hi, -1.0, x[j].lo);
          p.conc = -x[j].conc;
          out[j] = p;
        }
        break;
      case Kind::scale:
        for (int j = 0; j < n.dim; ++j) {
          Pair p = const_pair(0.0, nin);
          accum_side(p.lo, n.factor, x[j], true);
          accum_side(p.hi, n.factor, x[j], false);
          p.conc = intersect(scale_iv(x[j].conc, n.factor),
                             Interval(concretize(p.lo, box).lo, concretize(p.hi, box).hi));
          out[j] = p;
        }
        break;
    }
  }
  LinearBounds lb;
  for (int id : g.outputs()) {
    const Pair* v = vals.data() + g.value_offset(id);
    for (int j = 0; j < g.node_dim(id); ++j) {
      lb.lower.push_back(v[j].lo);
      lb.upper.push_back(v[j].hi);
      lb.conc.push_back(v[j].conc);
    }
  }
  return lb;
}

/** Interval matrix (dense, row-major). */
struct IMat {
  int r = 0, c = 0;
  std::vector<Interval> e;

  IMat() = default;
  IMat(int rows, int cols) : r(rows), c(cols), e(rows * cols) {}
  Interval& at(int i, int j) { return e[i * c + j]; }
  const Interval& at(int i, int j) const { return e[i * c + j]; }

  static IMat identity(int n, double s = 1.0) {
    IMat m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = Interval(s);
    return m;
  }
};

inline IMat imat_mul(const IMat& a, const IMat& b) {
  if (a.c != b.r) throw std::invalid_argument("imat_mul: shape mismatch");
  IMat m(a.r, b.c);
  for (int i = 0; i < a.r; ++i)
    for (int j = 0; j < b.c; ++j) {
      Interval s(0.0);
      for (int k = 0; k < a.c; ++k) s = s + a.at(i, k) * b.at(k, j);
      m.at(i, j) = s;
    }
  return m;
}

inline IMat imat_transpose(const IMat& a) {
  IMat m(a.c, a.r);
  for (int i = 0; i < a.r; ++i)
    for (int j = 0; j < a.c; ++j) m.at(j, i) = a.at(i, j);
  return m;
}

inline IMat imat_add(const IMat& a, const IMat& b) {
  IMat m(a.r, a.c);
  for (size_t i = 0; i < m.e.size(); ++i) m.e[i] = a.e[i] + b.e[i];
  return m;
}

inline IMat imat_sub(const IMat& a, const IMat& b) {
  IMat m(a.r, a.c);
  for (size_t i = 0; i < m.e.size(); ++i) m.e[i] = a.e[i] - b.e[i];
  return m;
}

inline IMat imat_scale(const IMat& a, double k) {
  IMat m(a.r, a.c);
  for (size_t i = 0; i < m.e.size(); ++i) m.e[i] = scale_iv(a.e[i], k);
  return m;
}

/** RᵀR with the diagonal computed as sums of squares (tighter than generic products). */
inline IMat imat_gram(const IMat& R) {
  IMat g(R.c, R.c);
  for (int i = 0; i < R.c; ++i)
    for (int j = i; j < R.c; ++j) {
      Interval s(0.0);
      for (int k = 0; k < R.r; ++k)
        s = s + (i == j ? square_iv(R.at(k, i)) : R.at(k, i) * R.at(k, j));
      g.at(i, j) = s;
      g.at(j, i) = s;
    }
  return g;
}

/** Entrywise intersection with the transpose: valid when the enclosed matrix is symmetric. */
inline IMat sym_tighten(const IMat& q) {
  IMat m(q.r, q.c);
  for (int i = 0; i < q.r; ++i)
    for (int j = 0; j < q.c; ++j) m.at(i, j) = intersect(q.at(i, j), q.at(j, i));
  return m;
}

/** Upper bound on the largest eigenvalue of any symmetric matrix in the enclosure
    (2×2: closed form; otherwise Gershgorin). */
inline double lambda_max_ub(const IMat& q) {
  if (q.r != q.c) throw std::invalid_argument("lambda_max_ub: matrix not square");
  if (q.r == 1) return q.at(0, 0).hi;
  if (q.r == 2) {
    Interval a = q.at(0, 0), d = q.at(1, 1), b = intersect(q.at(0, 1), q.at(1, 0));
    Interval half = scale_iv(a + d, 0.5);
    Interval rad = sqrt_iv(square_iv(scale_iv(a - d, 0.5)) + square_iv(b));
    return (half + rad).hi;
  }
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < q.r; ++i) {
    double row = q.at(i, i).hi;
    for (int j = 0; j < q.c; ++j)
      if (j != i) row += intersect(q.at(i, j), q.at(j, i)).mag();
    best = std::max(best, step_up(row));
  }
  return best;
}

inline double lambda_min_lb(const IMat& q) {
  IMat neg = imat_scale(q, -1.0);
  return -lambda_max_ub(neg);
}

/** Centered (slope) form between two point sets U, V: per node, enclosures of the
    value over U and over V, plus an interval slope matrix S with
    node(v) − node(u) ∈ S·(v − u) for all u ∈ U, v ∈ V. */
struct SlopeTape {
  std::vector<Interval> a, b;   // values over U / V, ExprGraph value offsets
  std::vector<Interval> sig;    // slope rows: component i of node -> sig[(off+i)*nin .. +nin]
  int nin = 0;
};

struct SlopeForm {
  std::vector<Interval> at_u, at_v;
  IMat sigma;  // dim × input_dim
};

inline void slope_propagate(const ExprGraph& g, const IntervalBox& U, const IntervalBox& V,
                            std::span<const double> params, SlopeTape& t) {
  if (U.size() != g.input_dim() || V.size() != g.input_dim())
    throw std::invalid_argument("slope_propagate: box dims != graph inputs");
  if (static_cast<int>(params.size()) != g.param_dim())
    throw std::invalid_argument("slope_propagate: param length mismatch");
  int nin = g.input_dim();
  t.nin = nin;
  t.a.assign(g.value_size(), Interval(0.0));
  t.b.assign(g.value_size(), Interval(0.0));
  t.sig.assign(static_cast<size_t>(g.value_size()) * nin, Interval(0.0));
  const auto& nodes = g.nodes();

  auto row = [&](int node, int comp) {
    return t.sig.data() + (static_cast<size_t>(g.value_offset(node)) + comp) * nin;
  };

  for (size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    int id = static_cast<int>(i);
    int off = g.value_offset(id);
    const Interval* xa = n.a >= 0 ? t.a.data() + g.value_offset(n.a) : nullptr;
    const Interval* xb = n.a >= 0 ? t.b.data() + g.value_offset(n.a) : nullptr;
    const Interval* ya = n.b >= 0 ? t.a.data() + g.value_offset(n.b) : nullptr;
    const Interval* yb = n.b >= 0 ? t.b.data() + g.value_offset(n.b) : nullptr;

    auto unary_chain = [&](int comp, Interval factor) {
      const Interval* src = row(n.a, comp);
      Interval* dst = row(id, comp);
      for (int k = 0; k < nin; ++k) dst[k] = factor * src[k];
    };

    switch (n.kind) {
      case Kind::input:
        for (int j = 0; j < n.dim; ++j) {
          t.a[off + j] = U[n.offset + j];
          t.b[off + j] = V[n.offset + j];
          row(id, j)[n.offset + j] = Interval(1.0);
        }
        break;
      case Kind::parameter:
        for (int j = 0; j < n.dim; ++j)
          t.a[off + j] = t.b[off + j] = Interval(params[n.offset + j]);
        break;
      case Kind::constant:
        for (int j = 0; j < n.dim; ++j)
          t.a[off + j] = t.b[off + j] = Interval(g.constants()[n.offset + j]);
        break;
      case Kind::add:
        for (int j = 0; j < n.dim; ++j) {
          t.a[off + j] = xa[j] + ya[j];
          t.b[off + j] = xb[j] + yb[j];
          const Interval* r1 = row(n.a, j);
          const Interval* r2 = row(n.b, j);
          Interval* dst = row(id, j);
          for (int k = 0; k < nin; ++k) dst[k] = r1[k] + r2[k];
        }
        break;
      case Kind::sub:
        for (int j = 0; j < n.dim; ++j) {
          t.a[off + j] = xa[j] - ya[j];
          t.b[off + j] = xb[j] - yb[j];
          const Interval* r1 = row(n.a, j);
          const Interval* r2 = row(n.b, j);
          Interval* dst = row(id, j);
          for (int k = 0; k < nin; ++k) dst[k] = r1[k] - r2[k];
        }
        break;
      case Kind::mul:
        // c1(v)c2(v) − c1(u)c2(u) = c1(v)·(c2(v)−c2(u)) + (c1(v)−c1(u))·c2(u)
        for (int j = 0; j < n.dim; ++j) {
          t.a[off + j] = xa[j] * ya[j];
          t.b[off + j] = xb[j] * yb[j];
          const Interval* r1 = row(n.a, j);
          const Interval* r2 = row(n.b, j);
          Interval* dst = row(id, j);
          for (int k = 0; k < nin; ++k) dst[k] = xb[j] * r2[k] + r1[k] * ya[j];
        }
        break;
      case Kind::matvec:
        for (int r = 0; r < n.rows; ++r) {
          Interval sa(0.0), sb(0.0);
          Interval* dst = row(id, r);
          for (int c = 0; c < n.cols; ++c) {
            int mj = r * n.cols + c;
            sa = sa + xa[mj] * ya[c];
            sb = sb + xb[mj] * yb[c];
            const Interval* rm = row(n.a, mj);
            const Interval* rv = row(n.b, c);
            for (int k = 0; k < nin; ++k) dst[k] = dst[k] + xb[mj] * rv[k] + rm[k] * ya[c];
          }
          t.a[off + r] = sa;
          t.b[off + r] = sb;
        }
        break;
      case Kind::dot: {
        int d = g.node_dim(n.a);
        Interval sa(0.0), sb(0.0);
        Interval* dst = row(id, 0);
        for (int j = 0; j < d; ++j) {
          sa = sa + (n.a == n.b ? square_iv(xa[j]) : xa[j] * ya[j]);
          sb = sb + (n.a == n.b ? square_iv(xb[j]) : xb[j] * yb[j]);
          const Interval* r1 = row(n.a, j);
          const Interval* r2 = row(n.b, j);
          for (int k = 0; k < nin; ++k) dst[k] = dst[k] + xb[j] * r2[k] + r1[k] * ya[j];
        }
        t.a[off] = sa;
        t.b[off] = sb;
        break;
      }
      case Kind::square:
        for (int j = 0; j < n.dim; ++j) {
          t.a[off + j] = square_iv(xa[j]);
          t.b[off + j] = square_iv(xb[j]);
          unary_chain(j, xa[j] + xb[j]);
        }
        break;
      case Kind::power:
        for (int j = 0; j < n.dim; ++j) {
          t.a[off + j] = pow_iv(xa[j], n.exponent);
          t.b[off + j] = pow_iv(xb[j], n.exponent);
          // v^p − u^p = (Σ_m v^m u^(p−1−m)) (v − u)
          Interval factor(0.0);
          for (int m = 0; m < n.exponent; ++m) {
            Interval term(1.0);
            for (int q = 0; q < m; ++q) term = term * xb[j];
            for (int q = 0; q < n.exponent - 1 - m; ++q) term = term * xa[j];
            factor = factor + term;
          }
          unary_chain(j, factor);
        }
        break;
      case Kind::sin:
        for (int j = 0; j < n.dim; ++j) {
          t.a[off + j] = sin_iv(xa[j]);
          t.b[off + j] = sin_iv(xb[j]);
          unary_chain(j, cos_iv(hull(xa[j], xb[j])));
        }
        break;
      case Kind::relu:
        for (int j = 0; j < n.dim; ++j) {
          t.a[off + j] = relu_iv(xa[j]);
          t.b[off + j] = relu_iv(xb[j]);
          Interval h = hull(xa[j], xb[j]);
          Interval s = h.lo >= 0.0 ? Interval(1.0) : (h.hi <= 0.0 ? Interval(0.0) : Interval(0.0, 1.0));
          unary_chain(j, s);
        }
        break;
      case Kind::tanh:
        for (int j = 0; j < n.dim; ++j) {
          t.a[off + j] = tanh_iv(xa[j]);
          t.b[off + j] = tanh_iv(xb[j]);
          Interval h = hull(xa[j], xb[j]);
          double tl = std::tanh(h.lo), th = std::tanh(h.hi);
          double hi = h.contains(0.0) ? 1.0 : step_up(1.0 - std::min(tl * tl, th * th));
          double lo = std::max(0.0, step_down(1.0 - std::max(tl * tl, th * th)));
          unary_chain(j, Interval(lo, std::min(1.0, hi)));
        }
        break;
      case Kind::min:
        // min(b1,b2) − min(a1,a2) lies between the componentwise differences
        for (int j = 0; j < n.dim; ++j) {
          t.a[off + j] = min_iv(xa[j], ya[j]);
          t.b[off + j] = min_iv(xb[j], yb[j]);
          const Interval* r1 = row(n.a, j);
          const Interval* r2 = row(n.b, j);
          Interval* dst = row(id, j);
          for (int k = 0; k < nin; ++k) dst[k] = hull(r1[k], r2[k]);
        }
        break;
      case Kind::neg:
        for (int j = 0; j < n.dim; ++j) {
          t.a[off + j] = -xa[j];
          t.b[off + j] = -xb[j];
          unary_chain(j, Interval(-1.0));
        }
        break;
      case Kind::scale:
        for (int j = 0; j < n.dim; ++j) {
          t.a[off + j] = scale_iv(xa[j], n.factor);
          t.b[off + j] = scale_iv(xb[j], n.factor);
          unary_chain(j, Interval(n.factor));
        }
        break;
    }
  }
}

inline SlopeForm slope_form(const ExprGraph& g, int node, const SlopeTape& t) {
  int d = g.node_dim(node), off = g.value_offset(node);
  SlopeForm f;
  f.at_u.assign(t.a.begin() + off, t.a.begin() + off + d);
  f.at_v.assign(t.b.begin() + off, t.b.begin() + off + d);
  f.sigma = IMat(d, t.nin);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < t.nin; ++k)
      f.sigma.at(i, k) = t.sig[(static_cast<size_t>(off) + i) * t.nin + k];
  return f;
}

}  // namespace contractify
