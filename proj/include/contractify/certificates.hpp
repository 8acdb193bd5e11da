#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "contractify/mlp.hpp"
#include "contractify/systems.hpp"
#include "contractify/util.hpp"

namespace contractify {

/** State-dependent metric M(x) = mu·I + R(x)ᵀR(x), R: n -> k×n (flat, row-major). */
struct MetricNet {
  double mu = 0.1;
  int rows_k = 0;
  int n = 0;
  Mlp R;
};

inline void validate_metric(const MetricNet& m) {
  if (!(m.mu > 0.0)) throw std::invalid_argument("MetricNet: mu must be positive");
  if (m.R.input_dim() != m.n || m.R.output_dim() != m.rows_k * m.n)
    throw std::invalid_argument("MetricNet: R must map n -> k*n");
}

inline Eigen::MatrixXd r_matrix(const MetricNet& m, const Eigen::VectorXd& x) {
  Eigen::VectorXd flat = eval(m.R, x);
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      flat.data(), m.rows_k, m.n);
}

inline Eigen::MatrixXd metric_eval(const MetricNet& m, const Eigen::VectorXd& x) {
  if (x.size() != m.n) throw std::invalid_argument("metric_eval: state dim mismatch");
  Eigen::MatrixXd r = r_matrix(m, x);
  return m.mu * Eigen::MatrixXd::Identity(m.n, m.n) + r.transpose() * r;
}

/** Lyapunov candidate: quadratic xᵀPx or a scalar-output network, with levelset rho_V and decay kappa. */
struct LyapunovFn {
  enum class Form { quadratic, neural };
  Form form = Form::quadratic;
  Eigen::MatrixXd P;
  Mlp net;
  double rho_V = 0.0;
  double kappa = 0.0;
};

inline void validate_lyapunov(const LyapunovFn& v) {
  if (!(v.kappa > 0.0 && v.kappa < 1.0))
    throw std::invalid_argument("LyapunovFn: kappa must lie in (0,1)");
  if (v.form == LyapunovFn::Form::quadratic) {
    if (v.P.rows() != v.P.cols() || v.P.rows() == 0)
      throw std::invalid_argument("LyapunovFn: P must be square");
    if (!v.P.isApprox(v.P.transpose(), 1e-12))
      throw std::invalid_argument("LyapunovFn: P must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v.P);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw std::invalid_argument("LyapunovFn: P must be positive definite");
  } else if (v.net.output_dim() != 1) {
    throw std::invalid_argument("LyapunovFn: neural form needs a scalar output");
  }
}

inline double lyap_eval(const LyapunovFn& v, const Eigen::VectorXd& x) {
  if (v.form == LyapunovFn::Form::quadratic) return x.dot(v.P * x);
  return eval(v.net, x)(0);
}

inline double lyap_eval(const LyapunovFn& v, const std::vector<double>& x) {
  return lyap_eval(v, Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()));
}

inline double f_residual(const LyapunovFn& v, const ClosedLoopSystem& sys,
                         const std::vector<double>& x) {
  return lyap_eval(v, step(sys, x)) - (1.0 - v.kappa) * lyap_eval(v, x);
}

/** Everything the contraction condition quantifies over. */
struct ContractionTask {
  ClosedLoopSystem sys;
  MetricNet metric;
  LyapunovFn lyap;
  double rho_c = 0.99;
  double epsilon = 0.05;
  IntervalBox B;  // defaults to sys.box
};

inline void validate_task(const ContractionTask& t) {
  if (!(t.rho_c > 0.0 && t.rho_c < 1.0))
    throw std::invalid_argument("ContractionTask: rho_c must lie in (0,1)");
  if (!(t.epsilon > 0.0)) throw std::invalid_argument("ContractionTask: epsilon must be positive");
  validate_metric(t.metric);
  validate_lyapunov(t.lyap);
}

inline ContractionTask make_task(ClosedLoopSystem sys, MetricNet metric, LyapunovFn lyap,
                                 double rho_c, double epsilon) {
  ContractionTask t;
  t.B = sys.box;
  t.sys = std::move(sys);
  t.metric = std::move(metric);
  t.lyap = std::move(lyap);
  t.rho_c = rho_c;
  t.epsilon = epsilon;
  validate_task(t);
  return t;
}

/** G(x,δ) in the expanded sum-of-squares form:
    mu‖Δf‖² + ‖R(f(x))Δf‖² − rho_c²(mu‖δ‖² + ‖R(x)δ‖²), Δf = f(x) − f(x+δ). */
inline double g_value(const ContractionTask& t, const std::vector<double>& x,
                      const std::vector<double>& delta) {
  int n = t.sys.n;
  if (static_cast<int>(x.size()) != n || static_cast<int>(delta.size()) != n)
    throw std::invalid_argument("g_value: dimension mismatch");
  std::vector<double> xd(n);
  for (int i = 0; i < n; ++i) xd[i] = x[i] + delta[i];
  std::vector<double> fx = step(t.sys, x), fxd = step(t.sys, xd);
  Eigen::VectorXd df(n), dv(n), fxv(n), xv(n);
  for (int i = 0; i < n; ++i) {
    df(i) = fx[i] - fxd[i];
    dv(i) = delta[i];
    fxv(i) = fx[i];
    xv(i) = x[i];
  }
  Eigen::VectorXd rf = r_matrix(t.metric, fxv) * df;
  Eigen::VectorXd rx = r_matrix(t.metric, xv) * dv;
  double lhs = t.metric.mu * df.squaredNorm() + rf.squaredNorm();
  double rhs = t.rho_c * t.rho_c * (t.metric.mu * dv.squaredNorm() + rx.squaredNorm());
  return lhs - rhs;
}

/** min(G(x,δ), rho_V − V(x), rho_V − V(x+δ)); positive values are counterexamples
    to the contraction condition (modulo the x+δ ∈ B clause). */
inline double violation_loss(const ContractionTask& t, const std::vector<double>& x,
                             const std::vector<double>& delta) {
  std::vector<double> xd(x.size());
  for (size_t i = 0; i < x.size(); ++i) xd[i] = x[i] + delta[i];
  double g = g_value(t, x, delta);
  double m1 = t.lyap.rho_V - lyap_eval(t.lyap, x);
  double m2 = t.lyap.rho_V - lyap_eval(t.lyap, xd);
  return std::min(g, std::min(m1, m2));
}

/** Constant metric M(x) ≡ P via a bias-free linear R with RᵀR = P − mu·I. */
inline MetricNet constant_metric_from(const Eigen::MatrixXd& P, double mu) {
  if (P.rows() != P.cols()) throw std::invalid_argument("constant_metric_from: P must be square");
  int n = static_cast<int>(P.rows());
  Eigen::MatrixXd S = P - mu * Eigen::MatrixXd::Identity(n, n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (es.eigenvalues().minCoeff() < -1e-12)
    throw std::invalid_argument("constant_metric_from: P - mu*I is not positive semidefinite");
  Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd R = lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  MetricNet m;
  m.mu = mu;
  m.rows_k = n;
  m.n = n;
  // R(x) ≡ R as a flat row-major output: zero weights, the factor in the bias.
  Mlp::Layer l;
  l.w = Eigen::MatrixXd::Zero(n * n, n);
  l.b = Eigen::VectorXd::Zero(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) l.b[i * n + j] = R(i, j);
  l.act = Act::id;
  m.R.layers.push_back(std::move(l));
  validate_metric(m);
  return m;
}

/** Append V(x) to a builder (quadratic: dot(x, Px); neural: spliced net). */
inline int append_lyap(GraphBuilder& b, const LyapunovFn& v, int x_node) {
  if (v.form == LyapunovFn::Form::quadratic) {
    int n = static_cast<int>(v.P.rows());
    std::vector<double> p(n * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) p[i * n + j] = v.P(i, j);
    return b.dot(x_node, b.matvec(b.constant(p), x_node, n, n));
  }
  return append_mlp_const(b, v.net, x_node);
}

/** Joint-input violation graph; R enters as trainable parameters laid out like pack(R). */
struct ViolationGraph {
  ExprGraph graph;  // inputs: x then delta (2n); outputs: L_violate, G
  int l_root = -1;
  int g_root = -1;
  IntervalBox focus;  // levelset bounding box ∩ domain: where only G can excuse
};

inline ViolationGraph build_violation_graph(const ClosedLoopSystem& sys, const MetricNet& metric,
                                            const LyapunovFn& lyap, double rho_c, double rho_V) {
  int n = sys.n;
  GraphBuilder b;
  int x = b.input(n);
  int d = b.input(n);
  MlpParamNodes r_params = declare_mlp_params(b, metric.R);
  int xd = b.add(x, d);
  int fx = inline_graph(b, sys.f, {x});
  int fxd = inline_graph(b, sys.f, {xd});
  int df = b.sub(fx, fxd);
  int r_fx = instantiate_mlp(b, r_params, fx);
  int r_x = instantiate_mlp(b, r_params, x);
  int rf_df = b.matvec(r_fx, df, metric.rows_k, n);
  int rx_d = b.matvec(r_x, d, metric.rows_k, n);
  int lhs = b.add(b.scale(b.dot(df, df), metric.mu), b.dot(rf_df, rf_df));
  int rhs = b.scale(b.add(b.scale(b.dot(d, d), metric.mu), b.dot(rx_d, rx_d)), rho_c * rho_c);
  int g = b.sub(lhs, rhs);
  int vx = append_lyap(b, lyap, x);
  int vxd = append_lyap(b, lyap, xd);
  int rho = b.constant(rho_V);
  int l = b.min(b.min(g, b.sub(rho, vx)), b.sub(rho, vxd));
  b.output(l);
  b.output(g);
  ViolationGraph out;
  out.l_root = l;
  out.g_root = g;
  out.graph = b.build();
  // bounding box of {V < rho_V}: half-width_i = sqrt(rho_V·(P⁻¹)_ii) for quadratic V
  out.focus = sys.box;
  if (lyap.form == LyapunovFn::Form::quadratic && rho_V > 0.0) {
    Eigen::MatrixXd pinv = lyap.P.inverse();
    for (int i = 0; i < n; ++i) {
      double hw = std::sqrt(std::max(0.0, rho_V * pinv(i, i)));
      if (hw > 0.0)
        out.focus.dims[i] = Interval(std::max(sys.box[i].lo, -hw), std::min(sys.box[i].hi, hw));
    }
  }
  return out;
}

inline nlohmann::json metric_to_json(const MetricNet& m, double rho_c, double rho_V, double kappa,
                                     double epsilon) {
  return {{"mu", m.mu},   {"rho_c", rho_c},     {"rho_V", rho_V}, {"kappa", kappa},
          {"epsilon", epsilon}, {"rows", m.rows_k}, {"n", m.n},       {"net", to_json(m.R)}};
}

inline MetricNet metric_from_json(const nlohmann::json& j, const std::string& where) {
  for (const char* key : {"mu", "rows", "n", "net"})
    if (!j.contains(key)) throw std::runtime_error(where + ": metric file missing field " + key);
  MetricNet m;
  m.mu = j.at("mu").get<double>();
  m.rows_k = j.at("rows").get<int>();
  m.n = j.at("n").get<int>();
  m.R = mlp_from_json(j.at("net"), where);
  validate_metric(m);
  return m;
}

inline nlohmann::json lyapunov_to_json(const LyapunovFn& v) {
  nlohmann::json j{{"rho_V", v.rho_V}, {"kappa", v.kappa}};
  if (v.form == LyapunovFn::Form::quadratic) {
    j["form"] = "quadratic";
    nlohmann::json p = nlohmann::json::array();
    for (Eigen::Index r = 0; r < v.P.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < v.P.cols(); ++c) row.push_back(v.P(r, c));
      p.push_back(row);
    }
    j["P"] = p;
  } else {
    j["form"] = "neural";
    j["net"] = to_json(v.net);
  }
  return j;
}

inline LyapunovFn lyapunov_from_json(const nlohmann::json& j, const std::string& where) {
  for (const char* key : {"form", "rho_V", "kappa"})
    if (!j.contains(key)) throw std::runtime_error(where + ": Lyapunov file missing field " + key);
  LyapunovFn v;
  v.rho_V = j.at("rho_V").get<double>();
  v.kappa = j.at("kappa").get<double>();
  std::string form = j.at("form").get<std::string>();
  if (form == "quadratic") {
    v.form = LyapunovFn::Form::quadratic;
    const auto& p = j.at("P");
    v.P.resize(p.size(), p.size());
    for (size_t r = 0; r < p.size(); ++r) {
      if (p[r].size() != p.size()) throw std::runtime_error(where + ": P is not square");
      for (size_t c = 0; c < p[r].size(); ++c) v.P(r, c) = p[r][c].get<double>();
    }
  } else if (form == "neural") {
    v.form = LyapunovFn::Form::neural;
    v.net = mlp_from_json(j.at("net"), where);
  } else {
    throw std::runtime_error(where + ": unknown Lyapunov form " + form);
  }
  validate_lyapunov(v);
  return v;
}

inline void save_lyapunov(const LyapunovFn& v, const std::string& path) {
  atomic_write_file(path, lyapunov_to_json(v).dump(2) + "\n");
}

inline LyapunovFn load_lyapunov(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return lyapunov_from_json(j, path);
}

inline void save_metric(const MetricNet& m, double rho_c, double rho_V, double kappa,
                        double epsilon, const std::string& path) {
  atomic_write_file(path, metric_to_json(m, rho_c, rho_V, kappa, epsilon).dump(2) + "\n");
}

inline MetricNet load_metric(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return metric_from_json(j, path);
}

/** Exact minimum of xᵀPx (P symmetric PSD) over a box: intended for low dimension,
    enumerates the 3ᵈ face activity patterns and solves the reduced stationarity system. */
inline double exact_quad_min(const Eigen::MatrixXd& P, const IntervalBox& box) {
  int n = static_cast<int>(P.rows());
  if (box.size() != n) throw std::invalid_argument("exact_quad_min: box dims != P");
  if (n > 6) throw std::invalid_argument("exact_quad_min: dimension too large");
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> act(n);  // 0 free, 1 at lo, 2 at hi
  long total = 1;
  for (int i = 0; i < n; ++i) total *= 3;
  for (long code = 0; code < total; ++code) {
    long c = code;
    int nfree = 0;
    for (int i = 0; i < n; ++i) {
      act[i] = static_cast<int>(c % 3);
      c /= 3;
      if (act[i] == 0) ++nfree;
    }
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i)
      if (act[i] == 1)
        x[i] = box[i].lo;
      else if (act[i] == 2)
        x[i] = box[i].hi;
    if (nfree > 0) {
      Eigen::MatrixXd pff(nfree, nfree);
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nfree);
      std::vector<int> idx;
      for (int i = 0; i < n; ++i)
        if (act[i] == 0) idx.push_back(i);
      for (int a = 0; a < nfree; ++a) {
        for (int b = 0; b < nfree; ++b) pff(a, b) = P(idx[a], idx[b]);
        for (int i = 0; i < n; ++i)
          if (act[i] != 0) rhs[a] -= P(idx[a], i) * x[i];
      }
      Eigen::VectorXd xf = pff.ldlt().solve(rhs);
      bool feasible = xf.allFinite();
      for (int a = 0; a < nfree && feasible; ++a) {
        if (xf[a] < box[idx[a]].lo || xf[a] > box[idx[a]].hi) feasible = false;
        x[idx[a]] = xf[a];
      }
      if (!feasible) continue;
    }
    best = std::min(best, x.dot(P * x));
  }
  return best;
}

/** Exact maximum of xᵀPx (P PSD, hence convex) over a box: attained at a vertex. */
inline double exact_quad_max(const Eigen::MatrixXd& P, const IntervalBox& box) {
  int n = static_cast<int>(P.rows());
  if (box.size() != n) throw std::invalid_argument("exact_quad_max: box dims != P");
  if (n > 24) throw std::invalid_argument("exact_quad_max: dimension too large");
  double best = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd x(n);
  for (long code = 0; code < (1L << n); ++code) {
    for (int i = 0; i < n; ++i) x[i] = (code >> i) & 1 ? box[i].hi : box[i].lo;
    best = std::max(best, x.dot(P * x));
  }
  return best;
}

inline std::string digest_doubles(const std::vector<double>& v) {
  std::string s;
  for (double d : v) {
    s += repr(d);
    s += ',';
  }
  return hex64(fnv1a64(s));
}

/** Stable identity of a verification problem, embedded in certificates. */
inline std::string task_hash(const std::string& kind, const ClosedLoopSystem& sys,
                             const MetricNet* metric, const LyapunovFn& lyap, double rho_c,
                             double rho_V, double epsilon, const IntervalBox& B) {
  std::string s = kind + "|" + sys.name + "|h=" + repr(sys.h) + "|box=";
  for (int i = 0; i < B.size(); ++i) s += repr(B[i].lo) + ":" + repr(B[i].hi) + ";";
  s += "|rho_c=" + repr(rho_c) + "|rho_V=" + repr(rho_V) + "|eps=" + repr(epsilon) +
       "|kappa=" + repr(lyap.kappa);
  if (metric) s += "|mu=" + repr(metric->mu) + "|R=" + digest_doubles(pack(metric->R));
  if (lyap.form == LyapunovFn::Form::quadratic) {
    std::vector<double> p(lyap.P.data(), lyap.P.data() + lyap.P.size());
    s += "|P=" + digest_doubles(p);
  } else {
    s += "|Vnet=" + digest_doubles(pack(lyap.net));
  }
  return hex64(fnv1a64(s));
}

}  // namespace contractify
