#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "contractify/expr.hpp"
#include "contractify/interval.hpp"
#include "contractify/mlp.hpp"
#include "contractify/util.hpp"

namespace contractify {

/** Discrete map f(x) = x + h·rhs(x, π(x)) over a domain box (stubs set f directly). */
struct ClosedLoopSystem {
  std::string name;
  int n = 0;
  double h = 0.0;
  IntervalBox box;
  ExprGraph f;    // inputs: x (dim n); single output node of dim n
  ExprGraph rhs;  // continuous-time right-hand side, same layout (stubs: (f(x)-x)/1)
};

inline std::vector<double> step(const ClosedLoopSystem& sys, const std::vector<double>& x) {
  if (static_cast<int>(x.size()) != sys.n)
    throw std::invalid_argument(sys.name + ": state dim " + std::to_string(x.size()) +
                                " != " + std::to_string(sys.n));
  std::vector<double> y = eval_graph(sys.f, x, {});
  for (double v : y)
    if (!std::isfinite(v))
      throw std::runtime_error(sys.name + ": non-finite state after step (divergent trajectory)");
  return y;
}

inline std::vector<std::vector<double>> simulate(const ClosedLoopSystem& sys,
                                                 const std::vector<double>& x0, int k) {
  if (k < 0) throw std::invalid_argument("simulate: negative step count");
  std::vector<std::vector<double>> traj{x0};
  traj.reserve(k + 1);
  for (int i = 0; i < k; ++i) {
    try {
      traj.push_back(step(sys, traj.back()));
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(std::string(e.what()) + " at step " + std::to_string(i));
    }
  }
  return traj;
}

inline std::string trajectory_csv(const std::vector<std::vector<double>>& traj) {
  std::ostringstream out;
  out << "k";
  if (!traj.empty())
    for (size_t j = 0; j < traj[0].size(); ++j) out << ",x" << (j + 1);
  out << "\n";
  for (size_t i = 0; i < traj.size(); ++i) {
    out << i;
    for (double v : traj[i]) out << "," << repr(v);
    out << "\n";
  }
  return out.str();
}

inline void write_trajectory_csv(const std::string& path,
                                 const std::vector<std::vector<double>>& traj) {
  atomic_write_file(path, trajectory_csv(traj));
}

namespace detail {

struct RhsBuild {
  GraphBuilder b;
  int x;  // input node
};

inline ClosedLoopSystem finish_euler(const std::string& name, int n, double h, IntervalBox box,
                                     GraphBuilder&& rhs_builder, int x_node, int rhs_node) {
  if (!(h > 0.0)) throw std::invalid_argument(name + ": step size must be positive");
  check_box(box);
  for (int i = 0; i < box.size(); ++i)
    if (!(box[i].lo < box[i].hi))
      throw std::invalid_argument(name + ": degenerate box dimension " + std::to_string(i));

  GraphBuilder fb = rhs_builder;  // same node list; add the Euler update on top
  int f_node = fb.add(x_node, fb.scale(rhs_node, h));
  fb.output(f_node);
  rhs_builder.output(rhs_node);

  ClosedLoopSystem sys;
  sys.name = name;
  sys.n = n;
  sys.h = h;
  sys.box = std::move(box);
  sys.f = fb.build();
  sys.rhs = rhs_builder.build();
  return sys;
}

}  // namespace detail

inline ClosedLoopSystem make_vdp(double mu = 3.0, double h = 0.05) {
  if (!std::isfinite(mu)) throw std::invalid_argument("make_vdp: mu must be finite");
  GraphBuilder b;
  int x = b.input(2);
  int x1 = component(b, x, 0, 2);
  int x2 = component(b, x, 1, 2);
  int r1 = b.neg(x2);
  // x1 - mu (1 - x1^2) x2
  int r2 = b.sub(x1, b.scale(b.mul(b.sub(b.constant(1.0), b.square(x1)), x2), mu));
  int rhs = assemble(b, {r1, r2});
  IntervalBox box({{-1.2, 1.2}, {-2.3, 2.3}});
  return detail::finish_euler("vdp", 2, h, box, std::move(b), x, rhs);
}

inline ClosedLoopSystem make_poly(double h = 0.05) {
  GraphBuilder b;
  int x = b.input(2);
  int x1 = component(b, x, 0, 2);
  int x2 = component(b, x, 1, 2);
  int r1 = x2;
  // -2 x1 + x1^3/3 - x2
  int r2 = b.sub(b.add(b.scale(x1, -2.0), b.scale(b.power(x1, 3), 1.0 / 3.0)), x2);
  int rhs = assemble(b, {r1, r2});
  IntervalBox box({{-4.0, 4.0}, {-4.0, 4.0}});
  return detail::finish_euler("poly", 2, h, box, std::move(b), x, rhs);
}

inline ClosedLoopSystem make_power(double delta, double h = 0.05) {
  if (!std::isfinite(delta)) throw std::invalid_argument("make_power: delta must be finite");
  GraphBuilder b;
  int x = b.input(2);
  int x1 = component(b, x, 0, 2);
  int x2 = component(b, x, 1, 2);
  int r1 = x2;
  // -0.5 x2 - (sin(x1 + delta) - sin(delta))
  int sin_term = b.sub(b.sin(b.add(x1, b.constant(delta))), b.constant(std::sin(delta)));
  int r2 = b.sub(b.scale(x2, -0.5), sin_term);
  int rhs = assemble(b, {r1, r2});
  IntervalBox box({{-1.0, 1.0}, {-1.0, 1.0}});
  return detail::finish_euler("power", 2, h, box, std::move(b), x, rhs);
}

struct PendulumParams {
  double m = 0.15;
  double l = 0.5;
  double g = 9.81;
  double beta = 0.1;
};

inline ClosedLoopSystem make_pendulum(const PendulumParams& p, const Mlp& policy,
                                      const IntervalBox& box, double h = 0.05) {
  if (policy.layers.empty() || policy.input_dim() != 2 || policy.output_dim() != 1)
    throw std::invalid_argument("make_pendulum: policy must map 2 states to 1 control");
  if (!(p.m > 0.0) || !(p.l > 0.0)) throw std::invalid_argument("make_pendulum: m, l must be positive");
  double ml2 = p.m * p.l * p.l;
  GraphBuilder b;
  int x = b.input(2);
  int x1 = component(b, x, 0, 2);
  int x2 = component(b, x, 1, 2);
  int u = append_mlp_const(b, policy, x);
  int r1 = x2;
  // -beta/(m l^2) th_dot + g/l sin(th) + u/(m l^2)
  int r2 = b.add(b.add(b.scale(x2, -p.beta / ml2), b.scale(b.sin(x1), p.g / p.l)),
                 b.scale(u, 1.0 / ml2));
  int rhs = assemble(b, {r1, r2});
  return detail::finish_euler("pendulum", 2, h, box, std::move(b), x, rhs);
}

/** f(x) = c·x test stub (c=1 gives the identity map); not an Euler discretization. */
inline ClosedLoopSystem make_scale_stub(double c, const IntervalBox& box) {
  check_box(box);
  int n = box.size();
  ClosedLoopSystem sys;
  sys.name = c == 1.0 ? "stub_identity" : (c < 1.0 ? "stub_contracting" : "stub_expanding");
  sys.n = n;
  sys.h = 1.0;
  sys.box = box;
  {
    GraphBuilder fb;
    int x = fb.input(n);
    fb.output(fb.scale(x, c));
    sys.f = fb.build();
  }
  {
    GraphBuilder rb;
    int x = rb.input(n);
    rb.output(rb.scale(x, c - 1.0));  // so that x + 1·rhs = f
    sys.rhs = rb.build();
  }
  return sys;
}

inline std::vector<double> eval_rhs(const ClosedLoopSystem& sys, const std::vector<double>& x) {
  return eval_graph(sys.rhs, x, {});
}

}  // namespace contractify
