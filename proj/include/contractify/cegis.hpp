#pragma once

#include <deque>
#include <functional>
#include <thread>

#include "contractify/bnb.hpp"
#include "contractify/certificates.hpp"

namespace contractify {

/** One parameter update, observable for audit/replay. */
struct UpdateEvent {
  long step = 0;
  double lr = 0.0;
  std::vector<double> params_before;
  std::vector<double> grad;
  std::vector<double> params_after;
};
using UpdateObserver = std::function<void(const UpdateEvent&)>;

struct TrainConfig {
  double eta = 1e-3;       // learning rate
  int pgd_steps = 20;      // ascent steps per mined sample
  double pgd_stepsize = 0.0125;  // defaults to epsilon/4
  int epochs = 50;         // descent epochs per mining round
  int batch = 512;
  int rounds = 20;         // mining rounds per scale stage
  std::vector<double> schedule = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  double epsilon = 0.05;
  double rho_c = 0.99;
  double mu = 0.1;
  std::vector<int> hidden = {32, 32};  // tanh layers of R
  int rows_k = 0;                      // 0: use the state dimension
  double tau = 1e-3;                   // hinge margin: train on max(L, -tau)
  std::size_t dataset_cap = 100000;
  bool warm_start = true;  // seed the output bias at the quadratic Lyapunov factor
  std::uint64_t seed = 0;
  int threads = 1;
  UpdateObserver observer;  // optional, not part of the persisted config
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.eta > 0.0)) throw std::invalid_argument("TrainConfig: eta must be positive");
  if (cfg.pgd_steps < 1) throw std::invalid_argument("TrainConfig: need >= 1 PGD step");
  if (!(cfg.pgd_stepsize > 0.0))
    throw std::invalid_argument("TrainConfig: PGD stepsize must be positive");
  if (cfg.epochs < 1) throw std::invalid_argument("TrainConfig: need >= 1 epoch");
  if (cfg.batch < 1) throw std::invalid_argument("TrainConfig: need >= 1 sample per batch");
  if (cfg.rounds < 1) throw std::invalid_argument("TrainConfig: need >= 1 mining round");
  if (cfg.schedule.empty()) throw std::invalid_argument("TrainConfig: empty scale schedule");
  double prev = 0.0;
  for (double s : cfg.schedule) {
    if (!(s > prev && s <= 1.0))
      throw std::invalid_argument("TrainConfig: schedule must increase strictly within (0,1]");
    prev = s;
  }
  if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("TrainConfig: epsilon must be positive");
  if (!(cfg.rho_c > 0.0 && cfg.rho_c < 1.0))
    throw std::invalid_argument("TrainConfig: rho_c must lie in (0,1)");
  if (!(cfg.mu > 0.0)) throw std::invalid_argument("TrainConfig: mu must be positive");
  if (!(cfg.tau >= 0.0)) throw std::invalid_argument("TrainConfig: tau must be nonnegative");
}

struct CexPair {
  std::vector<double> x, delta;
  double violation = 0.0;  // L at mining time
};

/** FIFO-capped pool of mined pairs. */
struct CexDataset {
  std::deque<CexPair> pairs;
  std::size_t cap = 100000;

  void push(CexPair p) {
    pairs.push_back(std::move(p));
    while (pairs.size() > cap) pairs.pop_front();
  }
  std::size_t size() const { return pairs.size(); }
  void clear() { pairs.clear(); }
};

namespace cegis_detail {

inline std::uint64_t mix_stream(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0,
                                std::uint64_t d = 0) {
  std::uint64_t s = splitmix64(a + 0x9e3779b97f4a7c15ull);
  s = splitmix64(s ^ b);
  s = splitmix64(s ^ c);
  return splitmix64(s ^ d);
}

inline void check_projected(const IntervalBox& B, double eps, std::span<const double> x,
                            std::span<const double> delta) {
  for (size_t i = 0; i < x.size(); ++i) {
    if (x[i] < B[static_cast<int>(i)].lo || x[i] > B[static_cast<int>(i)].hi)
      throw std::logic_error("pgd_mine: iterate escaped the domain box");
    if (std::fabs(delta[i]) > eps)
      throw std::logic_error("pgd_mine: perturbation escaped the epsilon ball");
  }
}

/** Mines one batch against a prebuilt violation graph (parallel-safe, per-sample RNG). */
inline std::vector<CexPair> mine_batch(const ViolationGraph& vg, std::span<const double> params,
                                       const IntervalBox& B, const TrainConfig& cfg, int batch,
                                       std::uint64_t stream) {
  int n = B.size();
  double beta = cfg.pgd_stepsize > 0.0 ? cfg.pgd_stepsize : cfg.epsilon / 4.0;
  std::vector<CexPair> out(batch);

  auto mine_one = [&](int idx) {
    auto rng = make_rng(cfg.seed, mix_stream(0x6d696e65ull, stream, idx));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    // stratify the perturbation over magnitude shells eps/4^k: violations that
    // exist only for ‖δ‖ ≪ eps (the Jacobian-level limit of the condition) are
    // invisible to fixed-step ascent at the full-ball stepsize, which parks
    // every iterate near the corners of the eps-ball
    double sigma = std::ldexp(cfg.epsilon, -2 * ((idx >> 1) & 3));
    double beta_d = std::min(beta, sigma / 4.0);
    // alternate x inits between the domain and the levelset bounding box: inside
    // the levelset no clause but G can excuse a pair, yet uniform-over-B sampling
    // rarely lands there (the origin pocket failure mode)
    const IntervalBox& XB = (idx & 1) ? vg.focus : B;
    std::vector<double> z(2 * n);
    for (int i = 0; i < n; ++i) z[i] = XB[i].lo + unit(rng) * XB[i].width();
    for (int i = 0; i < n; ++i) z[n + i] = -sigma + 2.0 * sigma * unit(rng);

    // keep the best iterate seen, not the last: the fixed-step sign ascent
    // overshoots shallow violation pockets and would otherwise report the bounce
    Tape tape;
    Gradients gr;
    std::vector<double> best = z;
    double best_val = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < cfg.pgd_steps; ++s) {
      gradient(vg.graph, vg.l_root, z, params, tape, gr);
      double val = tape.val[vg.graph.value_offset(vg.l_root)];
      if (val > best_val) { best_val = val; best = z; }
      for (int i = 0; i < n; ++i) {
        double gx = gr.input[i], gd = gr.input[n + i];
        z[i] = std::clamp(z[i] + beta * (gx > 0.0 ? 1.0 : (gx < 0.0 ? -1.0 : 0.0)), B[i].lo,
                          B[i].hi);
        z[n + i] = std::clamp(z[n + i] + beta_d * (gd > 0.0 ? 1.0 : (gd < 0.0 ? -1.0 : 0.0)),
                              -cfg.epsilon, cfg.epsilon);
      }
      check_projected(B, cfg.epsilon, std::span(z.data(), n), std::span(z.data() + n, n));
    }
    eval_graph(vg.graph, z, params, tape);
    double val = tape.val[vg.graph.value_offset(vg.l_root)];
    if (val > best_val) { best_val = val; best = z; }
    CexPair p;
    p.x.assign(best.begin(), best.begin() + n);
    p.delta.assign(best.begin() + n, best.end());
    p.violation = best_val;
    out[idx] = std::move(p);
  };

  int nthreads = std::max(1, cfg.threads);
  if (nthreads == 1 || batch < 2 * nthreads) {
    for (int i = 0; i < batch; ++i) mine_one(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < nthreads; ++t)
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < batch; i = next.fetch_add(1)) mine_one(i);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

}  // namespace cegis_detail

/** Projected sign-gradient ascent on the violation from random initializations.
    Returns the whole batch — violating or not — with violations recorded. */
inline std::vector<CexPair> pgd_mine(const ContractionTask& t, const TrainConfig& cfg, int batch,
                                     std::uint64_t stream = 0) {
  validate_task(t);
  if (batch < 1) throw std::invalid_argument("pgd_mine: need >= 1 sample");
  ViolationGraph vg = build_violation_graph(t.sys, t.metric, t.lyap, t.rho_c, t.lyap.rho_V);
  std::vector<double> params = pack(t.metric.R);
  TrainConfig local = cfg;
  local.epsilon = t.epsilon;
  if (cfg.pgd_steps == 0) {
    // zero steps: return the raw initializations
    local.pgd_steps = 0;
  }
  return cegis_detail::mine_batch(vg, params, t.B, local, batch, stream);
}

struct TrainLogRow {
  long iteration = 0;
  double scale = 0.0;
  double max_violation = 0.0;
  double mean_loss = 0.0;
  std::size_t dataset_size = 0;
};

inline std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::string s = "iteration,scale,max_violation,mean_loss,dataset_size\n";
  for (const auto& r : rows) {
    s += std::to_string(r.iteration) + "," + repr(r.scale) + "," + repr(r.max_violation) + "," +
         repr(r.mean_loss) + "," + std::to_string(r.dataset_size) + "\n";
  }
  return s;
}

struct TrainResult {
  MetricNet metric;
  std::vector<TrainLogRow> log;
  bool diverged = false;
  double final_max_violation = 0.0;
};

namespace cegis_detail {

inline Mlp make_metric_mlp(int n, const std::vector<int>& hidden, int rows_k,
                           std::mt19937_64& rng) {
  Mlp net;
  std::vector<int> dims;
  dims.push_back(n);
  for (int h : hidden) dims.push_back(h);
  dims.push_back(rows_k * n);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    Mlp::Layer layer;
    int fan_in = dims[l], fan_out = dims[l + 1];
    double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    layer.w = Eigen::MatrixXd::Zero(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) layer.w(i, j) = u(rng);
    layer.b = Eigen::VectorXd::Zero(fan_out);
    layer.act = l + 2 < dims.size() ? Act::tanh : Act::id;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

struct Adam {
  std::vector<double> m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void step(std::vector<double>& params, const std::vector<double>& grad, double eta) {
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    ++t;
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= eta * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

/** Mean hinge loss and its parameter gradient over one minibatch of the dataset.
    Chunked with a fixed fan-out and reduced in chunk order, so sums are identical
    for any thread count. */
inline double batch_loss_grad(const ViolationGraph& vg, std::span<const double> params,
                              const CexDataset& data, const std::vector<size_t>& indices,
                              size_t begin, size_t end, double tau, int threads,
                              std::vector<double>* grad_out) {
  constexpr int kChunks = 64;
  size_t count = end - begin;
  if (count == 0) return 0.0;
  int nchunks = static_cast<int>(std::min<size_t>(kChunks, count));
  std::vector<std::vector<double>> chunk_grad(nchunks);
  std::vector<double> chunk_loss(nchunks, 0.0);

  auto run_chunk = [&](int c) {
    size_t lo = begin + count * c / nchunks;
    size_t hi = begin + count * (c + 1) / nchunks;
    Tape tape;
    Gradients gr;
    std::vector<double> acc(grad_out ? params.size() : 0, 0.0);
    std::vector<double> z;
    double loss = 0.0;
    for (size_t i = lo; i < hi; ++i) {
      const CexPair& p = data.pairs[indices[i]];
      z.assign(p.x.begin(), p.x.end());
      z.insert(z.end(), p.delta.begin(), p.delta.end());
      eval_graph(vg.graph, z, params, tape);
      double L = tape.val[vg.graph.value_offset(vg.l_root)];
      if (L > -tau) {
        loss += L;
        if (grad_out) {
          gradient(vg.graph, vg.l_root, z, params, tape, gr);
          for (size_t k = 0; k < acc.size(); ++k) acc[k] += gr.param[k];
        }
      } else {
        loss += -tau;  // hinge floor: satisfied pairs stop contributing gradient
      }
    }
    chunk_loss[c] = loss;
    if (grad_out) chunk_grad[c] = std::move(acc);
  };

  int nthreads = std::max(1, threads);
  if (nthreads == 1 || nchunks == 1) {
    for (int c = 0; c < nchunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    int workers = std::min(nthreads, nchunks);
    for (int t = 0; t < workers; ++t)
      pool.emplace_back([&] {
        for (int c = next.fetch_add(1); c < nchunks; c = next.fetch_add(1)) run_chunk(c);
      });
    for (auto& th : pool) th.join();
  }

  double total = 0.0;
  for (int c = 0; c < nchunks; ++c) total += chunk_loss[c];
  if (grad_out) {
    grad_out->assign(params.size(), 0.0);
    for (int c = 0; c < nchunks; ++c)
      for (size_t k = 0; k < grad_out->size(); ++k) (*grad_out)[k] += chunk_grad[c][k];
    double inv = 1.0 / static_cast<double>(count);
    for (double& g : *grad_out) g *= inv;
  }
  return total / static_cast<double>(count);
}

inline bool finite_params(const std::vector<double>& p) {
  for (double v : p)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace cegis_detail

/** Counterexample-guided metric training: per scale stage, alternate PGD mining into
    the dataset with epochs of adaptive-moment descent on the hinged violation. */
inline TrainResult train_metric(const ClosedLoopSystem& sys, const LyapunovFn& lyap,
                                const TrainConfig& cfg) {
  using namespace cegis_detail;
  validate_train_config(cfg);
  validate_lyapunov(lyap);
  int n = sys.n;
  int rows_k = cfg.rows_k > 0 ? cfg.rows_k : n;

  MetricNet metric;
  metric.mu = cfg.mu;
  metric.rows_k = rows_k;
  metric.n = n;
  {
    auto rng = make_rng(cfg.seed, mix_stream(0x696e6974ull, 0));
    metric.R = make_metric_mlp(n, cfg.hidden, rows_k, rng);
  }
  if (cfg.warm_start && rows_k == n && lyap.form == LyapunovFn::Form::quadratic &&
      lyap.P.rows() == n) {
    // Anchor descent at the certified constant metric: bias the output layer at
    // an eigenfactor of c·P − µI (c chosen so the difference stays definite) and
    // damp the random output weights. M(0) then starts at c·P, which already
    // contracts near the fixed point, and training only has to learn the
    // state-dependent correction in the outer region. Scaling P is free because
    // the contraction condition is homogeneous in the metric.
    double lam_min =
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(lyap.P).eigenvalues().minCoeff();
    if (lam_min > 0.0) {
      double c = 2.0 * cfg.mu / lam_min;
      Eigen::MatrixXd S = c * lyap.P - cfg.mu * Eigen::MatrixXd::Identity(n, n);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
      Eigen::MatrixXd R0 =
          es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
      auto& out = metric.R.layers.back();
      out.w *= 0.1;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out.b[i * n + j] = R0(i, j);
    }
  }
  validate_metric(metric);

  std::vector<double> params = pack(metric.R);
  std::vector<double> checkpoint = params;
  Adam adam;
  TrainResult result;
  long iteration = 0;
  long update_step = 0;
  double beta = cfg.pgd_stepsize > 0.0 ? cfg.pgd_stepsize : cfg.epsilon / 4.0;
  TrainConfig mine_cfg = cfg;
  mine_cfg.pgd_stepsize = beta;

  double last_max_violation = std::numeric_limits<double>::infinity();

  for (size_t stage = 0; stage < cfg.schedule.size(); ++stage) {
    double scale = cfg.schedule[stage];
    LyapunovFn scaled = lyap;
    scaled.rho_V = scale * lyap.rho_V;
    ViolationGraph vg = build_violation_graph(sys, metric, scaled, cfg.rho_c, scaled.rho_V);

    CexDataset data;
    data.cap = cfg.dataset_cap;
    int clean_rounds = 0;

    for (int round = 0; round < cfg.rounds; ++round) {
      std::uint64_t stream = mix_stream(0x726f756e64ull, stage, round);
      auto batch = mine_batch(vg, params, sys.box, mine_cfg, cfg.batch, stream);
      double max_viol = -std::numeric_limits<double>::infinity();
      for (auto& p : batch) {
        max_viol = std::max(max_viol, p.violation);
        data.push(std::move(p));
      }
      last_max_violation = max_viol;

      clean_rounds = max_viol <= 0.0 ? clean_rounds + 1 : 0;

      std::vector<size_t> order(data.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::vector<double> grad;
      // only deform the metric when mining found a violation: a clean round must
      // leave the weights untouched, so the stage-advance check validates the
      // exact parameters that will be returned, not a retrained mutation of them
      for (int epoch = 0; clean_rounds == 0 && epoch < cfg.epochs; ++epoch) {
        auto rng = make_rng(cfg.seed, mix_stream(0x73687566ull, stage, round, epoch));
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t begin = 0; begin < order.size(); begin += cfg.batch) {
          size_t end = std::min(order.size(), begin + cfg.batch);
          batch_loss_grad(vg, params, data, order, begin, end, cfg.tau, cfg.threads, &grad);
          UpdateEvent ev;
          if (cfg.observer) {
            ev.step = update_step;
            ev.lr = cfg.eta;
            ev.params_before = params;
            ev.grad = grad;
          }
          adam.step(params, grad, cfg.eta);
          ++update_step;
          if (cfg.observer) {
            ev.params_after = params;
            cfg.observer(ev);
          }
        }
        if (!finite_params(params)) break;
      }

      double mean_loss =
          finite_params(params)
              ? batch_loss_grad(vg, params, data, order, 0, order.size(), cfg.tau, cfg.threads,
                                nullptr)
              : std::numeric_limits<double>::quiet_NaN();
      result.log.push_back({iteration++, scale, max_viol, mean_loss, data.size()});

      if (!finite_params(params) || !std::isfinite(mean_loss)) {
        // divergence: fall back to the last finite checkpoint and stop
        params = checkpoint;
        result.diverged = true;
        metric.R = unpack(metric.R, params);
        result.metric = std::move(metric);
        result.final_max_violation = last_max_violation;
        return result;
      }
      checkpoint = params;
      if (clean_rounds >= 5) break;  // scale stage converged early
    }
  }

  metric.R = unpack(metric.R, params);
  result.metric = std::move(metric);
  result.final_max_violation = last_max_violation;
  return result;
}

/** Quadratic Lyapunov synthesis: P from the discrete Lyapunov equation at the
    origin linearization, normalized so sup over B of xᵀPx is 1, then the largest
    certifiably invariant levelset via bisection. */
struct SynthOptions {
  double kappa = 0.01;
  double levelset_tol = 0.005;
  double levelset_hi = 1.0;
  Budget budget;
  VerifyOptions verify;
};

struct SynthResult {
  LyapunovFn lyap;
  Eigen::MatrixXd A;      // origin linearization
  Eigen::MatrixXd P_raw;  // before normalization
  LevelsetScan scan;
  VerifyResult invariance;  // result at the certified rho_V
};

inline Eigen::MatrixXd jacobian_at_origin(const ClosedLoopSystem& sys) {
  int n = sys.n;
  auto diff = [&](double h) {
    Eigen::MatrixXd A(n, n);
    for (int j = 0; j < n; ++j) {
      std::vector<double> xp(n, 0.0), xm(n, 0.0);
      xp[j] = h;
      xm[j] = -h;
      auto fp = eval_graph(sys.f, xp, {});
      auto fm = eval_graph(sys.f, xm, {});
      for (int i = 0; i < n; ++i) A(i, j) = (fp[i] - fm[i]) / (2.0 * h);
    }
    return A;
  };
  Eigen::MatrixXd A = diff(1e-5), A2 = diff(1e-6);
  if ((A - A2).cwiseAbs().maxCoeff() > 1e-6)
    throw std::runtime_error(
        "jacobian_at_origin: finite differences disagree; dynamics may be non-smooth at 0");
  return A;
}

inline SynthResult synth_quadratic_lyapunov(const ClosedLoopSystem& sys, const IntervalBox& B,
                                            const SynthOptions& opts = {}) {
  int n = sys.n;
  if (B.size() != n) throw std::invalid_argument("synth_quadratic_lyapunov: box dims != system");
  if (!(opts.kappa > 0.0 && opts.kappa < 1.0))
    throw std::invalid_argument("synth_quadratic_lyapunov: kappa must lie in (0,1)");

  SynthResult res;
  res.A = jacobian_at_origin(sys);
  {
    Eigen::EigenSolver<Eigen::MatrixXd> es(res.A);
    double radius = es.eigenvalues().cwiseAbs().maxCoeff();
    if (!(radius < 1.0))
      throw std::runtime_error("synth_quadratic_lyapunov: linearization not Schur stable "
                               "(spectral radius " + repr(radius) + ")");
  }

  // vec(AᵀPA − P) = (Aᵀ ⊗ Aᵀ − I) vec(P) = −vec(I)
  Eigen::MatrixXd at = res.A.transpose();
  Eigen::MatrixXd K(n * n, n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l) K(i * n + k, j * n + l) = at(i, j) * at(k, l);
  K -= Eigen::MatrixXd::Identity(n * n, n * n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n * n);
  for (int i = 0; i < n; ++i) rhs(i * n + i) = -1.0;
  Eigen::VectorXd vecp = K.fullPivLu().solve(rhs);
  Eigen::MatrixXd P(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) P(i, j) = vecp(i * n + j);
  P = 0.5 * (P + P.transpose());
  res.P_raw = P;

  // normalize so sup over B of V is exactly the unit level
  double sup = exact_quad_max(P, B);
  if (!(sup > 0.0)) throw std::runtime_error("synth_quadratic_lyapunov: degenerate levelsets");
  P /= sup;

  LyapunovFn lyap;
  lyap.form = LyapunovFn::Form::quadratic;
  lyap.P = P;
  lyap.kappa = opts.kappa;
  lyap.rho_V = 0.0;
  validate_lyapunov(lyap);

  std::optional<VerifyResult> best;
  auto probe = [&](double rho) {
    LyapunovFn cand = lyap;
    cand.rho_V = rho;
    VerifyResult r = verify_forward_invariance(sys, cand, B, opts.budget, opts.verify);
    if (r.status == Status::Verified) best = r;
    return r;
  };
  res.scan = max_levelset(probe, 0.0, opts.levelset_hi, opts.levelset_tol);
  if (!res.scan.certified || !best)
    throw std::runtime_error("synth_quadratic_lyapunov: no certifiable invariant levelset");
  lyap.rho_V = res.scan.rho_star;
  res.invariance = *best;
  res.lyap = std::move(lyap);
  return res;
}

}  // namespace contractify
