#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <thread>
#include <vector>

#include "contractify/boundprop.hpp"
#include "contractify/certificates.hpp"

namespace contractify {

enum class Status { Verified, Falsified, Unknown };

inline const char* status_name(Status s) {
  switch (s) {
    case Status::Verified: return "Verified";
    case Status::Falsified: return "Falsified";
    default: return "Unknown";
  }
}

/** One clause of a disjunction "somewhere in this list, a condition holds".
    Margins are oriented so that the clause holds at a point iff margin ≥ 0
    (box_exclusion needs strict > 0: the target box is closed). */
struct Clause {
  enum class Kind { expr_nonneg, box_exclusion, box_containment, conjunction };
  Kind kind = Kind::expr_nonneg;

  std::shared_ptr<const ExprGraph> graph;  // scalar outputs (one per vector component)
  std::vector<double> params;
  int out_index = 0;        // expr_nonneg: which graph output is the margin
  IntervalBox target;       // box_exclusion / box_containment
  std::vector<Clause> parts;  // conjunction: all must hold

  bool use_linear_relax = false;
  // Optional certified lower bound on the margin over a sub-box (structured
  // provers: slope forms, exact quadratic minima). Combined by max with the
  // graph-based bounds.
  std::function<double(const IntervalBox&)> lower_bound_hook;
};

struct DisjunctiveSpec {
  std::vector<Clause> clauses;
  IntervalBox domain;
};

namespace bnb_detail {

inline void validate_clause(const Clause& c, int dim) {
  switch (c.kind) {
    case Clause::Kind::conjunction:
      if (c.parts.empty()) throw std::invalid_argument("Clause: empty conjunction");
      for (const Clause& p : c.parts) validate_clause(p, dim);
      break;
    case Clause::Kind::expr_nonneg:
      if (!c.graph) throw std::invalid_argument("Clause: missing graph");
      if (c.graph->input_dim() != dim)
        throw std::invalid_argument("Clause: graph input dim != spec domain dim");
      if (c.out_index < 0 || c.out_index >= static_cast<int>(c.graph->outputs().size()))
        throw std::invalid_argument("Clause: output index out of range");
      break;
    case Clause::Kind::box_exclusion:
    case Clause::Kind::box_containment:
      if (!c.graph) throw std::invalid_argument("Clause: missing graph");
      if (c.graph->input_dim() != dim)
        throw std::invalid_argument("Clause: graph input dim != spec domain dim");
      if (static_cast<int>(c.graph->outputs().size()) != c.target.size())
        throw std::invalid_argument("Clause: image dim != target box dim");
      break;
  }
}

}  // namespace bnb_detail

inline void validate_spec(const DisjunctiveSpec& spec) {
  if (spec.clauses.empty()) throw std::invalid_argument("DisjunctiveSpec: needs >= 1 clause");
  if (spec.domain.size() == 0) throw std::invalid_argument("DisjunctiveSpec: empty domain");
  for (const Clause& c : spec.clauses) bnb_detail::validate_clause(c, spec.domain.size());
}

/** Pointwise margin of a clause; ≥ 0 (strict for exclusion) means the clause holds. */
inline double clause_margin(const Clause& c, std::span<const double> z) {
  switch (c.kind) {
    case Clause::Kind::expr_nonneg: {
      auto out = eval_graph(*c.graph, z, c.params);
      return out[c.out_index];
    }
    case Clause::Kind::box_exclusion: {
      auto y = eval_graph(*c.graph, z, c.params);
      double m = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < c.target.size(); ++i)
        m = std::max(m, std::max(c.target[i].lo - y[i], y[i] - c.target[i].hi));
      return m;  // signed distance outside the target box
    }
    case Clause::Kind::box_containment: {
      auto y = eval_graph(*c.graph, z, c.params);
      double m = std::numeric_limits<double>::infinity();
      for (int i = 0; i < c.target.size(); ++i)
        m = std::min(m, std::min(y[i] - c.target[i].lo, c.target[i].hi - y[i]));
      return m;  // signed distance inside the target box
    }
    case Clause::Kind::conjunction: {
      double m = std::numeric_limits<double>::infinity();
      for (const Clause& p : c.parts) m = std::min(m, clause_margin(p, z));
      return m;
    }
  }
  return 0.0;
}

/** Margin plus a (sub)gradient with respect to the inputs. */
inline double clause_margin_grad(const Clause& c, std::span<const double> z,
                                 std::vector<double>& grad) {
  switch (c.kind) {
    case Clause::Kind::expr_nonneg: {
      Tape t;
      Gradients gr;
      gradient(*c.graph, c.graph->outputs()[c.out_index], z, c.params, t, gr);
      grad = gr.input;
      return t.val[c.graph->value_offset(c.graph->outputs()[c.out_index])];
    }
    case Clause::Kind::box_exclusion:
    case Clause::Kind::box_containment: {
      auto y = eval_graph(*c.graph, z, c.params);
      bool excl = c.kind == Clause::Kind::box_exclusion;
      double m = excl ? -std::numeric_limits<double>::infinity()
                      : std::numeric_limits<double>::infinity();
      int arg = 0;
      double sign = 1.0;
      for (int i = 0; i < c.target.size(); ++i) {
        double below = c.target[i].lo - y[i], above = y[i] - c.target[i].hi;
        if (excl) {
          if (below > m) { m = below; arg = i; sign = -1.0; }
          if (above > m) { m = above; arg = i; sign = 1.0; }
        } else {
          if (y[i] - c.target[i].lo < m) { m = y[i] - c.target[i].lo; arg = i; sign = 1.0; }
          if (c.target[i].hi - y[i] < m) { m = c.target[i].hi - y[i]; arg = i; sign = -1.0; }
        }
      }
      Tape t;
      Gradients gr;
      gradient(*c.graph, c.graph->outputs()[arg], z, c.params, t, gr);
      grad.assign(gr.input.size(), 0.0);
      for (size_t k = 0; k < grad.size(); ++k) grad[k] = sign * gr.input[k];
      return m;
    }
    case Clause::Kind::conjunction: {
      double best = std::numeric_limits<double>::infinity();
      std::vector<double> g;
      for (const Clause& p : c.parts) {
        std::vector<double> gp;
        double m = clause_margin_grad(p, z, gp);
        if (m < best) { best = m; g = std::move(gp); }
      }
      grad = std::move(g);
      return best;
    }
  }
  return 0.0;
}

/** Certified lower bound of the clause margin over a box, and whether the clause
    is thereby proved to hold on the whole box. */
struct ClauseBound {
  double lb = -std::numeric_limits<double>::infinity();
  bool proved = false;
};

inline ClauseBound clause_bound(const Clause& c, const IntervalBox& box) {
  ClauseBound r;
  switch (c.kind) {
    case Clause::Kind::expr_nonneg: {
      auto iv = propagate_box(*c.graph, box, c.params);
      double lb = iv[c.out_index].lo;
      if (c.use_linear_relax && lb < 0.0) {
        auto lin = linear_relax(*c.graph, box, c.params);
        lb = std::max(lb, lin.conc[c.out_index].lo);
      }
      if (c.lower_bound_hook) lb = std::max(lb, c.lower_bound_hook(box));
      r.lb = lb;
      r.proved = lb >= 0.0;
      break;
    }
    case Clause::Kind::box_exclusion: {
      auto y = propagate_box(*c.graph, box, c.params);
      double lb = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < c.target.size(); ++i)
        lb = std::max(lb, std::max(c.target[i].lo - y[i].hi, y[i].lo - c.target[i].hi));
      r.lb = lb;
      r.proved = lb > 0.0;  // target box is closed: strict separation required
      break;
    }
    case Clause::Kind::box_containment: {
      auto y = propagate_box(*c.graph, box, c.params);
      double lb = std::numeric_limits<double>::infinity();
      for (int i = 0; i < c.target.size(); ++i)
        lb = std::min(lb, std::min(y[i].lo - c.target[i].lo, c.target[i].hi - y[i].hi));
      r.lb = lb;
      r.proved = lb >= 0.0;
      break;
    }
    case Clause::Kind::conjunction: {
      double lb = std::numeric_limits<double>::infinity();
      bool all = true;
      for (const Clause& p : c.parts) {
        ClauseBound pb = clause_bound(p, box);
        lb = std::min(lb, pb.lb);
        all = all && pb.proved;
      }
      r.lb = lb;
      r.proved = all;
      break;
    }
  }
  return r;
}

struct Witness {
  std::vector<double> z;
  std::vector<double> clause_margins;  // all strictly negative
};

struct VerifyStats {
  long boxes = 0;
  long discharged = 0;
  long undischarged = 0;
  int max_depth = 0;
  double wall_time = 0.0;
  double min_margin = std::numeric_limits<double>::infinity();
  std::string tree_digest;  // order-sensitive digest of the explored box tree
};

struct VerifyResult {
  Status status = Status::Unknown;
  std::optional<Witness> witness;
  VerifyStats stats;
  std::vector<IntervalBox> undischarged;  // capped; smallest boxes kept first
};

struct Budget {
  long max_boxes = 200000;
  int max_depth = 60;
  double time_limit = 600.0;  // seconds
};

struct PgdParams {
  int steps = 30;
  double stepsize_frac = 0.1;  // of box width, per dimension
  int restarts = 5;
};

struct VerifyOptions {
  int threads = 1;
  std::uint64_t seed = 0;
  PgdParams pgd;
};

/** PGD attack on a box: minimizes the max clause margin by signed-gradient steps
    and reports a point only if direct evaluation violates every clause strictly. */
inline std::optional<Witness> falsify(const DisjunctiveSpec& spec, const IntervalBox& box,
                                      const PgdParams& pgd = {}, std::uint64_t seed = 0) {
  int dim = box.size();
  std::vector<double> hashed;
  hashed.reserve(2 * dim);
  for (int i = 0; i < dim; ++i) {
    hashed.push_back(box[i].lo);
    hashed.push_back(box[i].hi);
  }
  std::string key;
  for (double d : hashed) key += repr(d) + ",";
  auto rng = make_rng(seed, fnv1a64(key));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto strict_witness = [&](const std::vector<double>& z) -> std::optional<Witness> {
    Witness w;
    w.z = z;
    for (const Clause& c : spec.clauses) {
      double m = clause_margin(c, z);
      if (!(m < 0.0)) return std::nullopt;
      w.clause_margins.push_back(m);
    }
    return w;
  };

  std::vector<double> z(dim), grad, step(dim);
  for (int i = 0; i < dim; ++i) step[i] = pgd.stepsize_frac * box[i].width();
  for (int restart = 0; restart < pgd.restarts; ++restart) {
    for (int i = 0; i < dim; ++i)
      z[i] = restart == 0 ? box[i].mid() : box[i].lo + unit(rng) * box[i].width();
    for (int s = 0; s < pgd.steps; ++s) {
      // the clause with the largest margin is the one blocking a counterexample
      double worst = -std::numeric_limits<double>::infinity();
      const Clause* target = nullptr;
      for (const Clause& c : spec.clauses) {
        double m = clause_margin(c, z);
        if (m > worst) { worst = m; target = &c; }
      }
      if (worst < 0.0) {
        if (auto w = strict_witness(z)) return w;
      }
      double m = clause_margin_grad(*target, z, grad);
      (void)m;
      bool flat = true;
      for (double gv : grad)
        if (std::fabs(gv) > 1e-18) flat = false;
      for (int i = 0; i < dim; ++i) {
        double dir = flat ? 2.0 * unit(rng) - 1.0 : -(grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0));
        z[i] = std::clamp(z[i] + dir * step[i], box[i].lo, box[i].hi);
      }
    }
    if (auto w = strict_witness(z)) return w;
  }
  return std::nullopt;
}

namespace bnb_detail {

inline std::pair<IntervalBox, IntervalBox> split_by(const IntervalBox& box,
                                                    const IntervalBox& domain,
                                                    const Clause* tightest) {
  int dim = box.size();
  constexpr double kWidthFloor = 1e-6;

  std::vector<double> center(dim), grad(dim, 0.0);
  for (int i = 0; i < dim; ++i) center[i] = box[i].mid();
  if (tightest) clause_margin_grad(*tightest, center, grad);

  auto bisect = [&](int d) {
    IntervalBox a = box, b = box;
    double m = box[d].mid();
    a.dims[d] = Interval(box[d].lo, m);
    b.dims[d] = Interval(m, box[d].hi);
    return std::make_pair(std::move(a), std::move(b));
  };

  // With a structured prover on the tightest clause, score each dimension by the
  // bound its split actually achieves (worst child); the center gradient is blind
  // there — quadratic margins vanish identically at the displacement midpoint.
  bool lookahead = tightest && tightest->lower_bound_hook;

  // No dimension may starve: only dimensions within a factor two of the widest
  // (normalized) are candidates, and the score chooses among those. Greedy scores
  // alone will chase marginal gains in one dimension forever.
  double wmax = 0.0;
  for (int i = 0; i < dim; ++i) {
    double dw = domain[i].width();
    double nw = dw > 0.0 ? box[i].width() / dw : 0.0;
    if (nw > 2.0 * kWidthFloor) wmax = std::max(wmax, nw);
  }

  int pick = -1;
  double primary = 0.0, tiebreak = 0.0;
  for (int i = 0; i < dim; ++i) {
    double dw = domain[i].width();
    double norm_width = dw > 0.0 ? box[i].width() / dw : 0.0;
    if (norm_width <= 2.0 * kWidthFloor) continue;  // children must stay above the floor
    if (norm_width < 0.5 * wmax) continue;
    double sens = i < static_cast<int>(grad.size()) ? std::fabs(grad[i]) : 0.0;
    double gscore = norm_width * (sens + 1e-12);
    double p = gscore, s = norm_width;
    if (lookahead) {
      auto ch = bisect(i);
      p = std::min(tightest->lower_bound_hook(ch.first),
                   tightest->lower_bound_hook(ch.second));
      s = gscore;  // hook ties (flat or symmetric boxes) fall back to the gradient
    }
    if (pick < 0 || p > primary || (p == primary && s > tiebreak)) {
      primary = p;
      tiebreak = s;
      pick = i;
    }
  }
  if (pick < 0) throw std::invalid_argument("split: box at minimum width floor");
  return bisect(pick);
}

}  // namespace bnb_detail

/** Bisect along the dimension maximizing width × sensitivity, where sensitivity is
    the mean |input cotangent| of the tightest clause at the box center; clauses
    backed by a structured prover are scored by one-step bound lookahead instead. */
inline std::pair<IntervalBox, IntervalBox> split(const IntervalBox& box,
                                                 const DisjunctiveSpec& spec) {
  // the clause closest to discharging the box drives the split direction
  double best = -std::numeric_limits<double>::infinity();
  const Clause* tightest = nullptr;
  for (const Clause& c : spec.clauses) {
    ClauseBound b = clause_bound(c, box);
    if (b.lb > best) { best = b.lb; tightest = &c; }
  }
  return bnb_detail::split_by(box, spec.domain, tightest);
}

inline bool splittable(const IntervalBox& box, const IntervalBox& domain) {
  constexpr double kWidthFloor = 1e-6;
  for (int i = 0; i < box.size(); ++i) {
    double dw = domain[i].width();
    if (dw > 0.0 && box[i].width() / dw > 2.0 * kWidthFloor) return true;
  }
  return false;
}

namespace bnb_detail {

struct WorkItem {
  IntervalBox box;
  double lb;
  int depth;
  std::uint64_t seq;
};

struct ItemOrder {
  bool operator()(const WorkItem& a, const WorkItem& b) const {
    if (a.lb != b.lb) return a.lb > b.lb;  // most violating (smallest lb) first
    return a.seq > b.seq;
  }
};

constexpr size_t kMaxStoredUnknown = 4096;

struct SearchState {
  std::mutex m;
  std::condition_variable cv;
  std::priority_queue<WorkItem, std::vector<WorkItem>, ItemOrder> queue;
  int inflight = 0;
  bool stop = false;
  std::uint64_t next_seq = 0;

  std::optional<Witness> witness;
  std::vector<IntervalBox> unknown;
  long unknown_count = 0;
  long boxes = 0;
  long discharged = 0;
  int max_depth = 0;
  double min_margin = std::numeric_limits<double>::infinity();
  std::uint64_t digest = 14695981039346656037ull;  // FNV offset basis

  void fold_digest(const IntervalBox& box, int action) {
    std::string s;
    for (int i = 0; i < box.size(); ++i) s += repr(box[i].lo) + ":" + repr(box[i].hi) + ";";
    s += static_cast<char>('0' + action);
    for (unsigned char ch : s) {
      digest ^= ch;
      digest *= 1099511628211ull;
    }
  }

  void record_unknown(const IntervalBox& box) {
    ++unknown_count;
    if (unknown.size() < kMaxStoredUnknown) {
      unknown.push_back(box);
    } else {
      // keep the smallest boxes: replace the largest stored one if this is smaller
      auto volume = [](const IntervalBox& b) {
        double v = 1.0;
        for (int i = 0; i < b.size(); ++i) v *= std::max(b[i].width(), 1e-300);
        return v;
      };
      size_t worst = 0;
      double wv = -1.0;
      for (size_t i = 0; i < unknown.size(); ++i) {
        double v = volume(unknown[i]);
        if (v > wv) { wv = v; worst = i; }
      }
      if (volume(box) < wv) unknown[worst] = box;
    }
  }
};

}  // namespace bnb_detail

/** Best-first branch and bound over the disjunction. A sub-box is discharged iff a
    single clause is proved over the entire sub-box; a strict pointwise violation of
    every clause falsifies the whole spec. */
inline VerifyResult verify(const DisjunctiveSpec& spec, const Budget& budget,
                           const VerifyOptions& opts = {}) {
  validate_spec(spec);
  if (budget.max_boxes <= 0) throw std::invalid_argument("verify: budget must allow >= 1 box");
  if (budget.max_depth < 0) throw std::invalid_argument("verify: negative depth budget");

  using namespace bnb_detail;
  using clock = std::chrono::steady_clock;
  auto t0 = clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - t0).count(); };

  SearchState st;
  {
    std::lock_guard<std::mutex> lk(st.m);
    st.queue.push({spec.domain, -std::numeric_limits<double>::infinity(), 0, st.next_seq++});
  }

  auto worker = [&]() {
    for (;;) {
      WorkItem item;
      {
        std::unique_lock<std::mutex> lk(st.m);
        st.cv.wait(lk, [&] { return st.stop || !st.queue.empty() || st.inflight == 0; });
        if (st.stop || (st.queue.empty() && st.inflight == 0)) return;
        if (st.queue.empty()) continue;
        item = st.queue.top();
        st.queue.pop();
        ++st.inflight;
        if (st.boxes >= budget.max_boxes || elapsed() > budget.time_limit) {
          // budget exhausted: everything left undischarged
          st.record_unknown(item.box);
          --st.inflight;
          st.cv.notify_all();
          continue;
        }
        ++st.boxes;
        st.max_depth = std::max(st.max_depth, item.depth);
      }

      // cheap exit: attack before bounding (full strength at the root, lighter deep)
      PgdParams attack = opts.pgd;
      if (item.depth > 0) {
        attack.steps = std::min(attack.steps, 10);
        attack.restarts = std::min(attack.restarts, 2);
      }
      std::optional<Witness> w = falsify(spec, item.box, attack, opts.seed);
      if (w) {
        std::lock_guard<std::mutex> lk(st.m);
        if (!st.witness) st.witness = std::move(w);
        st.stop = true;
        st.cv.notify_all();
        continue;  // falls through loop top; stop set
      }

      double bestlb = -std::numeric_limits<double>::infinity();
      bool proved = false;
      const Clause* tightest = nullptr;
      for (const Clause& c : spec.clauses) {
        ClauseBound b = clause_bound(c, item.box);
        if (b.lb > bestlb) { bestlb = b.lb; tightest = &c; }
        if (b.proved) { proved = true; break; }
      }

      std::lock_guard<std::mutex> lk(st.m);
      st.min_margin = std::min(st.min_margin, bestlb);
      if (proved) {
        ++st.discharged;
        st.fold_digest(item.box, 1);
      } else if (item.depth >= budget.max_depth || !splittable(item.box, spec.domain)) {
        st.record_unknown(item.box);
        st.fold_digest(item.box, 2);
      } else {
        auto children = bnb_detail::split_by(item.box, spec.domain, tightest);
        st.fold_digest(item.box, 3);
        st.queue.push({std::move(children.first), bestlb, item.depth + 1, st.next_seq++});
        st.queue.push({std::move(children.second), bestlb, item.depth + 1, st.next_seq++});
      }
      --st.inflight;
      st.cv.notify_all();
    }
  };

  int nthreads = std::max(1, opts.threads);
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  VerifyResult res;
  res.stats.boxes = st.boxes;
  res.stats.discharged = st.discharged;
  res.stats.undischarged = st.unknown_count;
  res.stats.max_depth = st.max_depth;
  res.stats.wall_time = elapsed();
  res.stats.min_margin = st.min_margin;
  res.stats.tree_digest = hex64(st.digest);
  if (st.witness) {
    res.status = Status::Falsified;
    res.witness = std::move(st.witness);
  } else if (st.unknown_count == 0) {
    res.status = Status::Verified;
  } else {
    res.status = Status::Unknown;
    std::sort(st.unknown.begin(), st.unknown.end(), [](const IntervalBox& a, const IntervalBox& b) {
      double va = 1.0, vb = 1.0;
      for (int i = 0; i < a.size(); ++i) va *= std::max(a[i].width(), 1e-300);
      for (int i = 0; i < b.size(); ++i) vb *= std::max(b[i].width(), 1e-300);
      return va < vb;
    });
    res.undischarged = std::move(st.unknown);
  }
  return res;
}

/** Bisection for the largest verifiable levelset. Probes hi first; every probe is an
    independent sound verification, so the returned value is itself certified. */
struct LevelsetScan {
  double rho_star = 0.0;
  bool certified = false;
  int probes = 0;
  std::vector<std::pair<double, Status>> history;
};

inline LevelsetScan max_levelset(const std::function<VerifyResult(double)>& probe, double lo,
                                 double hi, double tol) {
  if (!(hi >= lo) || !(lo >= 0.0)) throw std::invalid_argument("max_levelset: need 0 <= lo <= hi");
  if (!(tol > 0.0)) throw std::invalid_argument("max_levelset: tolerance must be positive");
  LevelsetScan scan;
  auto run = [&](double rho) {
    Status s = probe(rho).status;
    ++scan.probes;
    scan.history.emplace_back(rho, s);
    return s;
  };
  if (run(hi) == Status::Verified) {
    scan.rho_star = hi;
    scan.certified = true;
    return scan;
  }
  if (lo > 0.0) {
    if (run(lo) != Status::Verified) return scan;  // no certifiable region at or above lo
    scan.rho_star = lo;
    scan.certified = true;
  }
  double good = scan.certified ? lo : 0.0;
  double bad = hi;
  while (bad - good > tol) {
    double mid = 0.5 * (good + bad);
    if (run(mid) == Status::Verified) {
      good = mid;
      scan.rho_star = mid;
      scan.certified = true;
    } else {
      bad = mid;
    }
  }
  return scan;
}

// ---------------------------------------------------------------------------
// Structured provers shared by the invariance / contraction spec builders.
// ---------------------------------------------------------------------------

namespace bnb_detail {

/** Upper bound of λmax(SᵀM_f S − rho_c² M_x) over a joint (x,δ) sub-box, where
    S is an interval slope of f between x and x+δ and M = mu·I + RᵀR. Nonpositive
    values prove G ≤ 0 for every δ in the sub-box, including δ = 0. */
struct ContractionSlopeProver {
  std::shared_ptr<const ExprGraph> f_graph;   // x -> f(x), single vector output
  std::shared_ptr<const ExprGraph> r_graph;   // x -> flat k×n R(x)
  int n = 0, k = 0;
  double mu = 0.0, rho_c = 0.0;

  double operator()(const IntervalBox& joint) const {
    IntervalBox X, D, XD;
    X.dims.assign(joint.dims.begin(), joint.dims.begin() + n);
    D.dims.assign(joint.dims.begin() + n, joint.dims.begin() + 2 * n);
    XD = X;
    for (int i = 0; i < n; ++i) XD.dims[i] = X[i] + D[i];

    SlopeTape tape;
    slope_propagate(*f_graph, X, XD, {}, tape);
    SlopeForm sf = slope_form(*f_graph, f_graph->outputs()[0], tape);

    auto rmat = [&](const IntervalBox& over) {
      auto flat = propagate_box(*r_graph, over, {});
      IMat R(k, n);
      for (int i = 0; i < k * n; ++i) R.e[i] = flat[i];
      return R;
    };
    IMat Mx = imat_add(imat_gram(rmat(X)), IMat::identity(n, mu));
    IntervalBox fX;
    fX.dims.assign(sf.at_u.begin(), sf.at_u.end());  // enclosure of f over X
    IMat Mf = imat_add(imat_gram(rmat(fX)), IMat::identity(n, mu));

    IMat q = sym_tighten(imat_mul(imat_transpose(sf.sigma), imat_mul(Mf, sf.sigma)));
    q = imat_sub(q, imat_scale(Mx, rho_c * rho_c));
    q = sym_tighten(q);
    double lam = lambda_max_ub(q);
    double dn2 = 0.0;
    for (int i = 0; i < n; ++i) dn2 += std::max(D[i].lo * D[i].lo, D[i].hi * D[i].hi);
    double ub_lam = lam <= 0.0 ? 0.0 : lam * dn2;
    // directional refinement: G <= Σij sup([q]ij·[δi δj]) uses the position of the
    // displacement sub-box, so sign-fixed children away from δ = 0 can discharge
    // even when the direction-uniform eigenvalue test cannot
    double ub_form = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        Interval dd = i == j ? square_iv(D[i]) : D[i] * D[j];
        ub_form += (q.at(i, j) * dd).hi;
      }
    return -std::min(ub_lam, ub_form);  // >= 0 proves -G >= 0 across the sub-box
  }
};

/** Lower bound of −F(x) = (1−κ)V(x) − V(f(x)) via an interval slope of f anchored
    at the origin; requires f(0) = 0 exactly and quadratic V. */
struct InvarianceSlopeProver {
  std::shared_ptr<const ExprGraph> f_graph;
  Eigen::MatrixXd P;
  double kappa = 0.0;
  int n = 0;

  double operator()(const IntervalBox& box) const {
    IntervalBox origin;
    origin.dims.assign(n, Interval(0.0));
    SlopeTape tape;
    slope_propagate(*f_graph, origin, box, {}, tape);
    SlopeForm sf = slope_form(*f_graph, f_graph->outputs()[0], tape);

    IMat Pm(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) Pm.at(i, j) = Interval(P(i, j));
    IMat q = sym_tighten(imat_mul(imat_transpose(sf.sigma), imat_mul(Pm, sf.sigma)));
    q = imat_sub(q, imat_scale(Pm, 1.0 - kappa));
    double lam = lambda_max_ub(sym_tighten(q));
    if (lam <= 0.0) return 0.0;
    double xn2 = 0.0;
    for (int i = 0; i < n; ++i) xn2 += std::max(box[i].lo * box[i].lo, box[i].hi * box[i].hi);
    return -lam * xn2;
  }
};

inline std::shared_ptr<const ExprGraph> r_net_graph(const MetricNet& metric) {
  GraphBuilder b;
  int x = b.input(metric.n);
  int r = append_mlp_const(b, metric.R, x);
  b.output(r);
  return std::make_shared<const ExprGraph>(b.build());
}

inline std::shared_ptr<const ExprGraph> components_graph(const ExprGraph& f, int n) {
  GraphBuilder b;
  int x = b.input(n);
  int fx = inline_graph(b, f, {x});
  int d = b.dim(fx);
  for (int i = 0; i < d; ++i) b.output(component(b, fx, i, d));
  return std::make_shared<const ExprGraph>(b.build());
}

}  // namespace bnb_detail

/** Persisted verification outcome. */
struct Certificate {
  std::string kind;       // "invariance" | "contraction" | "generic"
  std::string task_hash;
  std::string status;
  nlohmann::json config;
  nlohmann::json stats;
  std::optional<Witness> witness;
};

inline nlohmann::json certificate_to_json(const Certificate& c) {
  nlohmann::json j;
  j["kind"] = c.kind;
  j["task_hash"] = c.task_hash;
  j["status"] = c.status;
  j["config"] = c.config;
  j["stats"] = c.stats;
  if (c.witness) {
    j["witness"] = {{"z", c.witness->z}, {"clause_margins", c.witness->clause_margins}};
  }
  return j;
}

inline Certificate certificate_from_json(const nlohmann::json& j, const std::string& where) {
  for (const char* key : {"kind", "task_hash", "status", "config", "stats"})
    if (!j.contains(key)) throw std::runtime_error(where + ": certificate missing field " + key);
  Certificate c;
  c.kind = j["kind"].get<std::string>();
  c.task_hash = j["task_hash"].get<std::string>();
  c.status = j["status"].get<std::string>();
  c.config = j["config"];
  c.stats = j["stats"];
  if (j.contains("witness")) {
    Witness w;
    w.z = j["witness"]["z"].get<std::vector<double>>();
    w.clause_margins = j["witness"]["clause_margins"].get<std::vector<double>>();
    c.witness = std::move(w);
  }
  return c;
}

inline nlohmann::json stats_to_json(const VerifyStats& s) {
  return {{"boxes", s.boxes},        {"discharged", s.discharged},
          {"undischarged", s.undischarged}, {"max_depth", s.max_depth},
          {"wall_time", s.wall_time},       {"min_margin", s.min_margin},
          {"tree_digest", s.tree_digest}};
}

inline void save_certificate(const Certificate& c, const std::string& path) {
  atomic_write_file(path, certificate_to_json(c).dump(2) + "\n");
}

inline Certificate load_certificate(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return certificate_from_json(j, path);
}

// ---------------------------------------------------------------------------
// Spec builders for the two certified properties.
// ---------------------------------------------------------------------------

/** Two-clause invariance spec over B:
    ((1−κ)V(x) − V(f(x)) ≥ 0  AND  f(x) ∈ B)  ∨  V(x) ≥ rho_V. */
inline DisjunctiveSpec invariance_spec(const ClosedLoopSystem& sys, const LyapunovFn& lyap,
                                       const IntervalBox& B) {
  if (lyap.form != LyapunovFn::Form::quadratic)
    throw std::invalid_argument(
        "verify_forward_invariance: only quadratic Lyapunov functions are supported");
  validate_lyapunov(lyap);
  if (static_cast<int>(lyap.P.rows()) != sys.n)
    throw std::invalid_argument("verify_forward_invariance: V and system dims differ");
  if (B.size() != sys.n)
    throw std::invalid_argument("verify_forward_invariance: box and system dims differ");
  int n = sys.n;

  GraphBuilder fb;
  {
    int x = fb.input(n);
    int fx = inline_graph(fb, sys.f, {x});
    int vfx = append_lyap(fb, lyap, fx);
    int vx = append_lyap(fb, lyap, x);
    fb.output(fb.sub(fb.scale(vx, 1.0 - lyap.kappa), vfx));  // -F(x)
  }
  auto neg_f_graph = std::make_shared<const ExprGraph>(fb.build());

  GraphBuilder vb;
  {
    int x = vb.input(n);
    vb.output(vb.sub(append_lyap(vb, lyap, x), vb.constant({lyap.rho_V})));
  }
  auto v_margin_graph = std::make_shared<const ExprGraph>(vb.build());

  Clause decrease;
  decrease.kind = Clause::Kind::expr_nonneg;
  decrease.graph = neg_f_graph;
  decrease.use_linear_relax = true;
  // slope prover closes the gap at the fixed point, where interval/affine bounds
  // cannot separate -F from 0
  {
    std::vector<double> zero(n, 0.0);
    auto f0 = eval_graph(sys.f, zero, {});
    bool fixed = true;
    for (double v : f0) fixed = fixed && v == 0.0;
    if (fixed) {
      bnb_detail::InvarianceSlopeProver prover;
      prover.f_graph = std::make_shared<const ExprGraph>(sys.f);
      prover.P = lyap.P;
      prover.kappa = lyap.kappa;
      prover.n = n;
      decrease.lower_bound_hook = prover;
    }
  }

  Clause stays;
  stays.kind = Clause::Kind::box_containment;
  stays.graph = bnb_detail::components_graph(sys.f, n);
  stays.target = B;

  Clause conj;
  conj.kind = Clause::Kind::conjunction;
  conj.parts = {std::move(decrease), std::move(stays)};

  Clause outside;
  outside.kind = Clause::Kind::expr_nonneg;
  outside.graph = v_margin_graph;
  {
    Eigen::MatrixXd P = lyap.P;
    double rho = lyap.rho_V;
    outside.lower_bound_hook = [P, rho](const IntervalBox& box) {
      return exact_quad_min(P, box) - rho;
    };
  }

  DisjunctiveSpec spec;
  spec.domain = B;
  spec.clauses = {std::move(conj), std::move(outside)};
  return spec;
}

inline VerifyResult verify_forward_invariance(const ClosedLoopSystem& sys, const LyapunovFn& lyap,
                                              const IntervalBox& B, const Budget& budget = {},
                                              const VerifyOptions& opts = {}) {
  return verify(invariance_spec(sys, lyap, B), budget, opts);
}

/** Four-clause contraction spec over B × [−ε,ε]ⁿ:
    −G(x,δ) ≥ 0  ∨  x+δ ∉ B  ∨  V(x) ≥ rho_V  ∨  V(x+δ) ≥ rho_V. */
inline DisjunctiveSpec contraction_spec(const ContractionTask& t) {
  validate_task(t);
  if (t.lyap.form != LyapunovFn::Form::quadratic)
    throw std::invalid_argument("contraction_spec: only quadratic Lyapunov functions are supported");
  int n = t.sys.n;
  if (t.B.size() != n) throw std::invalid_argument("contraction_spec: box and system dims differ");

  IntervalBox domain = t.B;
  for (int i = 0; i < n; ++i) domain.dims.push_back(Interval(-t.epsilon, t.epsilon));

  double rc2 = t.rho_c * t.rho_c;

  // -G(x,δ) over the joint box, metric weights baked in as constants
  GraphBuilder gb;
  {
    int x = gb.input(n);
    int d = gb.input(n);
    int xd = gb.add(x, d);
    int fx = inline_graph(gb, t.sys.f, {x});
    int fxd = inline_graph(gb, t.sys.f, {xd});
    int df = gb.sub(fx, fxd);
    int r_fx = append_mlp_const(gb, t.metric.R, fx);
    int r_x = append_mlp_const(gb, t.metric.R, x);
    int rfd = gb.matvec(r_fx, df, t.metric.rows_k, n);
    int rxd = gb.matvec(r_x, d, t.metric.rows_k, n);
    int lhs = gb.add(gb.scale(gb.dot(df, df), t.metric.mu), gb.dot(rfd, rfd));
    int rhs = gb.add(gb.scale(gb.dot(d, d), t.metric.mu), gb.dot(rxd, rxd));
    gb.output(gb.sub(gb.scale(rhs, rc2), lhs));  // -G
  }
  auto neg_g_graph = std::make_shared<const ExprGraph>(gb.build());

  // (x,δ) -> x+δ, one scalar output per coordinate
  GraphBuilder sb;
  {
    int x = sb.input(n);
    int d = sb.input(n);
    int xd = sb.add(x, d);
    for (int i = 0; i < n; ++i) sb.output(component(sb, xd, i, n));
  }
  auto shift_graph = std::make_shared<const ExprGraph>(sb.build());

  auto v_of = [&](bool shifted) {
    GraphBuilder b;
    int x = b.input(n);
    int d = b.input(n);
    int arg = shifted ? b.add(x, d) : x;
    b.output(b.sub(append_lyap(b, t.lyap, arg), b.constant({t.lyap.rho_V})));
    return std::make_shared<const ExprGraph>(b.build());
  };

  Clause contracting;
  contracting.kind = Clause::Kind::expr_nonneg;
  contracting.graph = neg_g_graph;
  {
    bnb_detail::ContractionSlopeProver prover;
    prover.f_graph = std::make_shared<const ExprGraph>(t.sys.f);
    prover.r_graph = bnb_detail::r_net_graph(t.metric);
    prover.n = n;
    prover.k = t.metric.rows_k;
    prover.mu = t.metric.mu;
    prover.rho_c = t.rho_c;
    contracting.lower_bound_hook = prover;
  }

  Clause leaves;
  leaves.kind = Clause::Kind::box_exclusion;
  leaves.graph = shift_graph;
  leaves.target = t.B;

  Eigen::MatrixXd P = t.lyap.P;
  double rho = t.lyap.rho_V;

  Clause vx;
  vx.kind = Clause::Kind::expr_nonneg;
  vx.graph = v_of(false);
  vx.lower_bound_hook = [P, rho, n](const IntervalBox& joint) {
    IntervalBox X;
    X.dims.assign(joint.dims.begin(), joint.dims.begin() + n);
    return exact_quad_min(P, X) - rho;
  };

  Clause vxd;
  vxd.kind = Clause::Kind::expr_nonneg;
  vxd.graph = v_of(true);
  vxd.lower_bound_hook = [P, rho, n](const IntervalBox& joint) {
    IntervalBox XD;
    XD.dims.resize(n);
    for (int i = 0; i < n; ++i) XD.dims[i] = joint[i] + joint[n + i];
    return exact_quad_min(P, XD) - rho;
  };

  DisjunctiveSpec spec;
  spec.domain = std::move(domain);
  spec.clauses = {std::move(contracting), std::move(leaves), std::move(vx), std::move(vxd)};
  return spec;
}

/** Contraction verification; requires the matching Verified invariance certificate. */
inline VerifyResult verify_contraction(const ContractionTask& t, const Certificate& invariance,
                                       const Budget& budget = {}, const VerifyOptions& opts = {}) {
  std::string expect =
      task_hash("invariance", t.sys, nullptr, t.lyap, 0.0, t.lyap.rho_V, 0.0, t.B);
  if (invariance.kind != "invariance" || invariance.status != "Verified")
    throw std::invalid_argument(
        "verify_contraction: forward-invariance certificate missing or not Verified");
  if (invariance.task_hash != expect)
    throw std::invalid_argument(
        "verify_contraction: invariance certificate does not match this task");
  return verify(contraction_spec(t), budget, opts);
}

}  // namespace contractify
