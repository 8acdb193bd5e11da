#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "contractify/bnb.hpp"
#include "contractify/cegis.hpp"
#include "contractify/certificates.hpp"
#include "contractify/diagnostics.hpp"
#include "contractify/systems.hpp"

namespace contractify {

// Exit codes shared by every subcommand.
enum ExitCode : int {
  exit_ok = 0,          // success / Verified
  exit_falsified = 1,   // Falsified or infeasible problem
  exit_config = 2,      // usage or configuration error
  exit_unknown = 3,     // budget exhausted without a verdict
};

/** One run's fully resolved settings: the JSON file with CLI flags folded in.
    The resolved JSON is embedded verbatim in every output file. */
struct RunConfig {
  nlohmann::json raw;

  std::string system_id;
  nlohmann::json system_params;  // forwarded to the system factory

  std::string out_dir = "out";
  std::string policy_path;    // pendulum control net
  std::string lyapunov_path;  // defaults to <out_dir>/lyapunov.json
  std::string metric_path;    // defaults to <out_dir>/metric.json

  double kappa = 0.01;
  TrainConfig train;
  bool constant_metric = false;  // baseline M(x) ≡ P instead of a trained net

  // verification section (contraction certificate)
  double verify_rho_c = 0.99;
  double verify_epsilon = 0.05;
  double verify_frac = 1.0;  // fraction of the invariant rho_V to certify
  Budget budget;
  VerifyOptions verify_opts;

  int grid_resolution = 128;

  std::string roa_template = "contraction";  // or "invariance"
  long roa_samples = 1000000;
  double roa_tol = 0.005;
};

namespace cli_detail {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

}  // namespace cli_detail

inline RunConfig parse_run_config(const nlohmann::json& j, const std::string& where) {
  RunConfig c;
  c.raw = j;
  if (!j.contains("system") || !j.at("system").contains("id"))
    throw std::runtime_error(where + ": config needs system.id");
  c.system_id = j.at("system").at("id").get<std::string>();
  if (j.at("system").contains("params")) c.system_params = j.at("system").at("params");

  using cli_detail::maybe;
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    maybe(p, "out_dir", c.out_dir);
    maybe(p, "policy", c.policy_path);
    maybe(p, "lyapunov", c.lyapunov_path);
    maybe(p, "metric", c.metric_path);
  }
  if (c.lyapunov_path.empty()) c.lyapunov_path = c.out_dir + "/lyapunov.json";
  if (c.metric_path.empty()) c.metric_path = c.out_dir + "/metric.json";

  maybe(j, "kappa", c.kappa);
  maybe(j, "seed", c.train.seed);
  maybe(j, "threads", c.train.threads);

  if (j.contains("train")) {
    const auto& t = j.at("train");
    maybe(t, "eta", c.train.eta);
    maybe(t, "pgd_steps", c.train.pgd_steps);
    maybe(t, "pgd_stepsize", c.train.pgd_stepsize);
    maybe(t, "epochs", c.train.epochs);
    maybe(t, "batch", c.train.batch);
    maybe(t, "rounds", c.train.rounds);
    maybe(t, "schedule", c.train.schedule);
    maybe(t, "epsilon", c.train.epsilon);
    maybe(t, "rho_c", c.train.rho_c);
    maybe(t, "mu", c.train.mu);
    maybe(t, "hidden", c.train.hidden);
    maybe(t, "rows", c.train.rows_k);
    maybe(t, "tau", c.train.tau);
    maybe(t, "dataset_cap", c.train.dataset_cap);
    maybe(t, "warm_start", c.train.warm_start);
    maybe(t, "constant", c.constant_metric);
  }

  c.verify_rho_c = c.train.rho_c;
  c.verify_epsilon = c.train.epsilon;
  if (j.contains("verify")) {
    const auto& v = j.at("verify");
    maybe(v, "rho_c", c.verify_rho_c);
    maybe(v, "epsilon", c.verify_epsilon);
    maybe(v, "frac", c.verify_frac);
    maybe(v, "budget_boxes", c.budget.max_boxes);
    maybe(v, "max_depth", c.budget.max_depth);
    maybe(v, "time_limit", c.budget.time_limit);
  }
  if (j.contains("grid")) maybe(j.at("grid"), "resolution", c.grid_resolution);
  if (j.contains("roa")) {
    const auto& r = j.at("roa");
    maybe(r, "template", c.roa_template);
    maybe(r, "samples", c.roa_samples);
    maybe(r, "tol", c.roa_tol);
  }
  validate_train_config(c.train);
  if (!(c.verify_frac > 0.0 && c.verify_frac <= 1.0))
    throw std::runtime_error(where + ": verify.frac must lie in (0,1]");
  if (c.roa_template != "contraction" && c.roa_template != "invariance")
    throw std::runtime_error(where + ": roa.template must be contraction or invariance");
  c.verify_opts.threads = c.train.threads;
  c.verify_opts.seed = c.train.seed;
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return parse_run_config(j, path);
}

/** Instantiate the configured plant; pendulum additionally loads its policy net. */
inline ClosedLoopSystem make_system(const RunConfig& c) {
  const nlohmann::json& p = c.system_params;
  auto num = [&](const char* key, double dflt) {
    return p.contains(key) ? p.at(key).get<double>() : dflt;
  };
  double h = num("h", 0.05);
  if (c.system_id == "vdp") return make_vdp(num("mu", 3.0), h);
  if (c.system_id == "poly") return make_poly(h);
  if (c.system_id == "power") return make_power(num("delta", std::acos(-1.0) / 3.0), h);
  if (c.system_id == "pendulum") {
    if (c.policy_path.empty())
      throw std::runtime_error("pendulum system needs paths.policy (control net file)");
    PendulumParams pp;
    pp.m = num("m", pp.m);
    pp.l = num("l", pp.l);
    pp.g = num("g", pp.g);
    pp.beta = num("beta", pp.beta);
    IntervalBox box({{-0.7, 0.7}, {-1.4, 1.4}});
    if (p.contains("box")) {
      box.dims.clear();
      for (const auto& d : p.at("box")) box.dims.push_back(Interval(d[0], d[1]));
    }
    return make_pendulum(pp, load_weights(c.policy_path), box, h);
  }
  if (c.system_id == "stub_scale") {
    IntervalBox box({{-1.0, 1.0}, {-1.0, 1.0}});
    return make_scale_stub(num("c", 0.5), box);
  }
  throw std::runtime_error("unknown system id: " + c.system_id);
}

namespace cli_detail {

inline std::string out_path(const RunConfig& c, const std::string& name) {
  return c.out_dir + "/" + name;
}

inline nlohmann::json run_stamp(const RunConfig& c) {
  return {{"config", c.raw}, {"system", c.system_id}};
}

/** Certificate for the contraction task at level rho (frac·rho_V already applied). */
inline Certificate contraction_certificate(const RunConfig& c, const ContractionTask& task,
                                           const VerifyResult& r, double wall_s) {
  Certificate cert;
  cert.kind = "contraction";
  cert.status = status_name(r.status);
  cert.task_hash = task_hash("contraction", task.sys, &task.metric, task.lyap, task.rho_c,
                             task.lyap.rho_V, task.epsilon, task.B);
  cert.config = run_stamp(c);
  cert.config["rho_c"] = task.rho_c;
  cert.config["epsilon"] = task.epsilon;
  cert.config["rho"] = task.lyap.rho_V;
  cert.stats = stats_to_json(r.stats);
  cert.stats["wall_time"] = wall_s;
  cert.witness = r.witness;
  return cert;
}

inline void write_undischarged(const RunConfig& c, const VerifyResult& r,
                               const std::string& name) {
  if (r.undischarged.empty()) return;
  std::string csv;
  int dim = r.undischarged.front().size();
  for (int i = 0; i < dim; ++i)
    csv += (i ? "," : "") + ("lo" + std::to_string(i)) + ",hi" + std::to_string(i);
  csv += "\n";
  for (const auto& b : r.undischarged) {
    for (int i = 0; i < dim; ++i)
      csv += (i ? "," : "") + repr(b[i].lo) + "," + repr(b[i].hi);
    csv += "\n";
  }
  atomic_write_file(out_path(c, name), csv);
}

inline int status_exit(Status s) {
  switch (s) {
    case Status::Verified: return exit_ok;
    case Status::Falsified: return exit_falsified;
    default: return exit_unknown;
  }
}

}  // namespace cli_detail

/** synth-lyap: quadratic Lyapunov synthesis + forward-invariance certificate. */
inline int cmd_synth_lyap(const RunConfig& c) {
  ClosedLoopSystem sys = make_system(c);
  SynthOptions opts;
  opts.kappa = c.kappa;
  opts.budget = c.budget;
  opts.verify = c.verify_opts;
  SynthResult res;
  try {
    res = synth_quadratic_lyapunov(sys, sys.box, opts);
  } catch (const std::runtime_error& e) {
    std::fprintf(stderr, "synth-lyap: %s\n", e.what());
    return exit_falsified;
  }
  save_lyapunov(res.lyap, c.lyapunov_path);

  Certificate cert;
  cert.kind = "invariance";
  cert.status = status_name(res.invariance.status);
  cert.task_hash =
      task_hash("invariance", sys, nullptr, res.lyap, 0.0, res.lyap.rho_V, 0.0, sys.box);
  cert.config = cli_detail::run_stamp(c);
  cert.config["kappa"] = c.kappa;
  cert.config["rho_V"] = res.lyap.rho_V;
  cert.stats = stats_to_json(res.invariance.stats);
  cert.witness = res.invariance.witness;
  save_certificate(cert, cli_detail::out_path(c, "invariance_certificate.json"));

  std::printf("synth-lyap %s: rho_V = %s (%s, %d levelset probes)\n", sys.name.c_str(),
              repr(res.lyap.rho_V).c_str(), cert.status.c_str(), res.scan.probes);
  return res.scan.certified ? exit_ok : exit_falsified;
}

/** train: counterexample-guided metric training against the stored Lyapunov region.
    With train.constant the metric is the Lyapunov shape M(x) ≡ P itself — the
    untrained baseline the neural metric is compared against. */
inline int cmd_train(const RunConfig& c) {
  ClosedLoopSystem sys = make_system(c);
  LyapunovFn lyap = load_lyapunov(c.lyapunov_path);
  if (c.constant_metric) {
    if (lyap.form != LyapunovFn::Form::quadratic)
      throw std::runtime_error("train: constant baseline needs a quadratic Lyapunov function");
    MetricNet m = constant_metric_from(lyap.P, c.train.mu);
    save_metric(m, c.train.rho_c, lyap.rho_V, lyap.kappa, c.train.epsilon, c.metric_path);
    std::printf("train %s: constant baseline metric -> %s\n", sys.name.c_str(),
                c.metric_path.c_str());
    return exit_ok;
  }
  TrainResult res = train_metric(sys, lyap, c.train);
  save_metric(res.metric, c.train.rho_c, lyap.rho_V, lyap.kappa, c.train.epsilon, c.metric_path);
  atomic_write_file(cli_detail::out_path(c, "train_log.csv"), train_log_csv(res.log));
  std::printf("train %s: %zu iterations, final max violation %s%s\n", sys.name.c_str(),
              res.log.size(), repr(res.final_max_violation).c_str(),
              res.diverged ? " (diverged; checkpoint restored)" : "");
  return res.diverged ? exit_falsified : exit_ok;
}

/** verify: contraction certificate for the stored metric at frac·rho_V. */
inline int cmd_verify(const RunConfig& c) {
  using clock = std::chrono::steady_clock;
  ClosedLoopSystem sys = make_system(c);
  LyapunovFn lyap = load_lyapunov(c.lyapunov_path);

  // the invariance certificate must exist, be Verified, and hash-match the task
  Certificate inv =
      load_certificate(cli_detail::out_path(c, "invariance_certificate.json"));
  ContractionTask task = make_task(sys, load_metric(c.metric_path), lyap, c.verify_rho_c,
                                   c.verify_epsilon);
  task.lyap.rho_V = c.verify_frac * lyap.rho_V;

  // re-derive the invariance hash at the full level before shrinking it
  std::string expect = task_hash("invariance", sys, nullptr, lyap, 0.0, lyap.rho_V, 0.0, sys.box);
  if (inv.task_hash != expect)
    throw std::runtime_error("verify: invariance certificate does not match this config");
  if (c.verify_frac < 1.0) {
    // a sublevel set of an invariant levelset needs its own invariance pass
    auto sub = verify_forward_invariance(sys, task.lyap, sys.box, c.budget, c.verify_opts);
    inv.status = status_name(sub.status);
    inv.task_hash =
        task_hash("invariance", sys, nullptr, task.lyap, 0.0, task.lyap.rho_V, 0.0, sys.box);
  }

  auto t0 = clock::now();
  VerifyResult r = verify_contraction(task, inv, c.budget, c.verify_opts);
  double wall = std::chrono::duration<double>(clock::now() - t0).count();

  Certificate cert = cli_detail::contraction_certificate(c, task, r, wall);
  save_certificate(cert, cli_detail::out_path(c, "contraction_certificate.json"));
  cli_detail::write_undischarged(c, r, "undischarged_boxes.csv");

  std::printf("verify %s: %s at rho = %s (%.2fs, %ld boxes, depth %d, min margin %s)\n",
              sys.name.c_str(), cert.status.c_str(), repr(task.lyap.rho_V).c_str(), wall,
              r.stats.boxes, r.stats.max_depth, repr(r.stats.min_margin).c_str());
  if (r.witness) {
    std::printf("  witness:");
    for (double v : r.witness->z) std::printf(" %s", repr(v).c_str());
    std::printf("\n");
  }
  if (r.status == Status::Unknown)
    std::printf("  %ld undischarged boxes -> undischarged_boxes.csv\n", r.stats.undischarged);
  return cli_detail::status_exit(r.status);
}

/** roa: maximize the certified levelset and report the Monte-Carlo area ratio. */
inline int cmd_roa(const RunConfig& c) {
  using clock = std::chrono::steady_clock;
  ClosedLoopSystem sys = make_system(c);
  LyapunovFn lyap = load_lyapunov(c.lyapunov_path);
  double rho_roa = lyap.rho_V;
  if (!(rho_roa > 0.0)) {
    std::fprintf(stderr, "roa: reference rho_V is zero; ratio undefined\n");
    return exit_falsified;
  }

  std::optional<ContractionTask> task;
  std::optional<Certificate> inv;
  if (c.roa_template == "contraction") {
    task = make_task(sys, load_metric(c.metric_path), lyap, c.verify_rho_c, c.verify_epsilon);
    inv = load_certificate(cli_detail::out_path(c, "invariance_certificate.json"));
  }

  auto t0 = clock::now();
  auto probe = [&](double rho) {
    if (!task) {
      LyapunovFn cand = lyap;
      cand.rho_V = rho;
      return verify_forward_invariance(sys, cand, sys.box, c.budget, c.verify_opts);
    }
    ContractionTask t = *task;
    t.lyap.rho_V = rho;
    Certificate sub = *inv;
    auto si = verify_forward_invariance(sys, t.lyap, sys.box, c.budget, c.verify_opts);
    sub.status = status_name(si.status);
    sub.task_hash = task_hash("invariance", sys, nullptr, t.lyap, 0.0, rho, 0.0, sys.box);
    if (si.status != Status::Verified) return si;  // not invariant -> not certifiable
    return verify_contraction(t, sub, c.budget, c.verify_opts);
  };
  LevelsetScan scan = max_levelset(probe, 0.0, rho_roa, c.roa_tol * rho_roa);
  double wall = std::chrono::duration<double>(clock::now() - t0).count();

  double ratio = scan.certified
                     ? monte_carlo_ratio(lyap, scan.rho_star, rho_roa, sys.box, c.roa_samples,
                                         c.verify_opts.seed)
                     : 0.0;

  nlohmann::json out = cli_detail::run_stamp(c);
  out["template"] = c.roa_template;
  out["rho_roa"] = rho_roa;
  out["rho_star"] = scan.rho_star;
  out["certified"] = scan.certified;
  out["ratio"] = ratio;
  out["probes"] = scan.probes;
  out["wall_time"] = wall;
  atomic_write_file(cli_detail::out_path(c, "roa_" + c.roa_template + ".json"),
                    out.dump(2) + "\n");

  std::printf("roa %s (%s): rho* = %s of %s, r = %.1f%% (%d probes, %.1fs)\n", sys.name.c_str(),
              c.roa_template.c_str(), repr(scan.rho_star).c_str(), repr(rho_roa).c_str(),
              100.0 * ratio, scan.probes, wall);
  return scan.certified ? exit_ok : exit_falsified;
}

/** grid: raster diagnostic of min_δ G over B, CSV + PGM. */
inline int cmd_grid(const RunConfig& c) {
  ClosedLoopSystem sys = make_system(c);
  LyapunovFn lyap = load_lyapunov(c.lyapunov_path);
  ContractionTask task =
      make_task(sys, load_metric(c.metric_path), lyap, c.verify_rho_c, c.verify_epsilon);
  GridOptions opts;
  opts.resolution = c.grid_resolution;
  GridResult g = grid_scan(task, opts);
  atomic_write_file(cli_detail::out_path(c, "grid.csv"), grid_csv(g));
  atomic_write_file(cli_detail::out_path(c, "grid.pgm"), grid_pgm(g));

  // certified sublevel boundary, if a contraction certificate is present: lets
  // the raster be overlaid against the formally verified region
  std::string cert_path = cli_detail::out_path(c, "contraction_certificate.json");
  if (std::filesystem::exists(cert_path) && lyap.form == LyapunovFn::Form::quadratic) {
    Certificate cert = load_certificate(cert_path);
    if (cert.status == "Verified" && cert.config.contains("rho")) {
      double rho = cert.config.at("rho").get<double>();
      std::string csv = "x1,x2\n";
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lyap.P);
      Eigen::MatrixXd half =
          es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal();
      for (int k = 0; k <= 256; ++k) {
        double ang = 2.0 * std::acos(-1.0) * k / 256;
        Eigen::Vector2d p = std::sqrt(rho) * (half * Eigen::Vector2d(std::cos(ang), std::sin(ang)));
        csv += repr(p(0)) + "," + repr(p(1)) + "\n";
      }
      atomic_write_file(cli_detail::out_path(c, "certified_boundary.csv"), csv);
    }
  }

  long grey = 0;
  for (double v : g.min_g)
    if (v > 0.0) ++grey;
  std::printf("grid %s: %dx%d cells, %ld grey -> grid.csv, grid.pgm\n", sys.name.c_str(),
              g.resolution, g.resolution, grey);
  return exit_ok;
}

/** report: markdown table assembled from whatever certificates exist on disk. */
inline int cmd_report(const RunConfig& c, const std::vector<std::string>& run_dirs) {
  std::vector<ReportRow> rows;
  for (const std::string& dir : run_dirs) {
    ReportRow row;
    std::string lyap_path = dir + "/lyapunov.json";
    std::string roa_path = dir + "/roa_contraction.json";
    row.system = std::filesystem::path(dir).filename().string();
    if (std::filesystem::exists(lyap_path)) row.rho_roa = load_lyapunov(lyap_path).rho_V;
    if (std::filesystem::exists(dir + "/metric.json")) {
      MetricNet m = load_metric(dir + "/metric.json");
      bool constant = true;
      for (const auto& l : m.R.layers) constant = constant && l.w.cwiseAbs().maxCoeff() == 0.0;
      row.metric_type = constant ? "constant" : "neural";
    }
    if (std::filesystem::exists(roa_path)) {
      nlohmann::json j = nlohmann::json::parse(read_text_file(roa_path));
      if (j.value("certified", false)) {
        row.verified_rho = j.value("rho_star", std::numeric_limits<double>::quiet_NaN());
        row.ratio = j.value("ratio", std::numeric_limits<double>::quiet_NaN());
      }
      row.runtime_s = j.value("wall_time", std::numeric_limits<double>::quiet_NaN());
    }
    rows.push_back(std::move(row));
  }
  std::string md = "# Certified regions of contraction\n\n" + render_report(rows);
  atomic_write_file(cli_detail::out_path(c, "report.md"), md);
  std::printf("report: %zu rows -> report.md\n", rows.size());
  return exit_ok;
}

/** Full argv entry point; returns the process exit code. */
inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"contraction metric learning and verification"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  std::optional<long> budget_boxes;
  std::optional<double> time_limit;
  std::vector<std::string> run_dirs;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", config_path, "run configuration JSON");
    if (needs_config) opt->required();
    cmd->add_option("--threads", threads, "worker thread count (1 = reproducible)");
    cmd->add_option("--seed", seed, "RNG seed override");
    cmd->add_option("--budget-boxes", budget_boxes, "branch-and-bound box budget");
    cmd->add_option("--time-limit", time_limit, "verification time limit, seconds");
  };

  CLI::App* synth = app.add_subcommand("synth-lyap", "synthesize a quadratic Lyapunov region");
  CLI::App* train = app.add_subcommand("train", "train the contraction metric");
  CLI::App* verify = app.add_subcommand("verify", "verify the contraction certificate");
  CLI::App* roa = app.add_subcommand("roa", "maximize the certified levelset");
  CLI::App* grid = app.add_subcommand("grid", "raster diagnostic of the G inequality");
  CLI::App* report = app.add_subcommand("report", "summarize certificates as markdown");
  for (CLI::App* cmd : {synth, train, verify, roa, grid, report}) add_common(cmd, true);
  report->add_option("--runs", run_dirs, "output directories to summarize");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    RunConfig cfg = load_run_config(config_path);
    if (threads) {
      cfg.train.threads = *threads;
      cfg.verify_opts.threads = *threads;
    }
    if (seed) {
      cfg.train.seed = *seed;
      cfg.verify_opts.seed = *seed;
    }
    if (budget_boxes) cfg.budget.max_boxes = *budget_boxes;
    if (time_limit) cfg.budget.time_limit = *time_limit;
    cfg.raw["resolved"] = {{"threads", cfg.train.threads},
                           {"seed", cfg.train.seed},
                           {"budget_boxes", cfg.budget.max_boxes},
                           {"time_limit", cfg.budget.time_limit}};

    if (synth->parsed()) return cmd_synth_lyap(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (verify->parsed()) return cmd_verify(cfg);
    if (roa->parsed()) return cmd_roa(cfg);
    if (grid->parsed()) return cmd_grid(cfg);
    if (report->parsed()) {
      if (run_dirs.empty()) run_dirs.push_back(cfg.out_dir);
      return cmd_report(cfg, run_dirs);
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_config;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_config;
  }
  return exit_config;
}

}  // namespace contractify
