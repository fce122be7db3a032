// Acceptance run: one PASS/FAIL line per criterion. Optional arguments select
// criteria by number; the exit status is non-zero when any selected one fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "psiflow/bench.hpp"
#include "psiflow/catalog.hpp"
#include "psiflow/marcher.hpp"
#include "psiflow/psirep.hpp"
#include "psiflow/refsolve.hpp"
#include "psiflow/rng.hpp"
#include "psiflow/trainer.hpp"

using namespace psiflow;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

void set_horizon(CatalogEntry& e, double tf, double dt) {
  e.tf = e.march.tf = tf;
  e.march.dt = dt;
}

// Trains and marches one learned configuration through the sweep runner.
ResultRow learned_row(const CatalogEntry& e, Method method) {
  ExperimentConfig cfg;
  cfg.problem = e;
  cfg.sweep = SweepVariable::m;
  cfg.values = {static_cast<double>(e.model.hidden.back())};
  cfg.methods = {method};
  cfg.seed = e.model.seed;
  cfg.jobs = workers();
  return run_experiment(cfg).front();
}

std::string describe(const ResultRow& r) {
  if (!r.error.empty()) return "error: " + r.error;
  return fmt::format("e_max={:.3e} train={:.1f}s residual_inf={:.2e}", *r.e_max, r.train_seconds.value_or(0.0),
                     r.train_residual.value_or(0.0));
}

bool below(const ResultRow& r, double bound) { return r.error.empty() && r.e_max && *r.e_max <= bound; }

CatalogEntry criterion1_setup() {
  CatalogEntry e = catalog_entry("linear100");
  e.kind = RepKind::exp_s1;
  e.model.hidden = {400};
  e.model.rm = 0.5;
  e.train.q = 1500;
  e.domain.h_max = 0.03;
  set_horizon(e, 1.0, 0.02);
  return e;
}

RowMat random_beta(int rows, int cols, double scale, std::uint64_t seed) {
  Philox rng(seed);
  RowMat b(rows, cols);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-scale, scale);
  return b;
}

Vec random_point(Philox& rng, const std::vector<Interval>& box) {
  Vec y(static_cast<Eigen::Index>(box.size()));
  for (std::size_t i = 0; i < box.size(); ++i) y[static_cast<Eigen::Index>(i)] = rng.uniform(box[i].lo, box[i].hi);
  return y;
}

Outcome c1() {
  const auto r = learned_row(criterion1_setup(), Method::exp_s1);
  return {below(r, 1e-6), describe(r)};
}

Outcome c2() {
  ExperimentConfig cfg;
  cfg.problem = criterion1_setup();
  cfg.sweep = SweepVariable::m;
  cfg.values = {100, 200, 400, 800};
  cfg.methods = {Method::exp_s1};
  cfg.jobs = workers();
  const auto rows = run_experiment(cfg);
  bool ok = rows.size() == 4;
  std::string detail;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ok = ok && rows[i].error.empty() && rows[i].e_max;
    detail += fmt::format("M={}:{:.2e} ", rows[i].sweep_value, rows[i].e_max.value_or(NAN));
    if (ok && i > 0) ok = *rows[i].e_max < *rows[i - 1].e_max;
  }
  if (ok) ok = *rows[3].e_max <= *rows[0].e_max / 100.0;
  return {ok, detail};
}

Outcome c3() {
  double worst = 0.0;
  int cases = 0;
  for (const char* id : {"linear100", "free_pendulum"}) {
    const CatalogEntry e = catalog_entry(id);
    for (RepKind kind : kAllRepKinds) {
      ModelSpec spec;
      spec.hidden = {60};
      spec.rm = 1.0;
      spec.seed = 3;
      PsiModel m = make_model(e.system, e.domain, kind, spec);
      m.subnet.beta = random_beta(m.subnet.beta.rows(), m.subnet.beta.cols(), 5.0, 17 + cases);
      Philox rng(100 + static_cast<std::uint64_t>(cases));
      for (int s = 0; s < 100; ++s) {
        const Vec y0 = random_point(rng, e.domain.y0_box);
        const double t0 = e.domain.t0_interval ? rng.uniform(e.domain.t0_interval->lo, e.domain.t0_interval->hi)
                                               : rng.uniform(-1.0, 1.0);
        const Vec psi = eval_psi(m, y0, t0, 0.0);
        const double scale = std::max(1.0, y0.cwiseAbs().maxCoeff());
        worst = std::max(worst, (psi - y0).cwiseAbs().maxCoeff() / scale);
      }
      ++cases;
    }
  }
  return {worst <= std::numeric_limits<double>::epsilon(),
          fmt::format("{} kind/autonomy cases, max |psi(y0,t0,0)-y0| (relative) = {:.1e}", cases, worst)};
}

Outcome c4() {
  const CatalogEntry e = catalog_entry("forced_pendulum");
  double worst = 0.0;
  int seed = 0;
  for (RepKind kind : kAllRepKinds) {
    ModelSpec spec;
    spec.hidden = {40};
    spec.rm = 0.5;
    spec.seed = 11;
    const PsiModel m = make_model(e.system, e.domain, kind, spec);
    const RowMat beta = random_beta(m.subnet.beta.rows(), m.subnet.beta.cols(), 0.05, 40 + seed++);
    const CollocationSet pts = sample_collocation(collocation_box(m), 10, 90 + seed);
    const Mat jac = assemble_jacobian(m, beta, pts);
    Mat fd(jac.rows(), jac.cols());
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < beta.size(); ++k) {
      RowMat bp = beta, bm = beta;
      bp.data()[k] += h;
      bm.data()[k] -= h;
      fd.col(k) = (assemble_residual(m, bp, pts) - assemble_residual(m, bm, pts)) / (2.0 * h);
    }
    worst = std::max(worst, (jac - fd).cwiseAbs().maxCoeff() / jac.cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-6, fmt::format("max relative deviation over 5 kinds = {:.2e}", worst)};
}

Outcome c5() {
  const auto forced = verify_flow_theorems(catalog_entry("forced_pendulum"), 20, 1e-8, 0,
                                           {FlowTheorem::temporal_period});
  const auto free = verify_flow_theorems(catalog_entry("free_pendulum"), 20, 1e-8, 0, {FlowTheorem::state_period});
  double dev = 0.0;
  for (const auto* r : {&forced, &free})
    for (const auto& c : r->checks) dev = std::max(dev, c.max_deviation);
  return {forced.passed() && free.passed() && !forced.checks.empty() && !free.checks.empty(),
          fmt::format("forced T-period and free L1-period, max deviation = {:.2e}", dev)};
}

Outcome c6() {
  CatalogEntry e = catalog_entry("linear1e6");
  e.kind = RepKind::exp_s0;
  e.model.hidden = {400};
  e.model.delta_m = 0.02;
  e.train.q = 1000;
  set_horizon(e, 1.0, 0.02);
  const auto r = learned_row(e, Method::exp_s0);

  // ExpS1 with beta = 0 is forward Euler, unstable at lambda * dt = 2e4.
  CatalogEntry base = e;
  base.kind = RepKind::exp_s1;
  base.march.allow_extrapolation = true;
  const DecomposedModel zero = build_decomposed(base.system, base.decomposed_spec());
  const Trajectory traj = march(zero, base.y0, base.march);
  const double e_base = error_metrics(traj, reference_solution(base, base.y0, traj.times)).e_max;
  const bool diverged = !(e_base <= 1.0);
  std::string detail = describe(r) + fmt::format(", beta=0 baseline e_max={:.2e}", e_base);
  if (!below(r, 1e-4)) {
    // Context only: the width at which this setup does reach the bound.
    CatalogEntry wide = e;
    wide.model.hidden = {700};
    detail += ", M=700 for comparison: " + describe(learned_row(wide, Method::exp_s0));
  }
  return {below(r, 1e-4) && diverged, detail};
}

Outcome c7() {
  CatalogEntry e = catalog_entry("free_pendulum");
  e.kind = RepKind::exp_s1;
  e.model.hidden = {400};
  e.train.q = 1000;
  set_horizon(e, 50.0, 0.2);
  const auto r = learned_row(e, Method::exp_s1);
  return {below(r, 1e-4), describe(r)};
}

Outcome c8() {
  CatalogEntry e = catalog_entry("forced_pendulum");
  e.model.hidden = {800};
  e.train.q = 1500;
  set_horizon(e, 20.0, 0.1);
  const auto r = learned_row(e, Method::exp_s1);
  return {below(r, 1e-3), describe(r)};
}

Outcome c9() {
  CatalogEntry e = criterion1_setup();
  e.kind = RepKind::imp_s1;
  const auto r = learned_row(e, Method::imp_s1);
  return {below(r, 1e-3), describe(r)};
}

Outcome c10() {
  const CatalogEntry lin = catalog_entry("linear100");
  const auto grid = uniform_grid(0.0, 1.0, 0.02);
  const Trajectory dp = dp54_adaptive(lin.system, lin.y0, grid, {1e-12, 1e-12});
  double e_dp = 0.0;
  for (std::size_t i = 0; i < dp.size(); ++i)
    e_dp = std::max(e_dp, std::abs(dp.states[i][0] - exact_linear_solution(100.0, lin.y0[0], 0.0, dp.times[i])));

  const CatalogEntry pend = catalog_entry("free_pendulum");
  const Vec y0{{1.0, 0.5}};
  const Vec exact = dp54_flow(pend.system, y0, 0.0, 2.0, {1e-14, 1e-14});
  const double e1 = (rk4_fixed(pend.system, y0, 0.0, 2.0, 0.04).states.back() - exact).cwiseAbs().maxCoeff();
  const double e2 = (rk4_fixed(pend.system, y0, 0.0, 2.0, 0.02).states.back() - exact).cwiseAbs().maxCoeff();
  const double slope = std::log2(e1 / e2);

  double r_max = 0.0;
  for (int k = 0; k <= 2000; ++k) {
    const double lh = std::pow(10.0, -8.0 + 16.0 * k / 2000.0);
    r_max = std::max(r_max, std::abs(sdirk2_stability(-lh)));
  }
  return {e_dp <= 1e-9 && std::abs(slope - 4.0) <= 0.3 && r_max <= 1.0,
          fmt::format("DP54 vs exact {:.2e}, RK4 slope {:.3f}, max |R(-lambda h)| {:.6f}", e_dp, slope, r_max)};
}

Outcome c11() {
  Philox rng(2024);
  Mat u = Mat::NullaryExpr(20, 5, [&] { return rng.uniform(-1.0, 1.0); });
  Mat v = Mat::NullaryExpr(5, 5, [&] { return rng.uniform(-1.0, 1.0); });
  const Mat qu = Eigen::HouseholderQR<Mat>(u).householderQ() * Mat::Identity(20, 5);
  const Mat qv = Eigen::HouseholderQR<Mat>(v).householderQ();
  Vec sigma(5);
  for (int i = 0; i < 5; ++i) sigma[i] = std::pow(10.0, 3.0 * i / 4.0);
  const Mat a = qu * sigma.asDiagonal() * qv.transpose();
  const Vec b = Vec::NullaryExpr(20, [&] { return rng.uniform(-1.0, 1.0); });

  // Closed form through the normal equations in extended precision.
  using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  const LMat al = a.cast<long double>();
  const Eigen::Matrix<long double, Eigen::Dynamic, 1> xl =
      (al.transpose() * al).ldlt().solve(al.transpose() * b.cast<long double>());
  const Vec x_ref = xl.cast<double>();

  TrainConfig cfg;
  cfg.max_iterations = 10;
  const auto res = gauss_newton([&](const Vec& x) -> Vec { return a * x - b; }, [&](const Vec&) -> Mat { return a; },
                                Vec::Zero(5), cfg);
  const double err = (res.beta - x_ref).cwiseAbs().maxCoeff();
  const Eigen::JacobiSVD<Mat> svd(a);
  const double cond = svd.singularValues()(0) / svd.singularValues()(4);
  return {err <= 1e-10 && res.report.iterations <= 2 && cond <= 1e3 * (1 + 1e-9),
          fmt::format("cond {:.1f}, |beta - beta_ls| = {:.2e}, {} iterations", cond, err, res.report.iterations)};
}

Outcome c12() {
  const CatalogEntry e = catalog_entry("forced_pendulum");
  ModelSpec spec;
  spec.hidden = {400};
  spec.rm = 0.4;
  PsiModel m = make_model(e.system, e.domain, RepKind::exp_s1, spec);
  m.subnet.beta = random_beta(m.subnet.beta.rows(), m.subnet.beta.cols(), 0.1, 5);
  CompiledModel compiled(m);
  Philox rng(77);
  std::vector<Vec> ys;
  std::vector<double> ts, xis;
  for (int s = 0; s < 10000; ++s) {
    ys.push_back(random_point(rng, e.domain.y0_box));
    ts.push_back(rng.uniform(e.domain.t0_interval->lo, e.domain.t0_interval->hi));
    xis.push_back(rng.uniform(0.0, e.domain.h_max));
  }
  double dev = 0.0;
  for (int s = 0; s < 1000; ++s) {
    const Vec a = eval_psi(m, ys[s], ts[s], xis[s]);
    const Vec b = compiled(ys[s], ts[s], xis[s]);
    dev = std::max(dev, (a - b).cwiseAbs().maxCoeff() / std::max(1.0, a.cwiseAbs().maxCoeff()));
  }
  auto time_once = [&](const std::function<void(std::size_t)>& f) {
    const auto start = Clock::now();
    for (std::size_t s = 0; s < ys.size(); ++s) f(s);
    return std::chrono::duration<double>(Clock::now() - start).count();
  };
  double sink = 0.0;
  Vec out(2);
  const auto generic_call = [&](std::size_t s) { sink += eval_psi(m, ys[s], ts[s], xis[s])[0]; };
  const auto compiled_call = [&](std::size_t s) {
    compiled.eval(as_span(ys[s]), ts[s], xis[s], as_span(out));
    sink += out[0];
  };
  // Interleaved best-of-7 after a warm-up pass, so load spikes hit both paths alike.
  time_once(generic_call);
  time_once(compiled_call);
  double generic = std::numeric_limits<double>::infinity(), fast = generic;
  for (int rep = 0; rep < 7; ++rep) {
    generic = std::min(generic, time_once(generic_call));
    fast = std::min(fast, time_once(compiled_call));
  }
  const double speedup = generic / fast;
  return {dev <= 1e-14 && speedup >= 5.0 && std::isfinite(sink),
          fmt::format("max deviation {:.1e}, speedup {:.1f}x ({:.3f}s vs {:.3f}s)", dev, speedup, generic, fast)};
}

// dy/dt = 1 over [0, 10] with two h_max bands split at y = 5.
DecomposedModel banded_model() {
  IvpSystem sys;
  sys.name = "drift";
  sys.dim = 1;
  sys.autonomous = true;
  sys.rhs = [](std::span<const double>, double, std::span<double> out) { out[0] = 1.0; };
  sys = with_fd_derivatives(sys);
  TrainingDomain d;
  d.y0_box = {{0.0, 10.0}};
  d.h_max = 0.3;
  DecomposedModel dm;
  dm.partition = build_partition(d, {{0.0, 5.0, 10.0}});
  SubdomainRule rule;
  rule.band_axis = 0;
  rule.band_h_max = {0.1, 0.3};
  dm.subdomains = make_subdomains(dm.partition, rule);
  for (const auto& s : dm.subdomains) {
    ModelSpec spec;
    spec.hidden = {5};
    spec.stream_index = static_cast<std::uint32_t>(s.id);
    dm.models.push_back(make_model(sys, training_domain(dm.partition, s), RepKind::exp_s1, spec));
  }
  return dm;
}

Outcome c13() {
  const DecomposedModel dm = banded_model();
  std::vector<StepRecord> log;
  const double tf = 9.0;
  march_quasi_adaptive(dm, Vec::Constant(1, 0.0), 0.0, tf, 0.95, &log);
  int mismatches = 0, band0 = 0, band1 = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const double y = log[i].y[0];
    const double expected = 0.95 * (y <= 5.0 ? 0.1 : 0.3);
    (y <= 5.0 ? band0 : band1)++;
    const bool last = i + 1 == log.size();
    // Only the closing step may be shortened, and only to land on tf.
    const bool ok = last ? (log[i].h <= expected && log[i].t + log[i].h == tf) : log[i].h == expected;
    mismatches += ok ? 0 : 1;
  }
  return {mismatches == 0 && band0 > 0 && band1 > 0,
          fmt::format("{} steps ({} in band 1, {} in band 2), {} mismatches", log.size(), band0, band1, mismatches)};
}

Outcome c14() {
  CatalogEntry e = catalog_entry("lorenz63");
  e.kind = RepKind::exp_s0;
  e.model.hidden = {400};
  e.train.q = 1200;
  set_horizon(e, 5.0, 0.01);
  const auto r = learned_row(e, Method::exp_s0);
  return {below(r, 1e-2), describe(r)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;  // 0 means no runtime bound
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<Criterion> all = {
      {1, "linear non-stiff ExpS1", 300, c1},
      {2, "convergence in M", 1200, c2},
      {3, "structural initial condition", 0, c3},
      {4, "Jacobian vs finite differences", 60, c4},
      {5, "oracle periodicity", 60, c5},
      {6, "stiff linear with decomposition", 600, c6},
      {7, "free pendulum", 900, c7},
      {8, "periodicity-exploiting march", 0, c8},
      {9, "implicit ImpS1 path", 0, c9},
      {10, "reference solvers", 0, c10},
      {11, "Gauss-Newton vs least squares", 0, c11},
      {12, "compiled evaluator", 0, c12},
      {13, "quasi-adaptive step sizes", 0, c13},
      {14, "Lorenz63 short horizon", 1200, c14},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    const bool in_time = c.budget_seconds <= 0 || secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::string budget = c.budget_seconds > 0 ? fmt::format(" / {:.0f}s", c.budget_seconds) : "";
    std::printf("criterion %2d %s: %s [%.1fs%s] %s%s\n", c.id, c.name, pass ? "PASS" : "FAIL", secs, budget.c_str(),
                o.detail.c_str(), in_time ? "" : " (over time budget)");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
