#include "psiflow/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "psiflow/marcher.hpp"
#include "psiflow/rng.hpp"
#include "psiflow/trainer.hpp"

namespace psiflow {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<Method, std::string_view>, 8> kMethodNames{{
    {Method::exp_s0, "ExpS0"},
    {Method::exp_s1, "ExpS1"},
    {Method::exp_s2, "ExpS2"},
    {Method::imp_s1, "ImpS1"},
    {Method::imp_s2, "ImpS2"},
    {Method::rk4, "RK4"},
    {Method::dp54, "DP54"},
    {Method::sdirk2, "SDIRK2"},
}};

constexpr std::array<std::pair<SweepVariable, std::string_view>, 4> kSweepNames{{
    {SweepVariable::m, "M"},
    {SweepVariable::q, "Q"},
    {SweepVariable::h_max, "h_max"},
    {SweepVariable::tolerance, "tolerance"},
}};

RepKind kind_of(Method m) {
  switch (m) {
    case Method::exp_s0: return RepKind::exp_s0;
    case Method::exp_s1: return RepKind::exp_s1;
    case Method::exp_s2: return RepKind::exp_s2;
    case Method::imp_s1: return RepKind::imp_s1;
    case Method::imp_s2: return RepKind::imp_s2;
    default: fail(ErrorKind::invalid_argument, "classical method has no representation kind");
  }
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int as_count(double v, const char* what) {
  require(v >= 1.0 && v == std::floor(v) && v < 1e9, fmt::format("{} sweep values must be positive integers", what));
  return static_cast<int>(v);
}

}  // namespace

std::string_view to_string(SweepVariable v) noexcept {
  for (const auto& [k, name] : kSweepNames)
    if (k == v) return name;
  return "?";
}

SweepVariable sweep_variable_from_string(std::string_view name) {
  for (const auto& [k, n] : kSweepNames)
    if (n == name) return k;
  fail(ErrorKind::invalid_argument, fmt::format("unknown sweep variable '{}' (M, Q, h_max, tolerance)", name));
}

std::string_view to_string(Method m) noexcept {
  for (const auto& [k, name] : kMethodNames)
    if (k == m) return name;
  return "?";
}

Method method_from_string(std::string_view name) {
  for (const auto& [k, n] : kMethodNames)
    if (n == name) return k;
  fail(ErrorKind::invalid_argument, fmt::format("unknown method '{}'", name));
}

bool is_learned(Method m) noexcept { return m != Method::rk4 && m != Method::dp54 && m != Method::sdirk2; }

void ExperimentConfig::validate() const {
  require(!methods.empty(), "experiment needs at least one method");
  require(jobs >= 1, "jobs must be at least 1");
  for (double v : values) require(std::isfinite(v) && v > 0.0, "sweep values must be positive and finite");
}

ExperimentConfig experiment_from_json(const json& j) {
  try {
    require(j.is_object(), "experiment config must be an object");
    for (const auto& [k, v] : j.items())
      require(k == "problem" || k == "sweep" || k == "values" || k == "methods" || k == "output" || k == "seed" ||
                  k == "jobs" || k == "record_timing",
              fmt::format("unknown experiment key '{}'", k));
    ExperimentConfig cfg;
    const json& p = j.at("problem");
    cfg.problem = p.is_string() ? catalog_entry(p.get<std::string>()) : entry_from_config(p);
    cfg.sweep = sweep_variable_from_string(j.value("sweep", std::string("M")));
    cfg.values = j.value("values", std::vector<double>{});
    for (const auto& m : j.at("methods")) cfg.methods.push_back(method_from_string(m.get<std::string>()));
    cfg.output = j.value("output", std::string{});
    cfg.seed = j.value("seed", std::uint64_t{0});
    cfg.jobs = j.value("jobs", 1);
    cfg.record_timing = j.value("record_timing", true);
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, fmt::format("malformed experiment config: {}", e.what()));
  }
}

json to_json(const ExperimentConfig& cfg) {
  json methods = json::array();
  for (Method m : cfg.methods) methods.push_back(std::string(to_string(m)));
  return {{"problem", to_config(cfg.problem)},
          {"sweep", std::string(to_string(cfg.sweep))},
          {"values", cfg.values},
          {"methods", methods},
          {"output", cfg.output},
          {"seed", cfg.seed},
          {"jobs", cfg.jobs},
          {"record_timing", cfg.record_timing}};
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io_failure, "cannot open " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, fmt::format("{}: {}", path, e.what()));
  }
  return experiment_from_json(j);
}

Trajectory reference_solution(const CatalogEntry& entry, const Vec& y0, const std::vector<double>& times) {
  require(!times.empty(), "reference needs at least one time");
  if (entry.exact) {
    Trajectory ref;
    for (double t : times) ref.push(t, entry.exact(y0, times.front(), t));
    return ref;
  }
  if (entry.stiff) return sdirk2_adaptive(entry.system, y0, times, {1e-10, 1e-10});
  return dp54_adaptive(entry.system, y0, times, {1e-12, 1e-12});
}

namespace {

// Output grid for the classical integrators.
double output_step(const CatalogEntry& e) {
  if (e.march.mode == MarchConfig::Mode::fixed) return e.march.dt;
  return e.march.safety * e.domain.h_max;
}

ResultRow run_point(const ExperimentConfig& cfg, double value, Method method, int inner_jobs) {
  ResultRow row;
  row.method = method;
  row.sweep_value = value;
  try {
    CatalogEntry e = cfg.problem;
    e.model.seed = cfg.seed;
    e.train.seed = cfg.seed;
    std::optional<double> tolerance;
    switch (cfg.sweep) {
      case SweepVariable::m: e.model.hidden.back() = as_count(value, "M"); break;
      case SweepVariable::q: e.train.q = as_count(value, "Q"); break;
      case SweepVariable::h_max:
        require(!e.rule.band_axis, "an h_max sweep needs a single h_max for every sub-domain");
        e.domain.h_max = value;
        if (e.march.mode == MarchConfig::Mode::fixed) e.march.dt = std::min(e.march.dt, value);
        break;
      case SweepVariable::tolerance:
        require(!is_learned(method) && method != Method::rk4, "a tolerance sweep applies to DP54 and SDIRK2 only");
        tolerance = value;
        break;
    }

    Trajectory traj;
    if (is_learned(method)) {
      e.kind = kind_of(method);
      auto start = Clock::now();
      const DecomposedTraining trained = train_decomposed(e.system, e.decomposed_spec(), inner_jobs);
      row.train_seconds = seconds_since(start);
      double worst = 0.0;
      for (const auto& r : trained.reports) worst = std::max(worst, r.final_max_residual);
      row.train_residual = worst;
      start = Clock::now();
      traj = march(trained.model, e.y0, e.march);
      row.march_seconds = seconds_since(start);
    } else {
      const double h = output_step(e);
      const auto start = Clock::now();
      if (method == Method::rk4) {
        traj = rk4_fixed(e.system, e.y0, e.t0, e.tf, h);
      } else {
        const auto grid = uniform_grid(e.t0, e.tf, h);
        const double tol = tolerance.value_or(method == Method::dp54 ? 1e-8 : 1e-6);
        traj = method == Method::dp54 ? dp54_adaptive(e.system, e.y0, grid, {tol, tol})
                                      : sdirk2_adaptive(e.system, e.y0, grid, {tol, tol});
      }
      row.march_seconds = seconds_since(start);
    }
    const ErrorReport err = error_metrics(traj, reference_solution(e, e.y0, traj.times));
    row.e_max = err.e_max;
    row.e_rms = err.e_rms;
  } catch (const std::exception& ex) {
    row.error = ex.what();
    spdlog::warn("{} at {} = {}: {}", to_string(method), to_string(cfg.sweep), value, ex.what());
  }
  return row;
}

std::string csv_number(const std::optional<double>& v) { return v ? fmt::format("{:.17g}", *v) : std::string{}; }

std::string csv_text(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json json_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  struct Task {
    double value;
    Method method;
  };
  std::vector<Task> tasks;
  for (double v : cfg.values)
    for (Method m : cfg.methods) tasks.push_back({v, m});

  std::vector<ResultRow> rows(tasks.size());
  const int workers = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(tasks.size())));
  const int inner = std::max(1, cfg.jobs / workers);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k = next++; k < tasks.size(); k = next++)
      rows[k] = run_point(cfg, tasks[k].value, tasks[k].method, inner);
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  if (!cfg.output.empty()) {
    std::ofstream csv(cfg.output, std::ios::binary);
    if (!csv) fail(ErrorKind::io_failure, "cannot open " + cfg.output + " for writing");
    csv << results_csv(rows, cfg.sweep, cfg.record_timing);
    const std::string json_path = cfg.output + ".json";
    std::ofstream js(json_path, std::ios::binary);
    if (!js) fail(ErrorKind::io_failure, "cannot open " + json_path + " for writing");
    js << results_json(rows, cfg).dump(2) << '\n';
  }
  return rows;
}

std::string results_csv(const std::vector<ResultRow>& rows, SweepVariable sweep, bool record_timing) {
  std::string out = "method,sweep_variable,sweep_value,e_max,e_rms,train_seconds,march_seconds,train_residual,error\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.17g},{},{},{},{},{},{}\n", to_string(r.method), to_string(sweep), r.sweep_value,
                       csv_number(r.e_max), csv_number(r.e_rms),
                       record_timing ? csv_number(r.train_seconds) : std::string{},
                       record_timing ? csv_number(r.march_seconds) : std::string{}, csv_number(r.train_residual),
                       csv_text(r.error));
  }
  return out;
}

json results_json(const std::vector<ResultRow>& rows, const ExperimentConfig& cfg) {
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back({{"method", std::string(to_string(r.method))},
                   {"sweep_value", r.sweep_value},
                   {"e_max", json_number(r.e_max)},
                   {"e_rms", json_number(r.e_rms)},
                   {"train_seconds", cfg.record_timing ? json_number(r.train_seconds) : json(nullptr)},
                   {"march_seconds", cfg.record_timing ? json_number(r.march_seconds) : json(nullptr)},
                   {"train_residual", json_number(r.train_residual)},
                   {"error", r.error}});
  }
  return {{"config", to_json(cfg)}, {"rows", arr}};
}

std::string_view to_string(FlowTheorem t) noexcept {
  switch (t) {
    case FlowTheorem::temporal_period: return "temporal_period";
    case FlowTheorem::state_period: return "state_period";
    case FlowTheorem::periodic_orbit: return "periodic_orbit";
  }
  return "?";
}

bool FlowTheoremReport::passed() const noexcept {
  return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

namespace {

constexpr Tolerances kOracleTol{1e-13, 1e-13};

Vec flow(const IvpSystem& sys, const Vec& y0, double t0, double xi) {
  return xi == 0.0 ? y0 : dp54_flow(sys, y0, t0, t0 + xi, kOracleTol);
}

struct Sample {
  Vec y0;
  double t0;
  double xi;
};

std::vector<Sample> draw_samples(const CatalogEntry& p, int count, std::uint64_t seed) {
  Philox rng(seed, stream_id(StreamPurpose::validation));
  const Interval t0_range = p.domain.t0_interval.value_or(Interval{0.0, p.system.temporal_period.value_or(1.0)});
  std::vector<Sample> out;
  for (int k = 0; k < count; ++k) {
    Sample s{Vec(p.system.dim), 0.0, 0.0};
    for (int i = 0; i < p.system.dim; ++i) s.y0[i] = rng.uniform(p.domain.y0_box[static_cast<std::size_t>(i)].lo,
                                                                 p.domain.y0_box[static_cast<std::size_t>(i)].hi);
    s.t0 = rng.uniform(t0_range.lo, t0_range.hi);
    s.xi = rng.uniform(0.0, p.domain.h_max);
    out.push_back(std::move(s));
  }
  return out;
}

// Settles onto the attracting T-periodic solution, then polishes
// Phi(y, t0, T) = y by Newton with a central-difference Jacobian.
Vec periodic_state(const IvpSystem& sys, double t0, double period, const Vec& start) {
  Vec y = start;
  for (int k = 0; k < 100; ++k) y = dp54_flow(sys, y, t0, t0 + period, {1e-10, 1e-10});
  const auto g = [&](const Vec& x) -> Vec { return dp54_flow(sys, x, t0, t0 + period, kOracleTol) - x; };
  const auto dg = [&](const Vec& x) -> Mat {
    Mat jac(x.size(), x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
      Vec xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      jac.col(j) = (g(xp) - g(xm)) / (2.0 * h);
    }
    return jac;
  };
  return newton_root(g, dg, y, 1e-11, 20).x;
}

}  // namespace

FlowTheoremReport verify_flow_theorems(const CatalogEntry& problem, int samples, double tol, std::uint64_t seed,
                                       const std::vector<FlowTheorem>& which) {
  require(samples >= 1, "need at least one sample");
  require(tol > 0.0, "tolerance must be positive");
  const IvpSystem& sys = problem.system;
  const bool has_t = sys.temporal_period.has_value();
  const bool has_l = sys.has_state_periodicity();

  std::vector<FlowTheorem> selected = which;
  if (selected.empty()) {
    if (has_t) selected.push_back(FlowTheorem::temporal_period);
    if (has_l) selected.push_back(FlowTheorem::state_period);
    if (has_t) selected.push_back(FlowTheorem::periodic_orbit);
    if (selected.empty())
      fail(ErrorKind::metadata_absent, fmt::format("system '{}' carries no periodicity metadata", sys.name));
  }
  for (FlowTheorem t : selected) {
    const bool ok = t == FlowTheorem::state_period ? has_l : has_t;
    if (!ok)
      fail(ErrorKind::metadata_absent,
           fmt::format("system '{}' has no {} metadata for the {} check", sys.name,
                       t == FlowTheorem::state_period ? "state-period" : "temporal-period", to_string(t)));
  }

  const auto draws = draw_samples(problem, samples, seed);
  FlowTheoremReport report;
  for (FlowTheorem t : selected) {
    if (t == FlowTheorem::temporal_period) {
      TheoremCheck c{t, -1, samples, 0.0, false};
      const double period = *sys.temporal_period;
      for (const auto& s : draws)
        c.max_deviation = std::max(c.max_deviation, (flow(sys, s.y0, s.t0 + period, s.xi) - flow(sys, s.y0, s.t0, s.xi))
                                                        .lpNorm<Eigen::Infinity>());
      c.passed = c.max_deviation <= tol;
      report.checks.push_back(c);
    } else if (t == FlowTheorem::state_period) {
      for (int i = 0; i < sys.dim; ++i) {
        const double l = sys.period_of(i);
        if (l <= 0.0) continue;
        TheoremCheck c{t, i, samples, 0.0, false};
        for (const auto& s : draws) {
          Vec shifted = s.y0;
          shifted[i] += l;
          Vec diff = flow(sys, shifted, s.t0, s.xi) - flow(sys, s.y0, s.t0, s.xi);
          diff[i] -= l;
          c.max_deviation = std::max(c.max_deviation, diff.lpNorm<Eigen::Infinity>());
        }
        c.passed = c.max_deviation <= tol;
        report.checks.push_back(c);
      }
    } else {
      TheoremCheck c{t, -1, samples, 0.0, false};
      const double period = *sys.temporal_period;
      const double t0 = problem.t0;
      const Vec ystar = periodic_state(sys, t0, period, problem.y0);
      for (const auto& s : draws) {
        const double later = s.xi + period * (1.0 + s.t0 - std::floor(s.t0));
        const Vec a = flow(sys, ystar, t0, later);
        const Vec b = flow(sys, ystar, t0, later + period);
        c.max_deviation = std::max(c.max_deviation, (b - a).lpNorm<Eigen::Infinity>());
      }
      c.passed = c.max_deviation <= tol;
      report.checks.push_back(c);
    }
  }
  return report;
}

}  // namespace psiflow
