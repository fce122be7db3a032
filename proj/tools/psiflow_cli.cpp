#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "psiflow/bench.hpp"
#include "psiflow/catalog.hpp"
#include "psiflow/marcher.hpp"
#include "psiflow/model_io.hpp"
#include "psiflow/trainer.hpp"

namespace {

using namespace psiflow;

constexpr int kExitInvalid = 2;
constexpr int kExitNumeric = 3;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::stage_solver_failure:
    case ErrorKind::linear_solver_failure:
    case ErrorKind::numeric_failure:
    case ErrorKind::stiffness_failure:
    case ErrorKind::out_of_domain:
      return kExitNumeric;
    default:
      return kExitInvalid;
  }
}

// A catalog id, or a path to a problem config file.
CatalogEntry resolve_problem(const std::string& arg) {
  const auto ids = catalog_ids();
  if (std::find(ids.begin(), ids.end(), arg) != ids.end()) return catalog_entry(arg);
  if (std::filesystem::exists(arg)) return load_problem_config(arg);
  fail(ErrorKind::invalid_argument,
       fmt::format("'{}' is neither a catalog problem ({}) nor a config file", arg, fmt::join(ids, ", ")));
}

std::vector<double> parse_vector(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      require(used == item.size(), "");
    } catch (const std::exception&) {
      fail(ErrorKind::invalid_argument, fmt::format("'{}' is not a comma-separated list of numbers", text));
    }
  }
  require(!out.empty(), "empty vector");
  return out;
}

struct Telemetry {
  std::ofstream file;
  std::ostream* out = nullptr;
  std::mutex mu;

  explicit Telemetry(const std::string& path) {
    if (path.empty()) return;
    if (path == "-") {
      out = &std::cerr;
      return;
    }
    file.open(path);
    if (!file) fail(ErrorKind::io_failure, "cannot open " + path + " for writing");
    out = &file;
  }
  TelemetrySink sink() {
    if (!out) return {};
    return [this](const TelemetryRecord& r) {
      std::lock_guard lock(mu);
      *out << to_json_line(r) << '\n';
    };
  }
};

struct Globals {
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string log_level = "info";
};

int cmd_train(const Globals& g, const std::string& problem, const std::string& out_model,
              const std::string& telemetry_path, const std::optional<std::string>& kind, const std::optional<int>& m,
              const std::optional<int>& q, bool print_config) {
  CatalogEntry e = resolve_problem(problem);
  if (g.seed) e.model.seed = e.train.seed = *g.seed;
  if (kind) e.kind = rep_kind_from_string(*kind);
  if (m) e.model.hidden.back() = *m;
  if (q) e.train.q = *q;
  if (print_config) {
    std::cout << to_config(e).dump(2) << '\n';
    return 0;
  }
  require(!out_model.empty(), "train needs --out");
  Telemetry tel(telemetry_path);
  const auto trained = train_decomposed(e.system, e.decomposed_spec(), g.jobs, tel.sink());
  for (std::size_t k = 0; k < trained.reports.size(); ++k) {
    const auto& r = trained.reports[k];
    spdlog::info("sub-domain {}: |r|_2 = {:.3e}, |r|_inf = {:.3e}, {} iterations, {} restarts, {:.2f} s ({})", k,
                 r.final_norm, r.final_max_residual, r.iterations, r.restarts, r.wall_time_seconds, to_string(r.stop));
  }
  save_model(trained.model, out_model);
  spdlog::info("wrote {}", out_model);
  return 0;
}

int cmd_march(const std::string& model_path, const std::string& y0_text, double t0, double tf,
              std::optional<double> dt, bool quasi, double safety, bool no_periodic, bool extrapolate,
              const std::string& out) {
  const DecomposedModel model = load_model(model_path, resolve_system);
  const auto y0v = parse_vector(y0_text);
  const Vec y0 = Eigen::Map<const Vec>(y0v.data(), static_cast<Eigen::Index>(y0v.size()));
  require(y0.size() == model.models.front().system.dim, "y0 dimension differs from the model's system");
  MarchConfig cfg;
  cfg.t0 = t0;
  cfg.tf = tf;
  cfg.periodicity_exploit = !no_periodic;
  cfg.allow_extrapolation = extrapolate;
  if (quasi) {
    cfg.mode = MarchConfig::Mode::quasi_adaptive;
    cfg.safety = safety;
  } else {
    require(dt.has_value(), "march needs --dt or --quasi-adaptive");
    cfg.dt = *dt;
  }
  const Trajectory traj = march(model, y0, cfg);
  if (out.empty() || out == "-") std::cout << to_csv(traj);
  else write_csv(traj, out);
  return 0;
}

int cmd_bench(const Globals& g, const std::string& config_path, const std::string& output) {
  ExperimentConfig cfg = load_experiment(config_path);
  if (g.seed) cfg.seed = *g.seed;
  cfg.jobs = g.jobs;
  if (!output.empty()) cfg.output = output;
  const auto rows = run_experiment(cfg);
  if (cfg.output.empty()) std::cout << results_csv(rows, cfg.sweep, cfg.record_timing);
  else spdlog::info("wrote {} and {}.json", cfg.output, cfg.output);
  int failed = 0;
  for (const auto& r : rows) failed += r.error.empty() ? 0 : 1;
  if (failed) spdlog::warn("{} of {} rows failed", failed, rows.size());
  return 0;
}

int cmd_verify(const Globals& g, const std::string& problem, int samples, double tol,
               const std::vector<std::string>& theorems) {
  const CatalogEntry e = resolve_problem(problem);
  std::vector<FlowTheorem> which;
  for (const auto& t : theorems) {
    if (t == "temporal_period") which.push_back(FlowTheorem::temporal_period);
    else if (t == "state_period") which.push_back(FlowTheorem::state_period);
    else if (t == "periodic_orbit") which.push_back(FlowTheorem::periodic_orbit);
    else fail(ErrorKind::invalid_argument, fmt::format("unknown check '{}'", t));
  }
  const auto report = verify_flow_theorems(e, samples, tol, g.seed.value_or(0), which);
  for (const auto& c : report.checks) {
    std::cout << fmt::format("{} {}{} samples={} max_deviation={:.3e} tol={:.1e}\n", c.passed ? "PASS" : "FAIL",
                             to_string(c.theorem), c.component >= 0 ? fmt::format("[y{}]", c.component + 1) : "",
                             c.samples, c.max_deviation, tol);
  }
  return report.passed() ? 0 : kExitNumeric;
}

int cmd_inspect(const std::string& model_path) {
  std::cout << model_manifest(load_model(model_path, resolve_system)).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned exact time integration of ODE systems"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Override the random seed");
  app.add_option("--jobs", g.jobs, "Worker threads for training and sweeps")->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  std::string problem, out_model, telemetry, kind_text;
  int m_val = 0, q_val = 0;
  bool print_config = false;
  auto* train = app.add_subcommand("train", "Train a model for a catalog problem or problem config");
  train->add_option("problem", problem, "Catalog id or config file")->required();
  train->add_option("-o,--out", out_model, "Output model file");
  train->add_option("--telemetry", telemetry, "JSON-lines telemetry file ('-' for stderr)");
  auto* kind_opt = train->add_option("--kind", kind_text, "ExpS0, ExpS1, ExpS2, ImpS1 or ImpS2");
  auto* m_opt = train->add_option("--M", m_val, "Last hidden layer width")->check(CLI::PositiveNumber);
  auto* q_opt = train->add_option("--Q", q_val, "Collocation points")->check(CLI::PositiveNumber);
  train->add_flag("--print-config", print_config, "Print the resolved problem config and exit");

  std::string model_path, y0_text, out_csv;
  double t0 = 0.0, tf = 0.0, dt = 0.0, safety = 0.95;
  bool quasi = false, no_periodic = false, extrapolate = false;
  auto* march_cmd = app.add_subcommand("march", "March a trained model");
  march_cmd->add_option("model", model_path, "Model file")->required()->check(CLI::ExistingFile);
  march_cmd->add_option("--y0", y0_text, "Initial state, comma-separated")->required();
  march_cmd->add_option("--t0", t0, "Start time");
  march_cmd->add_option("--tf", tf, "Final time")->required();
  auto* dt_opt = march_cmd->add_option("--dt", dt, "Fixed step");
  auto* quasi_flag = march_cmd->add_flag("--quasi-adaptive", quasi, "h = safety * h_max of the current sub-domain");
  dt_opt->excludes(quasi_flag);
  march_cmd->add_option("--safety", safety, "Quasi-adaptive safety factor");
  march_cmd->add_flag("--no-periodic", no_periodic, "Disable periodic reduction");
  march_cmd->add_flag("--extrapolate", extrapolate, "Use the nearest sub-domain outside the training box");
  march_cmd->add_option("--out", out_csv, "CSV output (default stdout)");

  std::string experiment, bench_out;
  auto* bench = app.add_subcommand("bench", "Run an experiment sweep");
  bench->add_option("config", experiment, "Experiment config file")->required()->check(CLI::ExistingFile);
  bench->add_option("--output", bench_out, "CSV output path (JSON written alongside)");

  std::string verify_problem;
  int samples = 20;
  double tol = 1e-8;
  std::vector<std::string> theorems;
  auto* verify = app.add_subcommand("verify", "Check periodicity properties of the exact flow");
  verify->add_option("problem", verify_problem, "Catalog id or config file")->required();
  verify->add_option("--samples", samples, "Random samples")->check(CLI::PositiveNumber);
  verify->add_option("--tol", tol, "Tolerance");
  verify->add_option("--check", theorems, "temporal_period, state_period or periodic_orbit (default: all applicable)");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "Dump a model manifest as JSON");
  inspect->add_option("model", inspect_path, "Model file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInvalid;
  }

  spdlog::set_default_logger(spdlog::stderr_color_mt("psiflow"));
  spdlog::set_level(spdlog::level::from_str(g.log_level));
  if (*seed_opt) g.seed = seed;

  try {
    if (*train)
      return cmd_train(g, problem, out_model, telemetry, *kind_opt ? std::optional(kind_text) : std::nullopt,
                       *m_opt ? std::optional(m_val) : std::nullopt, *q_opt ? std::optional(q_val) : std::nullopt,
                       print_config);
    if (*march_cmd)
      return cmd_march(model_path, y0_text, t0, tf, *dt_opt ? std::optional(dt) : std::nullopt, quasi, safety,
                       no_periodic, extrapolate, out_csv);
    if (*bench) return cmd_bench(g, experiment, bench_out);
    if (*verify) return cmd_verify(g, verify_problem, samples, tol, theorems);
    if (*inspect) return cmd_inspect(inspect_path);
  } catch (const Error& e) {
    spdlog::error("{}: {}", to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitNumeric;
  }
  return 0;
}
