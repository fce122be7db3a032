#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "psiflow/catalog.hpp"
#include "psiflow/refsolve.hpp"

namespace psiflow {

enum class SweepVariable { m, q, h_max, tolerance };
std::string_view to_string(SweepVariable v) noexcept;
SweepVariable sweep_variable_from_string(std::string_view name);

/// Learned kinds plus the classical integrators.
enum class Method { exp_s0, exp_s1, exp_s2, imp_s1, imp_s2, rk4, dp54, sdirk2 };
std::string_view to_string(Method m) noexcept;
Method method_from_string(std::string_view name);
bool is_learned(Method m) noexcept;

struct ExperimentConfig {
  CatalogEntry problem;
  SweepVariable sweep = SweepVariable::m;
  std::vector<double> values;
  std::vector<Method> methods;
  std::string output;  // CSV path; the JSON goes next to it with a .json suffix. Empty writes nothing.
  std::uint64_t seed = 0;
  int jobs = 1;
  bool record_timing = true;  // off makes the CSV byte-stable across runs

  void validate() const;
};

/// {"problem": <id or problem config object>, "sweep": "M", "values": [...],
///  "methods": [...], "output": "...", "seed": 0, "jobs": 1, "record_timing": true}
ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment(const std::string& path);

struct ResultRow {
  Method method = Method::exp_s1;
  double sweep_value = 0.0;
  std::optional<double> e_max;
  std::optional<double> e_rms;
  std::optional<double> train_seconds;  // learned methods only
  std::optional<double> march_seconds;
  std::optional<double> train_residual;  // largest final ||r||_inf over sub-domains
  std::string error;  // non-empty when the row failed
};

/// Rows in sweep order (value-major, then method order); failures are kept
/// in their row and the run continues.
std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg);

/// Header "method,sweep_variable,sweep_value,e_max,e_rms,train_seconds,
/// march_seconds,train_residual,error"; missing values are empty fields.
std::string results_csv(const std::vector<ResultRow>& rows, SweepVariable sweep, bool record_timing);
nlohmann::json results_json(const std::vector<ResultRow>& rows, const ExperimentConfig& cfg);

/// Reference on the given times: exact solution when known, else SDIRK2
/// (atol = rtol = 1e-10) for stiff problems, else DP54 at 1e-12.
Trajectory reference_solution(const CatalogEntry& entry, const Vec& y0, const std::vector<double>& times);

enum class FlowTheorem { temporal_period, state_period, periodic_orbit };
std::string_view to_string(FlowTheorem t) noexcept;

struct TheoremCheck {
  FlowTheorem theorem;
  int component = -1;  // state-period checks only
  int samples = 0;
  double max_deviation = 0.0;
  bool passed = false;
};

struct FlowTheoremReport {
  std::vector<TheoremCheck> checks;
  bool passed() const noexcept;
};

/// Periodicity properties of the exact flow, with DP54 at 1e-13 as the flow
/// oracle and samples drawn from the problem's training box:
///   temporal_period: |Phi(y0, t0 + T, xi) - Phi(y0, t0, xi)| <= tol
///   state_period:    |Phi(y0 + L_i e_i, t0, xi) - Phi(y0, t0, xi) - L_i e_i| <= tol
///   periodic_orbit:  a state with Phi(y0, t0, T) = y0, found by Newton
///                    shooting, stays T-periodic over later times.
/// With no explicit selection every applicable check runs. Throws
/// metadata-absent when a selected check (or every check) has no metadata.
FlowTheoremReport verify_flow_theorems(const CatalogEntry& problem, int samples, double tol, std::uint64_t seed = 0,
                                       const std::vector<FlowTheorem>& which = {});

}  // namespace psiflow
