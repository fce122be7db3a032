#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "psiflow/decomp.hpp"
#include "psiflow/psirep.hpp"

namespace psiflow {

struct PerturbConfig {
  int trigger = 3;          // consecutive stalled iterations before a restart
  double magnitude = -1.0;  // noise half-width; negative selects 0.5 * Rm
  int max_restarts = 4;
};

struct TrainConfig {
  int q = 1000;
  std::uint64_t seed = 0;
  int max_iterations = 100;
  double gtol = 1e-10;  // on ||J^T r||_inf
  double xtol = 1e-10;  // on ||step|| relative to ||beta||
  double ftol = 0.0;    // on ||r||_2; also the restart target
  double damping_init = 1e-3;
  PerturbConfig perturb;

  void validate() const;
};

enum class StopReason { gradient, step, residual, max_iterations, no_progress, stalled };
std::string_view to_string(StopReason reason) noexcept;

struct TrainReport {
  double final_norm = 0.0;          // ||r||_2 of the returned beta
  double final_max_residual = 0.0;  // ||r||_inf of the returned beta
  int iterations = 0;               // accepted-or-attempted iterations over all runs
  int restarts = 0;
  double wall_time_seconds = 0.0;
  StopReason stop = StopReason::max_iterations;
  std::vector<double> restart_best;  // best ||r||_2 of each run, in run order
};

struct TelemetryRecord {
  int restart = 0;
  int iteration = 0;
  double loss = 0.0;  // ||r||_2
  double damping = 0.0;
  bool accepted = false;
  int subdomain = -1;
};
using TelemetrySink = std::function<void(const TelemetryRecord&)>;

/// One JSON object per line: {"subdomain":..,"restart":..,"iteration":..,...}.
std::string to_json_line(const TelemetryRecord& rec);

using ResidualFn = std::function<Vec(const Vec&)>;
using JacobianFn = std::function<Mat(const Vec&)>;

struct SolveResult {
  Vec beta;
  TrainReport report;
};

/// Box [lo, hi] per input axis; Q uniform draws from the collocation stream
/// of (seed, stream_index).
CollocationSet sample_collocation(const std::vector<Interval>& box, int q, std::uint64_t seed,
                                  std::uint32_t stream_index = 0);

/// Input box (y0, [t0,] xi) of a model's training domain.
std::vector<Interval> collocation_box(const PsiModel& model);

/// Levenberg-Marquardt damped Gauss-Newton. Every iteration factors J once
/// (QR, then SVD of R) and reuses it for all damping trials. The undamped
/// step is tried first; on failure the damping runs x2 per rejection from its
/// current value, and shrinks x0.3 on acceptance. Returns the best beta seen.
SolveResult gauss_newton(const ResidualFn& residual, const JacobianFn& jacobian, Vec beta0, const TrainConfig& cfg,
                         const TelemetrySink& sink = {});

/// gauss_newton with stall detection; a stalled run above the target restarts
/// from the best beta plus Uniform[-mag, mag] noise. Collocation is not
/// resampled between restarts.
SolveResult nllsq_perturb(const ResidualFn& residual, const JacobianFn& jacobian, Vec beta0, const TrainConfig& cfg,
                          double magnitude, const TelemetrySink& sink = {});

/// Trains beta on a fresh collocation set drawn from the model's domain.
std::pair<PsiModel, TrainReport> train_model(PsiModel model, const TrainConfig& cfg, const TelemetrySink& sink = {});

/// Everything needed to build and train one local model per sub-domain.
struct DecomposedSpec {
  Partition partition;
  std::vector<Subdomain> subdomains;
  RepKind kind = RepKind::exp_s1;
  ModelSpec model;
  TrainConfig train;
};

struct DecomposedTraining {
  DecomposedModel model;
  std::vector<TrainReport> reports;
};

/// Untrained local models, one per sub-domain, on the enlarged boxes.
DecomposedModel build_decomposed(const IvpSystem& sys, const DecomposedSpec& spec);

/// Trains every sub-domain independently on up to `jobs` threads. Results do
/// not depend on `jobs`. Failures are collected and reported together.
DecomposedTraining train_decomposed(const IvpSystem& sys, const DecomposedSpec& spec, int jobs = 1,
                                    const TelemetrySink& sink = {});

/// Residual of a model at fresh points; used for generalization checks.
Vec residual_at(const PsiModel& model, const CollocationSet& points);

}  // namespace psiflow
