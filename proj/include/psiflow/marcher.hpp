#pragma once

#include <optional>
#include <vector>

#include "psiflow/decomp.hpp"
#include "psiflow/odecore.hpp"
#include "psiflow/psirep.hpp"

namespace psiflow {

struct MarchConfig {
  enum class Mode { fixed, quasi_adaptive };
  Mode mode = Mode::fixed;
  double dt = 0.0;  // fixed mode
  double safety = 0.95;  // quasi-adaptive mode
  double t0 = 0.0;
  double tf = 0.0;
  bool periodicity_exploit = true;  // used only where the system and the training box allow it
  bool allow_extrapolation = false;  // otherwise leaving the box is an error

  void validate() const;
};

/// t* = mod(t - t_ref, T) + t_ref.
double wrap_time(double t, double period, double t_ref = 0.0);

struct WrappedCoordinate {
  double value;  // mod(y - offset, L) + offset
  double shift;  // floor((y - offset) / L) * L
};
WrappedCoordinate wrap_coordinate(double y, double period, double offset = 0.0);

/// Which periodic reductions a model supports. Time is wrapped when the
/// system has a period T and the training t0 interval covers [T0, T0 + T].
/// Component i is wrapped when L_i > 0 and the training box along y_i is at
/// least L_i wide; the window [c, c + L) is centred on that box.
struct WrapPlan {
  std::optional<double> period;
  double t_ref = 0.0;
  std::vector<double> lengths;  // 0 = not wrapped
  std::vector<double> offsets;

  bool wraps_time() const noexcept { return period.has_value(); }
  bool wraps_state() const noexcept;
};
WrapPlan make_wrap_plan(const DecomposedModel& model);

/// Single-step driver over a (decomposed) model. Explicit kinds use the
/// compiled evaluator; backward-trained models solve y_k = psi(y_{k+1},
/// t_{k+1}, -h) by Newton. Holds per-thread scratch buffers.
class Stepper {
public:
  Stepper(const DecomposedModel& model, bool periodicity_exploit = true, bool allow_extrapolation = false);

  /// y_{k+1} from (y_k, t_k) with step h in (0, h_max] of the governing sub-model.
  Vec step(const Vec& y, double t, double h);

  /// Sub-domain that governs (y, t) after periodic reduction.
  int locate(const Vec& y, double t) const;
  double h_max(int id) const { return model_->subdomains[static_cast<std::size_t>(id)].h_max; }
  const WrapPlan& wrap_plan() const noexcept { return plan_; }

private:
  struct Reduced {
    Vec y;
    double t;
    Vec shift;
  };
  Reduced reduce(const Vec& y, double t) const;
  Vec step_local(int id, const Vec& y, double t, double h);

  const DecomposedModel* model_;
  WrapPlan plan_;
  bool extrapolate_;
  mutable bool warned_ = false;  // extrapolation is reported once per stepper
  std::vector<CompiledModel> compiled_;
};

/// One step of a single model, no dispatch or wrapping.
Vec step(const PsiModel& model, const Vec& y, double t, double h);

/// Step with periodic reduction; throws invalid-argument when the system
/// carries no periodicity metadata.
Vec step_periodic(const DecomposedModel& model, const Vec& y, double t, double h);

/// Backward-trained model: solves y = psi(x, t + h, -h) for x.
Vec implicit_backward_step(const PsiModel& model, const Vec& y, double t, double h);

struct StepRecord {
  double t;
  double h;
  int subdomain;
  Vec y;  // state at the start of the step
};

Trajectory march(const DecomposedModel& model, const Vec& y0, const MarchConfig& cfg,
                 std::vector<StepRecord>* log = nullptr);
Trajectory march(const PsiModel& model, const Vec& y0, const MarchConfig& cfg);

/// h = safety * h_max of the sub-domain holding the current state; the last
/// step is clamped onto tf.
Trajectory march_quasi_adaptive(const DecomposedModel& model, const Vec& y0, double t0, double tf,
                                double safety = 0.95, std::vector<StepRecord>* log = nullptr);

}  // namespace psiflow
