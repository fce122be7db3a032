#pragma once

#include <functional>
#include <vector>

#include "psiflow/odecore.hpp"

namespace psiflow {

struct Tolerances {
  double atol = 1e-12;
  double rtol = 1e-12;
  void validate() const;
};

/// Reciprocal condition estimate below which a solve is flagged.
inline constexpr double kIllConditionedRcond = 1e-8;

struct LinearSolution {
  Vec x;
  double rcond = 0.0;
  bool ill_conditioned = false;
};

/// Partial-pivoting LU solve. Throws linear-solver-failure when A is
/// singular to working precision; logs a warning when rcond < 1e-8.
LinearSolution solve_linear(const Mat& a, const Vec& b);

struct NewtonResult {
  Vec x;
  int iterations = 0;
  double residual_norm = 0.0;
};

using VecFn = std::function<Vec(const Vec&)>;
using MatFn = std::function<Mat(const Vec&)>;

/// Newton iteration until ||F(x)||_inf <= tol or the Newton correction is
/// below tol * max(1, ||x||_inf), with step halving while the residual fails to decrease.
/// Throws stage-solver-failure after max_iter.
NewtonResult newton_root(const VecFn& f, const MatFn& jac, Vec x0, double tol = 1e-12, int max_iter = 50);

/// Record times t0, t0 + dt, ... strictly below tf, then tf itself.
std::vector<double> uniform_grid(double t0, double tf, double dt);

/// Classic four-stage Runge-Kutta with the last step clamped onto tf.
Trajectory rk4_fixed(const IvpSystem& sys, const Vec& y0, double t0, double tf, double h);

struct AdaptiveStats {
  long accepted = 0;
  long rejected = 0;
  long rhs_evals = 0;
};

struct AdaptiveOptions {
  double h_init = 0.0;  // 0 selects a starting step automatically
  long max_steps = 1'000'000;
  bool detect_stiffness = true;  // explicit pair only
  AdaptiveStats* stats = nullptr;
};

/// Dormand-Prince 5(4) with a PI controller; steps are clamped so that every
/// grid time is hit exactly. The first grid entry is the start time.
/// Throws stiffness-failure when the step size collapses, the step budget is
/// exhausted, or the stability-limited regime persists.
Trajectory dp54_adaptive(const IvpSystem& sys, const Vec& y0, const std::vector<double>& grid, Tolerances tol,
                         AdaptiveOptions opts = {});

/// Two-stage, stiffly accurate SDIRK with gamma = 1 - sqrt(2)/2 and an
/// embedded first-order estimate; Newton stage solves use the analytic
/// Jacobian.
Trajectory sdirk2_adaptive(const IvpSystem& sys, const Vec& y0, const std::vector<double>& grid, Tolerances tol,
                           AdaptiveOptions opts = {});

/// Stability function of the SDIRK pair on dy/dt = z y / h.
double sdirk2_stability(double z);

/// Solution at t1 from (y0, t0) with DP54; convenience for flow oracles.
Vec dp54_flow(const IvpSystem& sys, const Vec& y0, double t0, double t1, Tolerances tol);

}  // namespace psiflow
