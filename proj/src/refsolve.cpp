#include "psiflow/refsolve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace psiflow {

void Tolerances::validate() const { require(atol > 0.0 && rtol > 0.0, "atol and rtol must be positive"); }

LinearSolution solve_linear(const Mat& a, const Vec& b) {
  require(a.rows() == a.cols(), "solve_linear needs a square matrix");
  require(a.rows() == b.size(), "right-hand side length does not match the matrix");
  if (!a.allFinite() || !b.allFinite()) fail(ErrorKind::linear_solver_failure, "non-finite linear system");
  Eigen::PartialPivLU<Mat> lu(a);
  const double rcond = a.size() == 0 ? 1.0 : lu.rcond();
  if (!(rcond > std::numeric_limits<double>::epsilon()))
    fail(ErrorKind::linear_solver_failure, fmt::format("matrix is singular to working precision (rcond {:.3g})", rcond));
  LinearSolution sol{lu.solve(b), rcond, rcond < kIllConditionedRcond};
  if (sol.ill_conditioned) spdlog::warn("ill-conditioned linear system: rcond {:.3g}", rcond);
  return sol;
}

NewtonResult newton_root(const VecFn& f, const MatFn& jac, Vec x0, double tol, int max_iter) {
  NewtonResult res;
  res.x = std::move(x0);
  Vec fx = f(res.x);
  res.residual_norm = fx.lpNorm<Eigen::Infinity>();
  while (!(res.residual_norm <= tol)) {
    if (!std::isfinite(res.residual_norm))
      fail(ErrorKind::stage_solver_failure, fmt::format("non-finite residual at Newton iteration {}", res.iterations));
    if (res.iterations >= max_iter)
      fail(ErrorKind::stage_solver_failure,
           fmt::format("Newton did not converge in {} iterations (residual {:.3e}, tol {:.3e})", max_iter,
                       res.residual_norm, tol));
    const Vec dx = solve_linear(jac(res.x), -fx).x;
    // The correction bounds the error in x; F itself may sit on an evaluation
    // noise floor above tol when its terms are large.
    if (dx.lpNorm<Eigen::Infinity>() <= tol * std::max(1.0, res.x.lpNorm<Eigen::Infinity>())) {
      res.x += dx;
      res.residual_norm = f(res.x).lpNorm<Eigen::Infinity>();
      ++res.iterations;
      break;
    }
    double lambda = 1.0;
    Vec trial = res.x + dx;
    Vec ft = f(trial);
    double norm = ft.lpNorm<Eigen::Infinity>();
    while (!(norm < res.residual_norm) && lambda > 1.0 / 1024.0) {
      lambda *= 0.5;
      trial = res.x + lambda * dx;
      ft = f(trial);
      norm = ft.lpNorm<Eigen::Infinity>();
    }
    res.x = std::move(trial);
    fx = std::move(ft);
    res.residual_norm = norm;
    ++res.iterations;
  }
  return res;
}

std::vector<double> uniform_grid(double t0, double tf, double dt) {
  require(tf >= t0, "final time precedes the start time");
  require(dt > 0.0, "step must be positive");
  std::vector<double> grid{t0};
  for (long k = 1;; ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    if (t >= tf - kGridTolerance) break;
    grid.push_back(t);
  }
  if (tf > t0) grid.push_back(tf);
  return grid;
}

namespace {

void check_finite(const Vec& y, double t) {
  if (!y.allFinite()) fail(ErrorKind::numeric_failure, fmt::format("non-finite state at t = {}", t));
}

void check_grid(const IvpSystem& sys, const Vec& y0, const std::vector<double>& grid, const Tolerances& tol) {
  require(y0.size() == sys.dim, "initial state has the wrong dimension");
  require(!grid.empty(), "output grid is empty");
  for (std::size_t k = 1; k < grid.size(); ++k) require(grid[k] > grid[k - 1], "output grid must be increasing");
  tol.validate();
}

double error_norm(const Vec& err, const Vec& y_old, const Vec& y_new, const Tolerances& tol) {
  const Vec sc = (tol.atol + tol.rtol * y_old.cwiseAbs().cwiseMax(y_new.cwiseAbs()).array()).matrix();
  return std::sqrt((err.array() / sc.array()).square().mean());
}

// Starting step after Hairer, Norsett & Wanner, section II.4. Falls back to
// the whole span when the right-hand side vanishes at and near the start.
double initial_step(const IvpSystem& sys, const Vec& y0, double t0, double span, int order, const Tolerances& tol,
                    long& evals) {
  const Vec sc = (tol.atol + tol.rtol * y0.cwiseAbs().array()).matrix();
  const Vec f0 = sys.eval(y0, t0);
  const double d0 = std::sqrt((y0.array() / sc.array()).square().mean());
  const double d1 = std::sqrt((f0.array() / sc.array()).square().mean());
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  const Vec f1 = sys.eval(y0 + h0 * f0, t0 + h0);
  evals += 2;
  const double d2 = std::sqrt(((f1 - f0).array() / sc.array()).square().mean()) / h0;
  if (std::max(d1, d2) <= 1e-15) return span;
  const double h1 = std::pow(0.01 / std::max(d1, d2), 1.0 / (order + 1));
  return std::min({100.0 * h0, h1, span});
}

struct PiController {
  double k;
  double err_prev = 1e-4;

  double factor(double err) const {
    if (err == 0.0) return 10.0;
    const double fac = 0.9 * std::pow(err, -0.7 / k) * std::pow(err_prev, 0.4 / k);
    return std::clamp(fac, 0.2, 10.0);
  }
  void accept(double err) { err_prev = std::max(err, 1e-4); }
};

double min_step(double t) { return 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t)); }

// Dormand-Prince tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784, a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace

Trajectory rk4_fixed(const IvpSystem& sys, const Vec& y0, double t0, double tf, double h) {
  require(h > 0.0, "step must be positive");
  require(y0.size() == sys.dim, "initial state has the wrong dimension");
  const auto grid = uniform_grid(t0, tf, h);
  Trajectory traj;
  Vec y = y0;
  traj.push(grid.front(), y);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double t = grid[k - 1];
    const double dt = grid[k] - t;
    const Vec k1 = sys.eval(y, t);
    const Vec k2 = sys.eval(y + 0.5 * dt * k1, t + 0.5 * dt);
    const Vec k3 = sys.eval(y + 0.5 * dt * k2, t + 0.5 * dt);
    const Vec k4 = sys.eval(y + dt * k3, t + dt);
    y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    check_finite(y, grid[k]);
    traj.push(grid[k], y);
  }
  return traj;
}

Trajectory dp54_adaptive(const IvpSystem& sys, const Vec& y0, const std::vector<double>& grid, Tolerances tol,
                         AdaptiveOptions opts) {
  check_grid(sys, y0, grid, tol);
  AdaptiveStats stats;
  Trajectory traj;
  Vec y = y0;
  double t = grid.front();
  traj.push(t, y);
  if (grid.size() == 1) return traj;

  const double span = grid.back() - t;
  double h = opts.h_init > 0.0 ? opts.h_init : initial_step(sys, y, t, span, 5, tol, stats.rhs_evals);
  PiController ctl{5.0};
  Vec k1 = sys.eval(y, t);
  ++stats.rhs_evals;
  int stiff_count = 0, nonstiff_count = 0;
  long steps = 0;

  for (std::size_t g = 1; g < grid.size(); ++g) {
    const double target = grid[g];
    bool rejected_last = false;
    while (t < target) {
      if (++steps > opts.max_steps)
        fail(ErrorKind::stiffness_failure,
             fmt::format("DP54 exceeded {} steps at t = {}; the problem is likely stiff", opts.max_steps, t));
      if (h < min_step(t))
        fail(ErrorKind::stiffness_failure, fmt::format("DP54 step size underflow at t = {} (h = {:.3e})", t, h));
      double dt = h;
      bool lands = false;
      if (t + dt >= target || target - (t + dt) < min_step(target)) {
        dt = target - t;
        lands = true;
      }
      const Vec k2 = sys.eval(y + dt * a21 * k1, t + c2 * dt);
      const Vec k3 = sys.eval(y + dt * (a31 * k1 + a32 * k2), t + c3 * dt);
      const Vec k4 = sys.eval(y + dt * (a41 * k1 + a42 * k2 + a43 * k3), t + c4 * dt);
      const Vec k5 = sys.eval(y + dt * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), t + c5 * dt);
      const Vec y6 = y + dt * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
      const Vec k6 = sys.eval(y6, t + dt);
      const Vec y_new = y + dt * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
      const double t_new = lands ? target : t + dt;
      const Vec k7 = sys.eval(y_new, t_new);
      stats.rhs_evals += 6;
      const Vec err = dt * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      const double en = error_norm(err, y, y_new, tol);
      if (!std::isfinite(en)) {
        ++stats.rejected;
        h = 0.2 * dt;
        rejected_last = true;
        continue;
      }
      double fac = ctl.factor(en);
      if (en <= 1.0) {
        ++stats.accepted;
        ctl.accept(en);
        if (opts.detect_stiffness) {
          const double den = (y_new - y6).squaredNorm();
          if (den > 0.0) {
            const double hlamb = dt * std::sqrt((k7 - k6).squaredNorm() / den);
            if (hlamb > 3.25) {
              nonstiff_count = 0;
              if (++stiff_count >= 15)
                fail(ErrorKind::stiffness_failure,
                     fmt::format("DP54 is stability-limited at t = {} (h = {:.3e}); the problem is stiff", t, dt));
            } else if (++nonstiff_count >= 6) {
              stiff_count = 0;
            }
          }
        }
        if (rejected_last) fac = std::min(fac, 1.0);
        y = y_new;
        k1 = k7;
        t = t_new;
        check_finite(y, t);
        // A step shortened to hit a grid time should not shrink the next one.
        h = lands ? std::max(h, dt * fac) : dt * fac;
        rejected_last = false;
      } else {
        ++stats.rejected;
        h = dt * std::min(fac, 1.0);
        rejected_last = true;
      }
    }
    traj.push(target, y);
  }
  if (opts.stats) *opts.stats = stats;
  return traj;
}

double sdirk2_stability(double z) {
  constexpr double g = 1.0 - 0.70710678118654752440;
  const double den = 1.0 - g * z;
  return (1.0 + (1.0 - 2.0 * g) * z) / (den * den);
}

namespace {

// Solves Y = base + gh f(Y, tc) and returns Y.
Vec sdirk_stage(const IvpSystem& sys, const Vec& base, double tc, double gh, const Vec& guess, double tol_scale) {
  const Vec f_base = sys.eval(base, tc);
  const double scale = 1.0 + base.lpNorm<Eigen::Infinity>() + std::abs(gh) * f_base.lpNorm<Eigen::Infinity>();
  const auto res = newton_root(
      [&](const Vec& y) -> Vec { return y - base - gh * sys.eval(y, tc); },
      [&](const Vec& y) -> Mat { return Mat::Identity(sys.dim, sys.dim) - gh * sys.jacobian_y(y, tc); }, guess,
      tol_scale * scale, 50);
  return res.x;
}

}  // namespace

Trajectory sdirk2_adaptive(const IvpSystem& sys, const Vec& y0, const std::vector<double>& grid, Tolerances tol,
                           AdaptiveOptions opts) {
  check_grid(sys, y0, grid, tol);
  constexpr double gamma = 1.0 - 0.70710678118654752440;
  const double stage_tol = std::max(1e-2 * std::min(tol.atol, tol.rtol), 4.0 * std::numeric_limits<double>::epsilon());
  AdaptiveStats stats;
  Trajectory traj;
  Vec y = y0;
  double t = grid.front();
  traj.push(t, y);
  if (grid.size() == 1) return traj;

  double h = opts.h_init > 0.0 ? opts.h_init
                               : initial_step(sys, y, t, grid.back() - t, 2, tol, stats.rhs_evals);
  PiController ctl{2.0};
  long steps = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    const double target = grid[g];
    bool rejected_last = false;
    while (t < target) {
      if (++steps > opts.max_steps)
        fail(ErrorKind::stiffness_failure, fmt::format("SDIRK2 exceeded {} steps at t = {}", opts.max_steps, t));
      if (h < min_step(t))
        fail(ErrorKind::stage_solver_failure, fmt::format("SDIRK2 step size underflow at t = {} (h = {:.3e})", t, h));
      double dt = h;
      bool lands = false;
      if (t + dt >= target || target - (t + dt) < min_step(target)) {
        dt = target - t;
        lands = true;
      }
      const double gh = gamma * dt;
      Vec y1, y2;
      try {
        y1 = sdirk_stage(sys, y, t + gh, gh, y, stage_tol);
        const Vec k1 = (y1 - y) / gh;
        const Vec base2 = y + (1.0 - gamma) * dt * k1;
        y2 = sdirk_stage(sys, base2, t + dt, gh, y + dt * k1, stage_tol);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::stage_solver_failure && e.kind() != ErrorKind::linear_solver_failure) throw;
        ++stats.rejected;
        h = 0.25 * dt;
        rejected_last = true;
        continue;
      }
      const Vec k1 = (y1 - y) / gh;
      const Vec base2 = y + (1.0 - gamma) * dt * k1;
      const Vec k2 = (y2 - base2) / gh;
      const Vec err = gh * (k2 - k1);
      const double en = error_norm(err, y, y2, tol);
      double fac = ctl.factor(en);
      if (en <= 1.0) {
        ++stats.accepted;
        ctl.accept(en);
        if (rejected_last) fac = std::min(fac, 1.0);
        y = y2;
        t = lands ? target : t + dt;
        check_finite(y, t);
        h = lands ? std::max(h, dt * fac) : dt * fac;
        rejected_last = false;
      } else {
        ++stats.rejected;
        h = dt * std::min(fac, 1.0);
        rejected_last = true;
      }
    }
    traj.push(target, y);
  }
  if (opts.stats) *opts.stats = stats;
  return traj;
}

Vec dp54_flow(const IvpSystem& sys, const Vec& y0, double t0, double t1, Tolerances tol) {
  if (t1 == t0) return y0;
  require(t1 > t0, "dp54_flow integrates forward in time only");
  return dp54_adaptive(sys, y0, {t0, t1}, tol).states.back();
}

}  // namespace psiflow
