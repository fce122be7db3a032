#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "psiflow/error.hpp"

namespace psiflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Closed interval [lo, hi].
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double width() const noexcept { return hi - lo; }
  double mid() const noexcept { return 0.5 * (lo + hi); }
  bool contains(double x) const noexcept { return x >= lo && x <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Right-hand side f(y, t) of dy/dt = f(y, t) together with its derivatives
/// and periodicity metadata.
///
/// Callbacks write into caller-provided storage so hot loops never allocate.
/// The Jacobian is row-major: jac[i * n + j] = df_i / dy_j.
///
/// Global existence and uniqueness of solutions on the whole real line is a
/// caller obligation; it is what makes the periodicity relations of the flow
/// map hold and cannot be checked here.
struct IvpSystem {
  using RhsFn = std::function<void(std::span<const double> y, double t, std::span<double> out)>;
  using JacFn = std::function<void(std::span<const double> y, double t, std::span<double> jac)>;

  std::string name;
  std::map<std::string, double> params;
  int dim = 0;
  bool autonomous = false;
  RhsFn rhs;
  JacFn jac_y;
  RhsFn jac_t;
  std::optional<double> temporal_period;
  std::vector<double> periodicity;  // L_i, 0 marks a non-periodic component

  Vec eval(const Vec& y, double t) const;
  Mat jacobian_y(const Vec& y, double t) const;
  Vec jacobian_t(const Vec& y, double t) const;

  bool has_state_periodicity() const noexcept;
  double period_of(int i) const noexcept {
    return periodicity.empty() ? 0.0 : periodicity[static_cast<std::size_t>(i)];
  }
};

/// Fills missing jac_y / jac_t with central differences, step 1e-6 * max(1, |x|).
/// Catalog systems ship analytic derivatives; this is for user-defined ones.
IvpSystem with_fd_derivatives(IvpSystem sys);

/// Validates structural fields (dimension, callbacks, periodicity vector).
void validate(const IvpSystem& sys);

Vec eval_rhs(const IvpSystem& sys, const Vec& y, double t);

enum class XiSign { forward, backward };

/// Training box for one (local) model: y0 box, t0 interval (ignored for
/// autonomous systems) and the xi-range [0, h_max] or [-h_max, 0].
struct TrainingDomain {
  std::vector<Interval> y0_box;
  std::optional<Interval> t0_interval;
  double h_max = 0.0;
  XiSign xi_sign = XiSign::forward;

  Interval xi_interval() const noexcept {
    return xi_sign == XiSign::forward ? Interval{0.0, h_max} : Interval{-h_max, 0.0};
  }
  int dim() const noexcept { return static_cast<int>(y0_box.size()); }
  bool contains(const Vec& y, double t) const noexcept;
  void validate() const;
  friend bool operator==(const TrainingDomain&, const TrainingDomain&) = default;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;

  std::size_t size() const noexcept { return times.size(); }
  void push(double t, Vec y) {
    times.push_back(t);
    states.push_back(std::move(y));
  }
  void validate() const;
};

struct ErrorReport {
  double e_max = 0.0;
  double e_rms = 0.0;
  double wall_time_seconds = 0.0;
};

/// Absolute tolerance used when comparing time grids.
inline constexpr double kGridTolerance = 1e-12;

/// Max and root-mean-square pointwise deviation over every component and
/// recorded time. Grids must agree to kGridTolerance.
ErrorReport error_metrics(const Trajectory& candidate, const Trajectory& reference);

/// Trajectory as CSV: header "t,y1,...,yn", 17 significant digits.
std::string to_csv(const Trajectory& traj);
void write_csv(const Trajectory& traj, const std::string& path);

inline std::span<const double> as_span(const Vec& v) noexcept {
  return {v.data(), static_cast<std::size_t>(v.size())};
}
inline std::span<double> as_span(Vec& v) noexcept {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace psiflow
