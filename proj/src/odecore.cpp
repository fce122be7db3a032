#include "psiflow/odecore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace psiflow {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::stage_solver_failure: return "stage-solver-failure";
    case ErrorKind::linear_solver_failure: return "linear-solver-failure";
    case ErrorKind::numeric_failure: return "numeric-failure";
    case ErrorKind::stiffness_failure: return "stiffness-failure";
    case ErrorKind::out_of_domain: return "out-of-domain";
    case ErrorKind::metadata_absent: return "metadata-absent";
    case ErrorKind::io_failure: return "io-failure";
    case ErrorKind::version_mismatch: return "version-mismatch";
    case ErrorKind::checksum_mismatch: return "checksum-mismatch";
  }
  return "unknown";
}

Vec IvpSystem::eval(const Vec& y, double t) const {
  Vec out(dim);
  rhs(as_span(y), t, as_span(out));
  return out;
}

Mat IvpSystem::jacobian_y(const Vec& y, double t) const {
  RowMat jac(dim, dim);
  jac_y(as_span(y), t, {jac.data(), static_cast<std::size_t>(dim * dim)});
  return jac;
}

Vec IvpSystem::jacobian_t(const Vec& y, double t) const {
  Vec out(dim);
  jac_t(as_span(y), t, as_span(out));
  return out;
}

bool IvpSystem::has_state_periodicity() const noexcept {
  return std::any_of(periodicity.begin(), periodicity.end(), [](double l) { return l > 0.0; });
}

namespace {

double fd_step(double x) { return 1e-6 * std::max(1.0, std::abs(x)); }

}  // namespace

IvpSystem with_fd_derivatives(IvpSystem sys) {
  require(static_cast<bool>(sys.rhs), "system has no right-hand side");
  const int n = sys.dim;
  auto rhs = sys.rhs;
  if (!sys.jac_y) {
    sys.jac_y = [rhs, n](std::span<const double> y, double t, std::span<double> jac) {
      std::vector<double> yp(y.begin(), y.end()), fp(n), fm(n);
      for (int j = 0; j < n; ++j) {
        const double h = fd_step(y[j]);
        yp[j] = y[j] + h;
        rhs(yp, t, fp);
        yp[j] = y[j] - h;
        rhs(yp, t, fm);
        yp[j] = y[j];
        for (int i = 0; i < n; ++i) jac[i * n + j] = (fp[i] - fm[i]) / (2.0 * h);
      }
    };
  }
  if (!sys.jac_t) {
    if (sys.autonomous) {
      sys.jac_t = [](std::span<const double>, double, std::span<double> out) {
        std::fill(out.begin(), out.end(), 0.0);
      };
    } else {
      sys.jac_t = [rhs, n](std::span<const double> y, double t, std::span<double> out) {
        std::vector<double> fp(n), fm(n);
        const double h = fd_step(t);
        rhs(y, t + h, fp);
        rhs(y, t - h, fm);
        for (int i = 0; i < n; ++i) out[i] = (fp[i] - fm[i]) / (2.0 * h);
      };
    }
  }
  return sys;
}

void validate(const IvpSystem& sys) {
  require(sys.dim > 0, "system dimension must be positive");
  require(sys.rhs && sys.jac_y && sys.jac_t, "system '" + sys.name + "' lacks rhs or derivative callbacks");
  require(sys.periodicity.empty() || static_cast<int>(sys.periodicity.size()) == sys.dim,
          "periodicity vector length must equal the system dimension");
  for (double l : sys.periodicity) require(l >= 0.0, "periodicity entries must be non-negative");
  if (sys.temporal_period) require(*sys.temporal_period > 0.0, "temporal period must be positive");
  require(!(sys.autonomous && sys.temporal_period), "an autonomous system cannot carry a temporal period");
}

Vec eval_rhs(const IvpSystem& sys, const Vec& y, double t) {
  if (y.size() != sys.dim)
    fail(ErrorKind::invalid_argument,
         fmt::format("state has dimension {} but system '{}' has dimension {}", y.size(), sys.name, sys.dim));
  return sys.eval(y, t);
}

bool TrainingDomain::contains(const Vec& y, double t) const noexcept {
  if (y.size() != dim()) return false;
  for (int i = 0; i < dim(); ++i)
    if (!y0_box[static_cast<std::size_t>(i)].contains(y[i])) return false;
  return !t0_interval || t0_interval->contains(t);
}

void TrainingDomain::validate() const {
  require(!y0_box.empty(), "training domain needs at least one state axis");
  for (const auto& iv : y0_box) require(iv.lo < iv.hi, "training box intervals must satisfy a < b");
  if (t0_interval) require(t0_interval->lo < t0_interval->hi, "t0 interval must satisfy T0 < Tf");
  require(h_max > 0.0, "h_max must be positive");
}

void Trajectory::validate() const {
  require(times.size() == states.size(), "trajectory times and states differ in length");
  for (std::size_t k = 1; k < times.size(); ++k)
    require(times[k] > times[k - 1], "trajectory times must be strictly increasing");
}

ErrorReport error_metrics(const Trajectory& candidate, const Trajectory& reference) {
  if (candidate.size() != reference.size())
    fail(ErrorKind::invalid_argument,
         fmt::format("trajectory lengths differ: {} vs {}", candidate.size(), reference.size()));
  ErrorReport rep;
  if (candidate.size() == 0) return rep;
  const auto n = candidate.states.front().size();
  double sum_sq = 0.0;
  for (std::size_t k = 0; k < candidate.size(); ++k) {
    if (std::abs(candidate.times[k] - reference.times[k]) > kGridTolerance)
      fail(ErrorKind::invalid_argument,
           fmt::format("time grids differ at index {}: {} vs {}", k, candidate.times[k], reference.times[k]));
    if (candidate.states[k].size() != n || reference.states[k].size() != n)
      fail(ErrorKind::invalid_argument, fmt::format("state dimension mismatch at index {}", k));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = std::abs(candidate.states[k][i] - reference.states[k][i]);
      rep.e_max = std::max(rep.e_max, d);
      sum_sq += d * d;
    }
  }
  rep.e_rms = std::sqrt(sum_sq / (static_cast<double>(n) * static_cast<double>(candidate.size())));
  // The rms of values bounded by e_max cannot exceed it; clamp rounding noise.
  rep.e_rms = std::min(rep.e_rms, rep.e_max);
  return rep;
}

std::string to_csv(const Trajectory& traj) {
  std::ostringstream os;
  const auto n = traj.states.empty() ? 0 : traj.states.front().size();
  os << "t";
  for (Eigen::Index i = 0; i < n; ++i) os << ",y" << (i + 1);
  os << '\n';
  for (std::size_t k = 0; k < traj.size(); ++k) {
    os << fmt::format("{:.17g}", traj.times[k]);
    for (Eigen::Index i = 0; i < n; ++i) os << fmt::format(",{:.17g}", traj.states[k][i]);
    os << '\n';
  }
  return os.str();
}

void write_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io_failure, "cannot open " + path + " for writing");
  out << to_csv(traj);
  if (!out) fail(ErrorKind::io_failure, "failed writing " + path);
}

}  // namespace psiflow
