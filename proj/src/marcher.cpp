#include "psiflow/marcher.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "psiflow/refsolve.hpp"

namespace psiflow {

void MarchConfig::validate() const {
  require(tf >= t0, "final time precedes the start time");
  if (mode == Mode::fixed) require(dt > 0.0, "fixed-step marching needs dt > 0");
  else require(safety > 0.0 && safety <= 1.0, "safety factor must lie in (0, 1]");
}

double wrap_time(double t, double period, double t_ref) {
  require(period > 0.0, "period must be positive");
  double r = std::fmod(t - t_ref, period);
  if (r < 0.0) r += period;
  return r + t_ref;
}

WrappedCoordinate wrap_coordinate(double y, double period, double offset) {
  require(period > 0.0, "period must be positive");
  const double q = std::floor((y - offset) / period);
  double v = (y - offset) - q * period;
  // Guard the half-open window against rounding at its upper end.
  if (v >= period) v -= period;
  if (v < 0.0) v = 0.0;
  return {v + offset, q * period};
}

bool WrapPlan::wraps_state() const noexcept {
  return std::any_of(lengths.begin(), lengths.end(), [](double l) { return l > 0.0; });
}

WrapPlan make_wrap_plan(const DecomposedModel& model) {
  const IvpSystem& sys = model.models.front().system;
  const TrainingDomain& box = model.partition.domain;
  WrapPlan plan;
  plan.lengths.assign(static_cast<std::size_t>(sys.dim), 0.0);
  plan.offsets.assign(static_cast<std::size_t>(sys.dim), 0.0);
  if (sys.temporal_period && box.t0_interval && box.t0_interval->width() >= *sys.temporal_period) {
    plan.period = *sys.temporal_period;
    plan.t_ref = box.t0_interval->lo;
  }
  for (int i = 0; i < sys.dim; ++i) {
    const double l = sys.period_of(i);
    const Interval& iv = box.y0_box[static_cast<std::size_t>(i)];
    if (l > 0.0 && iv.width() >= l) {
      plan.lengths[static_cast<std::size_t>(i)] = l;
      plan.offsets[static_cast<std::size_t>(i)] = iv.mid() - 0.5 * l;
    }
  }
  return plan;
}

namespace {

std::string describe(const Vec& y) {
  return fmt::format("[{}]", fmt::join(std::vector<double>(y.data(), y.data() + y.size()), ", "));
}

void check_step_size(const PsiModel& model, double h) {
  if (!(h > 0.0) || h > model.domain.h_max * (1.0 + 1e-12))
    fail(ErrorKind::invalid_argument,
         fmt::format("step {} outside (0, h_max = {}] of the governing model", h, model.domain.h_max));
}

// d psi / d y0 at (x, t, xi) for explicit kinds.
Mat psi_state_jacobian(const PsiModel& model, const Vec& x, double t, double xi) {
  const IvpSystem& sys = model.system;
  const int n = sys.dim;
  const Mat eye = Mat::Identity(n, n);
  Mat dF;
  switch (model.kind) {
    case RepKind::exp_s0: dF = eye; break;
    case RepKind::exp_s1: dF = eye + xi * sys.jacobian_y(x, t); break;
    case RepKind::exp_s2: {
      const Vec k1 = sys.eval(x, t);
      const Vec mid = x + 0.5 * xi * k1;
      dF = eye + xi * sys.jacobian_y(mid, t + 0.5 * xi) * (eye + 0.5 * xi * sys.jacobian_y(x, t));
      break;
    }
    default:
      fail(ErrorKind::invalid_argument, "backward-trained models must use an explicit representation");
  }
  const Vec raw = model.normalizer.raw_input(x, t, xi);
  const Mat dphi = hidden_features_dinput(model.subnet, model.normalizer, raw);
  double p = xi;
  for (int i = 0; i < model.order(); ++i) p *= xi;
  return dF + p * (model.subnet.beta * dphi.leftCols(n));
}

}  // namespace

Vec implicit_backward_step(const PsiModel& model, const Vec& y, double t, double h) {
  require(model.domain.xi_sign == XiSign::backward, "model was not trained on negative xi");
  const double t1 = t + h;
  const Vec guess = y + h * model.system.eval(y, t);
  const double tol = 1e-12 * std::max(1.0, y.lpNorm<Eigen::Infinity>());
  return newton_root([&](const Vec& x) -> Vec { return eval_psi(model, x, t1, -h) - y; },
                     [&](const Vec& x) -> Mat { return psi_state_jacobian(model, x, t1, -h); }, guess, tol, 50)
      .x;
}

Vec step(const PsiModel& model, const Vec& y, double t, double h) {
  check_step_size(model, h);
  if (model.domain.xi_sign == XiSign::backward) return implicit_backward_step(model, y, t, h);
  return eval_psi(model, y, t, h);
}

Stepper::Stepper(const DecomposedModel& model, bool periodicity_exploit, bool allow_extrapolation)
    : model_(&model), extrapolate_(allow_extrapolation) {
  model.validate();
  require(model.size() > 0, "decomposed model has no local models");
  if (periodicity_exploit) plan_ = make_wrap_plan(model);
  else {
    plan_.lengths.assign(static_cast<std::size_t>(model.models.front().system.dim), 0.0);
    plan_.offsets = plan_.lengths;
  }
  compiled_.reserve(model.models.size());
  for (const auto& m : model.models) compiled_.emplace_back(m);
}

Stepper::Reduced Stepper::reduce(const Vec& y, double t) const {
  Reduced r{y, t, Vec::Zero(y.size())};
  if (plan_.period) r.t = wrap_time(t, *plan_.period, plan_.t_ref);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double l = plan_.lengths[static_cast<std::size_t>(i)];
    if (l <= 0.0) continue;
    const auto w = wrap_coordinate(y[i], l, plan_.offsets[static_cast<std::size_t>(i)]);
    r.y[i] = w.value;
    r.shift[i] = w.shift;
  }
  return r;
}

int Stepper::locate(const Vec& y, double t) const {
  const Reduced r = reduce(y, t);
  const Partition& part = model_->partition;
  try {
    return psiflow::locate(part, r.y, r.t);
  } catch (const Error& e) {
    if (!extrapolate_ || e.kind() != ErrorKind::out_of_domain) throw;
    if (!warned_) spdlog::warn("{}; extrapolating from the nearest sub-domain", e.what());
    warned_ = true;
    Vec yc = r.y;
    for (Eigen::Index i = 0; i < yc.size(); ++i) {
      const auto& b = part.boundaries[static_cast<std::size_t>(i)];
      yc[i] = std::clamp(yc[i], b.front(), b.back());
    }
    double tc = r.t;
    if (part.domain.t0_interval) tc = std::clamp(tc, part.domain.t0_interval->lo, part.domain.t0_interval->hi);
    return psiflow::locate(part, yc, tc);
  }
}

Vec Stepper::step_local(int id, const Vec& y, double t, double h) {
  const PsiModel& m = model_->models[static_cast<std::size_t>(id)];
  if (!(h > 0.0) || h > model_->subdomains[static_cast<std::size_t>(id)].h_max * (1.0 + 1e-12))
    fail(ErrorKind::invalid_argument, fmt::format("step {} outside (0, h_max = {}] of sub-domain {}", h,
                                                  model_->subdomains[static_cast<std::size_t>(id)].h_max, id));
  if (m.domain.xi_sign == XiSign::backward) return implicit_backward_step(m, y, t, h);
  return compiled_[static_cast<std::size_t>(id)](y, t, h);
}

Vec Stepper::step(const Vec& y, double t, double h) {
  const Reduced r = reduce(y, t);
  const int id = locate(y, t);
  Vec next = step_local(id, r.y, r.t, h);
  next += r.shift;
  if (!next.allFinite())
    fail(ErrorKind::numeric_failure, fmt::format("non-finite state after stepping from t = {}", t));
  return next;
}

Vec step_periodic(const DecomposedModel& model, const Vec& y, double t, double h) {
  const IvpSystem& sys = model.models.front().system;
  if (!sys.temporal_period && !sys.has_state_periodicity())
    fail(ErrorKind::invalid_argument, fmt::format("system '{}' carries no periodicity metadata", sys.name));
  Stepper stepper(model, true, false);
  return stepper.step(y, t, h);
}

namespace {

[[noreturn]] void rethrow_at_step(const Error& e, std::size_t k, double t, const Vec& y) {
  fail(e.kind(), fmt::format("step {} from t = {}, y = {}: {}", k, t, describe(y), e.what()));
}

}  // namespace

Trajectory march(const DecomposedModel& model, const Vec& y0, const MarchConfig& cfg, std::vector<StepRecord>* log) {
  cfg.validate();
  if (cfg.mode == MarchConfig::Mode::quasi_adaptive)
    return march_quasi_adaptive(model, y0, cfg.t0, cfg.tf, cfg.safety, log);
  Stepper stepper(model, cfg.periodicity_exploit, cfg.allow_extrapolation);
  for (const auto& sub : model.subdomains)
    require(cfg.dt <= sub.h_max * (1.0 + 1e-12),
            fmt::format("dt = {} exceeds h_max = {} of sub-domain {}", cfg.dt, sub.h_max, sub.id));
  const auto grid = uniform_grid(cfg.t0, cfg.tf, cfg.dt);
  Trajectory traj;
  Vec y = y0;
  traj.push(grid.front(), y);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double t = grid[k - 1];
    const double h = grid[k] - t;
    try {
      if (log) log->push_back({t, h, stepper.locate(y, t), y});
      y = stepper.step(y, t, h);
    } catch (const Error& e) {
      rethrow_at_step(e, k - 1, t, y);
    }
    traj.push(grid[k], y);
  }
  return traj;
}

Trajectory march(const PsiModel& model, const Vec& y0, const MarchConfig& cfg) {
  return march(as_decomposed(model), y0, cfg);
}

Trajectory march_quasi_adaptive(const DecomposedModel& model, const Vec& y0, double t0, double tf, double safety,
                                std::vector<StepRecord>* log) {
  require(tf >= t0, "final time precedes the start time");
  require(safety > 0.0 && safety <= 1.0, "safety factor must lie in (0, 1]");
  Stepper stepper(model, true, false);
  Trajectory traj;
  Vec y = y0;
  double t = t0;
  traj.push(t, y);
  for (std::size_t k = 0; t < tf - kGridTolerance; ++k) {
    try {
      const int id = stepper.locate(y, t);
      double h = safety * stepper.h_max(id);
      const bool last = t + h >= tf - kGridTolerance;
      if (last) h = tf - t;
      if (log) log->push_back({t, h, id, y});
      y = stepper.step(y, t, h);
      t = last ? tf : t + h;
    } catch (const Error& e) {
      rethrow_at_step(e, k, t, y);
    }
    traj.push(t, y);
  }
  return traj;
}

}  // namespace psiflow
