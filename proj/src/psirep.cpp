#include "psiflow/psirep.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "psiflow/refsolve.hpp"

namespace psiflow {

int order_of(RepKind kind) noexcept {
  switch (kind) {
    case RepKind::exp_s0: return 0;
    case RepKind::exp_s1:
    case RepKind::imp_s1: return 1;
    case RepKind::exp_s2:
    case RepKind::imp_s2: return 2;
  }
  return 0;
}

bool is_implicit(RepKind kind) noexcept { return kind == RepKind::imp_s1 || kind == RepKind::imp_s2; }

std::string_view to_string(RepKind kind) noexcept {
  switch (kind) {
    case RepKind::exp_s0: return "ExpS0";
    case RepKind::exp_s1: return "ExpS1";
    case RepKind::exp_s2: return "ExpS2";
    case RepKind::imp_s1: return "ImpS1";
    case RepKind::imp_s2: return "ImpS2";
  }
  return "unknown";
}

RepKind rep_kind_from_string(std::string_view name) {
  for (RepKind k : kAllRepKinds)
    if (to_string(k) == name) return k;
  fail(ErrorKind::invalid_argument, fmt::format("unknown representation '{}'", name));
}

void PsiModel::validate() const {
  psiflow::validate(system);
  domain.validate();
  require(domain.dim() == system.dim, "training box dimension differs from the system dimension");
  const int m0 = system.dim + (system.autonomous ? 1 : 2);
  require(subnet.input_dim() == m0,
          fmt::format("network input width {} does not match {} expected for this system", subnet.input_dim(), m0));
  require(subnet.output_dim() == system.dim, "network output width differs from the system dimension");
  require(subnet.beta.rows() == system.dim && subnet.beta.cols() == subnet.width(), "beta has the wrong shape");
  require(normalizer.input_dim() == m0, "normalizer input width does not match the network");
}

PsiModel make_model(IvpSystem system, TrainingDomain domain, RepKind kind, const ModelSpec& spec) {
  psiflow::validate(system);
  if (system.autonomous) domain.t0_interval.reset();
  require(system.autonomous || domain.t0_interval.has_value(), "non-autonomous systems need a t0 interval");
  domain.validate();
  require(domain.dim() == system.dim, "training box dimension differs from the system dimension");
  require(!spec.hidden.empty(), "at least one hidden layer is required");
  require(!(is_implicit(kind) && domain.xi_sign == XiSign::backward),
          "backward xi training is only defined for explicit representations");

  std::vector<int> arch{system.dim + (system.autonomous ? 1 : 2)};
  arch.insert(arch.end(), spec.hidden.begin(), spec.hidden.end());
  arch.push_back(system.dim);

  PsiModel model;
  model.kind = kind;
  model.subnet = init_subnet(std::move(arch), spec.rm, spec.seed, spec.activation, spec.stream_index);
  model.normalizer = Normalizer::from_domain(domain, spec.delta_m);
  model.system = std::move(system);
  model.domain = std::move(domain);
  return model;
}

namespace {

// Solves K = f(base + c K, tc) by Newton from the guess.
Vec solve_stage(const IvpSystem& sys, const Vec& base, double tc, double c, const Vec& guess) {
  const int n = sys.dim;
  const double tol = 1e-12 * (1.0 + guess.lpNorm<Eigen::Infinity>());
  return newton_root(
             [&](const Vec& k) -> Vec { return k - sys.eval(base + c * k, tc); },
             [&](const Vec& k) -> Mat { return Mat::Identity(n, n) - c * sys.jacobian_y(base + c * k, tc); },
             guess, tol, 50)
      .x;
}

double xi_power(double xi, int s) noexcept {
  double p = xi;
  for (int i = 0; i < s; ++i) p *= xi;
  return p;
}

}  // namespace

Vec solve_stage_K(const IvpSystem& sys, const Vec& y0, double t0, double xi) {
  require(y0.size() == sys.dim, "initial state has the wrong dimension");
  return solve_stage(sys, y0, t0 + xi, xi, sys.eval(y0, t0));
}

Vec solve_dK_dxi(const IvpSystem& sys, const Vec& y0, double t0, double xi, const Vec& k) {
  const Vec g = y0 + xi * k;
  const Mat jac = sys.jacobian_y(g, t0 + xi);
  const Mat lhs = Mat::Identity(sys.dim, sys.dim) - xi * jac;
  return solve_linear(lhs, jac * k + sys.jacobian_t(g, t0 + xi)).x;
}

DirkStages solve_dirk_stages(const IvpSystem& sys, const Vec& y0, double t0, double xi) {
  require(y0.size() == sys.dim, "initial state has the wrong dimension");
  constexpr double g = kDirkGamma;
  DirkStages st;
  const Vec f0 = sys.eval(y0, t0);
  st.k1 = solve_stage(sys, y0, t0 + g * xi, g * xi, f0);
  st.k2 = solve_stage(sys, y0 + (1.0 - g) * xi * st.k1, t0 + xi, g * xi, st.k1);
  return st;
}

DirkStages solve_dirk_stage_derivatives(const IvpSystem& sys, const Vec& y0, double t0, double xi,
                                        const DirkStages& stages) {
  constexpr double g = kDirkGamma;
  const int n = sys.dim;
  const Mat eye = Mat::Identity(n, n);
  const Vec g1 = y0 + g * xi * stages.k1;
  const Mat j1 = sys.jacobian_y(g1, t0 + g * xi);
  DirkStages d;
  d.k1 = solve_linear(eye - g * xi * j1, g * (j1 * stages.k1 + sys.jacobian_t(g1, t0 + g * xi))).x;
  const Vec g2 = y0 + (1.0 - g) * xi * stages.k1 + g * xi * stages.k2;
  const Mat j2 = sys.jacobian_y(g2, t0 + xi);
  const Vec rhs = j2 * ((1.0 - g) * (stages.k1 + xi * d.k1) + g * stages.k2) + sys.jacobian_t(g2, t0 + xi);
  d.k2 = solve_linear(eye - g * xi * j2, rhs).x;
  return d;
}

Baseline eval_baseline(RepKind kind, const IvpSystem& sys, const Vec& y0, double t0, double xi,
                       bool with_derivative) {
  require(y0.size() == sys.dim, "initial state has the wrong dimension");
  Baseline b;
  switch (kind) {
    case RepKind::exp_s0:
      b.f = y0;
      if (with_derivative) b.f_xi = Vec::Zero(sys.dim);
      break;
    case RepKind::exp_s1: {
      const Vec f0 = sys.eval(y0, t0);
      b.f = y0 + xi * f0;
      if (with_derivative) b.f_xi = f0;
      break;
    }
    case RepKind::exp_s2: {
      const Vec k1 = sys.eval(y0, t0);
      const Vec mid = y0 + 0.5 * xi * k1;
      const double tm = t0 + 0.5 * xi;
      const Vec k2 = sys.eval(mid, tm);
      b.f = y0 + xi * k2;
      if (with_derivative) b.f_xi = k2 + xi * 0.5 * (sys.jacobian_y(mid, tm) * k1 + sys.jacobian_t(mid, tm));
      break;
    }
    case RepKind::imp_s1: {
      const Vec k = solve_stage_K(sys, y0, t0, xi);
      b.f = y0 + xi * k;
      if (with_derivative) b.f_xi = k + xi * solve_dK_dxi(sys, y0, t0, xi, k);
      break;
    }
    case RepKind::imp_s2: {
      constexpr double g = kDirkGamma;
      const DirkStages st = solve_dirk_stages(sys, y0, t0, xi);
      b.f = y0 + (1.0 - g) * xi * st.k1 + g * xi * st.k2;
      if (with_derivative) {
        const DirkStages d = solve_dirk_stage_derivatives(sys, y0, t0, xi, st);
        b.f_xi = (1.0 - g) * (st.k1 + xi * d.k1) + g * (st.k2 + xi * d.k2);
      }
      break;
    }
  }
  return b;
}

Vec eval_F(const PsiModel& model, const Vec& y0, double t0, double xi) {
  return eval_baseline(model.kind, model.system, y0, t0, xi, false).f;
}

Vec eval_psi(const PsiModel& model, const Vec& y0, double t0, double xi) {
  Vec psi = eval_F(model, y0, t0, xi);
  psi += xi_power(xi, model.order()) * eval_varphi(model.subnet, model.normalizer, model.normalizer.raw_input(y0, t0, xi));
  return psi;
}

ResidualCache prepare_residual(const PsiModel& model, const CollocationSet& points) {
  const int n = model.system.dim;
  const bool has_t0 = model.normalizer.t0_interval.has_value();
  require(points.points.cols() == model.subnet.input_dim(), "collocation points have the wrong input dimension");
  const Eigen::Index q = points.size();

  ResidualCache c;
  c.n = n;
  c.order = model.order();
  c.f.resize(q, n);
  c.f_xi.resize(q, n);
  c.xi.resize(q);
  c.t.resize(q);
  for (Eigen::Index p = 0; p < q; ++p) {
    const Vec y0 = points.points.row(p).head(n).transpose();
    const double t0 = has_t0 ? points.points(p, n) : 0.0;
    const double xi = points.points(p, points.points.cols() - 1);
    try {
      const Baseline b = eval_baseline(model.kind, model.system, y0, t0, xi, true);
      c.f.row(p) = b.f.transpose();
      c.f_xi.row(p) = b.f_xi.transpose();
    } catch (const Error& e) {
      fail(e.kind(), fmt::format("collocation point {}: {}", p, e.what()));
    }
    c.xi[p] = xi;
    c.t[p] = t0 + xi;
  }
  auto feats = hidden_features_batch(model.subnet, model.normalizer, points.points);
  c.phi = std::move(feats.phi);
  c.phi_xi = std::move(feats.phi_xi);
  return c;
}

namespace {

struct PsiValues {
  RowMat psi;     // Q x n
  RowMat psi_xi;  // Q x n
};

PsiValues psi_values(const ResidualCache& c, const RowMat& beta) {
  require(beta.rows() == c.n && beta.cols() == c.phi.cols(), "beta has the wrong shape");
  const RowMat v = c.phi * beta.transpose();
  const RowMat v_xi = c.phi_xi * beta.transpose();
  PsiValues out{c.f, c.f_xi};
  for (Eigen::Index p = 0; p < c.size(); ++p) {
    const double b = xi_power(c.xi[p], c.order);
    const double a = (c.order + 1) * (c.order == 0 ? 1.0 : xi_power(c.xi[p], c.order - 1));
    out.psi.row(p) += b * v.row(p);
    out.psi_xi.row(p) += a * v.row(p) + b * v_xi.row(p);
  }
  return out;
}

}  // namespace

Vec assemble_residual(const ResidualCache& c, const IvpSystem& sys, const RowMat& beta) {
  const PsiValues pv = psi_values(c, beta);
  const int n = c.n;
  Vec r(c.size() * n);
  Vec psi(n), f(n);
  for (Eigen::Index p = 0; p < c.size(); ++p) {
    psi = pv.psi.row(p).transpose();
    sys.rhs(as_span(psi), c.t[p], as_span(f));
    r.segment(p * n, n) = pv.psi_xi.row(p).transpose() - f;
  }
  return r;
}

Mat assemble_jacobian(const ResidualCache& c, const IvpSystem& sys, const RowMat& beta) {
  const PsiValues pv = psi_values(c, beta);
  const int n = c.n;
  const Eigen::Index m = c.phi.cols();
  Mat jac = Mat::Zero(c.size() * n, n * m);
  Vec psi(n);
  RowMat jf(n, n);
  Eigen::RowVectorXd a_row(m), b_row(m);
  for (Eigen::Index p = 0; p < c.size(); ++p) {
    const double b = xi_power(c.xi[p], c.order);
    const double a = (c.order + 1) * (c.order == 0 ? 1.0 : xi_power(c.xi[p], c.order - 1));
    psi = pv.psi.row(p).transpose();
    sys.jac_y(as_span(psi), c.t[p], {jf.data(), static_cast<std::size_t>(n * n)});
    a_row = a * c.phi.row(p) + b * c.phi_xi.row(p);
    b_row = b * c.phi.row(p);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < n; ++k) {
        auto block = jac.block(p * n + i, k * m, 1, m);
        if (i == k)
          block = a_row - jf(i, k) * b_row;
        else if (jf(i, k) != 0.0)
          block = -jf(i, k) * b_row;
      }
    }
  }
  return jac;
}

Vec assemble_residual(const PsiModel& model, const RowMat& beta, const CollocationSet& points) {
  return assemble_residual(prepare_residual(model, points), model.system, beta);
}

Mat assemble_jacobian(const PsiModel& model, const RowMat& beta, const CollocationSet& points) {
  return assemble_jacobian(prepare_residual(model, points), model.system, beta);
}

CompiledModel::CompiledModel(const PsiModel& model)
    : model_(&model),
      subnet_(model.subnet, model.normalizer),
      n_(model.system.dim),
      order_(model.order()),
      has_t0_(model.normalizer.t0_interval.has_value()),
      raw_(model.subnet.input_dim()),
      f0_(model.system.dim),
      g_(model.system.dim),
      f1_(model.system.dim),
      varphi_(model.system.dim) {}

void CompiledModel::eval(std::span<const double> y0, double t0, double xi, std::span<double> out) {
  const IvpSystem& sys = model_->system;
  Eigen::Map<const Vec> y(y0.data(), n_);
  Eigen::Map<Vec> psi(out.data(), n_);
  for (int i = 0; i < n_; ++i) raw_[i] = y0[static_cast<std::size_t>(i)];
  if (has_t0_) raw_[n_] = t0;
  raw_[raw_.size() - 1] = xi;

  switch (model_->kind) {
    case RepKind::exp_s0: psi = y; break;
    case RepKind::exp_s1:
      sys.rhs(y0, t0, as_span(f0_));
      psi = y + xi * f0_;
      break;
    case RepKind::exp_s2:
      sys.rhs(y0, t0, as_span(f0_));
      g_ = y + 0.5 * xi * f0_;
      sys.rhs(as_span(g_), t0 + 0.5 * xi, as_span(f1_));
      psi = y + xi * f1_;
      break;
    case RepKind::imp_s1:
    case RepKind::imp_s2: psi = eval_baseline(model_->kind, sys, y, t0, xi, false).f; break;
  }
  subnet_.eval(as_span(raw_), as_span(varphi_));
  psi += xi_power(xi, order_) * varphi_;
}

Vec CompiledModel::operator()(const Vec& y0, double t0, double xi) {
  Vec out(n_);
  eval(as_span(y0), t0, xi, as_span(out));
  return out;
}

}  // namespace psiflow
