#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "psiflow/odecore.hpp"
#include "psiflow/randnet.hpp"

namespace psiflow {

/// Baseline families. Explicit: y0, forward Euler, midpoint. Implicit:
/// backward Euler, two-stage SDIRK.
enum class RepKind { exp_s0, exp_s1, exp_s2, imp_s1, imp_s2 };

inline constexpr RepKind kAllRepKinds[] = {RepKind::exp_s0, RepKind::exp_s1, RepKind::exp_s2, RepKind::imp_s1,
                                           RepKind::imp_s2};

/// gamma = 1 - sqrt(2)/2.
inline constexpr double kDirkGamma = 0.29289321881345247560;

int order_of(RepKind kind) noexcept;
bool is_implicit(RepKind kind) noexcept;
std::string_view to_string(RepKind kind) noexcept;
RepKind rep_kind_from_string(std::string_view name);

/// psi(y0, t0, xi) = F(y0, t0, xi) + xi^(s+1) * varphi(y0, t0, xi).
struct PsiModel {
  RepKind kind = RepKind::exp_s1;
  SubnetParams subnet;
  Normalizer normalizer;
  IvpSystem system;
  TrainingDomain domain;
  bool trained = false;

  int order() const noexcept { return order_of(kind); }
  void validate() const;
};

struct ModelSpec {
  std::vector<int> hidden{400};  // hidden layer widths; the last one is M
  double rm = 1.0;
  double delta_m = 1.0;
  std::uint64_t seed = 0;
  Activation activation = Activation::gaussian;
  std::uint32_t stream_index = 0;
};

/// Untrained model with arch [n+2 (n+1 autonomous), hidden..., n].
/// For autonomous systems any t0 interval in `domain` is dropped.
PsiModel make_model(IvpSystem system, TrainingDomain domain, RepKind kind, const ModelSpec& spec);

/// Stage of the implicit one-stage baseline: K = f(y0 + xi K, t0 + xi).
Vec solve_stage_K(const IvpSystem& sys, const Vec& y0, double t0, double xi);

/// dK/dxi from (I - xi J) K' = J K + f_t evaluated at (y0 + xi K, t0 + xi).
Vec solve_dK_dxi(const IvpSystem& sys, const Vec& y0, double t0, double xi, const Vec& k);

struct DirkStages {
  Vec k1, k2;
};
/// K1 = f(y0 + g xi K1, t0 + g xi), K2 = f(y0 + (1-g) xi K1 + g xi K2, t0 + xi).
DirkStages solve_dirk_stages(const IvpSystem& sys, const Vec& y0, double t0, double xi);
DirkStages solve_dirk_stage_derivatives(const IvpSystem& sys, const Vec& y0, double t0, double xi,
                                        const DirkStages& stages);

struct Baseline {
  Vec f;     // F
  Vec f_xi;  // dF/dxi
};
Baseline eval_baseline(RepKind kind, const IvpSystem& sys, const Vec& y0, double t0, double xi,
                       bool with_derivative);

Vec eval_F(const PsiModel& model, const Vec& y0, double t0, double xi);
Vec eval_psi(const PsiModel& model, const Vec& y0, double t0, double xi);

/// Q raw input rows (y0, [t0,] xi) plus the seed that produced them.
struct CollocationSet {
  RowMat points;
  std::uint64_t seed = 0;

  Eigen::Index size() const noexcept { return points.rows(); }
};

/// Everything in the residual that does not depend on beta, precomputed once
/// per collocation set.
struct ResidualCache {
  int n = 0;
  int order = 0;
  RowMat f;       // Q x n baseline values
  RowMat f_xi;    // Q x n baseline xi-derivatives
  Vec xi;         // Q
  Vec t;          // Q, t0 + xi
  RowMat phi;     // Q x M
  RowMat phi_xi;  // Q x M
  Eigen::Index size() const noexcept { return xi.size(); }
};

ResidualCache prepare_residual(const PsiModel& model, const CollocationSet& points);

/// R = dpsi/dxi - f(psi, t0 + xi), laid out point-major: index q * n + i.
Vec assemble_residual(const ResidualCache& cache, const IvpSystem& sys, const RowMat& beta);
/// dR/dbeta, nQ x nM; beta is flattened row-major (index i * M + j).
Mat assemble_jacobian(const ResidualCache& cache, const IvpSystem& sys, const RowMat& beta);

Vec assemble_residual(const PsiModel& model, const RowMat& beta, const CollocationSet& points);
Mat assemble_jacobian(const PsiModel& model, const RowMat& beta, const CollocationSet& points);

/// Single-point psi evaluator over flattened, preallocated buffers. Explicit
/// kinds never allocate; implicit kinds still run the generic stage solve.
/// Not thread-safe: one instance per thread.
class CompiledModel {
public:
  explicit CompiledModel(const PsiModel& model);

  void eval(std::span<const double> y0, double t0, double xi, std::span<double> out);
  Vec operator()(const Vec& y0, double t0, double xi);

private:
  const PsiModel* model_;
  CompiledSubnet subnet_;
  int n_;
  int order_;
  bool has_t0_;
  Vec raw_, f0_, g_, f1_, varphi_;
};

}  // namespace psiflow
