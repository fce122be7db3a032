#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "psiflow/odecore.hpp"

namespace psiflow {

enum class Activation { gaussian, tanh };

std::string_view to_string(Activation act) noexcept;
Activation activation_from_string(std::string_view name);

double activate(Activation act, double z) noexcept;
double activate_prime(Activation act, double z) noexcept;

struct HiddenLayer {
  RowMat weights;  // m_l x m_{l-1}
  Vec biases;      // m_l
};

/// Randomized phi-subnet. Hidden layers are frozen at Uniform[-Rm, Rm]
/// draws; only the linear, bias-free output layer `beta` (n x M) is trained.
struct SubnetParams {
  std::vector<int> arch;  // [m0, m1, ..., mL]
  std::vector<HiddenLayer> hidden;
  RowMat beta;
  Activation activation = Activation::gaussian;
  double rm = 1.0;
  std::uint64_t seed = 0;
  std::uint32_t stream_index = 0;  // sub-domain id

  int input_dim() const noexcept { return arch.front(); }
  int output_dim() const noexcept { return arch.back(); }
  int width() const noexcept { return arch[arch.size() - 2]; }
  int parameter_count() const noexcept { return output_dim() * width(); }
};

/// Draws hidden weights and biases from the Philox hidden-layer stream
/// selected by (seed, stream_index); beta starts at zero.
SubnetParams init_subnet(std::vector<int> arch, double rm, std::uint64_t seed,
                         Activation activation = Activation::gaussian, std::uint32_t stream_index = 0);

/// Affine input map: each y0 component and t0 onto [-1, 1] from its box,
/// xi onto [0, 1] from [0, delta_m * h_max].
struct Normalizer {
  std::vector<Interval> y0_box;
  std::optional<Interval> t0_interval;
  double h_max = 1.0;
  double delta_m = 1.0;

  static Normalizer from_domain(const TrainingDomain& dom, double delta_m);

  int input_dim() const noexcept {
    return static_cast<int>(y0_box.size()) + (t0_interval ? 1 : 0) + 1;
  }
  double xi_scale() const noexcept { return 1.0 / (delta_m * h_max); }

  /// Per-input scale and offset: x_hat = scale * x + offset.
  Vec scale() const;
  Vec offset() const;

  /// Raw input vector (y0, [t0,] xi).
  Vec raw_input(const Vec& y0, double t0, double xi) const;
  Vec apply(const Vec& raw) const;
  Vec invert(const Vec& normalized) const;
};

/// Last-hidden-layer fields phi at one point (generic layered evaluation).
Vec hidden_features(const SubnetParams& net, const Normalizer& nrm, const Vec& raw);

/// d(phi)/d(xi) including the 1/(delta_m h_max) chain-rule factor.
Vec hidden_features_dxi(const SubnetParams& net, const Normalizer& nrm, const Vec& raw);

/// d(phi)/d(raw input), M x m0; used by the implicit backward-step solve.
Mat hidden_features_dinput(const SubnetParams& net, const Normalizer& nrm, const Vec& raw);

/// varphi_i = beta_i . phi.
Vec eval_varphi(const SubnetParams& net, const Normalizer& nrm, const Vec& raw);

/// Batched phi and d(phi)/d(xi) for training: rows are points.
struct FeatureBatch {
  RowMat phi;
  RowMat phi_xi;
};
FeatureBatch hidden_features_batch(const SubnetParams& net, const Normalizer& nrm, const RowMat& raw_points);

/// Flattened single-point evaluator for varphi. Weights sit in contiguous
/// row-major buffers, scratch space is preallocated and the activation runs
/// as a vectorized array kernel. Not thread-safe: give each thread its own copy.
class CompiledSubnet {
public:
  CompiledSubnet() = default;
  CompiledSubnet(const SubnetParams& net, const Normalizer& nrm);

  /// Writes varphi(raw) into out (length n).
  void eval(std::span<const double> raw, std::span<double> out);

  int input_dim() const noexcept { return in_dim_; }
  int output_dim() const noexcept { return out_dim_; }

private:
  struct Layer {
    Mat w;  // column-major: the matrix-vector product runs as axpy over few inputs
    Vec b;
  };
  Activation act_ = Activation::gaussian;
  int in_dim_ = 0;
  int out_dim_ = 0;
  Vec sum_, width_;  // per input: lo + hi and hi - lo; xi uses width delta_m * h_max
  std::vector<Layer> layers_;
  RowMat beta_;
  Vec x_;
  std::vector<Vec> z_;
};

}  // namespace psiflow
