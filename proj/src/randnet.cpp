#include "psiflow/randnet.hpp"

#include <cmath>

#include <fmt/format.h>

#include "psiflow/rng.hpp"

namespace psiflow {

std::string_view to_string(Activation act) noexcept {
  return act == Activation::gaussian ? "gaussian" : "tanh";
}

Activation activation_from_string(std::string_view name) {
  if (name == "gaussian") return Activation::gaussian;
  if (name == "tanh") return Activation::tanh;
  fail(ErrorKind::invalid_argument, fmt::format("unknown activation '{}'", name));
}

double activate(Activation act, double z) noexcept {
  return act == Activation::gaussian ? std::exp(-z * z) : std::tanh(z);
}

double activate_prime(Activation act, double z) noexcept {
  if (act == Activation::gaussian) return -2.0 * z * std::exp(-z * z);
  const double t = std::tanh(z);
  return 1.0 - t * t;
}

SubnetParams init_subnet(std::vector<int> arch, double rm, std::uint64_t seed, Activation activation,
                         std::uint32_t stream_index) {
  require(arch.size() >= 3, "architecture needs at least an input, one hidden and an output layer");
  for (int m : arch) require(m > 0, "layer widths must be positive");
  require(rm > 0.0, "Rm must be positive");

  SubnetParams net;
  net.arch = std::move(arch);
  net.activation = activation;
  net.rm = rm;
  net.seed = seed;
  net.stream_index = stream_index;

  Philox rng(seed, stream_id(StreamPurpose::hidden_layers, stream_index));
  for (std::size_t l = 1; l + 1 < net.arch.size(); ++l) {
    HiddenLayer layer;
    layer.weights.resize(net.arch[l], net.arch[l - 1]);
    layer.biases.resize(net.arch[l]);
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = rng.uniform(-rm, rm);
    for (Eigen::Index i = 0; i < layer.biases.size(); ++i) layer.biases[i] = rng.uniform(-rm, rm);
    net.hidden.push_back(std::move(layer));
  }
  net.beta = RowMat::Zero(net.output_dim(), net.width());
  return net;
}

Normalizer Normalizer::from_domain(const TrainingDomain& dom, double delta_m) {
  require(delta_m > 0.0, "delta_m must be positive");
  dom.validate();
  return Normalizer{dom.y0_box, dom.t0_interval, dom.h_max, delta_m};
}

Vec Normalizer::scale() const {
  Vec s(input_dim());
  Eigen::Index k = 0;
  for (const auto& iv : y0_box) s[k++] = 2.0 / iv.width();
  if (t0_interval) s[k++] = 2.0 / t0_interval->width();
  s[k] = xi_scale();
  return s;
}

Vec Normalizer::offset() const {
  Vec o(input_dim());
  Eigen::Index k = 0;
  for (const auto& iv : y0_box) o[k++] = -(iv.lo + iv.hi) / iv.width();
  if (t0_interval) o[k++] = -(t0_interval->lo + t0_interval->hi) / t0_interval->width();
  o[k] = 0.0;
  return o;
}

Vec Normalizer::raw_input(const Vec& y0, double t0, double xi) const {
  require(y0.size() == static_cast<Eigen::Index>(y0_box.size()), "initial state has the wrong dimension");
  Vec raw(input_dim());
  raw.head(y0.size()) = y0;
  if (t0_interval) raw[y0.size()] = t0;
  raw[raw.size() - 1] = xi;
  return raw;
}

namespace {

// Affine map written as (2x - (lo + hi)) / (hi - lo) so that the endpoints
// land on -1 and 1 exactly.
double to_unit(const Interval& iv, double x) { return (2.0 * x - (iv.lo + iv.hi)) / iv.width(); }
double from_unit(const Interval& iv, double u) { return 0.5 * ((iv.lo + iv.hi) + u * iv.width()); }

void check_input(const SubnetParams& net, const Normalizer& nrm, const Vec& raw) {
  if (raw.size() != net.input_dim() || nrm.input_dim() != net.input_dim())
    fail(ErrorKind::invalid_argument,
         fmt::format("input has dimension {}, network expects {} (normalizer {})", raw.size(), net.input_dim(),
                     nrm.input_dim()));
}

Vec activate_all(Activation act, const Vec& z) {
  return z.unaryExpr([act](double v) { return activate(act, v); });
}

Vec activate_prime_all(Activation act, const Vec& z) {
  return z.unaryExpr([act](double v) { return activate_prime(act, v); });
}

}  // namespace

Vec Normalizer::apply(const Vec& raw) const {
  require(raw.size() == input_dim(), "raw input has the wrong dimension");
  Vec out(raw.size());
  Eigen::Index k = 0;
  for (const auto& iv : y0_box) {
    out[k] = to_unit(iv, raw[k]);
    ++k;
  }
  if (t0_interval) {
    out[k] = to_unit(*t0_interval, raw[k]);
    ++k;
  }
  out[k] = raw[k] / (delta_m * h_max);
  return out;
}

Vec Normalizer::invert(const Vec& normalized) const {
  require(normalized.size() == input_dim(), "normalized input has the wrong dimension");
  Vec out(normalized.size());
  Eigen::Index k = 0;
  for (const auto& iv : y0_box) {
    out[k] = from_unit(iv, normalized[k]);
    ++k;
  }
  if (t0_interval) {
    out[k] = from_unit(*t0_interval, normalized[k]);
    ++k;
  }
  out[k] = normalized[k] * (delta_m * h_max);
  return out;
}

Vec hidden_features(const SubnetParams& net, const Normalizer& nrm, const Vec& raw) {
  check_input(net, nrm, raw);
  Vec h = nrm.apply(raw);
  for (const auto& layer : net.hidden) {
    Vec z = layer.weights * h + layer.biases;
    h = activate_all(net.activation, z);
  }
  return h;
}

Vec hidden_features_dxi(const SubnetParams& net, const Normalizer& nrm, const Vec& raw) {
  check_input(net, nrm, raw);
  Vec h = nrm.apply(raw);
  Vec d = Vec::Zero(h.size());
  d[d.size() - 1] = nrm.xi_scale();
  for (const auto& layer : net.hidden) {
    Vec z = layer.weights * h + layer.biases;
    Vec dz = layer.weights * d;
    h = activate_all(net.activation, z);
    d = activate_prime_all(net.activation, z).cwiseProduct(dz);
  }
  return d;
}

Mat hidden_features_dinput(const SubnetParams& net, const Normalizer& nrm, const Vec& raw) {
  check_input(net, nrm, raw);
  Vec h = nrm.apply(raw);
  Mat d = nrm.scale().asDiagonal().toDenseMatrix();
  for (const auto& layer : net.hidden) {
    Vec z = layer.weights * h + layer.biases;
    Mat dz = layer.weights * d;
    h = activate_all(net.activation, z);
    d = activate_prime_all(net.activation, z).asDiagonal() * dz;
  }
  return d;
}

Vec eval_varphi(const SubnetParams& net, const Normalizer& nrm, const Vec& raw) {
  return net.beta * hidden_features(net, nrm, raw);
}

FeatureBatch hidden_features_batch(const SubnetParams& net, const Normalizer& nrm, const RowMat& raw_points) {
  require(raw_points.cols() == net.input_dim() && nrm.input_dim() == net.input_dim(),
          "collocation points have the wrong input dimension");
  const Eigen::Index q = raw_points.rows();
  RowMat h(q, raw_points.cols());
  for (Eigen::Index i = 0; i < q; ++i) h.row(i) = nrm.apply(raw_points.row(i).transpose()).transpose();
  RowMat d = RowMat::Zero(q, raw_points.cols());
  d.col(d.cols() - 1).setConstant(nrm.xi_scale());
  for (const auto& layer : net.hidden) {
    RowMat z = h * layer.weights.transpose();
    z.rowwise() += layer.biases.transpose();
    RowMat dz = d * layer.weights.transpose();
    h = z.unaryExpr([act = net.activation](double v) { return activate(act, v); });
    d = z.unaryExpr([act = net.activation](double v) { return activate_prime(act, v); }).cwiseProduct(dz);
  }
  return {std::move(h), std::move(d)};
}

CompiledSubnet::CompiledSubnet(const SubnetParams& net, const Normalizer& nrm)
    : act_(net.activation),
      in_dim_(net.input_dim()),
      out_dim_(net.output_dim()),
      sum_(net.input_dim()),
      width_(net.input_dim()),
      beta_(net.beta),
      x_(net.input_dim()) {
  require(nrm.input_dim() == net.input_dim(), "normalizer does not match the network input");
  // The y0/t0 entries reuse the exact expression of Normalizer::apply so the
  // two paths agree bit for bit before the hidden layers.
  for (std::size_t k = 0; k < nrm.y0_box.size(); ++k) {
    sum_[static_cast<Eigen::Index>(k)] = nrm.y0_box[k].lo + nrm.y0_box[k].hi;
    width_[static_cast<Eigen::Index>(k)] = nrm.y0_box[k].width();
  }
  if (nrm.t0_interval) {
    const auto k = static_cast<Eigen::Index>(nrm.y0_box.size());
    sum_[k] = nrm.t0_interval->lo + nrm.t0_interval->hi;
    width_[k] = nrm.t0_interval->width();
  }
  sum_[in_dim_ - 1] = 0.0;
  width_[in_dim_ - 1] = nrm.delta_m * nrm.h_max;
  for (const auto& layer : net.hidden) {
    layers_.push_back({layer.weights, layer.biases});
    z_.emplace_back(layer.biases.size());
  }
}

void CompiledSubnet::eval(std::span<const double> raw, std::span<double> out) {
  for (int k = 0; k < in_dim_ - 1; ++k) x_[k] = (2.0 * raw[k] - sum_[k]) / width_[k];
  x_[in_dim_ - 1] = raw[in_dim_ - 1] / width_[in_dim_ - 1];

  const Vec* input = &x_;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Vec& z = z_[l];
    z = layers_[l].b;
    z.noalias() += layers_[l].w * *input;
    if (act_ == Activation::gaussian)
      z.array() = (-z.array().square()).exp();
    else
      z.array() = z.array().tanh();
    input = &z;
  }
  Eigen::Map<Vec> result(out.data(), out_dim_);
  result.noalias() = beta_ * *input;
}

}  // namespace psiflow
