#pragma once

#include <optional>
#include <vector>

#include "psiflow/odecore.hpp"
#include "psiflow/psirep.hpp"

namespace psiflow {

/// Disjoint product partition of the (y0, t0) box. Axes are the y0
/// components followed by t0 when the domain carries a t0 interval. Ids are
/// lexicographic with axis 0 most significant.
struct Partition {
  TrainingDomain domain;
  std::vector<std::vector<double>> boundaries;  // per axis, endpoints included

  int axis_count() const noexcept { return static_cast<int>(boundaries.size()); }
  int count() const noexcept;
  std::vector<int> cells(int id) const;
  int id_of(const std::vector<int>& cells) const;
  std::vector<Interval> box(int id) const;
  friend bool operator==(const Partition&, const Partition&) = default;
};

/// `boundaries` has one entry per axis; an empty entry leaves the axis uncut,
/// otherwise it must run strictly increasing from the box's lower to upper end.
Partition build_partition(const TrainingDomain& domain, std::vector<std::vector<double>> boundaries);

struct Subdomain {
  int id = 0;
  std::vector<Interval> box;
  double h_max = 0.0;
  double delta_m = 1.0;
  std::vector<double> enlargement;  // r per axis, 0 when empty

  void validate() const;
  friend bool operator==(const Subdomain&, const Subdomain&) = default;
};

/// [a, b] -> [a - (b - a) r / 2, b + (b - a) r / 2].
Interval enlarge(const Interval& iv, double r);
std::vector<Interval> enlarge(const Subdomain& sub);

/// h_max and delta_m for each cell: one value everywhere, or one value per
/// band of a single axis (the form used for stiff oscillators).
struct SubdomainRule {
  double h_max = 0.0;
  double delta_m = 1.0;
  std::optional<int> band_axis;
  std::vector<double> band_h_max;
  std::vector<double> enlargement;  // r per axis
};

std::vector<Subdomain> make_subdomains(const Partition& partition, const SubdomainRule& rule);

/// Training domain of one sub-domain: the enlarged box with its own h_max.
TrainingDomain training_domain(const Partition& partition, const Subdomain& sub);

/// Lowest id whose closed box contains (y, t). Throws out-of-domain outside
/// the full box.
int locate(const Partition& partition, const Vec& y, double t);

struct DecomposedModel {
  Partition partition;
  std::vector<Subdomain> subdomains;
  std::vector<PsiModel> models;

  int size() const noexcept { return static_cast<int>(models.size()); }
  void validate() const;
};

/// Wraps a single model as a one-cell decomposition over its own domain.
DecomposedModel as_decomposed(PsiModel model);

}  // namespace psiflow
