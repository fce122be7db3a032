#include "psiflow/decomp.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace psiflow {

namespace {

std::vector<Interval> full_axes(const TrainingDomain& dom) {
  std::vector<Interval> axes = dom.y0_box;
  if (dom.t0_interval) axes.push_back(*dom.t0_interval);
  return axes;
}

}  // namespace

int Partition::count() const noexcept {
  int c = 1;
  for (const auto& b : boundaries) c *= static_cast<int>(b.size()) - 1;
  return c;
}

std::vector<int> Partition::cells(int id) const {
  require(id >= 0 && id < count(), fmt::format("sub-domain id {} out of range", id));
  std::vector<int> idx(boundaries.size());
  for (int a = axis_count() - 1; a >= 0; --a) {
    const int k = static_cast<int>(boundaries[static_cast<std::size_t>(a)].size()) - 1;
    idx[static_cast<std::size_t>(a)] = id % k;
    id /= k;
  }
  return idx;
}

int Partition::id_of(const std::vector<int>& idx) const {
  require(idx.size() == boundaries.size(), "cell index has the wrong number of axes");
  int id = 0;
  for (std::size_t a = 0; a < boundaries.size(); ++a) id = id * (static_cast<int>(boundaries[a].size()) - 1) + idx[a];
  return id;
}

std::vector<Interval> Partition::box(int id) const {
  const auto idx = cells(id);
  std::vector<Interval> out;
  for (std::size_t a = 0; a < boundaries.size(); ++a) {
    const auto k = static_cast<std::size_t>(idx[a]);
    out.push_back({boundaries[a][k], boundaries[a][k + 1]});
  }
  return out;
}

Partition build_partition(const TrainingDomain& domain, std::vector<std::vector<double>> boundaries) {
  domain.validate();
  const auto axes = full_axes(domain);
  if (boundaries.empty()) boundaries.resize(axes.size());
  require(boundaries.size() == axes.size(),
          fmt::format("partition has {} axes but the domain has {}", boundaries.size(), axes.size()));
  for (std::size_t a = 0; a < axes.size(); ++a) {
    auto& b = boundaries[a];
    if (b.empty()) b = {axes[a].lo, axes[a].hi};
    require(b.size() >= 2, fmt::format("axis {} needs at least two boundaries", a));
    require(b.front() == axes[a].lo && b.back() == axes[a].hi,
            fmt::format("axis {} boundaries {} do not span [{}, {}]", a, b, axes[a].lo, axes[a].hi));
    for (std::size_t k = 1; k < b.size(); ++k)
      require(b[k] > b[k - 1], fmt::format("axis {} boundaries {} are not strictly increasing", a, b));
  }
  return Partition{domain, std::move(boundaries)};
}

void Subdomain::validate() const {
  require(h_max > 0.0, fmt::format("sub-domain {} needs a positive h_max", id));
  require(delta_m > 0.0, fmt::format("sub-domain {} needs a positive delta_m", id));
  require(enlargement.empty() || enlargement.size() == box.size(),
          fmt::format("sub-domain {} enlargement has the wrong number of axes", id));
  for (double r : enlargement) require(r >= 0.0, "enlargement factors must be non-negative");
}

Interval enlarge(const Interval& iv, double r) {
  const double pad = iv.width() * r / 2.0;
  return {iv.lo - pad, iv.hi + pad};
}

std::vector<Interval> enlarge(const Subdomain& sub) {
  std::vector<Interval> out = sub.box;
  for (std::size_t a = 0; a < sub.enlargement.size() && a < out.size(); ++a)
    if (sub.enlargement[a] > 0.0) out[a] = enlarge(out[a], sub.enlargement[a]);
  return out;
}

std::vector<Subdomain> make_subdomains(const Partition& partition, const SubdomainRule& rule) {
  require(rule.enlargement.empty() || static_cast<int>(rule.enlargement.size()) == partition.axis_count(),
          "enlargement needs one factor per partition axis");
  if (rule.band_axis) {
    const int a = *rule.band_axis;
    require(a >= 0 && a < partition.axis_count(), "band axis out of range");
    require(rule.band_h_max.size() + 1 == partition.boundaries[static_cast<std::size_t>(a)].size(),
            "band h_max needs one value per interval of the band axis");
  }
  std::vector<Subdomain> subs;
  for (int id = 0; id < partition.count(); ++id) {
    Subdomain s;
    s.id = id;
    s.box = partition.box(id);
    s.h_max = rule.band_axis ? rule.band_h_max[static_cast<std::size_t>(partition.cells(id)[static_cast<std::size_t>(*rule.band_axis)])]
                             : rule.h_max;
    s.delta_m = rule.delta_m;
    s.enlargement = rule.enlargement;
    s.validate();
    subs.push_back(std::move(s));
  }
  return subs;
}

TrainingDomain training_domain(const Partition& partition, const Subdomain& sub) {
  const auto box = enlarge(sub);
  TrainingDomain dom;
  const auto n = partition.domain.y0_box.size();
  dom.y0_box.assign(box.begin(), box.begin() + static_cast<std::ptrdiff_t>(n));
  if (partition.domain.t0_interval) dom.t0_interval = box[n];
  dom.h_max = sub.h_max;
  dom.xi_sign = partition.domain.xi_sign;
  return dom;
}

int locate(const Partition& partition, const Vec& y, double t) {
  const auto n = partition.domain.y0_box.size();
  require(y.size() == static_cast<Eigen::Index>(n), "state has the wrong dimension");
  std::vector<int> idx(partition.boundaries.size());
  for (std::size_t a = 0; a < partition.boundaries.size(); ++a) {
    const double x = a < n ? y[static_cast<Eigen::Index>(a)] : t;
    const auto& b = partition.boundaries[a];
    if (!(x >= b.front() && x <= b.back())) {
      std::vector<double> point(y.data(), y.data() + y.size());
      fail(ErrorKind::out_of_domain,
           partition.domain.t0_interval
               ? fmt::format("point y = [{}], t = {} lies outside the model domain", fmt::join(point, ", "), t)
               : fmt::format("point y = [{}] lies outside the model domain", fmt::join(point, ", ")));
    }
    const auto it = std::lower_bound(b.begin(), b.end(), x);
    idx[a] = std::max(0, static_cast<int>(it - b.begin()) - 1);
  }
  return partition.id_of(idx);
}

void DecomposedModel::validate() const {
  require(static_cast<int>(subdomains.size()) == partition.count(), "one sub-domain per partition cell expected");
  require(models.size() == subdomains.size(), "one local model per sub-domain expected");
  for (std::size_t k = 0; k < subdomains.size(); ++k) {
    require(subdomains[k].id == static_cast<int>(k), "sub-domains must be stored in id order");
    subdomains[k].validate();
  }
}

DecomposedModel as_decomposed(PsiModel model) {
  DecomposedModel dm;
  dm.partition = build_partition(model.domain, {});
  Subdomain s;
  s.id = 0;
  s.box = dm.partition.box(0);
  s.h_max = model.domain.h_max;
  s.delta_m = model.normalizer.delta_m;
  dm.subdomains.push_back(std::move(s));
  dm.models.push_back(std::move(model));
  return dm;
}

}  // namespace psiflow
