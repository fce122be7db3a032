#include "psiflow/catalog.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include <fmt/format.h>

#include "psiflow/model_io.hpp"

namespace psiflow {

using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

IvpSystem base(std::string name, int dim, bool autonomous, std::map<std::string, double> params) {
  IvpSystem sys;
  sys.name = std::move(name);
  sys.dim = dim;
  sys.autonomous = autonomous;
  sys.params = std::move(params);
  return sys;
}

void zero_jac_t(std::span<const double>, double, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
}

}  // namespace

IvpSystem linear_system(double lambda) {
  require(lambda > 0.0, "linear system needs lambda > 0");
  IvpSystem sys = base("linear", 1, false, {{"lambda", lambda}});
  sys.rhs = [lambda](std::span<const double> y, double t, std::span<double> out) {
    out[0] = -lambda * (y[0] - std::cos(kPi * t));
  };
  sys.jac_y = [lambda](std::span<const double>, double, std::span<double> jac) { jac[0] = -lambda; };
  sys.jac_t = [lambda](std::span<const double>, double t, std::span<double> out) {
    out[0] = -lambda * kPi * std::sin(kPi * t);
  };
  sys.temporal_period = 2.0;
  return sys;
}

namespace {

IvpSystem pendulum(std::string name, double alpha, double beta, std::optional<double> gamma) {
  std::map<std::string, double> params{{"alpha", alpha}, {"beta", beta}};
  if (gamma) params["gamma"] = *gamma;
  IvpSystem sys = base(std::move(name), 2, !gamma, std::move(params));
  const double g = gamma.value_or(0.0);
  sys.rhs = [alpha, beta, g](std::span<const double> y, double t, std::span<double> out) {
    out[0] = y[1];
    out[1] = -alpha * y[1] - beta * std::sin(y[0]) + (g != 0.0 ? g * std::cos(kPi * t) : 0.0);
  };
  sys.jac_y = [alpha, beta](std::span<const double> y, double, std::span<double> jac) {
    jac[0] = 0.0;
    jac[1] = 1.0;
    jac[2] = -beta * std::cos(y[0]);
    jac[3] = -alpha;
  };
  if (gamma) {
    sys.jac_t = [g](std::span<const double>, double t, std::span<double> out) {
      out[0] = 0.0;
      out[1] = -g * kPi * std::sin(kPi * t);
    };
    sys.temporal_period = 2.0;
  } else {
    sys.jac_t = zero_jac_t;
  }
  sys.periodicity = {2.0 * kPi, 0.0};
  return sys;
}

}  // namespace

IvpSystem free_pendulum(double alpha, double beta) { return pendulum("free_pendulum", alpha, beta, std::nullopt); }

IvpSystem forced_pendulum(double alpha, double beta, double gamma) {
  return pendulum("forced_pendulum", alpha, beta, gamma);
}

IvpSystem van_der_pol(double mu) {
  IvpSystem sys = base("van_der_pol", 2, true, {{"mu", mu}});
  sys.rhs = [mu](std::span<const double> y, double, std::span<double> out) {
    out[0] = y[1];
    out[1] = mu * (1.0 - y[0] * y[0]) * y[1] - y[0];
  };
  sys.jac_y = [mu](std::span<const double> y, double, std::span<double> jac) {
    jac[0] = 0.0;
    jac[1] = 1.0;
    jac[2] = -2.0 * mu * y[0] * y[1] - 1.0;
    jac[3] = mu * (1.0 - y[0] * y[0]);
  };
  sys.jac_t = zero_jac_t;
  return sys;
}

IvpSystem lorenz63(double sigma, double rho, double beta) {
  IvpSystem sys = base("lorenz63", 3, true, {{"sigma", sigma}, {"rho", rho}, {"beta", beta}});
  sys.rhs = [=](std::span<const double> y, double, std::span<double> out) {
    out[0] = sigma * (y[1] - y[0]);
    out[1] = y[0] * (rho - y[2]) - y[1];
    out[2] = y[0] * y[1] - beta * y[2];
  };
  sys.jac_y = [=](std::span<const double> y, double, std::span<double> jac) {
    jac[0] = -sigma, jac[1] = sigma, jac[2] = 0.0;
    jac[3] = rho - y[2], jac[4] = -1.0, jac[5] = -y[0];
    jac[6] = y[1], jac[7] = y[0], jac[8] = -beta;
  };
  sys.jac_t = zero_jac_t;
  return sys;
}

IvpSystem hindmarsh_rose(double current, double alpha) {
  IvpSystem sys = base("hindmarsh_rose", 3, true, {{"current", current}, {"alpha", alpha}});
  sys.rhs = [=](std::span<const double> y, double, std::span<double> out) {
    out[0] = y[1] - y[0] * y[0] * y[0] + 3.0 * y[0] - y[2] + current;
    out[1] = 1.0 - 5.0 * y[0] * y[0] - y[1];
    out[2] = 4.0 * alpha * (y[0] + 1.6) - alpha * y[2];
  };
  sys.jac_y = [=](std::span<const double> y, double, std::span<double> jac) {
    jac[0] = 3.0 - 3.0 * y[0] * y[0], jac[1] = 1.0, jac[2] = -1.0;
    jac[3] = -10.0 * y[0], jac[4] = -1.0, jac[5] = 0.0;
    jac[6] = 4.0 * alpha, jac[7] = 0.0, jac[8] = -alpha;
  };
  sys.jac_t = zero_jac_t;
  return sys;
}

IvpSystem lorenz96(int n, double forcing) {
  require(n >= 4, "lorenz96 needs at least 4 components");
  IvpSystem sys = base("lorenz96", n, true, {{"n", n}, {"forcing", forcing}});
  auto idx = [n](int i) { return ((i % n) + n) % n; };
  sys.rhs = [=](std::span<const double> y, double, std::span<double> out) {
    for (int i = 0; i < n; ++i)
      out[static_cast<std::size_t>(i)] =
          (y[static_cast<std::size_t>(idx(i + 1))] - y[static_cast<std::size_t>(idx(i - 2))]) *
              y[static_cast<std::size_t>(idx(i - 1))] -
          y[static_cast<std::size_t>(i)] + forcing;
  };
  sys.jac_y = [=](std::span<const double> y, double, std::span<double> jac) {
    std::fill(jac.begin(), jac.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const auto row = static_cast<std::size_t>(i * n);
      const auto ip1 = static_cast<std::size_t>(idx(i + 1));
      const auto im1 = static_cast<std::size_t>(idx(i - 1));
      const auto im2 = static_cast<std::size_t>(idx(i - 2));
      jac[row + ip1] += y[im1];
      jac[row + im2] -= y[im1];
      jac[row + im1] += y[ip1] - y[im2];
      jac[row + static_cast<std::size_t>(i)] -= 1.0;
    }
  };
  sys.jac_t = zero_jac_t;
  return sys;
}

namespace {

double param(const std::map<std::string, double>& params, const std::set<std::string>& allowed,
             const std::string& key, double fallback) {
  for (const auto& [k, v] : params)
    if (!allowed.contains(k)) fail(ErrorKind::invalid_argument, fmt::format("unknown system parameter '{}'", k));
  const auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

}  // namespace

IvpSystem resolve_system(const std::string& name, const std::map<std::string, double>& params) {
  if (name == "linear") return linear_system(param(params, {"lambda"}, "lambda", 100.0));
  if (name == "free_pendulum" || name == "forced_pendulum") {
    const std::set<std::string> keys =
        name == "free_pendulum" ? std::set<std::string>{"alpha", "beta"} : std::set<std::string>{"alpha", "beta", "gamma"};
    const double a = param(params, keys, "alpha", 0.1);
    const double b = param(params, keys, "beta", 9.8);
    if (name == "free_pendulum") return free_pendulum(a, b);
    return forced_pendulum(a, b, param(params, keys, "gamma", 0.2));
  }
  if (name == "van_der_pol") return van_der_pol(param(params, {"mu"}, "mu", 5.0));
  if (name == "lorenz63") {
    const std::set<std::string> keys{"sigma", "rho", "beta"};
    return lorenz63(param(params, keys, "sigma", 10.0), param(params, keys, "rho", 28.0),
                    param(params, keys, "beta", 8.0 / 3.0));
  }
  if (name == "hindmarsh_rose") {
    const std::set<std::string> keys{"current", "alpha"};
    return hindmarsh_rose(param(params, keys, "current", 3.1), param(params, keys, "alpha", 0.006));
  }
  if (name == "lorenz96") {
    const std::set<std::string> keys{"n", "forcing"};
    const double n = param(params, keys, "n", 5.0);
    require(n == std::floor(n), "lorenz96 dimension must be an integer");
    return lorenz96(static_cast<int>(n), param(params, keys, "forcing", 8.0));
  }
  fail(ErrorKind::invalid_argument, fmt::format("unknown system '{}'", name));
}

double exact_linear_solution(double lambda, double y0, double t0, double t) {
  require(lambda > 0.0, "exact linear solution needs lambda > 0");
  const double d = lambda * lambda + kPi * kPi;
  const double a = lambda * lambda / d;
  const double b = lambda * kPi / d;
  return (y0 - a * std::cos(kPi * t0) - b * std::sin(kPi * t0)) * std::exp(-lambda * (t - t0)) +
         a * std::cos(kPi * t) + b * std::sin(kPi * t);
}

Partition CatalogEntry::partition() const { return build_partition(domain, boundaries); }

DecomposedSpec CatalogEntry::decomposed_spec() const {
  DecomposedSpec spec;
  spec.partition = partition();
  SubdomainRule r = rule;
  r.delta_m = model.delta_m;
  if (!r.band_axis) r.h_max = domain.h_max;
  spec.subdomains = make_subdomains(spec.partition, r);
  spec.kind = kind;
  spec.model = model;
  spec.train = train;
  return spec;
}

namespace {

std::vector<double> uniform_cuts(double lo, double hi, int pieces) {
  std::vector<double> cuts;
  for (int k = 0; k <= pieces; ++k) cuts.push_back(k == pieces ? hi : lo + (hi - lo) * k / pieces);
  return cuts;
}

ExactSolution linear_exact(double lambda) {
  return [lambda](const Vec& y0, double t0, double t) {
    Vec y(1);
    y[0] = exact_linear_solution(lambda, y0[0], t0, t);
    return y;
  };
}

CatalogEntry make_entry(std::string id, IvpSystem sys, std::vector<double> y0, double tf, std::vector<Interval> box,
                        std::optional<Interval> t0_box, double h_max) {
  CatalogEntry e;
  e.id = std::move(id);
  e.system = std::move(sys);
  e.y0 = Eigen::Map<const Vec>(y0.data(), static_cast<Eigen::Index>(y0.size()));
  e.tf = tf;
  e.domain.y0_box = std::move(box);
  if (!e.system.autonomous) e.domain.t0_interval = t0_box;
  e.domain.h_max = h_max;
  const std::size_t axes = e.domain.y0_box.size() + (e.domain.t0_interval ? 1 : 0);
  e.boundaries.assign(axes, {});
  e.rule.enlargement.assign(axes, 0.0);
  e.march.t0 = 0.0;
  e.march.tf = tf;
  return e;
}

void set_net(CatalogEntry& e, RepKind kind, int m, double rm, int q, double delta_m = 1.0) {
  e.kind = kind;
  e.model.hidden = {m};
  e.model.rm = rm;
  e.model.delta_m = delta_m;
  e.train.q = q;
}

CatalogEntry build(const std::string& id) {
  if (id == "linear100" || id == "linear1e6") {
    const bool stiff = id == "linear1e6";
    const double lambda = stiff ? 1e6 : 100.0;
    CatalogEntry e = make_entry(id, linear_system(lambda), {0.0}, 1.0, {{-1.1, 1.1}}, Interval{-0.05, 1.05},
                                stiff ? 0.025 : 0.03);
    e.exact = linear_exact(lambda);
    e.stiff = stiff;
    e.march.dt = 0.02;
    if (stiff) {
      set_net(e, RepKind::exp_s0, 1000, 0.4, 1000, 0.02);
      e.boundaries[1] = uniform_cuts(-0.05, 1.05, 2);
      e.rule.enlargement[1] = 0.05;
    } else {
      set_net(e, RepKind::exp_s1, 800, 0.5, 2500);
    }
    return e;
  }
  if (id == "free_pendulum") {
    CatalogEntry e = make_entry(id, free_pendulum(), {1.0, -1.0}, 200.0, {{-2, 2}, {-4, 4}}, std::nullopt, 0.25);
    set_net(e, RepKind::exp_s1, 800, 0.6, 1000);
    e.boundaries[0] = uniform_cuts(-2, 2, 3);
    e.rule.enlargement[0] = 0.1;
    e.march.dt = 0.2;
    return e;
  }
  if (id == "forced_pendulum") {
    CatalogEntry e =
        make_entry(id, forced_pendulum(), {1.0, -1.0}, 200.0, {{-2, 2}, {-4, 4}}, Interval{0.0, 2.01}, 0.11);
    set_net(e, RepKind::exp_s1, 1200, 0.4, 2000, 5.0);
    e.boundaries[0] = uniform_cuts(-2, 2, 3);
    e.rule.enlargement[0] = 0.1;
    e.march.dt = 0.1;
    return e;
  }
  if (id == "vdp5") {
    CatalogEntry e = make_entry(id, van_der_pol(5.0), {2.0, 0.0}, 120.0, {{-2.05, 2.05}, {-8, 8}}, std::nullopt, 0.035);
    set_net(e, RepKind::exp_s1, 1100, 0.5, 1500);
    e.boundaries[0] = uniform_cuts(-2.05, 2.05, 3);
    e.rule.enlargement[0] = 0.1;
    e.march.dt = 0.03;
    return e;
  }
  if (id == "vdp100") {
    CatalogEntry e =
        make_entry(id, van_der_pol(100.0), {2.0, 0.0}, 300.0, {{-2.05, 2.05}, {-140, 140}}, std::nullopt, 0.018);
    set_net(e, RepKind::exp_s0, 800, 0.75, 1400);
    e.stiff = true;
    e.boundaries[0] = uniform_cuts(-2.05, 2.05, 3);
    e.boundaries[1] = {-140, -0.5, -0.03, 0.03, 0.5, 140};
    e.rule.enlargement = {0.1, 0.05};
    e.rule.band_axis = 1;
    e.rule.band_h_max = {0.002, 0.011, 0.018, 0.011, 0.002};
    e.march.mode = MarchConfig::Mode::quasi_adaptive;
    return e;
  }
  if (id == "lorenz63") {
    CatalogEntry e =
        make_entry(id, lorenz63(), {-10.0, -10.0, 25.0}, 17.0, {{-20, 20}, {-25, 25}, {2, 46}}, std::nullopt, 0.012);
    set_net(e, RepKind::exp_s0, 900, 0.12, 1200, 0.2);
    e.march.dt = 0.01;
    return e;
  }
  if (id == "hindmarsh_rose") {
    // The tabulated xi range is narrower than the tabulated step; h_max
    // follows the step so that marching stays inside the training range.
    CatalogEntry e = make_entry(id, hindmarsh_rose(), {-1.0, -3.5, 3.0}, 499.8,
                                {{-1.5, 1.8}, {-8, 0.7}, {2.7, 3.3}}, std::nullopt, 0.06);
    set_net(e, RepKind::exp_s1, 1200, 0.39, 2000);
    e.boundaries[0] = {-1.5, -0.8, 0.0, 0.9, 1.8};
    e.march.dt = 0.06;
    return e;
  }
  if (id == "lorenz96") {
    CatalogEntry e = make_entry(id, lorenz96(), {-0.99, -1.0, -1.0, -1.0, -1.0}, 50.0,
                                std::vector<Interval>(5, Interval{-5, 10}), std::nullopt, 0.011);
    set_net(e, RepKind::exp_s1, 800, 0.15, 1500);
    e.boundaries[0] = uniform_cuts(-5, 10, 2);
    e.march.dt = 0.01;
    return e;
  }
  fail(ErrorKind::invalid_argument, fmt::format("unknown catalog problem '{}'", id));
}

}  // namespace

std::vector<std::string> catalog_ids() {
  return {"linear100", "linear1e6", "free_pendulum", "forced_pendulum", "vdp5",
          "vdp100", "lorenz63", "hindmarsh_rose", "lorenz96"};
}

CatalogEntry catalog_entry(const std::string& id) { return build(id); }

namespace {

std::string mode_name(MarchConfig::Mode m) { return m == MarchConfig::Mode::fixed ? "fixed" : "quasi_adaptive"; }

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  require(j.is_object(), fmt::format("config section '{}' must be an object", where));
  for (const auto& [k, v] : j.items())
    if (!allowed.contains(k)) fail(ErrorKind::invalid_argument, fmt::format("unknown key '{}' in '{}'", k, where));
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ExactSolution exact_for(const IvpSystem& sys) {
  if (sys.name == "linear") return linear_exact(sys.params.at("lambda"));
  return {};
}

}  // namespace

json to_config(const CatalogEntry& e) {
  json sub{{"boundaries", e.boundaries}, {"r", e.rule.enlargement}};
  if (e.rule.band_axis) sub["h_max_bands"] = {{"axis", *e.rule.band_axis}, {"values", e.rule.band_h_max}};
  const auto& p = e.train.perturb;
  return {{"problem", e.id},
          {"system", {{"name", e.system.name}, {"params", e.system.params}}},
          {"initial", {{"y0", std::vector<double>(e.y0.data(), e.y0.data() + e.y0.size())}, {"t0", e.t0}, {"tf", e.tf}}},
          {"stiff", e.stiff},
          {"domain", to_json(e.domain)},
          {"subdomains", sub},
          {"network",
           {{"kind", std::string(to_string(e.kind))},
            {"M", e.model.hidden},
            {"Rm", e.model.rm},
            {"delta_m", e.model.delta_m},
            {"activation", std::string(to_string(e.model.activation))}}},
          {"training",
           {{"Q", e.train.q},
            {"max_iterations", e.train.max_iterations},
            {"gtol", e.train.gtol},
            {"xtol", e.train.xtol},
            {"ftol", e.train.ftol},
            {"damping_init", e.train.damping_init},
            {"perturb", {{"trigger", p.trigger}, {"magnitude", p.magnitude}, {"max_restarts", p.max_restarts}}}}},
          {"march",
           {{"mode", mode_name(e.march.mode)},
            {"dt", e.march.dt},
            {"safety", e.march.safety},
            {"periodicity_exploit", e.march.periodicity_exploit},
            {"allow_extrapolation", e.march.allow_extrapolation}}},
          {"seed", e.model.seed}};
}

namespace {

CatalogEntry parse_config(const json& c) {
  check_keys(c, "config",
             {"problem", "system", "initial", "stiff", "domain", "subdomains", "network", "training", "march", "seed"});
  const std::string problem = c.value("problem", std::string{});
  const auto ids = catalog_ids();
  const bool known = std::find(ids.begin(), ids.end(), problem) != ids.end();
  require(known || c.contains("system"), "config needs a catalog 'problem' or a 'system' section");
  CatalogEntry e = known ? build(problem) : CatalogEntry{};
  e.id = problem.empty() ? "custom" : problem;

  if (c.contains("system")) {
    const json& s = c.at("system");
    check_keys(s, "system", {"name", "params"});
    e.system = resolve_system(s.at("name").get<std::string>(),
                              s.value("params", json::object()).get<std::map<std::string, double>>());
    e.exact = exact_for(e.system);
  }
  if (c.contains("initial")) {
    const json& s = c.at("initial");
    check_keys(s, "initial", {"y0", "t0", "tf"});
    if (s.contains("y0")) {
      const auto y0 = s.at("y0").get<std::vector<double>>();
      e.y0 = Eigen::Map<const Vec>(y0.data(), static_cast<Eigen::Index>(y0.size()));
    }
    read(s, "t0", e.t0);
    read(s, "tf", e.tf);
  }
  read(c, "stiff", e.stiff);
  if (c.contains("domain")) e.domain = domain_from_json(c.at("domain"));
  if (c.contains("subdomains")) {
    const json& s = c.at("subdomains");
    check_keys(s, "subdomains", {"boundaries", "r", "h_max_bands"});
    read(s, "boundaries", e.boundaries);
    read(s, "r", e.rule.enlargement);
    if (s.contains("h_max_bands")) {
      const json& b = s.at("h_max_bands");
      if (b.is_null()) {
        e.rule.band_axis.reset();
        e.rule.band_h_max.clear();
      } else {
        check_keys(b, "h_max_bands", {"axis", "values"});
        e.rule.band_axis = b.at("axis").get<int>();
        e.rule.band_h_max = b.at("values").get<std::vector<double>>();
      }
    }
  }
  if (c.contains("network")) {
    const json& s = c.at("network");
    check_keys(s, "network", {"kind", "M", "Rm", "delta_m", "activation"});
    if (s.contains("kind")) e.kind = rep_kind_from_string(s.at("kind").get<std::string>());
    if (s.contains("M")) {
      const json& m = s.at("M");
      e.model.hidden = m.is_array() ? m.get<std::vector<int>>() : std::vector<int>{m.get<int>()};
    }
    read(s, "Rm", e.model.rm);
    read(s, "delta_m", e.model.delta_m);
    if (s.contains("activation")) e.model.activation = activation_from_string(s.at("activation").get<std::string>());
  }
  if (c.contains("training")) {
    const json& s = c.at("training");
    check_keys(s, "training", {"Q", "max_iterations", "gtol", "xtol", "ftol", "damping_init", "perturb"});
    read(s, "Q", e.train.q);
    read(s, "max_iterations", e.train.max_iterations);
    read(s, "gtol", e.train.gtol);
    read(s, "xtol", e.train.xtol);
    read(s, "ftol", e.train.ftol);
    read(s, "damping_init", e.train.damping_init);
    if (s.contains("perturb")) {
      const json& p = s.at("perturb");
      check_keys(p, "perturb", {"trigger", "magnitude", "max_restarts"});
      read(p, "trigger", e.train.perturb.trigger);
      read(p, "magnitude", e.train.perturb.magnitude);
      read(p, "max_restarts", e.train.perturb.max_restarts);
    }
  }
  if (c.contains("march")) {
    const json& s = c.at("march");
    check_keys(s, "march", {"mode", "dt", "safety", "periodicity_exploit", "allow_extrapolation"});
    if (s.contains("mode")) {
      const auto m = s.at("mode").get<std::string>();
      require(m == "fixed" || m == "quasi_adaptive", "march mode must be 'fixed' or 'quasi_adaptive'");
      e.march.mode = m == "fixed" ? MarchConfig::Mode::fixed : MarchConfig::Mode::quasi_adaptive;
    }
    read(s, "dt", e.march.dt);
    read(s, "safety", e.march.safety);
    read(s, "periodicity_exploit", e.march.periodicity_exploit);
    read(s, "allow_extrapolation", e.march.allow_extrapolation);
  }
  if (c.contains("seed")) {
    e.model.seed = c.at("seed").get<std::uint64_t>();
    e.train.seed = e.model.seed;
  }
  e.march.t0 = e.t0;
  e.march.tf = e.tf;

  validate(e.system);
  require(e.y0.size() == e.system.dim, "initial state dimension differs from the system dimension");
  require(e.domain.dim() == e.system.dim, "domain dimension differs from the system dimension");
  require(e.system.autonomous || e.domain.t0_interval, "non-autonomous problems need a t0 interval");
  if (e.system.autonomous) e.domain.t0_interval.reset();
  e.train.validate();
  e.march.validate();
  (void)e.decomposed_spec();
  return e;
}

}  // namespace

CatalogEntry entry_from_config(const json& config) {
  try {
    return parse_config(config);
  } catch (const json::exception& ex) {
    fail(ErrorKind::invalid_argument, fmt::format("malformed problem config: {}", ex.what()));
  }
}

CatalogEntry load_problem_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io_failure, "cannot open " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& ex) {
    fail(ErrorKind::invalid_argument, fmt::format("{}: {}", path, ex.what()));
  }
  return entry_from_config(j);
}

}  // namespace psiflow
