#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "psiflow/decomp.hpp"
#include "psiflow/marcher.hpp"
#include "psiflow/odecore.hpp"
#include "psiflow/psirep.hpp"
#include "psiflow/trainer.hpp"

namespace psiflow {

/// dy/dt = -lambda (y - cos(pi t)).
IvpSystem linear_system(double lambda);
/// (y2, -alpha y2 - beta sin y1); L1 = 2 pi.
IvpSystem free_pendulum(double alpha = 0.1, double beta = 9.8);
/// Free pendulum plus gamma cos(pi t); T = 2, L1 = 2 pi.
IvpSystem forced_pendulum(double alpha = 0.1, double beta = 9.8, double gamma = 0.2);
IvpSystem van_der_pol(double mu);
IvpSystem lorenz63(double sigma = 10.0, double rho = 28.0, double beta = 8.0 / 3.0);
IvpSystem hindmarsh_rose(double current = 3.1, double alpha = 0.006);
/// Cyclic, any n >= 4.
IvpSystem lorenz96(int n = 5, double forcing = 8.0);

/// Builds a catalog system from its name and parameters; missing parameters
/// take their defaults, unknown names or keys are invalid-argument.
IvpSystem resolve_system(const std::string& name, const std::map<std::string, double>& params);

/// Closed-form solution of the linear system through (y0, t0). lambda > 0.
double exact_linear_solution(double lambda, double y0, double t0, double t);

using ExactSolution = std::function<Vec(const Vec& y0, double t0, double t)>;

/// One benchmark problem with its default settings.
struct CatalogEntry {
  std::string id;
  IvpSystem system;
  Vec y0;
  double t0 = 0.0;
  double tf = 0.0;
  bool stiff = false;
  ExactSolution exact;  // empty when no closed form exists

  TrainingDomain domain;  // full box, before decomposition
  std::vector<std::vector<double>> boundaries;
  SubdomainRule rule;
  RepKind kind = RepKind::exp_s1;
  ModelSpec model;
  TrainConfig train;
  MarchConfig march;

  DecomposedSpec decomposed_spec() const;
  Partition partition() const;
};

std::vector<std::string> catalog_ids();
/// Throws invalid-argument for an unknown id.
CatalogEntry catalog_entry(const std::string& id);

/// Problem configuration file (JSON). Sections:
/// system, initial, domain, subdomains (boundaries, r, h_max bands),
/// network (kind, M, Rm, delta_m, activation), training (Q, solver
/// tolerances, perturbation), march (mode, dt, safety), seed.
nlohmann::json to_config(const CatalogEntry& entry);
/// Keys absent from `config` keep the defaults of its "problem" entry when
/// that names a catalog problem. Throws invalid-argument on schema errors.
CatalogEntry entry_from_config(const nlohmann::json& config);
CatalogEntry load_problem_config(const std::string& path);

}  // namespace psiflow
