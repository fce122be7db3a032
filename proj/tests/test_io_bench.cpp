#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "psiflow/bench.hpp"
#include "psiflow/catalog.hpp"
#include "psiflow/model_io.hpp"
#include "psiflow/trainer.hpp"
#include "support.hpp"

using namespace psiflow;

namespace {

DecomposedModel small_trained(const std::string& id, int width, int q) {
  CatalogEntry e = catalog_entry(id);
  e.model.hidden = {width};
  e.train.q = q;
  e.train.max_iterations = 5;
  return train_decomposed(e.system, e.decomposed_spec(), 2).model;
}

ErrorKind kind_of_load(const std::string& bytes) {
  try {
    deserialize_model(bytes, resolve_system);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("load unexpectedly succeeded");
  return ErrorKind::invalid_argument;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("model files round-trip bit for bit") {
  const DecomposedModel dm = small_trained("forced_pendulum", 30, 120);
  const auto path = (std::filesystem::temp_directory_path() / "psiflow_roundtrip.psif").string();
  save_model(dm, path);
  const DecomposedModel back = load_model(path, resolve_system);
  std::remove(path.c_str());
  REQUIRE(back.size() == dm.size());
  CHECK(back.partition == dm.partition);
  CHECK(back.subdomains == dm.subdomains);
  for (int k = 0; k < dm.size(); ++k) {
    const auto& a = dm.models[static_cast<std::size_t>(k)];
    const auto& b = back.models[static_cast<std::size_t>(k)];
    CHECK(a.kind == b.kind);
    CHECK(a.domain == b.domain);
    CHECK(a.subnet.beta == b.subnet.beta);
    CHECK(a.subnet.hidden[0].weights == b.subnet.hidden[0].weights);
    CHECK(a.subnet.hidden[0].biases == b.subnet.hidden[0].biases);
    const Vec y0{{0.3, -0.2}};
    CHECK((eval_psi(a, y0, 0.5, 0.05) - eval_psi(b, y0, 0.5, 0.05)).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(serialize_model(back) == serialize_model(dm));
}

TEST_CASE("damaged model files are rejected with the right kind") {
  const std::string good = serialize_model(small_trained("linear100", 10, 40));
  std::string bad = good;
  bad[bad.size() / 2] ^= 0x20;
  CHECK(kind_of_load(bad) == ErrorKind::checksum_mismatch);
  CHECK(kind_of_load(good.substr(0, good.size() - 9)) == ErrorKind::checksum_mismatch);
  bad = good;
  bad[4] = 7;
  CHECK(kind_of_load(bad) == ErrorKind::version_mismatch);
  bad = good;
  bad[0] = 'X';
  CHECK(kind_of_load(bad) == ErrorKind::io_failure);
  CHECK_THROWS_AS(load_model("/nonexistent/model.psif", resolve_system), Error);
}

TEST_CASE("manifest exposes the header") {
  const auto j = model_manifest(small_trained("free_pendulum", 12, 50));
  CHECK(j.at("format_version") == kModelFormatVersion);
  CHECK(j.at("system").at("name") == "free_pendulum");
  CHECK(j.at("subdomains").size() == 3);
  CHECK(j.at("subdomains")[0].at("kind") == "ExpS1");
  CHECK(j.at("arrays")[0].at("beta_shape") == nlohmann::json::array({2, 12}));
}

TEST_CASE("exact linear solution values") {
  CHECK(exact_linear_solution(100.0, 0.0, 0.0, 1.0) == doctest::Approx(-0.9990141).epsilon(1e-7));
  CHECK(exact_linear_solution(1e6, 0.0, 0.0, 0.5) == doctest::Approx(3.1415926e-6).epsilon(1e-7));
  Philox rng(6);
  for (int s = 0; s < 20; ++s) {
    const double y0 = rng.uniform(-1, 1), t0 = rng.uniform(0, 1);
    CHECK(exact_linear_solution(100.0, y0, t0, t0) == doctest::Approx(y0).epsilon(1e-14));
  }
  CHECK_THROWS_AS(exact_linear_solution(0.0, 0.0, 0.0, 1.0), Error);
}

TEST_CASE("exact linear solution agrees with an accurate integration") {
  Philox rng(8);
  for (double lambda : {1.0, 100.0}) {
    const IvpSystem sys = linear_system(lambda);
    for (int s = 0; s < 100; ++s) {
      const double y0 = rng.uniform(-1, 1), t0 = rng.uniform(0, 1), t = t0 + rng.uniform(0.001, 1);
      const double num = dp54_flow(sys, Vec::Constant(1, y0), t0, t, {1e-13, 1e-13})[0];
      CHECK(std::abs(num - exact_linear_solution(lambda, y0, t0, t)) <= 1e-9);
    }
  }
}

TEST_CASE("catalog defaults round-trip through the config format") {
  for (const auto& id : catalog_ids()) {
    CAPTURE(id);
    const CatalogEntry e = catalog_entry(id);
    const auto j = to_config(e);
    const CatalogEntry back = entry_from_config(nlohmann::json::parse(j.dump()));
    CHECK(to_config(back) == j);
    CHECK(back.domain == e.domain);
    CHECK(back.boundaries == e.boundaries);
    CHECK(back.kind == e.kind);
    CHECK(back.model.hidden == e.model.hidden);
    CHECK(back.train.q == e.train.q);
    CHECK(back.march.dt == e.march.dt);
    CHECK(static_cast<bool>(back.exact) == static_cast<bool>(e.exact));
    CHECK(back.decomposed_spec().subdomains == e.decomposed_spec().subdomains);
  }
}

TEST_CASE("catalog defaults carry the documented settings") {
  const auto lin = catalog_entry("linear1e6");
  CHECK(lin.kind == RepKind::exp_s0);
  CHECK(lin.model.delta_m == 0.02);
  CHECK(lin.partition().count() == 2);
  const auto vdp = catalog_entry("vdp100");
  CHECK(vdp.partition().count() == 15);
  CHECK(vdp.march.mode == MarchConfig::Mode::quasi_adaptive);
  const auto hr = catalog_entry("hindmarsh_rose");
  CHECK(hr.partition().count() == 4);
  CHECK(catalog_entry("lorenz96").system.dim == 5);
  CHECK_THROWS_AS(catalog_entry("nope"), Error);
}

TEST_CASE("config parser rejects schema errors") {
  auto j = to_config(catalog_entry("linear100"));
  j["network"]["kind"] = "ExpS9";
  CHECK_THROWS_AS(entry_from_config(j), Error);
  j = to_config(catalog_entry("linear100"));
  j["networks"] = 1;
  CHECK_THROWS_AS(entry_from_config(j), Error);
  j = to_config(catalog_entry("linear100"));
  j["training"]["Q"] = "many";
  CHECK_THROWS_AS(entry_from_config(j), Error);
  CHECK_THROWS_AS(resolve_system("linear", {{"mu", 1.0}}), Error);
  CHECK_THROWS_AS(resolve_system("duffing", {}), Error);
  // Partial configs inherit the named problem's defaults.
  const auto partial = entry_from_config({{"problem", "vdp5"}, {"network", {{"M", 50}}}});
  CHECK(partial.model.hidden == std::vector<int>{50});
  CHECK(partial.train.q == catalog_entry("vdp5").train.q);
}

TEST_CASE("experiment with an empty sweep writes only the header") {
  ExperimentConfig cfg;
  cfg.problem = catalog_entry("linear100");
  cfg.methods = {Method::exp_s1};
  const auto rows = run_experiment(cfg);
  CHECK(rows.empty());
  CHECK(results_csv(rows, cfg.sweep, true) ==
        "method,sweep_variable,sweep_value,e_max,e_rms,train_seconds,march_seconds,train_residual,error\n");
}

TEST_CASE("classical-only experiments leave training columns empty") {
  ExperimentConfig cfg;
  cfg.problem = catalog_entry("linear100");
  cfg.sweep = SweepVariable::h_max;
  cfg.values = {0.01, 0.005};
  cfg.methods = {Method::rk4};
  const auto rows = run_experiment(cfg);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.error.empty());
    CHECK_FALSE(r.train_seconds.has_value());
    CHECK_FALSE(r.train_residual.has_value());
    CHECK(r.e_max.has_value());
  }
  CHECK(*rows[1].e_max < *rows[0].e_max);
}

TEST_CASE("row failures are recorded and the run continues") {
  ExperimentConfig cfg;
  cfg.problem = catalog_entry("linear100");
  cfg.sweep = SweepVariable::tolerance;
  cfg.values = {1e-6, 1e-9};
  cfg.methods = {Method::exp_s1, Method::dp54};
  const auto rows = run_experiment(cfg);
  REQUIRE(rows.size() == 4);
  CHECK_FALSE(rows[0].error.empty());
  CHECK(rows[1].error.empty());
  CHECK(*rows[3].e_max < *rows[1].e_max);
}

TEST_CASE("M sweep on the linear problem decreases the error") {
  ExperimentConfig cfg;
  cfg.problem = catalog_entry("linear100");
  cfg.problem.train.q = 1500;
  cfg.values = {100, 200, 400};
  cfg.methods = {Method::exp_s1};
  cfg.jobs = 3;
  const auto rows = run_experiment(cfg);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) REQUIRE(r.error.empty());
  CHECK(*rows[1].e_max < *rows[0].e_max);
  CHECK(*rows[2].e_max < *rows[1].e_max);
}

TEST_CASE("csv output is byte-stable under a fixed seed") {
  ExperimentConfig cfg;
  cfg.problem = catalog_entry("free_pendulum");
  cfg.problem.train.q = 100;
  cfg.problem.tf = 2.0;
  cfg.problem.march.tf = 2.0;
  cfg.values = {20, 30};
  cfg.methods = {Method::exp_s1, Method::rk4};
  cfg.seed = 5;
  cfg.record_timing = false;
  const auto dir = std::filesystem::temp_directory_path();
  cfg.output = (dir / "psiflow_a.csv").string();
  cfg.jobs = 1;
  run_experiment(cfg);
  cfg.output = (dir / "psiflow_b.csv").string();
  cfg.jobs = 4;
  run_experiment(cfg);
  const std::string a = read_file((dir / "psiflow_a.csv").string());
  const std::string b = read_file((dir / "psiflow_b.csv").string());
  CHECK(!a.empty());
  CHECK(a == b);
  const auto j = nlohmann::json::parse(read_file((dir / "psiflow_a.csv.json").string()));
  CHECK(j.at("rows").size() == 4);
  for (const char* f : {"psiflow_a.csv", "psiflow_b.csv", "psiflow_a.csv.json", "psiflow_b.csv.json"})
    std::filesystem::remove(dir / f);
}

TEST_CASE("experiment configs parse from JSON") {
  const auto cfg = experiment_from_json(
      {{"problem", "vdp5"}, {"sweep", "Q"}, {"values", {500, 1000}}, {"methods", {"ExpS0", "DP54"}}, {"seed", 3}});
  CHECK(cfg.sweep == SweepVariable::q);
  CHECK(cfg.methods == std::vector<Method>{Method::exp_s0, Method::dp54});
  CHECK(cfg.problem.id == "vdp5");
  const auto again = experiment_from_json(to_json(cfg));
  CHECK(to_json(again) == to_json(cfg));
  CHECK_THROWS_AS(experiment_from_json({{"problem", "vdp5"}, {"methods", {"Euler"}}}), Error);
  CHECK_THROWS_AS(experiment_from_json({{"problem", "vdp5"}, {"methods", {"RK4"}}, {"sweep", "N"}}), Error);
}

TEST_CASE("flow periodicity checks pass on the pendulums") {
  const auto forced = verify_flow_theorems(catalog_entry("forced_pendulum"), 20, 1e-8);
  CHECK(forced.passed());
  CHECK(forced.checks.size() == 3);
  const auto free = verify_flow_theorems(catalog_entry("free_pendulum"), 20, 1e-8);
  CHECK(free.passed());
  REQUIRE(free.checks.size() == 1);
  CHECK(free.checks[0].component == 0);
}

TEST_CASE("flow periodicity checks need metadata") {
  auto expect_absent = [](const CatalogEntry& e, std::vector<FlowTheorem> which) {
    try {
      verify_flow_theorems(e, 5, 1e-8, 0, which);
      FAIL("expected metadata-absent");
    } catch (const Error& err) {
      CHECK(err.kind() == ErrorKind::metadata_absent);
    }
  };
  expect_absent(catalog_entry("free_pendulum"), {FlowTheorem::temporal_period});
  expect_absent(catalog_entry("lorenz63"), {});
  expect_absent(catalog_entry("linear100"), {FlowTheorem::state_period});
}

TEST_CASE("a broken system fails the periodicity check") {
  CatalogEntry e = catalog_entry("forced_pendulum");
  e.system.temporal_period = 1.0;  // wrong period
  const auto r = verify_flow_theorems(e, 5, 1e-8, 0, {FlowTheorem::temporal_period});
  CHECK_FALSE(r.passed());
}
