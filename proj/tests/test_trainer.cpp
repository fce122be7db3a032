#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "psiflow/catalog.hpp"
#include "psiflow/trainer.hpp"
#include "support.hpp"

using namespace psiflow;

namespace {

// Residual (1, exp(x)): the loss keeps creeping towards 1 as x -> -inf,
// so undamped steps of -1 stall after a few iterations.
ResidualFn creeping() {
  return [](const Vec& x) { return Vec{{1.0, std::exp(x[0])}}; };
}
JacobianFn creeping_jac() {
  return [](const Vec& x) { return Mat{{0.0}, {std::exp(x[0])}}; };
}

PsiModel small_linear_model(RepKind kind, int width) {
  const CatalogEntry e = catalog_entry("linear100");
  ModelSpec spec = e.model;
  spec.hidden = {width};
  return make_model(e.system, e.domain, kind, spec);
}

}  // namespace

TEST_CASE("gauss-newton solves a linear least-squares problem in one step") {
  Philox rng(17);
  Mat a(20, 5);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform(-1, 1);
  const Vec b = psiflow::testing::random_vec(rng, 20);
  // Closed form through the normal equations.
  const Vec exact = (a.transpose() * a).ldlt().solve(a.transpose() * b);
  TrainConfig cfg;
  const auto res = gauss_newton([&](const Vec& x) -> Vec { return a * x - b; }, [&](const Vec&) -> Mat { return a; },
                                Vec::Zero(5), cfg);
  CHECK((res.beta - exact).lpNorm<Eigen::Infinity>() <= 1e-10);
  CHECK(res.report.iterations <= 2);
}

TEST_CASE("gauss-newton converges on a nonlinear problem") {
  // Rosenbrock in residual form, minimum at (1, 1).
  const ResidualFn r = [](const Vec& x) { return Vec{{10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]}}; };
  const JacobianFn j = [](const Vec& x) { return Mat{{-20.0 * x[0], 10.0}, {-1.0, 0.0}}; };
  TrainConfig cfg;
  cfg.max_iterations = 200;
  const auto res = gauss_newton(r, j, Vec{{-1.2, 1.0}}, cfg);
  CHECK((res.beta - Vec{{1.0, 1.0}}).lpNorm<Eigen::Infinity>() <= 1e-8);
}

TEST_CASE("stalled runs restart from the best point") {
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.gtol = 0.0;  // the gradient vanishes as x -> -inf; only stalls should stop a run
  cfg.perturb.trigger = 3;
  cfg.perturb.max_restarts = 4;
  const auto a = nllsq_perturb(creeping(), creeping_jac(), Vec::Zero(1), cfg, 0.5);
  CHECK(a.report.restarts == 4);
  CHECK(a.report.restart_best.size() == 5);
  CHECK(a.report.final_norm >= 1.0);
  CHECK(a.report.final_norm <= *std::min_element(a.report.restart_best.begin(), a.report.restart_best.end()));
  const auto b = nllsq_perturb(creeping(), creeping_jac(), Vec::Zero(1), cfg, 0.5);
  CHECK(a.beta == b.beta);

  cfg.perturb.max_restarts = 0;
  const auto c = nllsq_perturb(creeping(), creeping_jac(), Vec::Zero(1), cfg, 0.5);
  CHECK(c.report.restarts == 0);
  CHECK(c.report.stop != StopReason::stalled);
}

TEST_CASE("collocation points are reproducible and inside the box") {
  const std::vector<Interval> box{{-1.0, 2.0}, {0.0, 0.5}};
  const auto a = sample_collocation(box, 200, 5, 1);
  const auto b = sample_collocation(box, 200, 5, 1);
  const auto c = sample_collocation(box, 200, 5, 2);
  CHECK(a.points == b.points);
  CHECK(a.points != c.points);
  CHECK(a.points.col(0).minCoeff() >= -1.0);
  CHECK(a.points.col(0).maxCoeff() <= 2.0);
  CHECK(a.points.col(1).maxCoeff() <= 0.5);
  CHECK_THROWS_AS(sample_collocation(box, 0, 5), Error);
}

TEST_CASE("training reduces the residual and is deterministic") {
  const PsiModel m = small_linear_model(RepKind::exp_s1, 80);
  TrainConfig cfg;
  cfg.q = 300;
  cfg.seed = 4;
  std::vector<TelemetryRecord> log;
  const auto [trained, report] = train_model(m, cfg, [&](const TelemetryRecord& r) { log.push_back(r); });
  CHECK(trained.trained);
  const auto untrained = residual_at(m, sample_collocation(collocation_box(m), 300, 99));
  const auto after = residual_at(trained, sample_collocation(collocation_box(m), 300, 99));
  CHECK(after.norm() < 1e-3 * untrained.norm());
  REQUIRE_FALSE(log.empty());
  CHECK(log.front().iteration == 1);
  for (std::size_t k = 1; k < log.size(); ++k)
    if (log[k].restart == log[k - 1].restart) CHECK(log[k].iteration == log[k - 1].iteration + 1);
  for (const auto& rec : log) CHECK(rec.subdomain == 0);
  const auto again = train_model(m, cfg).first;
  CHECK(again.subnet.beta == trained.subnet.beta);
}

TEST_CASE("every representation kind trains on the linear problem") {
  for (RepKind kind : kAllRepKinds) {
    CAPTURE(to_string(kind));
    const PsiModel m = small_linear_model(kind, 150);
    TrainConfig cfg;
    cfg.q = 450;
    const auto [trained, report] = train_model(m, cfg);
    const auto before = residual_at(m, sample_collocation(collocation_box(m), 450, 7)).norm();
    const auto after = residual_at(trained, sample_collocation(collocation_box(m), 450, 7)).norm();
    // ImpS1 has the slowest decay in M; 150 features still buy two decades.
    CHECK(after < 1e-2 * before);
  }
}

TEST_CASE("decomposed training does not depend on the thread count") {
  CatalogEntry e = catalog_entry("free_pendulum");
  e.model.hidden = {40};
  e.train.q = 150;
  const auto spec = e.decomposed_spec();
  REQUIRE(spec.subdomains.size() == 3);
  const auto one = train_decomposed(e.system, spec, 1);
  const auto three = train_decomposed(e.system, spec, 3);
  REQUIRE(one.model.size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(one.model.models[static_cast<std::size_t>(k)].subnet.beta ==
          three.model.models[static_cast<std::size_t>(k)].subnet.beta);
    CHECK(one.model.models[static_cast<std::size_t>(k)].subnet.stream_index == static_cast<std::uint32_t>(k));
  }
  // Sub-domains draw different hidden layers.
  CHECK(one.model.models[0].subnet.hidden[0].weights != one.model.models[1].subnet.hidden[0].weights);
}

TEST_CASE("telemetry lines are JSON objects") {
  const auto j = nlohmann::json::parse(to_json_line({1, 2, 0.5, 1e-3, true, 4}));
  CHECK(j.at("restart") == 1);
  CHECK(j.at("iteration") == 2);
  CHECK(j.at("subdomain") == 4);
  CHECK(j.at("accepted") == true);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.q = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.damping_init = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
