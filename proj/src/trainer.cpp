#include "psiflow/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <optional>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "psiflow/rng.hpp"

namespace psiflow {

void TrainConfig::validate() const {
  require(q >= 1, "Q must be at least 1");
  require(max_iterations >= 0, "max_iterations must be non-negative");
  require(gtol >= 0.0 && xtol >= 0.0 && ftol >= 0.0, "tolerances must be non-negative");
  require(damping_init > 0.0, "damping_init must be positive");
  require(perturb.trigger >= 1, "perturbation trigger must be at least 1");
  require(perturb.max_restarts >= 0, "max_restarts must be non-negative");
}

std::string_view to_string(StopReason reason) noexcept {
  switch (reason) {
    case StopReason::gradient: return "gradient";
    case StopReason::step: return "step";
    case StopReason::residual: return "residual";
    case StopReason::max_iterations: return "max-iterations";
    case StopReason::no_progress: return "no-progress";
    case StopReason::stalled: return "stalled";
  }
  return "unknown";
}

std::string to_json_line(const TelemetryRecord& rec) {
  nlohmann::json j{{"subdomain", rec.subdomain}, {"restart", rec.restart},   {"iteration", rec.iteration},
                   {"loss", rec.loss},           {"damping", rec.damping},   {"accepted", rec.accepted}};
  return j.dump();
}

CollocationSet sample_collocation(const std::vector<Interval>& box, int q, std::uint64_t seed,
                                  std::uint32_t stream_index) {
  require(q >= 1, "Q must be at least 1");
  require(!box.empty(), "collocation box has no axes");
  for (const auto& iv : box)
    require(iv.hi > iv.lo, fmt::format("collocation box axis [{}, {}] is degenerate", iv.lo, iv.hi));
  CollocationSet set;
  set.seed = seed;
  set.points.resize(q, static_cast<Eigen::Index>(box.size()));
  Philox rng(seed, stream_id(StreamPurpose::collocation, stream_index));
  for (Eigen::Index p = 0; p < q; ++p)
    for (std::size_t a = 0; a < box.size(); ++a)
      set.points(p, static_cast<Eigen::Index>(a)) = rng.uniform(box[a].lo, box[a].hi);
  return set;
}

std::vector<Interval> collocation_box(const PsiModel& model) {
  std::vector<Interval> box = model.domain.y0_box;
  if (model.normalizer.t0_interval) box.push_back(*model.domain.t0_interval);
  box.push_back(model.domain.xi_interval());
  return box;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct RunResult {
  Vec beta;
  double norm = 0.0;
  int iterations = 0;
  StopReason stop = StopReason::max_iterations;
};

Vec checked_residual(const ResidualFn& residual, const Vec& beta, int iteration) {
  Vec r = residual(beta);
  if (!r.allFinite()) fail(ErrorKind::numeric_failure, fmt::format("non-finite residual at iteration {}", iteration));
  return r;
}

// One damped Gauss-Newton run. stall_trigger = 0 disables stall detection.
RunResult run_lm(const ResidualFn& residual, const JacobianFn& jacobian, Vec beta, const TrainConfig& cfg,
                 int stall_trigger, int restart, const TelemetrySink& sink) {
  constexpr int kMaxTrials = 60;
  Vec r = checked_residual(residual, beta, 0);
  double norm = r.norm();
  RunResult best{beta, norm, 0, StopReason::max_iterations};
  double mu = cfg.damping_init;  // relative to the largest squared singular value
  int stalled = 0;

  for (int it = 1; it <= cfg.max_iterations; ++it) {
    best.iterations = it;
    if (norm <= cfg.ftol) {
      best.stop = StopReason::residual;
      return best;
    }
    const Mat jac = jacobian(beta);
    if (!jac.allFinite())
      fail(ErrorKind::numeric_failure, fmt::format("non-finite Jacobian at iteration {}", it));
    if ((jac.transpose() * r).lpNorm<Eigen::Infinity>() <= cfg.gtol) {
      best.stop = StopReason::gradient;
      return best;
    }

    const Eigen::Index m = jac.rows(), p = jac.cols();
    Mat core;
    Vec qtr;
    if (m > p) {
      Eigen::HouseholderQR<Mat> qr(jac);
      core = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
      qtr = (qr.householderQ().adjoint() * r).head(p);
    } else {
      core = jac;
      qtr = r;
    }
    Eigen::BDCSVD<Mat> svd(core, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec& s = svd.singularValues();
    const Vec utr = svd.matrixU().adjoint() * qtr;
    const double smax = s.size() > 0 ? s[0] : 0.0;
    // Truncate only singular values lost to roundoff of R; the random features
    // are nearly collinear and a max(m, p) * eps cutoff discards usable directions.
    const double cutoff = std::numeric_limits<double>::epsilon() * smax;

    bool accepted = false;
    Vec step, beta_new, r_new;
    double norm_new = norm;
    for (int trial = 0; trial <= kMaxTrials; ++trial) {
      Vec coef(s.size());
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (trial == 0)
          coef[i] = s[i] > cutoff ? utr[i] / s[i] : 0.0;
        else
          coef[i] = s[i] * utr[i] / (s[i] * s[i] + mu * smax * smax);
      }
      step = -(svd.matrixV() * coef);
      beta_new = beta + step;
      r_new = residual(beta_new);
      norm_new = r_new.allFinite() ? r_new.norm() : std::numeric_limits<double>::infinity();
      if (norm_new < norm) {
        accepted = true;
        mu *= 0.3;
        break;
      }
      if (trial > 0) mu *= 2.0;
      if (trial > 0 && step.norm() <= cfg.xtol * (cfg.xtol + beta.norm())) break;
    }
    if (sink) sink({restart, it, accepted ? norm_new : norm, mu, accepted});
    if (!accepted) {
      best.stop = StopReason::no_progress;
      return best;
    }

    const double rel = (norm * norm - norm_new * norm_new) / (norm * norm);
    const bool small_step = step.norm() <= cfg.xtol * (cfg.xtol + beta.norm());
    beta = std::move(beta_new);
    r = std::move(r_new);
    norm = norm_new;
    if (norm < best.norm) {
      best.beta = beta;
      best.norm = norm;
    }
    if (small_step) {
      best.stop = StopReason::step;
      return best;
    }
    if (stall_trigger > 0) {
      stalled = rel < 1e-4 ? stalled + 1 : 0;
      if (stalled >= stall_trigger) {
        best.stop = StopReason::stalled;
        return best;
      }
    }
  }
  if (norm <= cfg.ftol) best.stop = StopReason::residual;
  return best;
}

}  // namespace

SolveResult gauss_newton(const ResidualFn& residual, const JacobianFn& jacobian, Vec beta0, const TrainConfig& cfg,
                         const TelemetrySink& sink) {
  cfg.validate();
  const auto start = Clock::now();
  RunResult run = run_lm(residual, jacobian, std::move(beta0), cfg, 0, 0, sink);
  SolveResult out;
  out.report.final_norm = run.norm;
  out.report.iterations = run.iterations;
  out.report.stop = run.stop;
  out.report.restart_best = {run.norm};
  out.report.final_max_residual = checked_residual(residual, run.beta, run.iterations).lpNorm<Eigen::Infinity>();
  out.report.wall_time_seconds = seconds_since(start);
  out.beta = std::move(run.beta);
  return out;
}

SolveResult nllsq_perturb(const ResidualFn& residual, const JacobianFn& jacobian, Vec beta0, const TrainConfig& cfg,
                          double magnitude, const TelemetrySink& sink) {
  cfg.validate();
  require(magnitude >= 0.0, "perturbation magnitude must be non-negative");
  const auto start = Clock::now();
  const int trigger = cfg.perturb.max_restarts > 0 ? cfg.perturb.trigger : 0;

  RunResult run = run_lm(residual, jacobian, std::move(beta0), cfg, trigger, 0, sink);
  RunResult best = run;
  SolveResult out;
  out.report.restart_best.push_back(run.norm);
  int total_iterations = run.iterations;
  int restarts = 0;
  while (run.stop == StopReason::stalled && best.norm > cfg.ftol && restarts < cfg.perturb.max_restarts) {
    ++restarts;
    Philox rng(cfg.seed + static_cast<std::uint64_t>(restarts), stream_id(StreamPurpose::perturbation));
    Vec trial = best.beta;
    for (Eigen::Index i = 0; i < trial.size(); ++i) trial[i] += rng.uniform(-magnitude, magnitude);
    run = run_lm(residual, jacobian, std::move(trial), cfg, trigger, restarts, sink);
    total_iterations += run.iterations;
    out.report.restart_best.push_back(run.norm);
    if (run.norm < best.norm) best = run;
  }
  out.report.final_norm = best.norm;
  out.report.iterations = total_iterations;
  out.report.restarts = restarts;
  out.report.stop = run.stop;
  out.report.final_max_residual = checked_residual(residual, best.beta, total_iterations).lpNorm<Eigen::Infinity>();
  out.report.wall_time_seconds = seconds_since(start);
  out.beta = std::move(best.beta);
  return out;
}

std::pair<PsiModel, TrainReport> train_model(PsiModel model, const TrainConfig& cfg, const TelemetrySink& sink) {
  cfg.validate();
  model.validate();
  const auto start = Clock::now();
  const CollocationSet points = sample_collocation(collocation_box(model), cfg.q, cfg.seed, model.subnet.stream_index);
  const ResidualCache cache = prepare_residual(model, points);
  const int n = model.system.dim;
  const int m = model.subnet.width();
  const IvpSystem& sys = model.system;

  const ResidualFn residual = [&](const Vec& b) {
    return assemble_residual(cache, sys, Eigen::Map<const RowMat>(b.data(), n, m));
  };
  const JacobianFn jacobian = [&](const Vec& b) {
    return assemble_jacobian(cache, sys, Eigen::Map<const RowMat>(b.data(), n, m));
  };
  const int sub = static_cast<int>(model.subnet.stream_index);
  TelemetrySink tagged;
  if (sink)
    tagged = [&](const TelemetryRecord& rec) {
      TelemetryRecord copy = rec;
      copy.subdomain = sub;
      sink(copy);
    };

  const double magnitude = cfg.perturb.magnitude < 0.0 ? 0.5 * model.subnet.rm : cfg.perturb.magnitude;
  TrainConfig local = cfg;
  local.seed = cfg.seed ^ (static_cast<std::uint64_t>(model.subnet.stream_index) << 40);
  const Vec beta0 = Eigen::Map<const Vec>(model.subnet.beta.data(), n * m);
  SolveResult res = nllsq_perturb(residual, jacobian, beta0, local, magnitude, tagged);
  model.subnet.beta = Eigen::Map<const RowMat>(res.beta.data(), n, m);
  model.trained = true;
  res.report.wall_time_seconds = seconds_since(start);
  return {std::move(model), res.report};
}

DecomposedModel build_decomposed(const IvpSystem& sys, const DecomposedSpec& spec) {
  require(static_cast<int>(spec.subdomains.size()) == spec.partition.count(),
          "one sub-domain per partition cell expected");
  DecomposedModel dm;
  dm.partition = spec.partition;
  dm.subdomains = spec.subdomains;
  for (const auto& sub : spec.subdomains) {
    ModelSpec ms = spec.model;
    ms.stream_index = static_cast<std::uint32_t>(sub.id);
    ms.delta_m = sub.delta_m;
    dm.models.push_back(make_model(sys, training_domain(spec.partition, sub), spec.kind, ms));
  }
  dm.validate();
  return dm;
}

DecomposedTraining train_decomposed(const IvpSystem& sys, const DecomposedSpec& spec, int jobs,
                                    const TelemetrySink& sink) {
  require(jobs >= 1, "jobs must be at least 1");
  DecomposedTraining out;
  out.model = build_decomposed(sys, spec);
  const int count = out.model.size();
  out.reports.resize(static_cast<std::size_t>(count));

  std::mutex sink_mutex;
  TelemetrySink guarded;
  if (sink)
    guarded = [&](const TelemetryRecord& rec) {
      std::lock_guard lock(sink_mutex);
      sink(rec);
    };

  struct Failure {
    ErrorKind kind = ErrorKind::numeric_failure;
    std::string message;
  };
  std::vector<std::optional<Failure>> failures(static_cast<std::size_t>(count));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int id = next++; id < count; id = next++) {
      const auto k = static_cast<std::size_t>(id);
      try {
        auto [trained, report] = train_model(std::move(out.model.models[k]), spec.train, guarded);
        out.model.models[k] = std::move(trained);
        out.reports[k] = report;
      } catch (const Error& e) {
        failures[k] = Failure{e.kind(), e.what()};
      } catch (const std::exception& e) {
        failures[k] = Failure{ErrorKind::numeric_failure, e.what()};
      }
    }
  };
  const int threads = std::min(jobs, count);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::string message;
  std::optional<ErrorKind> kind;
  for (int id = 0; id < count; ++id) {
    const auto& f = failures[static_cast<std::size_t>(id)];
    if (!f) continue;
    if (!kind) kind = f->kind;
    message += fmt::format("{}sub-domain {}: {}", message.empty() ? "" : "; ", id, f->message);
  }
  if (kind) fail(*kind, "training failed for " + message);
  return out;
}

Vec residual_at(const PsiModel& model, const CollocationSet& points) {
  return assemble_residual(model, model.subnet.beta, points);
}

}  // namespace psiflow
