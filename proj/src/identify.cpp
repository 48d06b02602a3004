#include "spmeid/identify.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>

#include "spmeid/error.hpp"
#include "spmeid/metrics.hpp"
#include "spmeid/provenance.hpp"
#include "spmeid/simulator.hpp"

namespace spmeid::ident {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool same(const cell::ParameterSet& a, const cell::ParameterSet& b) { return a.to_array() == b.to_array(); }

cell::ParameterSet midpoint(const cell::ParameterSet& a, const cell::ParameterSet& b) {
  auto x = a.to_array();
  const auto y = b.to_array();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5 * (x[i] + y[i]);
  return cell::ParameterSet::from_array(x);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string stop_name(StopReason r) {
  switch (r) {
    case StopReason::Threshold: return "threshold";
    case StopReason::Stagnation: return "stagnation";
    case StopReason::MaxIter: return "max_iter";
    case StopReason::Infeasible: return "infeasible";
  }
  return "unknown";
}

UpdateFn punet_update_fn(const punet::UpdateNet& psi, const cell::ParamNormalizer& norm) {
  return [&psi, norm](const punet::EvaluationContext& ctx, const cell::ParameterSet& lambda) {
    return punet::update(psi, ctx, lambda, norm);
  };
}

IdentificationRun identify(const std::vector<punet::Reference>& refs, const surrogate::NeuralSpme& phi,
                           const UpdateFn& update, const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                           const cell::ParameterSet& lambda0, const IdentifyConfig& ic) {
  return identify(refs, punet::surrogate_provider(phi), update, norm, cfg, lambda0, ic);
}

IdentificationRun identify(const std::vector<punet::Reference>& refs, const punet::YProvider& forward,
                           const UpdateFn& update, const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                           const cell::ParameterSet& lambda0, const IdentifyConfig& ic) {
  if (refs.empty()) throw ConfigError("identification needs at least one reference sequence");
  if (!(ic.delta_mv > 0.0)) throw ConfigError("identification threshold must be positive");
  if (ic.stagnation < 1 || ic.max_iter < 0) throw ConfigError("stagnation window and iteration cap must be positive");
  const auto t0 = Clock::now();
  const auto& box = cell::feasible_bounds();
  IdentificationRun run;
  cell::ParameterSet lambda = box.clip(lambda0);
  std::optional<cell::ParameterSet> last_feasible;
  std::size_t clipped = 0;
  double best = std::numeric_limits<double>::infinity();
  int non_improving = 0;

  for (int k = 0;; ++k) {
    IterationRecord rec;
    rec.k = k;
    rec.clipped = clipped;
    auto ctx = punet::build_context(lambda, forward, norm, cfg, refs, ic.workers);
    ++run.evaluations;
    if (!ctx.feasible) {
      const auto c = box.clip(lambda);
      if (!same(c, lambda)) {
        lambda = c;
        ++rec.repairs;
        ctx = punet::build_context(lambda, forward, norm, cfg, refs, ic.workers);
        ++run.evaluations;
      }
    }
    if (!ctx.feasible && last_feasible) {
      lambda = midpoint(lambda, *last_feasible);
      ++rec.repairs;
      ctx = punet::build_context(lambda, forward, norm, cfg, refs, ic.workers);
      ++run.evaluations;
    }
    if (!ctx.feasible) {
      run.stop = StopReason::Infeasible;
      run.diagnostic = fmt::format("infeasible iterate at k = {}: {}", k, ctx.diagnostic);
      break;
    }
    rec.lambda = lambda;
    rec.rmse_mv = ctx.rmse_mv;
    rec.max_rmse_mv = ctx.max_rmse_mv();
    run.records.push_back(rec);
    last_feasible = lambda;

    if (rec.max_rmse_mv < best) {
      best = rec.max_rmse_mv;
      run.best = run.records.size() - 1;
      non_improving = 0;
    } else {
      ++non_improving;
    }
    if (rec.max_rmse_mv < ic.delta_mv) {
      run.stop = StopReason::Threshold;
      break;
    }
    if (non_improving >= ic.stagnation) {
      run.stop = StopReason::Stagnation;
      break;
    }
    if (k >= ic.max_iter) {
      run.stop = StopReason::MaxIter;
      break;
    }
    const auto next = update(ctx, lambda);
    lambda = next.lambda;
    clipped = next.clipped;
  }
  run.wall_s = seconds_since(t0);
  return run;
}

void write_run_csv(const std::filesystem::path& path, const IdentificationRun& run,
                   const std::vector<std::string>& header) {
  std::string body = "iteration,max_rmse_mv";
  for (const auto& n : cell::kParamNames) body += fmt::format(",{}", n);
  body += "\n";
  for (const auto& r : run.records) {
    body += fmt::format("{},{}", r.k, r.max_rmse_mv);
    for (double v : r.lambda.to_array()) body += fmt::format(",{}", v);
    body += "\n";
  }
  metrics::write_text(path, header, body);
}

std::string run_summary(const IdentificationRun& run, const cell::ParameterSet* truth,
                        const std::vector<std::string>& header) {
  std::string s;
  for (const auto& h : header) s += "# " + h + "\n";
  s += "{\n";
  s += fmt::format("  \"stop_reason\": \"{}\",\n  \"iterations\": {},\n  \"evaluations\": {},\n", stop_name(run.stop),
                   run.iterations(), run.evaluations);
  s += fmt::format("  \"wall_s\": {},\n", run.wall_s);
  if (!run.records.empty()) {
    const auto& b = run.best_record();
    s += fmt::format("  \"best_iteration\": {},\n  \"best_max_rmse_mv\": {},\n  \"lambda\": {{", b.k, b.max_rmse_mv);
    const auto a = b.lambda.to_array();
    for (std::size_t i = 0; i < a.size(); ++i) s += fmt::format("{}\"{}\": {}", i ? ", " : "", cell::kParamNames[i], a[i]);
    s += "},\n";
    if (truth) s += fmt::format("  \"mape_percent\": {},\n", metrics::parameter_mape(b.lambda, *truth).mean);
  }
  s += fmt::format("  \"diagnostic\": \"{}\"\n}}\n", run.diagnostic);
  return s;
}

// --- CMA-ES baseline -----------------------------------------------------------------

double objective_mv(const Eigen::VectorXd& z, const std::vector<punet::Reference>& refs, ForwardModel model,
                    const surrogate::NeuralSpme* phi, const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                    const sim::SimGrid& grid) {
  cell::ParamVector zv{};
  for (std::size_t i = 0; i < cell::kNumParams; ++i) zv[i] = z[static_cast<Eigen::Index>(i)];
  const auto lambda = cell::feasible_bounds().clip(norm.denormalize(zv));
  if (model == ForwardModel::Surrogate) {
    if (!phi) throw ConfigError("surrogate objective needs a surrogate model");
    const auto ctx = punet::build_context(lambda, *phi, norm, cfg, refs);
    return ctx.feasible ? ctx.max_rmse_mv() : kInfeasiblePenaltyMv;
  }
  double worst = 0.0;
  for (const auto& r : refs) {
    try {
      const auto tr = sim::simulate(lambda, cfg, r.I, r.v_init, grid);
      worst = std::max(worst, metrics::rmse_mv(tr.V, r.V));
    } catch (const InfeasibleError&) {
      return kInfeasiblePenaltyMv;
    } catch (const SimulationError&) {
      return kInfeasiblePenaltyMv;
    } catch (const DomainError&) {
      return kInfeasiblePenaltyMv;
    }
  }
  return worst;
}

void normalized_box(const cell::ParamNormalizer& norm, Eigen::VectorXd& lo, Eigen::VectorXd& hi) {
  const auto& b = cell::feasible_bounds();
  lo.resize(cell::kNumParams);
  hi.resize(cell::kNumParams);
  for (std::size_t i = 0; i < cell::kNumParams; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    lo[k] = (b.lo[i] - norm.mean()[i]) / norm.stddev()[i];
    hi[k] = (b.hi[i] - norm.mean()[i]) / norm.stddev()[i];
  }
}

CmaRun identify_cmaes(const std::vector<punet::Reference>& refs, ForwardModel model, const surrogate::NeuralSpme* phi,
                      const cell::ParamNormalizer& norm, const cell::CellConfig& cfg, const opt::CmaConfig& cc,
                      const sim::SimGrid& grid) {
  const auto t0 = Clock::now();
  Eigen::VectorXd lo, hi;
  normalized_box(norm, lo, hi);
  const auto f = [&](const Eigen::VectorXd& z) { return objective_mv(z, refs, model, phi, norm, cfg, grid); };
  CmaRun run;
  run.result = opt::cma_minimize(f, Eigen::VectorXd::Zero(cell::kNumParams), lo, hi, cc);
  cell::ParamVector zv{};
  for (std::size_t i = 0; i < cell::kNumParams; ++i) zv[i] = run.result.best_x[static_cast<Eigen::Index>(i)];
  run.best = cell::feasible_bounds().clip(norm.denormalize(zv));
  run.wall_s = seconds_since(t0);
  return run;
}

// --- benchmark -------------------------------------------------------------------------

namespace {

long cma_cost(const opt::CmaResult& r) {
  return r.evaluations_to_target > 0 ? r.evaluations_to_target : r.evaluations;
}

}  // namespace

BenchmarkReport benchmark(const std::vector<data::Sample>& split, const surrogate::NeuralSpme& phi,
                          const punet::UpdateNet& psi, const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                          const BenchmarkConfig& bc, const std::function<void(const TaskResult&)>& on_task) {
  auto sets = data::Dataset::group_by_set(split);
  if (sets.empty()) throw ConfigError("benchmark split is empty");
  if (bc.max_tasks > 0 && sets.size() > bc.max_tasks) sets.resize(bc.max_tasks);
  const auto lambda0 = norm.denormalize(cell::ParamVector{});
  const auto update = punet_update_fn(psi, norm);

  BenchmarkReport rep;
  for (std::size_t t = 0; t < sets.size(); ++t) {
    TaskResult r;
    r.task = t;
    r.set_id = sets[t].front()->set_id;
    r.truth = sets[t].front()->lambda;
    const auto refs = punet::references_of(sets[t]);

    r.punet = identify(refs, phi, update, norm, cfg, lambda0, bc.identify);
    const double reached = r.punet.records.empty() ? bc.identify.delta_mv : r.punet.best_record().max_rmse_mv;
    if (!r.punet.records.empty()) r.punet_mape = metrics::parameter_mape(r.punet.best_record().lambda, r.truth).mean;

    opt::CmaConfig cc = bc.cma;
    cc.seed = derive_seed(bc.cma.seed, {t});
    cc.target = std::max(bc.identify.delta_mv, reached);
    cc.workers = bc.identify.workers;
    r.cmaes_target_mv = cc.target;
    r.cmaes = identify_cmaes(refs, ForwardModel::Surrogate, &phi, norm, cfg, cc, bc.grid);
    r.cmaes_mape = metrics::parameter_mape(r.cmaes.best, r.truth).mean;
    if (bc.with_simulator) {
      r.has_sim = true;
      r.cmaes_sim = identify_cmaes(refs, ForwardModel::Simulator, nullptr, norm, cfg, cc, bc.grid);
      r.cmaes_sim_mape = metrics::parameter_mape(r.cmaes_sim.best, r.truth).mean;
    }
    if (on_task) on_task(r);
    rep.tasks.push_back(std::move(r));
  }

  const auto n = static_cast<double>(rep.tasks.size());
  MethodRow p{"punet"}, c{"cmaes"}, s{"cmaes_simulator"};
  std::vector<double> pe, ce, se;
  for (const auto& r : rep.tasks) {
    p.mean_wall_s += r.punet.wall_s / n;
    pe.push_back(static_cast<double>(r.punet.evaluations));
    p.mean_final_rmse_mv += (r.punet.records.empty() ? kInfeasiblePenaltyMv : r.punet.best_record().max_rmse_mv) / n;
    p.mean_mape += r.punet_mape / n;
    p.reached_target += (r.punet.stop == StopReason::Threshold ? 1.0 : 0.0) / n;

    c.mean_wall_s += r.cmaes.wall_s / n;
    ce.push_back(static_cast<double>(cma_cost(r.cmaes.result)));
    c.mean_final_rmse_mv += r.cmaes.result.best_value / n;
    c.mean_mape += r.cmaes_mape / n;
    c.reached_target += (r.cmaes.result.status == opt::CmaStatus::Target ? 1.0 : 0.0) / n;
    if (r.has_sim) {
      s.mean_wall_s += r.cmaes_sim.wall_s / n;
      se.push_back(static_cast<double>(cma_cost(r.cmaes_sim.result)));
      s.mean_final_rmse_mv += r.cmaes_sim.result.best_value / n;
      s.mean_mape += r.cmaes_sim_mape / n;
      s.reached_target += (r.cmaes_sim.result.status == opt::CmaStatus::Target ? 1.0 : 0.0) / n;
    }
  }
  const auto fill = [](MethodRow& m, const std::vector<double>& e) {
    for (double v : e) m.mean_evaluations += v / static_cast<double>(e.size());
    m.median_evaluations = median(e);
  };
  fill(p, pe);
  fill(c, ce);
  rep.rows = {p, c};
  if (bc.with_simulator) {
    fill(s, se);
    rep.rows.push_back(s);
  }
  double slowest = 0.0;
  for (const auto& m : rep.rows) slowest = std::max(slowest, m.mean_wall_s);
  for (auto& m : rep.rows) m.speedup = m.mean_wall_s > 0.0 ? slowest / m.mean_wall_s : 0.0;
  rep.sample_efficiency = p.mean_evaluations > 0.0 ? c.mean_evaluations / p.mean_evaluations : 0.0;
  return rep;
}

void write_benchmark_csv(const std::filesystem::path& path, const BenchmarkReport& r,
                         const std::vector<std::string>& header) {
  std::string body =
      "method,mean_time_s,mean_evaluations,median_evaluations,speedup,mean_final_rmse_mv,mean_mape_percent,"
      "reached_target\n";
  for (const auto& m : r.rows) {
    body += fmt::format("{},{},{},{},{},{},{},{}\n", m.method, m.mean_wall_s, m.mean_evaluations, m.median_evaluations,
                        m.speedup, m.mean_final_rmse_mv, m.mean_mape, m.reached_target);
  }
  metrics::write_text(path, header, body);
}

void write_tasks_csv(const std::filesystem::path& path, const BenchmarkReport& r,
                     const std::vector<std::string>& header) {
  std::string body =
      "task,set_id,punet_iterations,punet_evaluations,punet_stop,punet_rmse_mv,punet_mape,punet_time_s,"
      "cmaes_target_mv,cmaes_evaluations,cmaes_status,cmaes_rmse_mv,cmaes_mape,cmaes_time_s,"
      "sim_evaluations,sim_rmse_mv,sim_mape,sim_time_s\n";
  for (const auto& t : r.tasks) {
    const double prmse = t.punet.records.empty() ? kInfeasiblePenaltyMv : t.punet.best_record().max_rmse_mv;
    body += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}", t.task, t.set_id, t.punet.iterations(),
                        t.punet.evaluations, stop_name(t.punet.stop), prmse, t.punet_mape, t.punet.wall_s,
                        t.cmaes_target_mv, cma_cost(t.cmaes.result), opt::status_name(t.cmaes.result.status),
                        t.cmaes.result.best_value, t.cmaes_mape, t.cmaes.wall_s);
    if (t.has_sim) {
      body += fmt::format(",{},{},{},{}\n", cma_cost(t.cmaes_sim.result), t.cmaes_sim.result.best_value,
                          t.cmaes_sim_mape, t.cmaes_sim.wall_s);
    } else {
      body += ",,,,\n";
    }
  }
  metrics::write_text(path, header, body);
}

// --- timing ------------------------------------------------------------------------------

TimingReport time_forward(const std::vector<punet::Reference>& refs, const cell::ParameterSet& lambda,
                          const surrogate::NeuralSpme& phi, const cell::ParamNormalizer& norm,
                          const cell::CellConfig& cfg, const sim::SimGrid& grid, int repeats) {
  if (refs.empty() || repeats < 1) throw ConfigError("timing needs references and at least one repeat");
  double sink = 0.0;
  const auto surrogate_batch = [&] {
    for (const auto& r : refs) {
      const auto sol = stoich::solve_initial_stoichiometry(lambda, cfg, r.v_init);
      const auto x = stoich::build_input_sequence(sol, lambda, cfg, r.I, grid.dt);
      sink += surrogate::predict_voltage(phi, x, lambda, norm, cfg, r.I).back();
    }
  };
  const auto simulator_batch = [&] {
    for (const auto& r : refs) sink += sim::simulate(lambda, cfg, r.I, r.v_init, grid).V.back();
  };
  surrogate_batch();
  simulator_batch();
  std::vector<double> ts, tm;
  for (int k = 0; k < repeats; ++k) {
    auto t0 = Clock::now();
    surrogate_batch();
    ts.push_back(seconds_since(t0));
    t0 = Clock::now();
    simulator_batch();
    tm.push_back(seconds_since(t0));
  }
  TimingReport r;
  r.batch = static_cast<int>(refs.size());
  r.repeats = repeats;
  r.surrogate_s = median(ts);
  r.simulator_s = median(tm);
  r.ratio = r.surrogate_s > 0.0 ? r.simulator_s / r.surrogate_s : 0.0;
  if (!std::isfinite(sink)) throw NumericalError("timing produced a non-finite voltage");
  return r;
}

}  // namespace spmeid::ident
