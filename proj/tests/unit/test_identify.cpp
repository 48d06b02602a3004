#include "doctest.h"
#include "refs.hpp"

#include <random>

#include "spmeid/error.hpp"
#include "spmeid/identify.hpp"
#include "spmeid/metrics.hpp"

using namespace spmeid;
using testutil::box_normalizer;
using testutil::make_refs;

namespace {

ident::UpdateFn constant_update(const cell::ParameterSet& p) {
  return [p](const punet::EvaluationContext&, const cell::ParameterSet&) { return punet::UpdateResult{p, 0}; };
}

ident::UpdateFn identity_update() {
  return [](const punet::EvaluationContext&, const cell::ParameterSet& l) { return punet::UpdateResult{l, 0}; };
}

cell::ParameterSet shifted(const cell::ParameterSet& p, double f) {
  auto a = p.to_array();
  for (auto& v : a) v *= f;
  return cell::feasible_bounds().clip(cell::ParameterSet::from_array(a));
}

}  // namespace

TEST_CASE("rmse against a naive loop") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(3.0, 4.2);
  std::vector<double> a(777), b(777);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = u(rng);
    b[i] = u(rng);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  const double naive = std::sqrt(s / static_cast<double>(a.size())) * 1000.0;
  CHECK(std::abs(metrics::rmse_mv(a, b) - naive) <= 1e-12 * naive);
  std::vector<double> c = a;
  for (auto& v : c) v += 0.005;
  CHECK(metrics::rmse_mv(c, a) == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(metrics::parameter_mape(testutil::base_params(), testutil::base_params()).mean == 0.0);
}

TEST_CASE("an exact update reaches the threshold after one step") {
  const auto cfg = cell::CellConfig::defaults();
  const auto norm = box_normalizer();
  const auto truth = shifted(testutil::base_params(), 1.1);
  const auto refs = make_refs(truth, cfg, 3, 150);
  const auto lambda0 = norm.denormalize(cell::ParamVector{});
  const auto run = ident::identify(refs, testutil::oracle_provider(refs, cfg), constant_update(truth), norm, cfg,
                                   lambda0, {.delta_mv = 1e-3});
  CHECK(run.stop == ident::StopReason::Threshold);
  REQUIRE(run.records.size() == 2);
  CHECK(run.iterations() == 1);
  CHECK(run.records[0].max_rmse_mv > 1.0);
  CHECK(run.records[1].max_rmse_mv < 1e-6);
  CHECK(run.best == 1);
  CHECK(run.evaluations == 2);
  CHECK(metrics::parameter_mape(run.best_record().lambda, truth).mean == 0.0);
}

TEST_CASE("the identity update stagnates after exactly three iterations") {
  const auto cfg = cell::CellConfig::defaults();
  const auto norm = box_normalizer();
  const auto refs = make_refs(shifted(testutil::base_params(), 1.1), cfg, 2, 100);
  const auto lambda0 = norm.denormalize(cell::ParamVector{});
  const auto run = ident::identify(refs, testutil::oracle_provider(refs, cfg), identity_update(), norm, cfg, lambda0,
                                   {.delta_mv = 1e-3});
  CHECK(run.stop == ident::StopReason::Stagnation);
  CHECK(run.records.size() == 4);
  CHECK(run.best == 0);
}

TEST_CASE("a constant update stops three iterations after its best") {
  const auto cfg = cell::CellConfig::defaults();
  const auto norm = box_normalizer();
  const auto truth = shifted(testutil::base_params(), 1.1);
  const auto refs = make_refs(truth, cfg, 2, 100);
  const auto lambda0 = norm.denormalize(cell::ParamVector{});
  const auto other = shifted(truth, 1.03);
  const auto run =
      ident::identify(refs, testutil::oracle_provider(refs, cfg), constant_update(other), norm, cfg, lambda0,
                      {.delta_mv = 1e-3});
  CHECK(run.stop == ident::StopReason::Stagnation);
  CHECK(run.records.size() == run.best + 4);
  for (std::size_t i = run.best + 1; i < run.records.size(); ++i) {
    CHECK(run.records[i].max_rmse_mv >= run.best_record().max_rmse_mv);
  }
  for (const auto& r : run.records) CHECK(run.best_record().max_rmse_mv <= r.max_rmse_mv);
}

TEST_CASE("iteration cap and determinism") {
  const auto cfg = cell::CellConfig::defaults();
  const auto norm = box_normalizer();
  const auto truth = shifted(testutil::base_params(), 1.1);
  const auto refs = make_refs(truth, cfg, 2, 80);
  const auto lambda0 = norm.denormalize(cell::ParamVector{});
  const auto halfway = [&](const punet::EvaluationContext&, const cell::ParameterSet& l) {
    auto a = l.to_array();
    const auto t = truth.to_array();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.5 * (a[i] + t[i]);
    return punet::UpdateResult{cell::ParameterSet::from_array(a), 0};
  };
  ident::IdentifyConfig ic;
  ic.max_iter = 4;
  ic.delta_mv = 1e-9;
  const auto run = ident::identify(refs, testutil::oracle_provider(refs, cfg), halfway, norm, cfg, lambda0, ic);
  CHECK(run.stop == ident::StopReason::MaxIter);
  REQUIRE(run.records.size() == 5);
  for (std::size_t i = 0; i < run.records.size(); ++i) CHECK(run.records[i].k == static_cast<int>(i));
  for (std::size_t i = 1; i < run.records.size(); ++i) CHECK(run.records[i].max_rmse_mv < run.records[i - 1].max_rmse_mv);
  CHECK(run.best == 4);

  const surrogate::NeuralSpme phi(surrogate::preset(surrogate::Scale::Small, surrogate::kNspmInputs, true, 80), 4);
  const punet::UpdateNet psi(punet::preset(surrogate::Scale::Small, 160), 5);
  const auto a = ident::identify(refs, phi, ident::punet_update_fn(psi, norm), norm, cfg, lambda0, ic);
  const auto b = ident::identify(refs, phi, ident::punet_update_fn(psi, norm), norm, cfg, lambda0, ic);
  CHECK(a.stop == b.stop);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].lambda.to_array() == b.records[i].lambda.to_array());
    CHECK(a.records[i].rmse_mv == b.records[i].rmse_mv);
  }
  CHECK_THROWS_AS(ident::identify({}, phi, identity_update(), norm, cfg, lambda0, ic), ConfigError);
  ic.delta_mv = 0.0;
  CHECK_THROWS_AS(ident::identify(refs, phi, identity_update(), norm, cfg, lambda0, ic), ConfigError);
}

TEST_CASE("infeasible iterates are repaired or end the run") {
  const auto cfg = cell::CellConfig::defaults();
  const auto norm = box_normalizer();
  const auto truth = testutil::base_params();
  const auto refs = make_refs(truth, cfg, 2, 60);
  const auto solvable = [&](const cell::ParameterSet& p) {
    try {
      for (const auto& r : refs) stoich::solve_initial_stoichiometry(p, cfg, r.v_init);
      return true;
    } catch (const InfeasibleError&) {
      return false;
    }
  };
  std::mt19937_64 rng(8);
  cell::ParameterSet bad;
  do {
    bad = testutil::random_params(rng, 1.0);
  } while (solvable(bad));
  const auto start = shifted(truth, 1.05);
  REQUIRE(solvable(start));
  const auto run = ident::identify(refs, testutil::oracle_provider(refs, cfg), constant_update(bad), norm, cfg, start,
                                   {.delta_mv = 1e-9});
  REQUIRE(run.records.size() >= 1);
  auto mid = bad.to_array();
  const auto t = start.to_array();
  for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = 0.5 * (mid[i] + t[i]);
  if (solvable(cell::ParameterSet::from_array(mid))) {
    REQUIRE(run.records.size() >= 2);
    CHECK(run.records[1].repairs == 1);
    CHECK(run.records[1].lambda.to_array() == mid);
  } else {
    CHECK(run.stop == ident::StopReason::Infeasible);
    CHECK(run.records.size() == 1);
    CHECK(run.diagnostic.find("infeasible iterate") != std::string::npos);
  }
}

TEST_CASE("CMA-ES objective and identification on the simulator") {
  const auto cfg = cell::CellConfig::defaults();
  const auto norm = box_normalizer();
  const auto truth = shifted(testutil::base_params(), 1.1);
  const auto refs = make_refs(truth, cfg, 2, 80);
  const auto z = norm.normalize(truth);
  Eigen::VectorXd zt(9);
  for (int i = 0; i < 9; ++i) zt[i] = z[static_cast<std::size_t>(i)];
  CHECK(ident::objective_mv(zt, refs, ident::ForwardModel::Simulator, nullptr, norm, cfg) < 1e-9);
  CHECK(ident::objective_mv(Eigen::VectorXd::Zero(9), refs, ident::ForwardModel::Simulator, nullptr, norm, cfg) > 1.0);
  CHECK_THROWS_AS(ident::objective_mv(zt, refs, ident::ForwardModel::Surrogate, nullptr, norm, cfg), ConfigError);

  opt::CmaConfig cc;
  cc.max_evaluations = 60;
  cc.target = 1e-12;
  const auto a = ident::identify_cmaes(refs, ident::ForwardModel::Simulator, nullptr, norm, cfg, cc);
  const auto b = ident::identify_cmaes(refs, ident::ForwardModel::Simulator, nullptr, norm, cfg, cc);
  CHECK(a.result.evaluations == 60);
  CHECK(a.result.best_value == b.result.best_value);
  CHECK(a.result.best_value <= a.result.history.front().value);
  CHECK(cell::feasible_bounds().contains(a.best));
}

TEST_CASE("forward timing harness") {
  const auto cfg = cell::CellConfig::defaults();
  const auto p = testutil::base_params();
  const auto refs = make_refs(p, cfg, 3, 100);
  const surrogate::NeuralSpme phi(surrogate::preset(surrogate::Scale::Small, surrogate::kNspmInputs, true, 100), 4);
  const auto t = ident::time_forward(refs, p, phi, box_normalizer(), cfg, sim::SimGrid{}, 3);
  CHECK(t.batch == 3);
  CHECK(t.surrogate_s > 0.0);
  CHECK(t.simulator_s > 0.0);
  CHECK(t.ratio == doctest::Approx(t.simulator_s / t.surrogate_s));
}
