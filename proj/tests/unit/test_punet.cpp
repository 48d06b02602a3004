#include "doctest.h"
#include "refs.hpp"

#include <filesystem>
#include <fstream>

#include "spmeid/error.hpp"
#include "spmeid/metrics.hpp"
#include "spmeid/punet.hpp"

using namespace spmeid;
using testutil::box_normalizer;
using testutil::make_refs;

namespace {

data::Dataset tiny_dataset(const cell::CellConfig& cfg, int sets, std::size_t m, std::size_t n) {
  data::Dataset ds;
  ds.normalizer = box_normalizer();
  std::mt19937_64 rng(12);
  std::size_t id = 0;
  for (int s = 0; s < sets; ++s) {
    cell::ParameterSet p;
    std::vector<punet::Reference> refs;
    for (;;) {
      p = testutil::random_params(rng, 0.3);
      try {
        refs = make_refs(p, cfg, m, n);
        break;
      } catch (const Error&) {
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      data::Sample smp;
      smp.id = id++;
      smp.set_id = s;
      smp.seq = static_cast<int>(i);
      smp.lambda = p;
      smp.v_init = refs[i].v_init;
      smp.traj.V = refs[i].V;
      smp.traj.I = refs[i].I;
      (s == 0 ? ds.val : ds.train).push_back(smp);
    }
  }
  return ds;
}

}  // namespace

TEST_CASE("context layout") {
  const auto cfg = cell::CellConfig::defaults();
  const auto p = testutil::base_params();
  const auto refs = make_refs(p, cfg, 10, 600);
  const surrogate::NeuralSpme phi(surrogate::preset(surrogate::Scale::Small, surrogate::kNspmInputs, true, 600), 1);
  const auto norm = box_normalizer();
  const auto ctx = punet::build_context(p, phi, norm, cfg, refs);
  REQUIRE(ctx.feasible);
  CHECK(ctx.U.rows() == 6000);
  CHECK(ctx.U.cols() == punet::kChannels);
  CHECK(ctx.boundaries.size() == 11);
  CHECK(ctx.boundaries.back() == 6000);
  CHECK(ctx.U.allFinite());
  const auto z = norm.normalize(p);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto row = static_cast<Eigen::Index>(ctx.boundaries[i] + 17);
    CHECK(ctx.U(row, 15) == doctest::Approx(refs[i].I[17] / 100.0));
    CHECK(ctx.U(row, 14) == doctest::Approx(volt::scale_voltage(refs[i].V[17], cfg)));
    CHECK(ctx.U(row, 0) == doctest::Approx((ctx.V[i][17] - refs[i].V[17]) / punet::kResidualScale));
    CHECK(ctx.U(row, 5 + 3) == doctest::Approx(z[3]));
    CHECK(ctx.rmse_mv[i] == doctest::Approx(metrics::rmse_mv(ctx.V[i], refs[i].V)));
  }
}

TEST_CASE("context under the simulator's own concentrations matches the references") {
  const auto cfg = cell::CellConfig::defaults();
  const auto p = testutil::base_params();
  const auto refs = make_refs(p, cfg, 3, 200);
  const auto ctx = punet::build_context(p, testutil::oracle_provider(refs, cfg), box_normalizer(), cfg, refs);
  REQUIRE(ctx.feasible);
  CHECK(ctx.max_rmse_mv() < 1e-6);
}

TEST_CASE("infeasible estimates flag the context") {
  const auto cfg = cell::CellConfig::defaults();
  const auto refs = make_refs(testutil::base_params(), cfg, 2, 50);
  const surrogate::NeuralSpme phi(surrogate::preset(surrogate::Scale::Small, surrogate::kNspmInputs, true, 64), 1);
  std::mt19937_64 rng(5);
  int flagged = 0;
  for (int k = 0; k < 200 && flagged == 0; ++k) {
    const auto p = testutil::random_params(rng, 1.0);
    bool solvable = true;
    for (const auto& r : refs) {
      try {
        stoich::solve_initial_stoichiometry(p, cfg, r.v_init);
      } catch (const InfeasibleError&) {
        solvable = false;
      }
    }
    if (solvable) continue;
    const auto ctx = punet::build_context(p, phi, box_normalizer(), cfg, refs);
    CHECK_FALSE(ctx.feasible);
    CHECK(ctx.diagnostic.find("sequence") != std::string::npos);
    CHECK(std::isinf(ctx.max_rmse_mv()));
    CHECK_THROWS_AS(punet::update(punet::UpdateNet(punet::preset(surrogate::Scale::Small, 100), 1), ctx, p,
                                  box_normalizer()),
                    InfeasibleError);
    ++flagged;
  }
  CHECK(flagged == 1);
}

TEST_CASE("untrained update is finite, inside the box and deterministic") {
  const auto cfg = cell::CellConfig::defaults();
  const auto p = testutil::base_params();
  const auto refs = make_refs(p, cfg, 3, 100);
  const surrogate::NeuralSpme phi(surrogate::preset(surrogate::Scale::Small, surrogate::kNspmInputs, true, 100), 2);
  const punet::UpdateNet psi(punet::preset(surrogate::Scale::Small, 300), 3);
  const auto norm = box_normalizer();
  const auto ctx = punet::build_context(p, phi, norm, cfg, refs);
  const auto a = punet::update(psi, ctx, p, norm);
  const auto b = punet::update(psi, ctx, p, norm);
  CHECK(a.lambda.to_array() == b.lambda.to_array());
  CHECK(cell::feasible_bounds().contains(a.lambda));
  for (double v : a.lambda.to_array()) CHECK(std::isfinite(v));
}

TEST_CASE("update residual and pooling") {
  auto cfg = punet::preset(surrogate::Scale::Small, 40);
  cfg.max_len = 4;
  const punet::BasicUpdateNet<double> psi(cfg, 8);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  nn::Matrix<double> U(40, punet::kChannels), z(1, 9);
  for (Eigen::Index k = 0; k < U.size(); ++k) U.data()[k] = nd(rng);
  for (Eigen::Index k = 0; k < z.size(); ++k) z.data()[k] = nd(rng);
  const auto out1 = psi.forward(nn::Tensor64(U), nn::Tensor64(z)).value();
  nn::Matrix<double> z2 = z;
  z2(0, 4) += 1.0;
  const auto out2 = psi.forward(nn::Tensor64(U), nn::Tensor64(z2)).value();
  CHECK((out2 - out1)(0, 4) == doctest::Approx(1.0));
  CHECK((out2 - out1).cwiseAbs().sum() == doctest::Approx(1.0));
  CHECK_THROWS_AS(punet::UpdateNet(surrogate::preset(surrogate::Scale::Small, 16, true, 10), 1), ConfigError);
}

TEST_CASE("perturbation") {
  const auto norm = box_normalizer();
  const auto p = testutil::base_params();
  const auto same = punet::perturb(p, 0.0, norm, 4);
  for (std::size_t i = 0; i < cell::kNumParams; ++i) CHECK(same.to_array()[i] == doctest::Approx(p.to_array()[i]));
  const auto a = punet::perturb(p, 3.0, norm, 4);
  const auto b = punet::perturb(p, 3.0, norm, 4);
  CHECK(a.to_array() == b.to_array());
  CHECK(cell::feasible_bounds().contains(a));
  CHECK(a.to_array() != punet::perturb(p, 3.0, norm, 5).to_array());
}

TEST_CASE("PUNet training smoke run and checkpoint") {
  const auto cfg = cell::CellConfig::defaults();
  const auto ds = tiny_dataset(cfg, 4, 2, 60);
  const surrogate::NeuralSpme phi(surrogate::preset(surrogate::Scale::Small, surrogate::kNspmInputs, true, 60), 1);
  punet::UpdateNet psi(punet::preset(surrogate::Scale::Small, 120), 2);
  punet::TrainConfig tc;
  tc.epochs = 3;
  tc.batch = 2;
  tc.audit_draws = 2;
  std::vector<punet::EpochRecord> seen;
  const auto rep = punet::train(psi, phi, ds, cfg, tc, [&](const punet::EpochRecord& e) { seen.push_back(e); });
  REQUIRE(rep.epochs.size() == 3);
  CHECK(seen.size() == 3);
  CHECK(rep.steps == 6);
  CHECK(rep.best_epoch >= 1);
  for (const auto& e : rep.epochs) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(e.audit_pass_rate >= 0.0);
    CHECK(e.audit_pass_rate <= 1.0);
  }
  const auto a = punet::audit(psi, phi, ds.val, ds.normalizer, cfg, 0.5, 2, 7);
  CHECK(a.draws == 2);

  const auto dir = std::filesystem::temp_directory_path() / "spmeid_punet_test";
  std::filesystem::create_directories(dir);
  punet::write_train_csv(dir / "train.csv", rep, {"h"});
  std::ifstream in(dir / "train.csv");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  CHECK(line == "epoch,train_loss,val_loss,reconstruction,audit_pass_rate,lr");
  punet::save(dir / "p.ckpt", psi, rep.steps, ds.normalizer);
  const auto back = punet::load(dir / "p.ckpt");
  CHECK(back.params().checksum() == psi.params().checksum());
  CHECK(back.config().patch == 10);
  CHECK_FALSE(back.config().causal);
  CHECK_THROWS_AS(surrogate::load_nspm(dir / "p.ckpt"), FormatError);
  std::filesystem::remove_all(dir);

  punet::UpdateNet again(punet::preset(surrogate::Scale::Small, 120), 2);
  punet::train(again, phi, ds, cfg, tc);
  CHECK(again.params().checksum() == psi.params().checksum());
}
