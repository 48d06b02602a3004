#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "spmeid/cmaes.hpp"
#include "spmeid/error.hpp"

using namespace spmeid;
using opt::Vector;

namespace {

double sphere(const Vector& z) { return z.squaredNorm(); }

double rosenbrock(const Vector& z) {
  double s = 0.0;
  for (Eigen::Index i = 0; i + 1 < z.size(); ++i) {
    s += 100.0 * std::pow(z[i + 1] - z[i] * z[i], 2) + std::pow(1.0 - z[i], 2);
  }
  return s;
}

Vector box(double v) { return Vector::Constant(9, v); }

}  // namespace

TEST_CASE("CMA-ES solves the sphere") {
  opt::CmaConfig cfg;
  cfg.target = 1e-6;
  cfg.max_evaluations = 3000;
  cfg.seed = 4;
  const auto r = opt::cma_minimize(sphere, Vector::Ones(9), box(-5), box(5), cfg);
  CHECK(r.status == opt::CmaStatus::Target);
  CHECK(r.best_value < 1e-6);
  CHECK(r.evaluations <= 3000);
  CHECK(r.evaluations_to_target > 0);
  CHECK(r.history.size() == static_cast<std::size_t>(r.evaluations));
  CHECK(r.history[static_cast<std::size_t>(r.evaluations_to_target - 1)].value < 1e-6);
}

TEST_CASE("best-so-far is non-increasing") {
  opt::CmaConfig cfg;
  cfg.max_evaluations = 1500;
  cfg.seed = 9;
  const auto r = opt::cma_minimize(rosenbrock, Vector::Zero(9), box(-3), box(3), cfg);
  CHECK(r.status == opt::CmaStatus::Budget);
  CHECK(r.evaluations == 1500);
  for (std::size_t i = 1; i < r.history.size(); ++i) {
    CHECK(r.history[i].best_so_far <= r.history[i - 1].best_so_far);
    CHECK(r.history[i].best_so_far <= r.history[i].value);
    CHECK(r.history[i].index == static_cast<long>(i + 1));
  }
  CHECK(r.best_value == r.history.back().best_so_far);
  CHECK(r.best_value < rosenbrock(Vector::Zero(9)));
}

TEST_CASE("CMA-ES is deterministic under a fixed seed") {
  opt::CmaConfig cfg;
  cfg.max_evaluations = 400;
  cfg.seed = 77;
  const auto a = opt::cma_minimize(rosenbrock, Vector::Zero(9), box(-2), box(2), cfg);
  const auto b = opt::cma_minimize(rosenbrock, Vector::Zero(9), box(-2), box(2), cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].value == b.history[i].value);
    CHECK(a.history[i].x == b.history[i].x);
  }
  cfg.workers = 3;
  const auto c = opt::cma_minimize(rosenbrock, Vector::Zero(9), box(-2), box(2), cfg);
  CHECK(c.best_value == a.best_value);
}

TEST_CASE("covariance stays symmetric positive definite and candidates stay in the box") {
  std::mt19937_64 rng(3);
  const Vector lo = box(-0.2), hi = box(0.5);
  opt::CmaState st(Vector::Constant(9, 0.1), 0.3, 10, lo, hi);
  for (int g = 0; g < 60; ++g) {
    const auto xs = st.ask(rng, 10);
    std::vector<double> v;
    for (const auto& x : xs) {
      CHECK((x.array() >= lo.array()).all());
      CHECK((x.array() <= hi.array()).all());
      v.push_back(rosenbrock(x));
    }
    st.tell(xs, v);
    const auto& C = st.covariance();
    CHECK((C - C.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    CHECK(st.min_eigenvalue() >= 1e-12 * (1 - 1e-9));
  }
  CHECK(st.generation() == 60);
}

TEST_CASE("CMA-ES configuration errors") {
  CHECK_THROWS_AS(opt::CmaState(Vector::Zero(9), 0.3, 1, box(-1), box(1)), ConfigError);
  CHECK_THROWS_AS(opt::CmaState(Vector::Zero(9), 0.0, 10, box(-1), box(1)), ConfigError);
  CHECK_THROWS_AS(opt::CmaState(Vector::Zero(9), 0.3, 10, Vector::Zero(3), box(1)), ShapeError);
  opt::CmaConfig cfg;
  cfg.max_evaluations = 20;
  const auto r = opt::cma_minimize(sphere, Vector::Ones(9), box(-1), box(1), cfg);
  CHECK(r.evaluations == 20);
  CHECK(opt::status_name(r.status) == "budget");
}

TEST_CASE("history CSV layout") {
  opt::CmaConfig cfg;
  cfg.max_evaluations = 25;
  const auto r = opt::cma_minimize(sphere, Vector::Ones(9), box(-1), box(1), cfg);
  const auto path = std::filesystem::temp_directory_path() / "spmeid_cma_history.csv";
  std::vector<std::string> names;
  for (int i = 0; i < 9; ++i) names.push_back("p" + std::to_string(i));
  opt::write_history_csv(path, r, names, {"tool test"});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "# tool test");
  std::getline(in, line);
  CHECK(line.rfind("evaluation_index,objective,best_so_far,p0", 0) == 0);
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 11);
  }
  CHECK(rows == 25);
  std::filesystem::remove(path);
}
