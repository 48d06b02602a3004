#include "spmeid/cmaes.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "spmeid/error.hpp"
#include "spmeid/metrics.hpp"
#include "spmeid/parallel.hpp"

namespace spmeid::opt {

std::string status_name(CmaStatus s) { return s == CmaStatus::Target ? "target" : "budget"; }

CmaState::CmaState(const Vector& mean, double sigma, int population, const Vector& lo, const Vector& hi)
    : n_(static_cast<int>(mean.size())), lambda_(population), mean_(mean), lo_(lo), hi_(hi), sigma_(sigma) {
  if (n_ < 1) throw ConfigError("CMA-ES needs at least one dimension");
  if (lo.size() != n_ || hi.size() != n_) throw ShapeError("CMA-ES bounds do not match the dimension");
  if (lambda_ < 2) throw ConfigError(fmt::format("CMA-ES population must be at least 2, got {}", lambda_));
  if (!(sigma > 0.0)) throw ConfigError("CMA-ES step size must be positive");
  mu_ = lambda_ / 2;
  weights_.resize(mu_);
  for (int i = 0; i < mu_; ++i) weights_[i] = std::log(mu_ + 0.5) - std::log(i + 1.0);
  weights_ /= weights_.sum();
  mueff_ = 1.0 / weights_.squaredNorm();
  const double n = n_;
  cc_ = (4.0 + mueff_ / n) / (n + 4.0 + 2.0 * mueff_ / n);
  cs_ = (mueff_ + 2.0) / (n + mueff_ + 5.0);
  c1_ = 2.0 / ((n + 1.3) * (n + 1.3) + mueff_);
  cmu_ = std::min(1.0 - c1_, 2.0 * (mueff_ - 2.0 + 1.0 / mueff_) / ((n + 2.0) * (n + 2.0) + mueff_));
  damps_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff_ - 1.0) / (n + 1.0)) - 1.0) + cs_;
  chi_n_ = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
  pc_ = Vector::Zero(n_);
  ps_ = Vector::Zero(n_);
  C_ = Eigen::MatrixXd::Identity(n_, n_);
  B_ = Eigen::MatrixXd::Identity(n_, n_);
  D_ = Vector::Ones(n_);
}

void CmaState::decompose() {
  C_ = 0.5 * (C_ + C_.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C_);
  if (es.info() != Eigen::Success) throw NumericalError("CMA-ES covariance decomposition failed");
  Vector ev = es.eigenvalues().cwiseMax(1e-12);
  B_ = es.eigenvectors();
  D_ = ev.cwiseSqrt();
  C_ = B_ * ev.asDiagonal() * B_.transpose();
}

std::vector<Vector> CmaState::ask(std::mt19937_64& rng, int resample_limit) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<Vector> xs;
  xs.reserve(static_cast<std::size_t>(lambda_));
  for (int k = 0; k < lambda_; ++k) {
    Vector x(n_);
    for (int a = 0; a <= resample_limit; ++a) {
      Vector z(n_);
      for (int i = 0; i < n_; ++i) z[i] = nd(rng);
      x = mean_ + sigma_ * (B_ * D_.asDiagonal() * z);
      if ((x.array() >= lo_.array()).all() && (x.array() <= hi_.array()).all()) break;
    }
    xs.push_back(x.cwiseMax(lo_).cwiseMin(hi_));
  }
  return xs;
}

void CmaState::tell(const std::vector<Vector>& xs, const std::vector<double>& values) {
  if (static_cast<int>(xs.size()) != lambda_ || values.size() != xs.size()) {
    throw ShapeError(fmt::format("CMA-ES tell: expected {} candidates", lambda_));
  }
  std::vector<int> idx(static_cast<std::size_t>(lambda_));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return values[a] < values[b]; });

  const Vector old = mean_;
  Vector m = Vector::Zero(n_);
  for (int i = 0; i < mu_; ++i) m += weights_[i] * xs[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
  mean_ = m;
  ++gen_;

  const Vector step = (mean_ - old) / sigma_;
  const Eigen::MatrixXd inv_sqrt = B_ * D_.cwiseInverse().asDiagonal() * B_.transpose();
  ps_ = (1.0 - cs_) * ps_ + std::sqrt(cs_ * (2.0 - cs_) * mueff_) * (inv_sqrt * step);
  const double ps_norm = ps_.norm();
  const bool hsig = ps_norm / std::sqrt(1.0 - std::pow(1.0 - cs_, 2.0 * gen_)) / chi_n_ < 1.4 + 2.0 / (n_ + 1.0);
  pc_ = (1.0 - cc_) * pc_ + (hsig ? std::sqrt(cc_ * (2.0 - cc_) * mueff_) : 0.0) * step;

  Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n_, n_);
  for (int i = 0; i < mu_; ++i) {
    const Vector y = (xs[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] - old) / sigma_;
    rank_mu += weights_[i] * y * y.transpose();
  }
  C_ = (1.0 - c1_ - cmu_) * C_ + c1_ * (pc_ * pc_.transpose() + (hsig ? 0.0 : cc_ * (2.0 - cc_)) * C_) +
       cmu_ * rank_mu;
  sigma_ *= std::exp(cs_ / damps_ * (ps_norm / chi_n_ - 1.0));
  if (!std::isfinite(sigma_) || !C_.allFinite()) throw NumericalError("CMA-ES state became non-finite");
  decompose();
}

CmaResult cma_minimize(const Objective& f, const Vector& mean0, const Vector& lo, const Vector& hi,
                       const CmaConfig& cfg) {
  const int n = static_cast<int>(mean0.size());
  const int pop = cfg.population > 0 ? cfg.population : 4 + static_cast<int>(std::floor(3.0 * std::log(n)));
  CmaState st(mean0.cwiseMax(lo).cwiseMin(hi), cfg.sigma0, pop, lo, hi);
  std::mt19937_64 rng(cfg.seed);
  CmaResult r;
  r.best_value = std::numeric_limits<double>::infinity();
  while (r.evaluations < cfg.max_evaluations) {
    auto xs = st.ask(rng, cfg.resample_limit);
    const auto room = static_cast<std::size_t>(cfg.max_evaluations - r.evaluations);
    const std::size_t count = std::min(xs.size(), room);
    std::vector<double> values(xs.size(), std::numeric_limits<double>::infinity());
    parallel_for(count, cfg.workers, [&](std::size_t i) { values[i] = f(xs[i]); });
    for (std::size_t i = 0; i < count; ++i) {
      const double v = std::isfinite(values[i]) ? values[i] : std::numeric_limits<double>::infinity();
      values[i] = v;
      ++r.evaluations;
      if (v < r.best_value) {
        r.best_value = v;
        r.best_x = xs[i];
      }
      r.history.push_back({r.evaluations, v, r.best_value, xs[i]});
      if (v < cfg.target && r.evaluations_to_target < 0) r.evaluations_to_target = r.evaluations;
    }
    if (r.evaluations_to_target > 0) {
      r.status = CmaStatus::Target;
      break;
    }
    if (count < xs.size()) break;
    st.tell(xs, values);
    ++r.generations;
  }
  if (r.best_x.size() == 0) throw NumericalError("CMA-ES found no finite objective value");
  return r;
}

void write_history_csv(const std::filesystem::path& path, const CmaResult& r, const std::vector<std::string>& names,
                       const std::vector<std::string>& header, const std::function<Vector(const Vector&)>& to_output) {
  std::string body = "evaluation_index,objective,best_so_far";
  for (const auto& n : names) body += "," + n;
  body += "\n";
  for (const auto& e : r.history) {
    body += fmt::format("{},{},{}", e.index, e.value, e.best_so_far);
    const Vector x = to_output ? to_output(e.x) : e.x;
    for (Eigen::Index i = 0; i < x.size(); ++i) body += fmt::format(",{}", x[i]);
    body += "\n";
  }
  metrics::write_text(path, header, body);
}

}  // namespace spmeid::opt
