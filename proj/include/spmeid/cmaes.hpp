#pragma once

// (μ/μ_w, λ)-CMA-ES with rank-one and rank-μ covariance updates, working in
// normalised parameter space inside a box.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace spmeid::opt {

using Vector = Eigen::VectorXd;
using Objective = std::function<double(const Vector&)>;

struct CmaConfig {
  int population = 0;          // 0: 4 + ⌊3 ln n⌋
  double sigma0 = 0.3;
  long max_evaluations = 3000;
  double target = 0.0;         // stop once an objective value falls below this
  int resample_limit = 10;     // out-of-box redraws before coordinate clipping
  std::uint64_t seed = 1;
  int workers = 1;             // concurrent objective calls within a generation
};

struct Evaluation {
  long index = 0;
  double value = 0.0;
  double best_so_far = 0.0;
  Vector x;
};

enum class CmaStatus { Target, Budget };
std::string status_name(CmaStatus s);

struct CmaResult {
  Vector best_x;
  double best_value = 0.0;
  long evaluations = 0;
  long evaluations_to_target = -1;  // 1-based index of the first value below target, -1 if never
  int generations = 0;
  CmaStatus status = CmaStatus::Budget;
  std::vector<Evaluation> history;
};

class CmaState {
 public:
  CmaState(const Vector& mean, double sigma, int population, const Vector& lo, const Vector& hi);

  /// Draws a population. Candidates leaving the box are redrawn, then clipped.
  std::vector<Vector> ask(std::mt19937_64& rng, int resample_limit);
  /// Updates mean, paths, covariance and step size from the values of the last ask().
  void tell(const std::vector<Vector>& xs, const std::vector<double>& values);

  const Vector& mean() const { return mean_; }
  double sigma() const { return sigma_; }
  const Eigen::MatrixXd& covariance() const { return C_; }
  int population() const { return lambda_; }
  int generation() const { return gen_; }
  /// Smallest eigenvalue of the covariance after the last decomposition.
  double min_eigenvalue() const { return D_.minCoeff() * D_.minCoeff(); }

 private:
  void decompose();

  int n_, lambda_, mu_, gen_ = 0;
  Vector weights_;
  double mueff_, cc_, cs_, c1_, cmu_, damps_, chi_n_;
  Vector mean_, lo_, hi_, pc_, ps_;
  double sigma_;
  Eigen::MatrixXd C_, B_;
  Vector D_;  // square roots of the eigenvalues
};

/// Minimises `f` from `mean0` until the target or the evaluation budget is reached.
CmaResult cma_minimize(const Objective& f, const Vector& mean0, const Vector& lo, const Vector& hi,
                       const CmaConfig& cfg);

/// Columns: evaluation_index, objective, best_so_far, then one column per name.
void write_history_csv(const std::filesystem::path& path, const CmaResult& r, const std::vector<std::string>& names,
                       const std::vector<std::string>& header, const std::function<Vector(const Vector&)>& to_output = {});

}  // namespace spmeid::opt
