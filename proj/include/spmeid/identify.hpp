#pragma once

// Fixed-point identification loop, the CMA-ES baseline on the same objective
// and the paired benchmark that compares them.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "spmeid/cellmodel.hpp"
#include "spmeid/cmaes.hpp"
#include "spmeid/datagen.hpp"
#include "spmeid/punet.hpp"
#include "spmeid/surrogate.hpp"

namespace spmeid::ident {

struct IdentifyConfig {
  double delta_mv = 5.0;  // stop once the max RMSE over sequences drops below
  int stagnation = 3;     // consecutive non-improving iterations before stopping
  int max_iter = 100;
  int workers = 1;
};

enum class StopReason { Threshold, Stagnation, MaxIter, Infeasible };
std::string stop_name(StopReason r);

struct IterationRecord {
  int k = 0;
  cell::ParameterSet lambda;
  std::vector<double> rmse_mv;
  double max_rmse_mv = 0.0;
  std::size_t clipped = 0;  // coordinates clipped by the update that produced this iterate
  int repairs = 0;          // infeasible-iterate repairs applied before evaluation
};

struct IdentificationRun {
  std::vector<IterationRecord> records;
  StopReason stop = StopReason::MaxIter;
  std::size_t best = 0;  // index into records with the lowest max RMSE
  double wall_s = 0.0;
  long evaluations = 0;  // surrogate context builds
  std::string diagnostic;

  const IterationRecord& best_record() const { return records.at(best); }
  int iterations() const { return records.empty() ? 0 : records.back().k; }
};

/// λᵏ⁺¹ from the context built at λᵏ.
using UpdateFn = std::function<punet::UpdateResult(const punet::EvaluationContext&, const cell::ParameterSet&)>;

UpdateFn punet_update_fn(const punet::UpdateNet& psi, const cell::ParamNormalizer& norm);

/// Fixed-point loop λᵏ⁺¹ = Ψ(U(λᵏ)). An infeasible iterate is clipped to the box, then pulled to the
/// midpoint with the last feasible iterate; if both fail the run stops as infeasible.
IdentificationRun identify(const std::vector<punet::Reference>& refs, const punet::YProvider& forward,
                           const UpdateFn& update, const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                           const cell::ParameterSet& lambda0, const IdentifyConfig& ic);
IdentificationRun identify(const std::vector<punet::Reference>& refs, const surrogate::NeuralSpme& phi,
                           const UpdateFn& update, const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                           const cell::ParameterSet& lambda0, const IdentifyConfig& ic);

/// Run log: iteration, max_rmse_mv, then the nine parameters in physical units.
void write_run_csv(const std::filesystem::path& path, const IdentificationRun& run,
                   const std::vector<std::string>& header);
std::string run_summary(const IdentificationRun& run, const cell::ParameterSet* truth,
                        const std::vector<std::string>& header);

// --- CMA-ES baseline -------------------------------------------------------------

inline constexpr double kInfeasiblePenaltyMv = 1e4;

enum class ForwardModel { Surrogate, Simulator };

/// Max over sequences of the voltage RMSE [mV] at normalised parameters z.
/// Infeasible parameters score kInfeasiblePenaltyMv.
double objective_mv(const Eigen::VectorXd& z, const std::vector<punet::Reference>& refs, ForwardModel model,
                    const surrogate::NeuralSpme* phi, const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                    const sim::SimGrid& grid = {});

/// Box of the feasible region in normalised units.
void normalized_box(const cell::ParamNormalizer& norm, Eigen::VectorXd& lo, Eigen::VectorXd& hi);

struct CmaRun {
  opt::CmaResult result;
  cell::ParameterSet best;
  double wall_s = 0.0;
};

CmaRun identify_cmaes(const std::vector<punet::Reference>& refs, ForwardModel model, const surrogate::NeuralSpme* phi,
                      const cell::ParamNormalizer& norm, const cell::CellConfig& cfg, const opt::CmaConfig& cc,
                      const sim::SimGrid& grid = {});

// --- benchmark -----------------------------------------------------------------

struct BenchmarkConfig {
  IdentifyConfig identify;
  opt::CmaConfig cma;         // target is set per task
  bool with_simulator = false;  // also run CMA-ES on the simulator
  std::size_t max_tasks = 0;  // 0: every parameter set in the split
  sim::SimGrid grid;
};

struct TaskResult {
  std::size_t task = 0;
  int set_id = 0;
  cell::ParameterSet truth;
  IdentificationRun punet;
  double punet_mape = 0.0;
  CmaRun cmaes;
  double cmaes_target_mv = 0.0;
  double cmaes_mape = 0.0;
  bool has_sim = false;
  CmaRun cmaes_sim;
  double cmaes_sim_mape = 0.0;
};

struct MethodRow {
  std::string method;
  double mean_wall_s = 0.0;
  double mean_evaluations = 0.0;  // iterations for PUNet, objective calls for CMA-ES
  double median_evaluations = 0.0;
  double mean_final_rmse_mv = 0.0;
  double mean_mape = 0.0;
  double speedup = 0.0;           // slowest method's mean time / this method's mean time
  double reached_target = 0.0;    // share of tasks
};

struct BenchmarkReport {
  std::vector<TaskResult> tasks;
  std::vector<MethodRow> rows;
  double sample_efficiency = 0.0;  // mean CMA-ES evaluations / mean PUNet evaluations
};

/// Paired runs on the split's parameter sets. CMA-ES on each task targets the
/// level PUNet reached (never below delta).
BenchmarkReport benchmark(const std::vector<data::Sample>& split, const surrogate::NeuralSpme& phi,
                          const punet::UpdateNet& psi, const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                          const BenchmarkConfig& bc, const std::function<void(const TaskResult&)>& on_task = {});

void write_benchmark_csv(const std::filesystem::path& path, const BenchmarkReport& r,
                         const std::vector<std::string>& header);
void write_tasks_csv(const std::filesystem::path& path, const BenchmarkReport& r,
                     const std::vector<std::string>& header);

// --- timing ---------------------------------------------------------------------

struct TimingReport {
  int batch = 0;
  int repeats = 0;
  double surrogate_s = 0.0;  // median wall time per batch
  double simulator_s = 0.0;
  double ratio = 0.0;        // simulator / surrogate
};

/// Forward evaluation of the same `batch` sequences through the simulator and
/// through surrogate + voltage expression (stoichiometry solve included in both).
TimingReport time_forward(const std::vector<punet::Reference>& refs, const cell::ParameterSet& lambda,
                          const surrogate::NeuralSpme& phi, const cell::ParamNormalizer& norm,
                          const cell::CellConfig& cfg, const sim::SimGrid& grid, int repeats);

}  // namespace spmeid::ident
