#pragma once

// Reference SPMe forward simulator: finite volumes on equal-volume spherical
// shells for each particle and uniform cells per electrolyte domain, both
// advanced with implicit Euler. Produces terminal voltage and the six
// concentration observables per step.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spmeid/cellmodel.hpp"
#include "spmeid/stoichiometry.hpp"

namespace spmeid::sim {

struct SimGrid {
  int n_shell = 20;
  int n_x = 20;  // cells in each of the negative, separator and positive domains
  double dt = 1.0;

  void validate() const;
};

struct SimState {
  std::vector<double> cs_p;  // shell concentrations, centre to surface [mol/m^3]
  std::vector<double> cs_n;
  std::vector<double> ce;  // electrolyte cells from negative to positive collector
  double time = 0.0;
};

struct Trajectory {
  std::vector<double> t;  // [s], time at the end of each step
  std::vector<double> I;  // [A], positive = discharge
  std::vector<double> V;  // [V]
  std::vector<std::array<double, 6>> c;
  std::vector<std::array<double, 4>> y;

  std::size_t size() const { return t.size(); }
};

/// Tridiagonal system with a fixed matrix, factorised once (Thomas algorithm).
class TridiagonalSolver {
 public:
  TridiagonalSolver() = default;
  TridiagonalSolver(std::vector<double> lower, std::vector<double> diag, std::vector<double> upper);
  void solve(std::span<double> rhs) const;  // in place

 private:
  std::vector<double> lower_;
  std::vector<double> upper_prime_;
  std::vector<double> inv_denom_;
};

class SpmeSimulator {
 public:
  struct Output {
    cell::Observables c;  // H·y, see note in observe()
    std::array<double, 4> y{};
    double V = 0.0;
  };

  SpmeSimulator(const cell::ParameterSet& p, const cell::CellConfig& cfg, const SimGrid& grid,
                double x0_init, double x1_init);

  /// Advances one step holding `current` constant and returns the observation
  /// at the end of the step. Throws SimulationError on instability/saturation.
  Output step(double current);

  /// Observation of the current state under `current`.
  Output observe(double current) const;

  const SimState& state() const { return state_; }

  /// Total lithium [mol] in the solid phase of one electrode.
  double solid_lithium(cell::Electrode e) const;
  /// Total lithium [mol] dissolved in the electrolyte.
  double electrolyte_lithium() const;

 private:
  struct Particle {
    std::vector<double> volume;  // shell volume / 4π
    double surface = 0.0;        // R² (area / 4π)
    TridiagonalSolver solver;
  };

  Particle build_particle(double radius, double diffusivity) const;
  void check_state(std::size_t step_index) const;

  cell::ParameterSet p_;
  cell::CellConfig cfg_;
  SimGrid grid_;
  cell::ObservableMap map_;
  Particle part_p_, part_n_;
  std::vector<double> dx_, eps_;  // per electrolyte cell
  TridiagonalSolver electrolyte_;
  double a_p_ = 0, a_n_ = 0;
  SimState state_;
  std::size_t steps_ = 0;
  std::vector<double> scratch_;
};

struct SimOptions {
  double breach_margin = 0.3;  // [V] beyond the cutoffs before aborting
};

Trajectory simulate(const cell::ParameterSet& p, const cell::CellConfig& cfg,
                    std::span<const double> current, double v_init, const SimGrid& grid,
                    const stoich::SolverOptions& stoich_opt = {}, const SimOptions& opt = {});

/// Same, starting from an already solved stoichiometry.
Trajectory simulate_from(const cell::ParameterSet& p, const cell::CellConfig& cfg,
                         std::span<const double> current, const stoich::StoichSolution& sol,
                         const SimGrid& grid, const SimOptions& opt = {});

/// Default grid for constant-current capacity runs (coarser step).
SimGrid capacity_grid();

/// Charge [A h] delivered at constant current `rate`·Q_nom from V_hi down to
/// V_lo, with linear interpolation of the cutoff crossing. Running into a
/// saturated electrode before V_lo also ends the discharge.
double cc_discharge_capacity(const cell::ParameterSet& p, const cell::CellConfig& cfg, double rate,
                             const SimGrid& grid = capacity_grid(),
                             const stoich::SolverOptions& stoich_opt = {});

// --- export -----------------------------------------------------------------

inline constexpr char kTrajectoryMagic[8] = {'S', 'P', 'M', 'E', 'T', 'R', 'A', 'J'};
inline constexpr std::uint32_t kTrajectoryVersion = 1;

/// Binary record: magic, u32 version, u32 T, then little-endian f32 arrays
/// t, I, V, y (4×T, row-major), c (6×T, row-major).
std::string encode_trajectory(const Trajectory& tr);
Trajectory decode_trajectory(std::string_view bytes);
void write_trajectory(const std::filesystem::path& path, const Trajectory& tr);
Trajectory read_trajectory(const std::filesystem::path& path);

/// One row per step: t, I, V, y0..y3, c_p_surf, c_n_surf, ce_p, ce_n, (√ce)_p, (√ce)_n.
/// `header` lines are written first, each prefixed with "# ".
void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& tr,
                          const std::vector<std::string>& header = {});

}  // namespace spmeid::sim
