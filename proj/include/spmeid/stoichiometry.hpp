#pragma once

// Electrode stoichiometry limits, initial stoichiometries from a rest voltage,
// and the coulomb-counting input sequence of the surrogate.
//
// Sign convention: positive current discharges the cell. On discharge the
// positive electrode fills (x0 rises) and the negative electrode empties
// (x1 falls).

#include <array>
#include <span>
#include <vector>

#include "spmeid/cellmodel.hpp"

namespace spmeid::stoich {

struct SolverOptions {
  double tol_v = 1e-9;    // voltage residuals [V]
  double tol_q = 1e-9;    // capacity residuals [A h]
  double tol_ratio = 1e-12;
  int max_iter = 100;
  int restarts = 5;

  /// Reads `stoich.tol_v`, `stoich.tol_q`, `stoich.max_iter` when present.
  static SolverOptions from_kv(const KeyValueFile& kv);
};

struct StoichSolution {
  double x0_init = 0;  // positive electrode at the rest voltage
  double x1_init = 0;  // negative electrode at the rest voltage
  double theta_p_100 = 0;
  double theta_p_0 = 0;
  double theta_n_100 = 0;
  double theta_n_0 = 0;
  double residual_norm = 0;  // max |residual| over the six equations
  int iterations = 0;
};

/// Residuals of the six equations, ordered: V¹⁰⁰ [V], V⁰ [V], electrode
/// balance [A h], cyclable lithium [A h], rest voltage [V], SoC ratio [-].
std::array<double, 6> residuals(const StoichSolution& s, const cell::ParameterSet& p,
                                const cell::CellConfig& cfg, double v_init);

/// Damped Newton-Raphson solve. Throws InfeasibleError when no admissible root is found.
StoichSolution solve_initial_stoichiometry(const cell::ParameterSet& p, const cell::CellConfig& cfg,
                                           double v_init, const SolverOptions& opt = {});

/// Four input channels per step: average positive and negative stoichiometry
/// from coulomb counting, then the constant positive electrolyte fraction twice.
struct InputSequence {
  std::vector<std::array<double, 4>> x;
};

InputSequence build_input_sequence(const StoichSolution& sol, const cell::ParameterSet& p,
                                   const cell::CellConfig& cfg, std::span<const double> current,
                                   double dt);

}  // namespace spmeid::stoich
