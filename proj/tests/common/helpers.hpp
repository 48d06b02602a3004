#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "spmeid/cellmodel.hpp"
#include "spmeid/stoichiometry.hpp"

namespace testutil {

using namespace spmeid;

inline cell::ParameterSet base_params() { return cell::ParameterSet::from_array(cell::feasible_bounds().mid()); }

/// Uniform draw inside the middle part of the box (keeps the stoichiometry solvable).
inline cell::ParameterSet random_params(std::mt19937_64& rng, double spread = 0.6) {
  const auto& b = cell::feasible_bounds();
  std::uniform_real_distribution<double> u(0.5 - spread / 2, 0.5 + spread / 2);
  cell::ParamVector a{};
  for (std::size_t i = 0; i < cell::kNumParams; ++i) a[i] = b.lo[i] + u(rng) * (b.hi[i] - b.lo[i]);
  return cell::ParameterSet::from_array(a);
}

/// Smooth mixed-sign load around `mean` amperes.
inline std::vector<double> wavy_current(std::size_t n, double mean, double amp) {
  std::vector<double> I(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k);
    I[k] = mean + amp * std::sin(t / 23.0) + 0.5 * amp * std::sin(t / 7.0 + 1.0) + (k % 97 < 10 ? -amp : 0.0);
  }
  return I;
}

/// Independent scalar implementation of the terminal-voltage expression.
inline double reference_voltage(const cell::Observables& c, const cell::ParameterSet& p, const cell::CellConfig& g,
                                double I) {
  const double J = I / (g.N * g.A);
  const double f = 2.0 * g.R * g.T / g.F;
  const double tp = c.c_p_surf / p.c_s_p_max;
  const double tn = c.c_n_surf / p.c_s_n_max;
  const double u = g.ocp_p.eval(tp) - g.ocp_n.eval(tn);
  const double ap = 3.0 * (1.0 - p.eps_p) / p.R_p;
  const double an = 3.0 * (1.0 - p.eps_n) / p.R_n;
  const double j0p = g.m_p * std::exp(g.E_a_p / g.R * (1 / g.T_ref - 1 / g.T)) *
                     std::sqrt(c.c_p_surf * (p.c_s_p_max - c.c_p_surf)) * c.sqrt_ce_p;
  const double j0n = g.m_n * std::exp(g.E_a_n / g.R * (1 / g.T_ref - 1 / g.T)) *
                     std::sqrt(c.c_n_surf * (p.c_s_n_max - c.c_n_surf)) * c.sqrt_ce_n;
  const double eta_r = f * (std::asinh(-J / (2 * ap * j0p * g.L_p)) - std::asinh(J / (2 * an * j0n * g.L_n)));
  const double eta_c = f / g.c_e_typ * (1 - g.t_plus) * (c.ce_p - c.ce_n);
  const double elec = -J / g.kappa_e *
                      (g.L_n / (3 * std::pow(p.eps_n, g.beta)) + g.L_sep / std::pow(g.eps_sep, g.beta) +
                       g.L_p / (3 * std::pow(p.eps_p, g.beta)));
  const double solid = -J / 3 * (g.L_p / g.sigma_p + g.L_n / g.sigma_n);
  return u + eta_r + eta_c + elec + solid;
}

}  // namespace testutil
