#pragma once

// Closed-form terminal voltage of the single particle model with electrolyte,
// evaluated from the six concentration observables, the identified
// parameters and the applied current (positive = discharge).

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <fmt/format.h>

#include "spmeid/cellmodel.hpp"
#include "spmeid/dual.hpp"
#include "spmeid/error.hpp"

namespace spmeid::volt {

template <class S>
struct BasicVoltageBreakdown {
  S U_eq{};
  S eta_r{};
  S eta_c{};
  S dphi_elec{};
  S dphi_solid{};
  double J = 0.0;  // current density [A/m^2]

  S total() const { return U_eq + eta_r + eta_c + dphi_elec + dphi_solid; }
};
using VoltageBreakdown = BasicVoltageBreakdown<double>;

/// Optional clipping of surface stoichiometries to [lo, hi] for the neural
/// path, where intermediate parameter iterates can push the sigmoid outputs
/// onto 0 or 1. The reference simulator never enables it.
struct GuardBand {
  double lo = 1e-6;
  double hi = 1.0 - 1e-6;
  std::size_t clip_events = 0;
};

namespace detail {

template <class S>
S surface_stoichiometry(const S& c_surf, const S& c_max, cell::Electrode e, GuardBand* guard) {
  S theta = c_surf / c_max;
  const double v = value_of(theta);
  if (guard) {
    if (!(v >= guard->lo)) {
      ++guard->clip_events;
      return S(guard->lo);
    }
    if (!(v <= guard->hi)) {
      ++guard->clip_events;
      return S(guard->hi);
    }
    return theta;
  }
  if (!(v > 0.0 && v < 1.0)) {
    throw DomainError(fmt::format("saturated electrode: {} surface stoichiometry {}",
                                  cell::electrode_name(e), v));
  }
  return theta;
}

}  // namespace detail

template <class S>
BasicVoltageBreakdown<S> voltage(const cell::BasicObservables<S>& c,
                                 const cell::BasicParameterSet<S>& p, const cell::CellConfig& cfg,
                                 double current, GuardBand* guard = nullptr) {
  using std::asinh;
  using std::exp;
  using std::pow;
  using std::sqrt;

  const S theta_p = detail::surface_stoichiometry(c.c_p_surf, p.c_s_p_max, cell::Electrode::Positive, guard);
  const S theta_n = detail::surface_stoichiometry(c.c_n_surf, p.c_s_n_max, cell::Electrode::Negative, guard);
  if (!(value_of(c.ce_p) > 0.0) || !(value_of(c.ce_n) > 0.0) || !(value_of(c.sqrt_ce_p) > 0.0) ||
      !(value_of(c.sqrt_ce_n) > 0.0)) {
    throw DomainError(fmt::format("non-positive electrolyte observable (ce_p={}, ce_n={}, sqrt_p={}, sqrt_n={})",
                                  value_of(c.ce_p), value_of(c.ce_n), value_of(c.sqrt_ce_p),
                                  value_of(c.sqrt_ce_n)));
  }

  BasicVoltageBreakdown<S> out;
  out.J = current / (cfg.N * cfg.A);
  const double J = out.J;
  const double two_rt_f = 2.0 * cfg.R * cfg.T / cfg.F;

  out.U_eq = cfg.ocp_p.eval(theta_p) - cfg.ocp_n.eval(theta_n);

  const S cs_p = theta_p * p.c_s_p_max;
  const S cs_n = theta_n * p.c_s_n_max;
  const double arr_p = std::exp(cfg.E_a_p / cfg.R * (1.0 / cfg.T_ref - 1.0 / cfg.T));
  const double arr_n = std::exp(cfg.E_a_n / cfg.R * (1.0 / cfg.T_ref - 1.0 / cfg.T));
  // The domain integral of √c_e divided by L_k is the stored domain mean.
  const S j0_p = cfg.m_p * arr_p * sqrt(cs_p) * sqrt(p.c_s_p_max - cs_p) * c.sqrt_ce_p;
  const S j0_n = cfg.m_n * arr_n * sqrt(cs_n) * sqrt(p.c_s_n_max - cs_n) * c.sqrt_ce_n;
  const S a_p = cell::interfacial_area(p.eps_p, p.R_p);
  const S a_n = cell::interfacial_area(p.eps_n, p.R_n);

  out.eta_r = two_rt_f * asinh(-J / (2.0 * a_p * j0_p * cfg.L_p)) -
              two_rt_f * asinh(J / (2.0 * a_n * j0_n * cfg.L_n));
  out.eta_c = two_rt_f / cfg.c_e_typ * (1.0 - cfg.t_plus) * (c.ce_p - c.ce_n);
  const S tortuosity = cfg.L_n / (3.0 * pow(p.eps_n, cfg.beta)) +
                       cfg.L_sep / std::pow(cfg.eps_sep, cfg.beta) +
                       cfg.L_p / (3.0 * pow(p.eps_p, cfg.beta));
  out.dphi_elec = -J / cfg.kappa_e * tortuosity;
  out.dphi_solid = S(-J / 3.0 * (cfg.L_p / cfg.sigma_p + cfg.L_n / cfg.sigma_n));
  return out;
}

/// Row-major T×4 sequence of normalised observables.
using YSequence = std::vector<std::array<double, 4>>;

/// Terminal voltage at every step. Domain errors are re-thrown with the step index.
std::vector<double> voltage_sequence(const YSequence& y, const cell::ParameterSet& p,
                                     const cell::CellConfig& cfg, std::span<const double> current,
                                     GuardBand* guard = nullptr);

struct VoltageVjp {
  YSequence dy;                 // ∂(Σ w·V)/∂y
  cell::ParamVector dparams{};  // ∂(Σ w·V)/∂λ in physical units
};

/// Vector-Jacobian product of voltage_sequence for cotangent `dv`.
VoltageVjp voltage_sequence_vjp(const YSequence& y, const cell::ParameterSet& p,
                                const cell::CellConfig& cfg, std::span<const double> current,
                                std::span<const double> dv, GuardBand* guard = nullptr);

/// (V − V_lo)/(V_hi − V_lo)
inline double scale_voltage(double v, const cell::CellConfig& cfg) {
  return (v - cfg.V_lo) / (cfg.V_hi - cfg.V_lo);
}
inline double unscale_voltage(double s, const cell::CellConfig& cfg) {
  return cfg.V_lo + s * (cfg.V_hi - cfg.V_lo);
}

}  // namespace spmeid::volt
