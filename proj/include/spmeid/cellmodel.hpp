#pragma once

// Fixed cell properties, the nine identifiable parameters, electrode
// open-circuit potentials and the map between the surrogate's four normalised
// outputs and the six concentration observables used by the voltage
// expression.

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "spmeid/kvconfig.hpp"

namespace spmeid::cell {

enum class Electrode { Positive, Negative };

std::string_view electrode_name(Electrode e);

/// Analytic open-circuit potential fit in stoichiometry θ:
///   U(θ) = a0 + a1·θ + Σ bᵢ·exp(cᵢ·θ) + Σ dⱼ·tanh(eⱼ·(θ − fⱼ))
struct OcpCurve {
  std::string form = "tanh_exp";
  std::array<double, 2> linear{};
  std::vector<std::array<double, 2>> exp_terms;   // (b, c)
  std::vector<std::array<double, 3>> tanh_terms;  // (d, e, f)

  template <class S>
  S eval(const S& theta) const {
    using std::exp;
    using std::tanh;
    S u = linear[0] + linear[1] * theta;
    for (const auto& [b, c] : exp_terms) u = u + b * exp(c * theta);
    for (const auto& [d, e, f] : tanh_terms) u = u + d * tanh(e * (theta - f));
    return u;
  }

  double derivative(double theta) const;
};

struct CellConfig {
  double N = 0;        // electrode pairs
  double A = 0;        // electrode area per pair [m^2]
  double L_p = 0;      // [m]
  double L_sep = 0;    // [m]
  double L_n = 0;      // [m]
  double eps_sep = 0;  // separator porosity
  double sigma_p = 0;  // [S/m]
  double sigma_n = 0;  // [S/m]
  double m_p = 0;      // reaction rate constant [(A/m^2)(m^3/mol)^1.5]
  double m_n = 0;
  double E_a_p = 0;  // [J/mol]
  double E_a_n = 0;
  double kappa_e = 0;  // electrolyte conductivity at c_e_typ [S/m]
  double D_e = 0;      // [m^2/s]
  double beta = 0;     // Bruggeman exponent
  double t_plus = 0;
  double c_e_typ = 0;  // [mol/m^3]
  double T = 0;        // [K]
  double T_ref = 0;    // [K]
  double V_hi = 0;     // 100 % SoC cutoff [V]
  double V_lo = 0;     // 0 % SoC cutoff [V]
  double F = 0;        // [C/mol]
  double R = 0;        // [J/(mol K)]
  double Q_nom = 0;    // capacity that defines 1C [A h]
  OcpCurve ocp_p;
  OcpCurve ocp_n;

  /// Literature-style high-capacity NMC811/graphite pouch cell.
  static CellConfig defaults();
  static CellConfig from_kv(const KeyValueFile& kv);
  static CellConfig load(const std::filesystem::path& path);
  KeyValueFile to_kv() const;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;

  double thermal_voltage() const { return R * T / F; }
};

/// Potential of one electrode at stoichiometry θ ∈ (0,1). Throws DomainError otherwise.
double ocp(const CellConfig& cfg, Electrode e, double theta);
double ocp_derivative(const CellConfig& cfg, Electrode e, double theta);

inline constexpr std::size_t kNumParams = 9;

/// Identifiable parameters. Templated so the voltage expression can be
/// differentiated with dual numbers.
template <class S>
struct BasicParameterSet {
  S eps_p{}, eps_n{};          // porosities
  S R_p{}, R_n{};              // particle radii [m]
  S c_s_p_max{}, c_s_n_max{};  // [mol/m^3]
  S D_s_p{}, D_s_n{};          // [m^2/s]
  S Q_Li{};                    // cyclable lithium [A h]

  std::array<S, kNumParams> to_array() const {
    return {eps_p, eps_n, R_p, R_n, c_s_p_max, c_s_n_max, D_s_p, D_s_n, Q_Li};
  }
  static BasicParameterSet from_array(const std::array<S, kNumParams>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]};
  }
};

using ParameterSet = BasicParameterSet<double>;
using ParamVector = std::array<double, kNumParams>;

extern const std::array<std::string_view, kNumParams> kParamNames;

struct ParameterBounds {
  ParamVector lo;
  ParamVector hi;
  ParamVector mid() const;
  bool contains(const ParameterSet& p) const;
  ParameterSet clip(const ParameterSet& p, std::size_t* clipped = nullptr) const;
};

/// Sampling box of the nine parameters.
const ParameterBounds& feasible_bounds();

/// Electrode capacities N·A·F·L·(1−ε)·c_max [C].
template <class S>
S capacity_p(const BasicParameterSet<S>& p, const CellConfig& c) {
  return c.N * c.A * c.F * c.L_p * (1.0 - p.eps_p) * p.c_s_p_max;
}
template <class S>
S capacity_n(const BasicParameterSet<S>& p, const CellConfig& c) {
  return c.N * c.A * c.F * c.L_n * (1.0 - p.eps_n) * p.c_s_n_max;
}

/// Specific interfacial area 3(1−ε)/R.
template <class S>
S interfacial_area(const S& eps, const S& radius) {
  return 3.0 * (1.0 - eps) / radius;
}

/// Z-scoring of parameter vectors; statistics come from the training split.
class ParamNormalizer {
 public:
  ParamNormalizer() = default;
  ParamNormalizer(ParamVector mean, ParamVector std);

  /// Population mean / standard deviation of the given samples.
  static ParamNormalizer fit(const std::vector<ParameterSet>& samples);

  ParamVector normalize(const ParameterSet& p) const;
  ParameterSet denormalize(const ParamVector& z) const;

  const ParamVector& mean() const { return mean_; }
  const ParamVector& stddev() const { return std_; }

 private:
  ParamVector mean_{};
  ParamVector std_{};
};

/// The six concentration observables of the voltage expression.
template <class S>
struct BasicObservables {
  S c_p_surf{}, c_n_surf{};  // particle surface concentrations
  S ce_p{}, ce_n{};          // mean electrolyte concentration per electrode
  S sqrt_ce_p{}, sqrt_ce_n{};  // mean of √c_e per electrode

  std::array<S, 6> to_array() const { return {c_p_surf, c_n_surf, ce_p, ce_n, sqrt_ce_p, sqrt_ce_n}; }
};
using Observables = BasicObservables<double>;

/// Affine map c = H·y + offset between the four normalised channels and the
/// six observables. The offset carries the constant part of the (1 − y) terms.
struct ObservableMap {
  std::array<std::array<double, 4>, 6> H{};
  std::array<double, 6> offset{};

  static ObservableMap build(const ParameterSet& p, const CellConfig& c);
  Observables apply(const std::array<double, 4>& y) const;
};

template <class S>
BasicObservables<S> observables_from_y(const std::array<S, 4>& y, const BasicParameterSet<S>& p,
                                       const CellConfig& c) {
  using std::sqrt;
  const S vp = c.L_p * p.eps_p;
  const S vn = c.L_n * p.eps_n;
  const S total = vp + vn;
  BasicObservables<S> o;
  o.c_p_surf = p.c_s_p_max * y[0];
  o.c_n_surf = p.c_s_n_max * y[1];
  o.ce_p = total / vp * c.c_e_typ * y[2];
  o.ce_n = total / vn * c.c_e_typ * (1.0 - y[2]);
  const double sqrt_typ = std::sqrt(c.c_e_typ);
  o.sqrt_ce_p = total / vp * sqrt_typ * y[3];
  o.sqrt_ce_n = total / vn * sqrt_typ * (1.0 - y[3]);
  return o;
}

/// Normalised representation of simulator observables. Channels 2 and 3 are
/// the positive-side shares of electrolyte lithium and of √c_e.
std::array<double, 4> y_from_observables(const Observables& o, const ParameterSet& p,
                                         const CellConfig& c);

/// Fraction L_p ε_p / (L_p ε_p + L_n ε_n).
double positive_electrolyte_fraction(const ParameterSet& p, const CellConfig& c);

}  // namespace spmeid::cell
