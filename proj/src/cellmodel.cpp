#include "spmeid/cellmodel.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "spmeid/error.hpp"

namespace spmeid::cell {

std::string_view electrode_name(Electrode e) {
  return e == Electrode::Positive ? "positive" : "negative";
}

double OcpCurve::derivative(double theta) const {
  double du = linear[1];
  for (const auto& [b, c] : exp_terms) du += b * c * std::exp(c * theta);
  for (const auto& [d, e, f] : tanh_terms) {
    const double t = std::tanh(e * (theta - f));
    du += d * e * (1.0 - t * t);
  }
  return du;
}

namespace {

const OcpCurve& curve(const CellConfig& cfg, Electrode e) {
  return e == Electrode::Positive ? cfg.ocp_p : cfg.ocp_n;
}

void check_theta(Electrode e, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) {
    throw DomainError(fmt::format("ocp: {} electrode stoichiometry {} outside (0,1)",
                                  electrode_name(e), theta));
  }
}

OcpCurve ocp_from_kv(const KeyValueFile& kv, const std::string& section) {
  OcpCurve c;
  c.form = kv.get_string(section + ".form");
  if (c.form != "tanh_exp") {
    throw ConfigError(fmt::format("{}.form: unknown OCP form '{}'", section, c.form));
  }
  const auto lin = kv.get_doubles(section + ".linear");
  if (lin.size() != 2) throw ConfigError(section + ".linear needs 2 coefficients");
  c.linear = {lin[0], lin[1]};
  const auto ex = kv.contains(section + ".exp") ? kv.get_doubles(section + ".exp") : std::vector<double>{};
  if (ex.size() % 2 != 0) throw ConfigError(section + ".exp needs coefficient pairs");
  for (std::size_t i = 0; i < ex.size(); i += 2) c.exp_terms.push_back({ex[i], ex[i + 1]});
  const auto th = kv.contains(section + ".tanh") ? kv.get_doubles(section + ".tanh") : std::vector<double>{};
  if (th.size() % 3 != 0) throw ConfigError(section + ".tanh needs coefficient triples");
  for (std::size_t i = 0; i < th.size(); i += 3) c.tanh_terms.push_back({th[i], th[i + 1], th[i + 2]});
  return c;
}

void ocp_to_kv(const OcpCurve& c, const std::string& section, KeyValueFile& kv) {
  kv.set(section + ".form", c.form);
  kv.set(section + ".linear", std::vector<double>{c.linear[0], c.linear[1]});
  std::vector<double> ex;
  for (const auto& t : c.exp_terms) ex.insert(ex.end(), t.begin(), t.end());
  kv.set(section + ".exp", ex);
  std::vector<double> th;
  for (const auto& t : c.tanh_terms) th.insert(th.end(), t.begin(), t.end());
  kv.set(section + ".tanh", th);
}

struct Field {
  const char* key;
  double CellConfig::*member;
};

constexpr Field kFields[] = {
    {"N", &CellConfig::N},           {"A", &CellConfig::A},
    {"L_p", &CellConfig::L_p},       {"L_sep", &CellConfig::L_sep},
    {"L_n", &CellConfig::L_n},       {"eps_sep", &CellConfig::eps_sep},
    {"sigma_p", &CellConfig::sigma_p}, {"sigma_n", &CellConfig::sigma_n},
    {"m_p", &CellConfig::m_p},       {"m_n", &CellConfig::m_n},
    {"E_a_p", &CellConfig::E_a_p},   {"E_a_n", &CellConfig::E_a_n},
    {"kappa_e", &CellConfig::kappa_e}, {"D_e", &CellConfig::D_e},
    {"beta", &CellConfig::beta},     {"t_plus", &CellConfig::t_plus},
    {"c_e_typ", &CellConfig::c_e_typ}, {"T", &CellConfig::T},
    {"T_ref", &CellConfig::T_ref},   {"V_hi", &CellConfig::V_hi},
    {"V_lo", &CellConfig::V_lo},     {"F", &CellConfig::F},
    {"R", &CellConfig::R},           {"Q_nom", &CellConfig::Q_nom},
};

}  // namespace

double ocp(const CellConfig& cfg, Electrode e, double theta) {
  check_theta(e, theta);
  return curve(cfg, e).eval(theta);
}

double ocp_derivative(const CellConfig& cfg, Electrode e, double theta) {
  check_theta(e, theta);
  return curve(cfg, e).derivative(theta);
}

CellConfig CellConfig::defaults() {
  CellConfig c;
  c.N = 20;
  c.A = 0.055;
  c.L_p = 75.6e-6;
  c.L_sep = 12e-6;
  c.L_n = 100e-6;
  c.eps_sep = 0.47;
  c.sigma_p = 0.18;
  c.sigma_n = 215.0;
  c.m_p = 3.42e-6;
  c.m_n = 6.48e-7;
  c.E_a_p = 17800.0;
  c.E_a_n = 35000.0;
  c.kappa_e = 0.9487;
  c.D_e = 1.769e-10;
  c.beta = 1.5;
  c.t_plus = 0.2594;
  c.c_e_typ = 1000.0;
  c.T = 298.15;
  c.T_ref = 298.15;
  c.V_hi = 4.2;
  c.V_lo = 2.5;
  c.F = 96485.33212;
  c.R = 8.314462618;
  c.Q_nom = 55.0;
  // NMC811 and graphite fits of the LG M50 family.
  c.ocp_p.linear = {4.4875, -0.8090};
  c.ocp_p.tanh_terms = {{-0.0428, 18.5138, 0.5542}, {-17.7326, 15.7890, 0.3117}, {17.5842, 15.9308, 0.3120}};
  c.ocp_n.linear = {0.2482, 0.0};
  c.ocp_n.exp_terms = {{1.9793, -39.3631}};
  c.ocp_n.tanh_terms = {{-0.0909, 29.8538, 0.1234}, {-0.04478, 14.9159, 0.2769}, {-0.0205, 30.4444, 0.6103}};
  return c;
}

CellConfig CellConfig::from_kv(const KeyValueFile& kv) {
  CellConfig c;
  for (const auto& f : kFields) c.*(f.member) = kv.get_double(std::string("cell.") + f.key);
  c.ocp_p = ocp_from_kv(kv, "ocp_p");
  c.ocp_n = ocp_from_kv(kv, "ocp_n");
  c.validate();
  return c;
}

CellConfig CellConfig::load(const std::filesystem::path& path) {
  return from_kv(KeyValueFile::load(path));
}

KeyValueFile CellConfig::to_kv() const {
  KeyValueFile kv;
  for (const auto& f : kFields) kv.set(std::string("cell.") + f.key, this->*(f.member));
  ocp_to_kv(ocp_p, "ocp_p", kv);
  ocp_to_kv(ocp_n, "ocp_n", kv);
  return kv;
}

void CellConfig::validate() const {
  const auto positive = [](const char* name, double v) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(fmt::format("cell.{} must be strictly positive (got {})", name, v));
    }
  };
  for (const auto& f : kFields) positive(f.key, this->*(f.member));
  if (!(t_plus < 1.0)) throw ConfigError("cell.t_plus must lie in (0,1)");
  if (!(eps_sep < 1.0)) throw ConfigError("cell.eps_sep must lie in (0,1)");
  if (!(V_lo < V_hi)) throw ConfigError("cell.V_lo must be below cell.V_hi");

  // Both potentials must decrease with stoichiometry on a 1e3-point grid.
  constexpr int kGrid = 1000;
  double umax_p = -1e300, umin_p = 1e300, umax_n = -1e300, umin_n = 1e300;
  double prev_p = 0, prev_n = 0;
  for (int i = 0; i < kGrid; ++i) {
    const double theta = (i + 0.5) / kGrid;
    const double up = ocp_p.eval(theta);
    const double un = ocp_n.eval(theta);
    if (!std::isfinite(up) || !std::isfinite(un)) throw ConfigError("OCP not finite on (0,1)");
    if (i > 0 && !(up < prev_p)) {
      throw ConfigError(fmt::format("ocp_p is not strictly decreasing near theta={}", theta));
    }
    if (i > 0 && !(un < prev_n)) {
      throw ConfigError(fmt::format("ocp_n is not strictly decreasing near theta={}", theta));
    }
    prev_p = up;
    prev_n = un;
    umax_p = std::max(umax_p, up);
    umin_p = std::min(umin_p, up);
    umax_n = std::max(umax_n, un);
    umin_n = std::min(umin_n, un);
  }
  if (!(umax_p - umin_n >= V_hi) || !(umin_p - umax_n <= V_lo)) {
    throw ConfigError(fmt::format("OCV window [{:.4f}, {:.4f}] V does not span [V_lo, V_hi]",
                                  umin_p - umax_n, umax_p - umin_n));
  }
}

const std::array<std::string_view, kNumParams> kParamNames = {
    "eps_p", "eps_n", "R_p", "R_n", "c_s_p_max", "c_s_n_max", "D_s_p", "D_s_n", "Q_Li"};

ParamVector ParameterBounds::mid() const {
  ParamVector m{};
  for (std::size_t i = 0; i < kNumParams; ++i) m[i] = 0.5 * (lo[i] + hi[i]);
  return m;
}

bool ParameterBounds::contains(const ParameterSet& p) const {
  const auto a = p.to_array();
  for (std::size_t i = 0; i < kNumParams; ++i) {
    if (a[i] < lo[i] || a[i] > hi[i]) return false;
  }
  return true;
}

ParameterSet ParameterBounds::clip(const ParameterSet& p, std::size_t* clipped) const {
  auto a = p.to_array();
  std::size_t n = 0;
  for (std::size_t i = 0; i < kNumParams; ++i) {
    const double c = std::clamp(a[i], lo[i], hi[i]);
    if (c != a[i]) ++n;
    a[i] = c;
  }
  if (clipped) *clipped += n;
  return ParameterSet::from_array(a);
}

const ParameterBounds& feasible_bounds() {
  static const ParameterBounds b{
      {0.137, 0.193, 2.98e-6, 7.72e-6, 4.17e4, 2.92e4, 2.97e-14, 4.31e-14, 65.4},
      {0.400, 0.570, 8.63e-6, 22.9e-6, 6.82e4, 4.83e4, 8.64e-14, 1.24e-13, 100.0},
  };
  return b;
}

ParamNormalizer::ParamNormalizer(ParamVector mean, ParamVector std) : mean_(mean), std_(std) {
  for (std::size_t i = 0; i < kNumParams; ++i) {
    if (!(std_[i] > 0.0) || !std::isfinite(std_[i])) {
      throw ConfigError(fmt::format("normalizer: std of {} must be strictly positive (got {})",
                                    kParamNames[i], std_[i]));
    }
  }
}

ParamNormalizer ParamNormalizer::fit(const std::vector<ParameterSet>& samples) {
  if (samples.empty()) throw ConfigError("normalizer: no samples to fit");
  ParamVector mean{}, var{};
  const double n = static_cast<double>(samples.size());
  for (const auto& s : samples) {
    const auto a = s.to_array();
    for (std::size_t i = 0; i < kNumParams; ++i) mean[i] += a[i];
  }
  for (auto& m : mean) m /= n;
  for (const auto& s : samples) {
    const auto a = s.to_array();
    for (std::size_t i = 0; i < kNumParams; ++i) var[i] += (a[i] - mean[i]) * (a[i] - mean[i]);
  }
  ParamVector sd{};
  for (std::size_t i = 0; i < kNumParams; ++i) sd[i] = std::sqrt(var[i] / n);
  return ParamNormalizer(mean, sd);
}

ParamVector ParamNormalizer::normalize(const ParameterSet& p) const {
  const auto a = p.to_array();
  ParamVector z{};
  for (std::size_t i = 0; i < kNumParams; ++i) z[i] = (a[i] - mean_[i]) / std_[i];
  return z;
}

ParameterSet ParamNormalizer::denormalize(const ParamVector& z) const {
  ParamVector a{};
  for (std::size_t i = 0; i < kNumParams; ++i) a[i] = z[i] * std_[i] + mean_[i];
  return ParameterSet::from_array(a);
}

ObservableMap ObservableMap::build(const ParameterSet& p, const CellConfig& c) {
  const double vp = c.L_p * p.eps_p;
  const double vn = c.L_n * p.eps_n;
  const double kp = (vp + vn) / vp;
  const double kn = (vp + vn) / vn;
  const double st = std::sqrt(c.c_e_typ);
  ObservableMap m;
  m.H[0][0] = p.c_s_p_max;
  m.H[1][1] = p.c_s_n_max;
  m.H[2][2] = kp * c.c_e_typ;
  m.H[3][2] = -kn * c.c_e_typ;
  m.offset[3] = kn * c.c_e_typ;
  m.H[4][3] = kp * st;
  m.H[5][3] = -kn * st;
  m.offset[5] = kn * st;
  return m;
}

Observables ObservableMap::apply(const std::array<double, 4>& y) const {
  std::array<double, 6> out{};
  for (std::size_t r = 0; r < 6; ++r) {
    double s = offset[r];
    for (std::size_t k = 0; k < 4; ++k) s += H[r][k] * y[k];
    out[r] = s;
  }
  return {out[0], out[1], out[2], out[3], out[4], out[5]};
}

std::array<double, 4> y_from_observables(const Observables& o, const ParameterSet& p,
                                         const CellConfig& c) {
  const double vp = c.L_p * p.eps_p;
  const double vn = c.L_n * p.eps_n;
  std::array<double, 4> y{};
  y[0] = o.c_p_surf / p.c_s_p_max;
  y[1] = o.c_n_surf / p.c_s_n_max;
  y[2] = vp * o.ce_p / (vp * o.ce_p + vn * o.ce_n);
  y[3] = vp * o.sqrt_ce_p / (vp * o.sqrt_ce_p + vn * o.sqrt_ce_n);
  return y;
}

double positive_electrolyte_fraction(const ParameterSet& p, const CellConfig& c) {
  const double vp = c.L_p * p.eps_p;
  return vp / (vp + c.L_n * p.eps_n);
}

}  // namespace spmeid::cell
