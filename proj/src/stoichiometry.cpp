#include "spmeid/stoichiometry.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "spmeid/error.hpp"

namespace spmeid::stoich {

using cell::Electrode;

SolverOptions SolverOptions::from_kv(const KeyValueFile& kv) {
  SolverOptions o;
  o.tol_v = kv.get_double_or("stoich.tol_v", o.tol_v);
  o.tol_q = kv.get_double_or("stoich.tol_q", o.tol_q);
  o.max_iter = static_cast<int>(kv.get_int_or("stoich.max_iter", o.max_iter));
  if (!(o.tol_v > 0) || !(o.tol_q > 0) || o.max_iter < 1) {
    throw ConfigError("stoich solver options must be positive");
  }
  return o;
}

namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

// Unknown ordering: θp¹⁰⁰, θp⁰, θn¹⁰⁰, θn⁰, x0, x1.
StoichSolution unpack(const Vec6& u) {
  StoichSolution s;
  s.theta_p_100 = u[0];
  s.theta_p_0 = u[1];
  s.theta_n_100 = u[2];
  s.theta_n_0 = u[3];
  s.x0_init = u[4];
  s.x1_init = u[5];
  return s;
}

struct System {
  const cell::CellConfig& cfg;
  double qp;  // [C]
  double qn;  // [C]
  double q_li;
  double v_init;

  Vec6 residual(const Vec6& u) const {
    const auto& up = cfg.ocp_p;
    const auto& un = cfg.ocp_n;
    Vec6 r;
    r[0] = up.eval(u[0]) - un.eval(u[2]) - cfg.V_hi;
    r[1] = up.eval(u[1]) - un.eval(u[3]) - cfg.V_lo;
    r[2] = (qp * (u[1] - u[0]) - qn * (u[2] - u[3])) / 3600.0;
    r[3] = (qp * u[1] + qn * u[3]) / 3600.0 - q_li;
    r[4] = up.eval(u[4]) - un.eval(u[5]) - v_init;
    r[5] = (u[4] - u[1]) / (u[0] - u[1]) - (u[5] - u[3]) / (u[2] - u[3]);
    return r;
  }

  Mat6 jacobian(const Vec6& u) const {
    const auto& up = cfg.ocp_p;
    const auto& un = cfg.ocp_n;
    Mat6 j = Mat6::Zero();
    j(0, 0) = up.derivative(u[0]);
    j(0, 2) = -un.derivative(u[2]);
    j(1, 1) = up.derivative(u[1]);
    j(1, 3) = -un.derivative(u[3]);
    j(2, 0) = -qp / 3600.0;
    j(2, 1) = qp / 3600.0;
    j(2, 2) = -qn / 3600.0;
    j(2, 3) = qn / 3600.0;
    j(3, 1) = qp / 3600.0;
    j(3, 3) = qn / 3600.0;
    j(4, 4) = up.derivative(u[4]);
    j(4, 5) = -un.derivative(u[5]);
    const double a = u[4] - u[1], b = u[0] - u[1];
    const double c = u[5] - u[3], d = u[2] - u[3];
    j(5, 4) = 1.0 / b;
    j(5, 1) = (a - b) / (b * b);
    j(5, 0) = -a / (b * b);
    j(5, 5) = -1.0 / d;
    j(5, 3) = -(c - d) / (d * d);
    j(5, 2) = c / (d * d);
    return j;
  }

  // Residuals scaled to comparable magnitude for the merit function.
  double merit(const Vec6& r) const {
    const double qs = std::max(q_li, 1.0);
    const double s[6] = {1.0, 1.0, qs, qs, 1.0, 1.0};
    double m = 0;
    for (int i = 0; i < 6; ++i) m += (r[i] / s[i]) * (r[i] / s[i]);
    return m;
  }
};

bool converged(const Vec6& r, const SolverOptions& opt) {
  return std::abs(r[0]) < opt.tol_v && std::abs(r[1]) < opt.tol_v && std::abs(r[4]) < opt.tol_v &&
         std::abs(r[2]) < opt.tol_q && std::abs(r[3]) < opt.tol_q && std::abs(r[5]) < opt.tol_ratio;
}

Vec6 initial_guess(const cell::CellConfig& cfg, double v_init, int attempt) {
  // Documented default first, then deterministic alternatives for restarts.
  static constexpr double kGuess[6][4] = {
      {0.25, 0.85, 0.85, 0.05}, {0.20, 0.90, 0.90, 0.03}, {0.30, 0.80, 0.80, 0.08},
      {0.15, 0.95, 0.95, 0.02}, {0.35, 0.75, 0.75, 0.10}, {0.10, 0.97, 0.97, 0.01}};
  const auto& g = kGuess[attempt % 6];
  const double soc = std::clamp((v_init - cfg.V_lo) / (cfg.V_hi - cfg.V_lo), 0.0, 1.0);
  Vec6 u;
  u << g[0], g[1], g[2], g[3], g[1] + soc * (g[0] - g[1]), g[3] + soc * (g[2] - g[3]);
  return u;
}

// Largest α ≤ 1 keeping every unknown strictly inside (0,1).
double step_to_boundary(const Vec6& u, const Vec6& du) {
  constexpr double kFraction = 0.99;
  double alpha = 1.0;
  for (int i = 0; i < 6; ++i) {
    if (du[i] > 0) alpha = std::min(alpha, kFraction * (1.0 - u[i]) / du[i]);
    if (du[i] < 0) alpha = std::min(alpha, kFraction * (0.0 - u[i]) / du[i]);
  }
  return alpha;
}

}  // namespace

std::array<double, 6> residuals(const StoichSolution& s, const cell::ParameterSet& p,
                                const cell::CellConfig& cfg, double v_init) {
  const System sys{cfg, cell::capacity_p(p, cfg), cell::capacity_n(p, cfg), p.Q_Li, v_init};
  Vec6 u;
  u << s.theta_p_100, s.theta_p_0, s.theta_n_100, s.theta_n_0, s.x0_init, s.x1_init;
  const Vec6 r = sys.residual(u);
  return {r[0], r[1], r[2], r[3], r[4], r[5]};
}

StoichSolution solve_initial_stoichiometry(const cell::ParameterSet& p, const cell::CellConfig& cfg,
                                           double v_init, const SolverOptions& opt) {
  if (!(v_init >= cfg.V_lo && v_init <= cfg.V_hi)) {
    throw DomainError(fmt::format("initial voltage {} V outside [{}, {}]", v_init, cfg.V_lo, cfg.V_hi));
  }
  const System sys{cfg, cell::capacity_p(p, cfg), cell::capacity_n(p, cfg), p.Q_Li, v_init};
  if (!(sys.qp > 0) || !(sys.qn > 0)) {
    throw InfeasibleError("infeasible parameter set", "non-positive electrode capacity");
  }

  std::string cause = "newton divergence";
  for (int attempt = 0; attempt <= opt.restarts; ++attempt) {
    Vec6 u = initial_guess(cfg, v_init, attempt);
    Vec6 r = sys.residual(u);
    double m = sys.merit(r);
    const double max_step = std::pow(0.5, attempt);
    bool ok = false;
    int it = 0;
    for (; it < opt.max_iter; ++it) {
      if (converged(r, opt)) {
        ok = true;
        break;
      }
      Eigen::FullPivLU<Mat6> lu(sys.jacobian(u));
      if (lu.rank() < 6) {
        cause = "singular jacobian";
        break;
      }
      const Vec6 du = lu.solve(-r);
      if (!du.allFinite()) {
        cause = "singular jacobian";
        break;
      }
      double alpha = std::min(max_step, step_to_boundary(u, du));
      bool accepted = false;
      for (int ls = 0; ls < 40; ++ls) {
        const Vec6 trial = u + alpha * du;
        const Vec6 rt = sys.residual(trial);
        const double mt = sys.merit(rt);
        if (std::isfinite(mt) && mt <= m) {
          u = trial;
          r = rt;
          m = mt;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) break;
    }
    if (!ok) continue;

    StoichSolution s = unpack(u);
    s.iterations = it;
    s.residual_norm = r.cwiseAbs().maxCoeff();
    const bool ordered = s.theta_p_100 < s.theta_p_0 && s.theta_n_0 < s.theta_n_100;
    const bool between = (s.x0_init - s.theta_p_100) * (s.x0_init - s.theta_p_0) <= 0.0;
    if (ordered && between) return s;
    cause = "non-physical root";
  }
  throw InfeasibleError("infeasible parameter set", cause);
}

InputSequence build_input_sequence(const StoichSolution& sol, const cell::ParameterSet& p,
                                   const cell::CellConfig& cfg, std::span<const double> current,
                                   double dt) {
  const double qp = cell::capacity_p(p, cfg);
  const double qn = cell::capacity_n(p, cfg);
  const double frac = cell::positive_electrolyte_fraction(p, cfg);
  InputSequence seq;
  seq.x.resize(current.size());
  double x0 = sol.x0_init;
  double x1 = sol.x1_init;
  for (std::size_t t = 0; t < current.size(); ++t) {
    x0 += current[t] * dt / qp;
    x1 -= current[t] * dt / qn;
    seq.x[t] = {x0, x1, frac, frac};
  }
  return seq;
}

}  // namespace spmeid::stoich
