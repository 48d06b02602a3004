#include "spmeid/simulator.hpp"

#include <fmt/format.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "spmeid/error.hpp"
#include "spmeid/voltage.hpp"

namespace spmeid::sim {

static_assert(std::endian::native == std::endian::little, "trajectory I/O assumes a little-endian host");

using cell::Electrode;

void SimGrid::validate() const {
  if (n_shell < 4 || n_x < 4 || !(dt > 0)) {
    throw ConfigError(fmt::format("invalid simulation grid (n_shell={}, n_x={}, dt={})", n_shell, n_x, dt));
  }
}

TridiagonalSolver::TridiagonalSolver(std::vector<double> lower, std::vector<double> diag,
                                     std::vector<double> upper)
    : lower_(std::move(lower)) {
  const std::size_t n = diag.size();
  upper_prime_.assign(n, 0.0);
  inv_denom_.assign(n, 0.0);
  double prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double denom = diag[i] - (i > 0 ? lower_[i] * prev : 0.0);
    if (denom == 0.0) throw NumericalError("singular tridiagonal system");
    inv_denom_[i] = 1.0 / denom;
    upper_prime_[i] = i + 1 < n ? upper[i] * inv_denom_[i] : 0.0;
    prev = upper_prime_[i];
  }
}

void TridiagonalSolver::solve(std::span<double> d) const {
  const std::size_t n = inv_denom_.size();
  d[0] *= inv_denom_[0];
  for (std::size_t i = 1; i < n; ++i) d[i] = (d[i] - lower_[i] * d[i - 1]) * inv_denom_[i];
  for (std::size_t i = n - 1; i-- > 0;) d[i] -= upper_prime_[i] * d[i + 1];
}

SpmeSimulator::Particle SpmeSimulator::build_particle(double radius, double diffusivity) const {
  const int n = grid_.n_shell;
  Particle part;
  std::vector<double> r(n + 1), rho(n);
  for (int i = 0; i <= n; ++i) r[i] = radius * std::cbrt(static_cast<double>(i) / n);
  for (int i = 0; i < n; ++i) rho[i] = std::cbrt(0.5 * (r[i] * r[i] * r[i] + r[i + 1] * r[i + 1] * r[i + 1]));
  part.volume.resize(n);
  for (int i = 0; i < n; ++i) part.volume[i] = (std::pow(r[i + 1], 3) - std::pow(r[i], 3)) / 3.0;
  part.surface = radius * radius;

  std::vector<double> lower(n, 0.0), diag(n, 0.0), upper(n, 0.0);
  for (int i = 0; i < n; ++i) diag[i] = part.volume[i] / grid_.dt;
  for (int i = 0; i + 1 < n; ++i) {
    const double g = r[i + 1] * r[i + 1] * diffusivity / (rho[i + 1] - rho[i]);
    diag[i] += g;
    diag[i + 1] += g;
    upper[i] = -g;
    lower[i + 1] = -g;
  }
  part.solver = TridiagonalSolver(std::move(lower), std::move(diag), std::move(upper));
  return part;
}

SpmeSimulator::SpmeSimulator(const cell::ParameterSet& p, const cell::CellConfig& cfg, const SimGrid& grid,
                             double x0_init, double x1_init)
    : p_(p), cfg_(cfg), grid_(grid), map_(cell::ObservableMap::build(p, cfg)) {
  grid_.validate();
  part_p_ = build_particle(p.R_p, p.D_s_p);
  part_n_ = build_particle(p.R_n, p.D_s_n);
  a_p_ = cell::interfacial_area(p.eps_p, p.R_p);
  a_n_ = cell::interfacial_area(p.eps_n, p.R_n);

  const int nx = grid_.n_x;
  const double lengths[3] = {cfg.L_n, cfg.L_sep, cfg.L_p};
  const double porosity[3] = {p.eps_n, cfg.eps_sep, p.eps_p};
  for (int d = 0; d < 3; ++d) {
    for (int i = 0; i < nx; ++i) {
      dx_.push_back(lengths[d] / nx);
      eps_.push_back(porosity[d]);
    }
  }
  const std::size_t m = dx_.size();
  std::vector<double> lower(m, 0.0), diag(m, 0.0), upper(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) diag[i] = eps_[i] * dx_[i] / grid_.dt;
  for (std::size_t i = 0; i + 1 < m; ++i) {
    const double res = 0.5 * dx_[i] / (cfg.D_e * std::pow(eps_[i], cfg.beta)) +
                       0.5 * dx_[i + 1] / (cfg.D_e * std::pow(eps_[i + 1], cfg.beta));
    const double g = 1.0 / res;
    diag[i] += g;
    diag[i + 1] += g;
    upper[i] = -g;
    lower[i + 1] = -g;
  }
  electrolyte_ = TridiagonalSolver(std::move(lower), std::move(diag), std::move(upper));

  state_.cs_p.assign(grid_.n_shell, x0_init * p.c_s_p_max);
  state_.cs_n.assign(grid_.n_shell, x1_init * p.c_s_n_max);
  state_.ce.assign(m, cfg.c_e_typ);
  scratch_.resize(std::max<std::size_t>(m, grid_.n_shell));
}

SpmeSimulator::Output SpmeSimulator::step(double current) {
  const double J = current / (cfg_.N * cfg_.A);
  const double dt = grid_.dt;

  // Molar flux into the particle surface [mol/(m^2 s)].
  const double q_p = J / (cfg_.F * a_p_ * cfg_.L_p);
  const double q_n = -J / (cfg_.F * a_n_ * cfg_.L_n);

  auto advance = [&](Particle& part, std::vector<double>& cs, double q) {
    const std::size_t n = cs.size();
    std::span<double> rhs(scratch_.data(), n);
    for (std::size_t i = 0; i < n; ++i) rhs[i] = part.volume[i] * cs[i] / dt;
    rhs[n - 1] += part.surface * q;
    part.solver.solve(rhs);
    std::copy(rhs.begin(), rhs.end(), cs.begin());
  };
  advance(part_p_, state_.cs_p, q_p);
  advance(part_n_, state_.cs_n, q_n);

  const std::size_t nx = static_cast<std::size_t>(grid_.n_x);
  const std::size_t m = state_.ce.size();
  const double src_n = J * (1.0 - cfg_.t_plus) / (cfg_.F * cfg_.L_n);
  const double src_p = -J * (1.0 - cfg_.t_plus) / (cfg_.F * cfg_.L_p);
  std::span<double> rhs(scratch_.data(), m);
  for (std::size_t i = 0; i < m; ++i) {
    double src = 0.0;
    if (i < nx) src = src_n;
    else if (i >= 2 * nx) src = src_p;
    rhs[i] = eps_[i] * dx_[i] * state_.ce[i] / dt + src * dx_[i];
  }
  electrolyte_.solve(rhs);
  std::copy(rhs.begin(), rhs.end(), state_.ce.begin());

  state_.time += dt;
  ++steps_;
  check_state(steps_ - 1);
  return observe(current);
}

void SpmeSimulator::check_state(std::size_t step_index) const {
  auto finite_positive = [](const std::vector<double>& v) {
    for (double x : v) {
      if (!(x > 0.0) || !std::isfinite(x)) return false;
    }
    return true;
  };
  auto check_particle = [&](const std::vector<double>& cs, double c_max, Electrode e) {
    if (!finite_positive(cs) && cs.back() > 0.0) {
      throw SimulationError(SimFailure::Instability, step_index,
                            fmt::format("negative {} solid concentration", cell::electrode_name(e)));
    }
    for (double x : cs) {
      if (!(x > 0.0 && x < c_max)) {
        throw SimulationError(SimFailure::Saturation, step_index,
                              fmt::format("{} electrode saturated", cell::electrode_name(e)));
      }
    }
  };
  check_particle(state_.cs_p, p_.c_s_p_max, Electrode::Positive);
  check_particle(state_.cs_n, p_.c_s_n_max, Electrode::Negative);
  if (!finite_positive(state_.ce)) {
    throw SimulationError(SimFailure::Instability, step_index, "electrolyte depletion");
  }
}

SpmeSimulator::Output SpmeSimulator::observe(double current) const {
  const std::size_t nx = static_cast<std::size_t>(grid_.n_x);
  const std::size_t m = state_.ce.size();
  cell::Observables raw;
  raw.c_p_surf = state_.cs_p.back();
  raw.c_n_surf = state_.cs_n.back();
  for (std::size_t i = 0; i < nx; ++i) {
    raw.ce_n += state_.ce[i];
    raw.sqrt_ce_n += std::sqrt(state_.ce[i]);
  }
  for (std::size_t i = m - nx; i < m; ++i) {
    raw.ce_p += state_.ce[i];
    raw.sqrt_ce_p += std::sqrt(state_.ce[i]);
  }
  const double inv = 1.0 / static_cast<double>(nx);
  raw.ce_n *= inv;
  raw.sqrt_ce_n *= inv;
  raw.ce_p *= inv;
  raw.sqrt_ce_p *= inv;

  // The voltage is evaluated on the projection H·y so that the stored
  // observables and labels reproduce it exactly.
  Output out;
  out.y = cell::y_from_observables(raw, p_, cfg_);
  out.c = map_.apply(out.y);
  out.V = volt::voltage(out.c, p_, cfg_, current).total();
  return out;
}

double SpmeSimulator::solid_lithium(Electrode e) const {
  const bool pos = e == Electrode::Positive;
  const auto& cs = pos ? state_.cs_p : state_.cs_n;
  double mean = 0.0;
  for (double x : cs) mean += x;
  mean /= static_cast<double>(cs.size());  // shells have equal volume
  const double L = pos ? cfg_.L_p : cfg_.L_n;
  const double eps = pos ? p_.eps_p : p_.eps_n;
  return cfg_.N * cfg_.A * L * (1.0 - eps) * mean;
}

double SpmeSimulator::electrolyte_lithium() const {
  double s = 0.0;
  for (std::size_t i = 0; i < state_.ce.size(); ++i) s += eps_[i] * dx_[i] * state_.ce[i];
  return cfg_.N * cfg_.A * s;
}

Trajectory simulate_from(const cell::ParameterSet& p, const cell::CellConfig& cfg,
                         std::span<const double> current, const stoich::StoichSolution& sol,
                         const SimGrid& grid, const SimOptions& opt) {
  SpmeSimulator sim(p, cfg, grid, sol.x0_init, sol.x1_init);
  Trajectory tr;
  const std::size_t n = current.size();
  tr.t.reserve(n);
  tr.I.reserve(n);
  tr.V.reserve(n);
  tr.c.reserve(n);
  tr.y.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto out = sim.step(current[k]);
    if (!(out.V >= cfg.V_lo - opt.breach_margin && out.V <= cfg.V_hi + opt.breach_margin)) {
      throw SimulationError(SimFailure::CutoffBreach, k, fmt::format("terminal voltage {:.4f} V out of range", out.V));
    }
    tr.t.push_back(sim.state().time);
    tr.I.push_back(current[k]);
    tr.V.push_back(out.V);
    tr.c.push_back(out.c.to_array());
    tr.y.push_back(out.y);
  }
  return tr;
}

Trajectory simulate(const cell::ParameterSet& p, const cell::CellConfig& cfg, std::span<const double> current,
                    double v_init, const SimGrid& grid, const stoich::SolverOptions& stoich_opt,
                    const SimOptions& opt) {
  const auto sol = stoich::solve_initial_stoichiometry(p, cfg, v_init, stoich_opt);
  return simulate_from(p, cfg, current, sol, grid, opt);
}

SimGrid capacity_grid() { return SimGrid{20, 10, 5.0}; }

double cc_discharge_capacity(const cell::ParameterSet& p, const cell::CellConfig& cfg, double rate,
                             const SimGrid& grid, const stoich::SolverOptions& stoich_opt) {
  if (!(rate > 0)) throw DomainError("discharge rate must be positive");
  const double current = rate * cfg.Q_nom;
  const auto sol = stoich::solve_initial_stoichiometry(p, cfg, cfg.V_hi, stoich_opt);
  SpmeSimulator sim(p, cfg, grid, sol.x0_init, sol.x1_init);

  const auto max_steps = static_cast<std::size_t>(1.5 * p.Q_Li * 3600.0 / (current * grid.dt)) + 100;
  double v_prev = sim.observe(current).V;
  for (std::size_t k = 0; k < max_steps; ++k) {
    const double t_prev = sim.state().time;
    double v = 0.0;
    try {
      v = sim.step(current).V;
    } catch (const SimulationError& e) {
      if (e.kind() != SimFailure::Saturation) throw;
      return current * t_prev / 3600.0;
    }
    if (v <= cfg.V_lo) {
      const double frac = v_prev > v ? (v_prev - cfg.V_lo) / (v_prev - v) : 1.0;
      return current * (t_prev + frac * grid.dt) / 3600.0;
    }
    v_prev = v;
  }
  throw NumericalError(fmt::format("constant-current discharge at {}C did not reach {} V", rate, cfg.V_lo));
}

// --- export -----------------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_f32(std::string& out, double v) {
  const float f = static_cast<float>(v);
  char b[4];
  std::memcpy(b, &f, 4);
  out.append(b, 4);
}

class Reader {
 public:
  explicit Reader(std::string_view s) : s_(s) {}
  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  double f32() {
    float v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  const char* take(std::size_t n) {
    if (pos_ + n > s_.size()) throw FormatError("truncated trajectory record");
    const char* p = s_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_trajectory(const Trajectory& tr) {
  const std::size_t n = tr.size();
  std::string out;
  out.reserve(16 + n * 4 * 13);
  out.append(kTrajectoryMagic, 8);
  put_u32(out, kTrajectoryVersion);
  put_u32(out, static_cast<std::uint32_t>(n));
  for (double v : tr.t) put_f32(out, v);
  for (double v : tr.I) put_f32(out, v);
  for (double v : tr.V) put_f32(out, v);
  for (int k = 0; k < 4; ++k)
    for (std::size_t i = 0; i < n; ++i) put_f32(out, tr.y[i][k]);
  for (int k = 0; k < 6; ++k)
    for (std::size_t i = 0; i < n; ++i) put_f32(out, tr.c[i][k]);
  return out;
}

Trajectory decode_trajectory(std::string_view bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(8), kTrajectoryMagic, 8) != 0) throw FormatError("not a trajectory record (bad magic)");
  const auto version = r.u32();
  if (version != kTrajectoryVersion) throw FormatError(fmt::format("unsupported trajectory version {}", version));
  const std::size_t n = r.u32();
  Trajectory tr;
  tr.t.resize(n);
  tr.I.resize(n);
  tr.V.resize(n);
  tr.y.resize(n);
  tr.c.resize(n);
  for (auto& v : tr.t) v = r.f32();
  for (auto& v : tr.I) v = r.f32();
  for (auto& v : tr.V) v = r.f32();
  for (int k = 0; k < 4; ++k)
    for (std::size_t i = 0; i < n; ++i) tr.y[i][k] = r.f32();
  for (int k = 0; k < 6; ++k)
    for (std::size_t i = 0; i < n; ++i) tr.c[i][k] = r.f32();
  if (!r.done()) throw FormatError("trailing bytes after trajectory record");
  return tr;
}

void write_trajectory(const std::filesystem::path& path, const Trajectory& tr) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(fmt::format("cannot write {}", path.string()));
  const auto bytes = encode_trajectory(tr);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_trajectory(ss.str());
}

void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& tr,
                          const std::vector<std::string>& header) {
  std::ofstream f(path);
  if (!f) throw Error(fmt::format("cannot write {}", path.string()));
  for (const auto& h : header) f << "# " << h << '\n';
  f << "t,I,V,y0,y1,y2,y3,c_p_surf,c_n_surf,ce_p,ce_n,sqrt_ce_p,sqrt_ce_n\n";
  for (std::size_t i = 0; i < tr.size(); ++i) {
    f << fmt::format("{:.6g},{:.9g},{:.9g}", tr.t[i], tr.I[i], tr.V[i]);
    for (double v : tr.y[i]) f << fmt::format(",{:.9g}", v);
    for (double v : tr.c[i]) f << fmt::format(",{:.9g}", v);
    f << '\n';
  }
}

}  // namespace spmeid::sim
