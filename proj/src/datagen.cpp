#include "spmeid/datagen.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <random>

#include "spmeid/error.hpp"
#include "spmeid/parallel.hpp"
#include "spmeid/provenance.hpp"

namespace spmeid::data {

namespace fs = std::filesystem;
using cell::ParameterSet;
using cell::ParamVector;

// --- plan ---------------------------------------------------------------------

int SamplingPlan::n_bins() const { return static_cast<int>(std::lround((soh_hi - soh_lo) / bin_width)); }

int SamplingPlan::bin_of(double soh) const {
  constexpr double kTol = 1e-9;
  if (soh < soh_lo - kTol || soh >= soh_hi - kTol) return -1;
  const int b = static_cast<int>(std::floor((soh - soh_lo) / bin_width + kTol));
  return std::clamp(b, 0, n_bins() - 1);
}

std::vector<int> SamplingPlan::val_per_bin() const {
  const int nb = n_bins();
  std::vector<int> v(nb, val_sets / nb);
  for (int b = 0; b < val_sets % nb; ++b) ++v[b];
  return v;
}

void SamplingPlan::validate() const {
  if (!(soh_lo < soh_hi) || !(bin_width > 0)) throw ConfigError("plan: empty state-of-health window");
  if (std::abs(n_bins() * bin_width - (soh_hi - soh_lo)) > 1e-9) {
    throw ConfigError(fmt::format("plan: bins of width {} do not tile [{}, {}]", bin_width, soh_lo, soh_hi));
  }
  if (sets_per_bin < 1 || sequences_per_set < 1 || steps < 1) throw ConfigError("plan: counts must be positive");
  if (val_sets < 0 || val_sets >= sets_per_bin * n_bins()) throw ConfigError("plan: validation split too large");
  for (int v : val_per_bin()) {
    if (v >= sets_per_bin) throw ConfigError("plan: a bin would have no training sets");
  }
  if (!(0 < soc_lo && soc_lo < soc_hi && soc_hi < 1)) throw ConfigError("plan: initial SoC window must lie in (0,1)");
  if (!(0 < range_lo && range_lo < range_hi) || !(0 < cmax_lo && cmax_lo < cmax_hi)) {
    throw ConfigError("plan: scaling ranges must be positive and increasing");
  }
  if (draw_cap_factor < 1 || max_sim_retries < 1) throw ConfigError("plan: caps must be positive");
}

void SamplingPlan::write(KeyValueFile& kv) const {
  kv.set("plan.soh_lo", soh_lo);
  kv.set("plan.soh_hi", soh_hi);
  kv.set("plan.bin_width", bin_width);
  kv.set("plan.sets_per_bin", static_cast<long long>(sets_per_bin));
  kv.set("plan.sequences_per_set", static_cast<long long>(sequences_per_set));
  kv.set("plan.range_lo", range_lo);
  kv.set("plan.range_hi", range_hi);
  kv.set("plan.cmax_lo", cmax_lo);
  kv.set("plan.cmax_hi", cmax_hi);
  kv.set("plan.draw_cap_factor", static_cast<long long>(draw_cap_factor));
  kv.set("plan.soc_lo", soc_lo);
  kv.set("plan.soc_hi", soc_hi);
  kv.set("plan.steps", static_cast<long long>(steps));
  kv.set("plan.val_sets", static_cast<long long>(val_sets));
  kv.set("plan.max_sim_retries", static_cast<long long>(max_sim_retries));
}

SamplingPlan SamplingPlan::read(const KeyValueFile& kv) {
  SamplingPlan p;
  p.soh_lo = kv.get_double_or("plan.soh_lo", p.soh_lo);
  p.soh_hi = kv.get_double_or("plan.soh_hi", p.soh_hi);
  p.bin_width = kv.get_double_or("plan.bin_width", p.bin_width);
  p.sets_per_bin = static_cast<int>(kv.get_int_or("plan.sets_per_bin", p.sets_per_bin));
  p.sequences_per_set = static_cast<int>(kv.get_int_or("plan.sequences_per_set", p.sequences_per_set));
  p.range_lo = kv.get_double_or("plan.range_lo", p.range_lo);
  p.range_hi = kv.get_double_or("plan.range_hi", p.range_hi);
  p.cmax_lo = kv.get_double_or("plan.cmax_lo", p.cmax_lo);
  p.cmax_hi = kv.get_double_or("plan.cmax_hi", p.cmax_hi);
  p.draw_cap_factor = static_cast<int>(kv.get_int_or("plan.draw_cap_factor", p.draw_cap_factor));
  p.soc_lo = kv.get_double_or("plan.soc_lo", p.soc_lo);
  p.soc_hi = kv.get_double_or("plan.soc_hi", p.soc_hi);
  p.steps = static_cast<int>(kv.get_int_or("plan.steps", p.steps));
  p.val_sets = static_cast<int>(kv.get_int_or("plan.val_sets", p.val_sets));
  p.max_sim_retries = static_cast<int>(kv.get_int_or("plan.max_sim_retries", p.max_sim_retries));
  p.validate();
  return p;
}

void DriveCycleConfig::write(KeyValueFile& kv) const {
  kv.set("drive.steps", static_cast<long long>(steps));
  kv.set("drive.dt", dt);
  kv.set("drive.rest_fraction", rest_fraction);
  kv.set("drive.regen_fraction", regen_fraction);
  kv.set("drive.peak_c", peak_c);
  kv.set("drive.q_nom", q_nom);
}

DriveCycleConfig DriveCycleConfig::read(const KeyValueFile& kv) {
  DriveCycleConfig c;
  c.steps = static_cast<int>(kv.get_int_or("drive.steps", c.steps));
  c.dt = kv.get_double_or("drive.dt", c.dt);
  c.rest_fraction = kv.get_double_or("drive.rest_fraction", c.rest_fraction);
  c.regen_fraction = kv.get_double_or("drive.regen_fraction", c.regen_fraction);
  c.peak_c = kv.get_double_or("drive.peak_c", c.peak_c);
  c.q_nom = kv.get_double_or("drive.q_nom", c.q_nom);
  if (c.steps < 1 || !(c.dt > 0) || !(c.peak_c > 0) || !(c.q_nom > 0) || c.rest_fraction < 0 ||
      c.rest_fraction >= 1 || c.regen_fraction <= 0 || c.regen_fraction > 1) {
    throw ConfigError("drive: invalid drive-cycle configuration");
  }
  return c;
}

// --- drive cycle ----------------------------------------------------------------

std::vector<double> generate_drive_current(const DriveCycleConfig& cfg, std::uint64_t seed) {
  // Vehicle and pack constants of the power model P = m·v·a + c1·v + c2·v².
  constexpr double kMass = 1800.0;        // [kg]
  constexpr double kC1 = 212.0;           // rolling resistance [N]
  constexpr double kC2 = 8.0;             // [W s^2/m^2]
  constexpr double kAux = 400.0;          // auxiliary load [W]
  constexpr double kPowerPerC = 40000.0;  // pack power drawing 1C from one cell [W]
  constexpr double kTheta = 0.05;         // velocity mean reversion [1/s]
  constexpr double kSigma = 0.6;          // velocity noise [m/s/√s]
  constexpr double kDriveMean = 150.0;    // mean driving segment [s]

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto exp_draw = [&](double mean) { return -mean * std::log(1.0 - u01(rng)); };
  const double rest_mean = kDriveMean * cfg.rest_fraction / (1.0 - cfg.rest_fraction);

  enum class Phase { Rest, Drive, Brake };
  Phase phase = u01(rng) < cfg.rest_fraction ? Phase::Rest : Phase::Drive;
  double remaining = phase == Phase::Rest ? exp_draw(rest_mean) : exp_draw(kDriveMean);
  double target = 8.0 + 20.0 * u01(rng);
  double v = phase == Phase::Drive ? target * u01(rng) : 0.0;
  double brake = 0.0;

  const double i_max = cfg.peak_c * cfg.q_nom;
  std::vector<double> current(static_cast<std::size_t>(cfg.steps));
  for (auto& out : current) {
    double v_next = v;
    switch (phase) {
      case Phase::Rest:
        v_next = 0.0;
        remaining -= cfg.dt;
        if (remaining <= 0) {
          phase = Phase::Drive;
          remaining = exp_draw(kDriveMean);
          target = 8.0 + 20.0 * u01(rng);
        }
        break;
      case Phase::Drive: {
        const double launch = v < 0.5 * target ? 1.0 + 1.5 * u01(rng) : 0.0;
        v_next = v + (kTheta * (target - v) + launch) * cfg.dt + kSigma * std::sqrt(cfg.dt) * n01(rng);
        v_next = std::max(v_next, 0.0);
        remaining -= cfg.dt;
        if (remaining <= 0) {
          if (u01(rng) < 0.5 && cfg.rest_fraction > 0) {
            phase = Phase::Brake;
            brake = 1.0 + 2.0 * u01(rng);
          } else {
            remaining = exp_draw(kDriveMean);
            target = 8.0 + 20.0 * u01(rng);
          }
        }
        break;
      }
      case Phase::Brake:
        v_next = std::max(v - brake * cfg.dt, 0.0);
        if (v_next == 0.0) {
          phase = Phase::Rest;
          remaining = exp_draw(rest_mean);
        }
        break;
    }
    const double a = (v_next - v) / cfg.dt;
    const double vm = 0.5 * (v + v_next);
    double power = kMass * vm * a + kC1 * vm + kC2 * vm * vm;
    if (power < 0) power *= cfg.regen_fraction;
    power += kAux;
    out = std::clamp(power / kPowerPerC * cfg.q_nom, -i_max, i_max);
    v = v_next;
  }
  return current;
}

// --- parameter sampling -----------------------------------------------------------

cell::ParameterBounds sampling_box(const SamplingPlan& plan, const ParameterSet& base) {
  const auto& feas = cell::feasible_bounds();
  const auto b = base.to_array();
  cell::ParameterBounds box;
  for (std::size_t i = 0; i < cell::kNumParams; ++i) {
    const bool cmax = i == 4 || i == 5;
    const double lo = b[i] * (cmax ? plan.cmax_lo : plan.range_lo);
    const double hi = b[i] * (cmax ? plan.cmax_hi : plan.range_hi);
    box.lo[i] = std::max(lo, feas.lo[i]);
    box.hi[i] = std::min(hi, feas.hi[i]);
    if (!(box.lo[i] < box.hi[i])) {
      throw ConfigError(fmt::format("plan: empty sampling range for {}", cell::kParamNames[i]));
    }
  }
  return box;
}

double state_of_health(const ParameterSet& p, const cell::CellConfig& cfg, double nominal_ah) {
  return sim::cc_discharge_capacity(p, cfg, 1.0 / 3.0) / nominal_ah;
}

namespace {

ParameterSet draw_uniform(const cell::ParameterBounds& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ParamVector a{};
  for (std::size_t i = 0; i < cell::kNumParams; ++i) a[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * u(rng);
  return ParameterSet::from_array(a);
}

// SoH of a draw, or nothing when the stoichiometry or the discharge fails.
std::optional<double> try_soh(const ParameterSet& p, const cell::CellConfig& cfg, double nominal) {
  try {
    return state_of_health(p, cfg, nominal);
  } catch (const InfeasibleError&) {
  } catch (const SimulationError&) {
  } catch (const NumericalError&) {
  }
  return std::nullopt;
}

}  // namespace

SamplingReport sample_parameters(const SamplingPlan& plan, const cell::CellConfig& cfg, const ParameterSet& base,
                                 std::uint64_t seed) {
  plan.validate();
  const auto box = sampling_box(plan, base);
  const double nominal = sim::cc_discharge_capacity(base, cfg, 1.0 / 3.0);
  const int nb = plan.n_bins();
  std::vector<std::vector<SampledSet>> bins(nb);
  std::mt19937_64 rng(derive_seed(seed, {0x5a3f}));
  SamplingReport rep;
  const long cap = static_cast<long>(plan.draw_cap_factor) * plan.sets_per_bin * nb;
  int filled = 0;
  while (filled < nb) {
    if (rep.draws >= cap) {
      for (int b = 0; b < nb; ++b) {
        if (static_cast<int>(bins[b].size()) < plan.sets_per_bin) {
          throw DomainError(fmt::format("sampling: SoH bin {} [{:.2f}, {:.2f}) holds {} of {} sets after {} draws", b,
                                        plan.soh_lo + b * plan.bin_width, plan.soh_lo + (b + 1) * plan.bin_width,
                                        bins[b].size(), plan.sets_per_bin, rep.draws));
        }
      }
    }
    ++rep.draws;
    const auto p = draw_uniform(box, rng);
    const auto soh = try_soh(p, cfg, nominal);
    if (!soh) {
      ++rep.rejected_infeasible;
      continue;
    }
    const int b = plan.bin_of(*soh);
    if (b < 0) {
      ++rep.rejected_outside;
      continue;
    }
    if (static_cast<int>(bins[b].size()) >= plan.sets_per_bin) {
      ++rep.rejected_full;
      continue;
    }
    bins[b].push_back({p, *soh, b});
    if (static_cast<int>(bins[b].size()) == plan.sets_per_bin) ++filled;
  }
  for (auto& b : bins) rep.sets.insert(rep.sets.end(), b.begin(), b.end());
  return rep;
}

// --- dataset ----------------------------------------------------------------------

std::string cell_fingerprint(const cell::CellConfig& cfg) { return fingerprint(cfg.to_kv().to_string()); }

namespace {

struct Labelled {
  std::uint64_t drive_seed = 0;
  double soc = 0.0;
  double v_init = 0.0;
  sim::Trajectory traj;
};

struct SetResult {
  SampledSet set;
  std::vector<Labelled> seqs;
  long retries = 0;
  long replaced = 0;
};

std::optional<Labelled> label_sequence(const ParameterSet& p, const cell::CellConfig& cfg, const BuildOptions& opt,
                                       std::uint64_t seq_seed) {
  std::mt19937_64 rng(seq_seed);
  std::uniform_real_distribution<double> u(opt.plan.soc_lo, opt.plan.soc_hi);
  Labelled out;
  out.soc = u(rng);
  out.drive_seed = rng();
  try {
    const auto full = stoich::solve_initial_stoichiometry(p, cfg, cfg.V_hi);
    const double x0 = full.theta_p_0 + out.soc * (full.theta_p_100 - full.theta_p_0);
    const double x1 = full.theta_n_0 + out.soc * (full.theta_n_100 - full.theta_n_0);
    out.v_init = cell::ocp(cfg, cell::Electrode::Positive, x0) - cell::ocp(cfg, cell::Electrode::Negative, x1);
    const auto current = generate_drive_current(opt.drive, out.drive_seed);
    out.traj = sim::simulate(p, cfg, current, out.v_init, opt.grid);
  } catch (const SimulationError&) {
    return std::nullopt;
  } catch (const InfeasibleError&) {
    return std::nullopt;
  } catch (const DomainError&) {
    return std::nullopt;
  }
  // Sequences leaving the cutoff window are treated like failed simulations.
  for (double v : out.traj.V) {
    if (v < cfg.V_lo || v > cfg.V_hi) return std::nullopt;
  }
  return out;
}

SetResult label_set(SampledSet set, std::size_t set_id, const cell::CellConfig& cfg, const BuildOptions& opt,
                    const cell::ParameterBounds& box, double nominal) {
  SetResult r;
  std::mt19937_64 replace_rng(derive_seed(opt.seed, {0x7e11, set_id}));
  for (int generation = 0;; ++generation) {
    r.seqs.clear();
    bool ok = true;
    for (int j = 0; j < opt.plan.sequences_per_set && ok; ++j) {
      std::optional<Labelled> l;
      for (int a = 0; a < opt.plan.max_sim_retries && !l; ++a) {
        if (a > 0) ++r.retries;
        l = label_sequence(set.lambda, cfg, opt,
                           derive_seed(opt.seed, {0x5e9, set_id, static_cast<std::uint64_t>(generation),
                                                  static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(a)}));
      }
      if (l) r.seqs.push_back(std::move(*l));
      else ok = false;
    }
    if (ok) {
      r.set = set;
      return r;
    }
    // Replace the parameter set with a fresh draw from the same SoH bin.
    ++r.replaced;
    const long cap = static_cast<long>(opt.plan.draw_cap_factor) * opt.plan.sets_per_bin;
    bool found = false;
    for (long d = 0; d < cap && !found; ++d) {
      const auto p = draw_uniform(box, replace_rng);
      const auto soh = try_soh(p, cfg, nominal);
      if (soh && opt.plan.bin_of(*soh) == set.bin) {
        set.lambda = p;
        set.soh = *soh;
        found = true;
      }
    }
    if (!found) throw DomainError(fmt::format("dataset: no replacement found for parameter set {}", set_id));
  }
}

void write_lambda(KeyValueFile& kv, const std::string& section, const ParamVector& a) {
  for (std::size_t i = 0; i < cell::kNumParams; ++i) kv.set(section + "." + std::string(cell::kParamNames[i]), a[i]);
}

ParamVector read_lambda(const KeyValueFile& kv, const std::string& section) {
  ParamVector a{};
  for (std::size_t i = 0; i < cell::kNumParams; ++i) a[i] = kv.get_double(section + "." + std::string(cell::kParamNames[i]));
  return a;
}

}  // namespace

BuildReport build_dataset(const BuildOptions& opt, const cell::CellConfig& cfg, const fs::path& dir) {
  opt.plan.validate();
  opt.grid.validate();
  if (opt.drive.steps != opt.plan.steps || opt.drive.dt != opt.grid.dt) {
    throw ConfigError("dataset: drive-cycle length and step must match the plan and grid");
  }
  const auto sampling = sample_parameters(opt.plan, cfg, opt.base, opt.seed);
  const auto box = sampling_box(opt.plan, opt.base);
  const double nominal = sim::cc_discharge_capacity(opt.base, cfg, 1.0 / 3.0);

  const std::size_t n_sets = sampling.sets.size();
  std::vector<SetResult> results(n_sets);
  parallel_for(n_sets, opt.workers,
               [&](std::size_t s) { results[s] = label_set(sampling.sets[s], s, cfg, opt, box, nominal); });

  // Split: the first val_per_bin[b] sets of each bin go to validation.
  const auto vpb = opt.plan.val_per_bin();
  std::vector<bool> is_val(n_sets, false);
  for (std::size_t s = 0; s < n_sets; ++s) {
    const int pos = static_cast<int>(s % static_cast<std::size_t>(opt.plan.sets_per_bin));
    is_val[s] = pos < vpb[static_cast<std::size_t>(results[s].set.bin)];
  }
  std::vector<ParameterSet> train_lambdas;
  for (std::size_t s = 0; s < n_sets; ++s) {
    if (!is_val[s]) train_lambdas.push_back(results[s].set.lambda);
  }
  const auto norm = cell::ParamNormalizer::fit(train_lambdas);

  const std::string cfg_fp = cell_fingerprint(cfg);
  const Provenance prov{"gen-data", opt.seed, cfg_fp};
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "val");

  BuildReport rep;
  const std::size_t M = static_cast<std::size_t>(opt.plan.sequences_per_set);
  for (std::size_t s = 0; s < n_sets; ++s) {
    const auto& r = results[s];
    rep.sim_retries += r.retries;
    rep.replaced_sets += r.replaced;
    (is_val[s] ? rep.val_sets : rep.train_sets) += 1;
    (is_val[s] ? rep.val_samples : rep.train_samples) += M;
  }
  parallel_for(n_sets * M, opt.workers, [&](std::size_t id) {
    const std::size_t s = id / M, j = id % M;
    const auto& r = results[s];
    const auto& l = r.seqs[j];
    const fs::path stem = dir / (is_val[s] ? "val" : "train") / fmt::format("{:06d}", id);
    sim::write_trajectory(fs::path(stem).replace_extension(".traj"), l.traj);
    KeyValueFile side;
    side.set("sample.id", static_cast<long long>(id));
    side.set("sample.set_id", static_cast<long long>(s));
    side.set("sample.seq", static_cast<long long>(j));
    side.set("sample.split", std::string(is_val[s] ? "val" : "train"));
    side.set("sample.bin", static_cast<long long>(r.set.bin));
    side.set("sample.soh", r.set.soh);
    side.set("sample.soc_init", l.soc);
    side.set("sample.v_init", l.v_init);
    side.set("sample.drive_seed", std::to_string(l.drive_seed));
    write_lambda(side, "lambda", r.set.lambda.to_array());
    write_lambda(side, "lambda_norm", norm.normalize(r.set.lambda));
    prov.write(side);
    side.save(fs::path(stem).replace_extension(".ini"));
  });

  KeyValueFile man;
  man.set("dataset.format", 1LL);
  man.set("dataset.train_samples", static_cast<long long>(rep.train_samples));
  man.set("dataset.val_samples", static_cast<long long>(rep.val_samples));
  man.set("dataset.train_sets", static_cast<long long>(rep.train_sets));
  man.set("dataset.val_sets", static_cast<long long>(rep.val_sets));
  man.set("dataset.nominal_capacity_ah", nominal);
  man.set("dataset.draws", static_cast<long long>(sampling.draws));
  man.set("dataset.rejected_infeasible", static_cast<long long>(sampling.rejected_infeasible));
  man.set("dataset.rejected_outside", static_cast<long long>(sampling.rejected_outside));
  man.set("dataset.rejected_full", static_cast<long long>(sampling.rejected_full));
  man.set("dataset.sim_retries", static_cast<long long>(rep.sim_retries));
  man.set("dataset.replaced_sets", static_cast<long long>(rep.replaced_sets));
  opt.plan.write(man);
  opt.drive.write(man);
  man.set("grid.n_shell", static_cast<long long>(opt.grid.n_shell));
  man.set("grid.n_x", static_cast<long long>(opt.grid.n_x));
  man.set("grid.dt", opt.grid.dt);
  write_lambda(man, "base", opt.base.to_array());
  man.set("normalizer.mean", std::vector<double>(norm.mean().begin(), norm.mean().end()));
  man.set("normalizer.std", std::vector<double>(norm.stddev().begin(), norm.stddev().end()));
  man.set("seeds.master", std::to_string(opt.seed));
  man.set("fingerprints.cell", cfg_fp);
  KeyValueFile plan_kv;
  opt.plan.write(plan_kv);
  opt.drive.write(plan_kv);
  man.set("fingerprints.plan", fingerprint(plan_kv.to_string()));
  prov.write(man);
  man.save(dir / "manifest");
  return rep;
}

std::vector<std::vector<const Sample*>> Dataset::group_by_set(const std::vector<Sample>& split) {
  std::vector<std::vector<const Sample*>> groups;
  for (const auto& s : split) {
    if (groups.empty() || groups.back().front()->set_id != s.set_id) groups.emplace_back();
    groups.back().push_back(&s);
  }
  return groups;
}

Dataset load_dataset(const fs::path& dir, const cell::CellConfig& cfg, int workers) {
  if (!fs::exists(dir / "manifest")) throw ConfigError(fmt::format("missing dataset manifest {}", (dir / "manifest").string()));
  Dataset ds;
  ds.manifest = KeyValueFile::load(dir / "manifest");
  const auto mean = ds.manifest.get_doubles("normalizer.mean");
  const auto sd = ds.manifest.get_doubles("normalizer.std");
  if (mean.size() != cell::kNumParams || sd.size() != cell::kNumParams) {
    throw FormatError("dataset manifest: normalizer must have nine entries");
  }
  ParamVector m{}, s{};
  std::copy(mean.begin(), mean.end(), m.begin());
  std::copy(sd.begin(), sd.end(), s.begin());
  ds.normalizer = cell::ParamNormalizer(m, s);
  if (ds.manifest.get_string("fingerprints.cell") != cell_fingerprint(cfg)) {
    throw ConfigError(fmt::format("dataset {} was generated with a different cell configuration", dir.string()));
  }
  const double dt = ds.manifest.get_double("grid.dt");

  for (const char* split : {"train", "val"}) {
    std::vector<fs::path> stems;
    if (fs::exists(dir / split)) {
      for (const auto& e : fs::directory_iterator(dir / split)) {
        if (e.path().extension() == ".traj") stems.push_back(fs::path(e.path()).replace_extension());
      }
    }
    std::sort(stems.begin(), stems.end());
    auto& out = std::string(split) == "train" ? ds.train : ds.val;
    out.resize(stems.size());
    parallel_for(stems.size(), workers, [&](std::size_t i) {
      const auto side = KeyValueFile::load(fs::path(stems[i]).replace_extension(".ini"));
      Sample& smp = out[i];
      smp.id = static_cast<std::size_t>(side.get_int("sample.id"));
      smp.set_id = static_cast<int>(side.get_int("sample.set_id"));
      smp.seq = static_cast<int>(side.get_int("sample.seq"));
      smp.lambda = ParameterSet::from_array(read_lambda(side, "lambda"));
      smp.v_init = side.get_double("sample.v_init");
      smp.traj = sim::read_trajectory(fs::path(stems[i]).replace_extension(".traj"));
      const auto sol = stoich::solve_initial_stoichiometry(smp.lambda, cfg, smp.v_init);
      smp.x = stoich::build_input_sequence(sol, smp.lambda, cfg, smp.traj.I, dt);
    });
  }
  return ds;
}

}  // namespace spmeid::data
