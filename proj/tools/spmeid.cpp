// spmeid: command-line entry point for the identification pipeline.
//
//   validate-cell    load and check a cell configuration
//   simulate         one drive-cycle trajectory from the reference simulator
//   gen-data         synthetic training/validation dataset
//   train-surrogate  NeuralSPMe on a dataset
//   train-vt         voltage-transformer baseline on a dataset
//   train-punet      parameter-update network on a dataset and a surrogate
//   identify         fixed-point identification of one validation set
//   benchmark        PUNet vs CMA-ES over the validation split
//
// Exit codes: 0 success, 1 domain or I/O error, 2 usage error.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "spmeid/cellmodel.hpp"
#include "spmeid/datagen.hpp"
#include "spmeid/error.hpp"
#include "spmeid/identify.hpp"
#include "spmeid/kvconfig.hpp"
#include "spmeid/metrics.hpp"
#include "spmeid/provenance.hpp"
#include "spmeid/punet.hpp"
#include "spmeid/simulator.hpp"
#include "spmeid/stoichiometry.hpp"
#include "spmeid/surrogate.hpp"

namespace fs = std::filesystem;
using namespace spmeid;

namespace {

struct Common {
  std::string config = "default";
  std::uint64_t seed = 1;
  std::string out;
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string scale = "desk";
};

struct Loaded {
  cell::CellConfig cell;
  KeyValueFile kv;  // full config file, empty for the built-in default
};

Loaded load_config(const std::string& path) {
  if (path == "default") return {cell::CellConfig::defaults(), cell::CellConfig::defaults().to_kv()};
  auto kv = KeyValueFile::load(path);
  return {cell::CellConfig::from_kv(kv), kv};
}

Provenance provenance(const std::string& tool, const Common& c, const Loaded& cfg) {
  return {tool, c.seed, fingerprint(cfg.kv.to_string())};
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw ConfigError("--out is required");
  fs::create_directories(out);
  return out;
}

void require_paths(const std::vector<std::pair<std::string, std::string>>& paths) {
  std::string missing;
  for (const auto& [flag, p] : paths) {
    if (p.empty() || !fs::exists(p)) missing += fmt::format("\n  {} {}", flag, p.empty() ? "<not given>" : p);
  }
  if (!missing.empty()) throw ConfigError("missing input paths:" + missing);
}

void add_common(CLI::App* sub, Common& c, bool needs_out) {
  sub->add_option("--config,--cell", c.config, "Cell configuration file, or 'default'")
      ->envname("SPMEID_CONFIG")
      ->capture_default_str();
  sub->add_option("--seed", c.seed, "Master seed")->envname("SPMEID_SEED")->capture_default_str();
  auto* o = sub->add_option("--out", c.out, "Output directory")->envname("SPMEID_OUT");
  if (needs_out) o->required();
  sub->add_option("--workers", c.workers, "Worker threads for parallel sections")
      ->envname("SPMEID_WORKERS")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sub->add_option("--scale", c.scale, "Model and dataset scale")
      ->envname("SPMEID_SCALE")
      ->check(CLI::IsMember({"desk", "full", "small", "large"}))
      ->capture_default_str();
}

surrogate::Scale scale_of(const Common& c) { return surrogate::parse_scale(c.scale); }

void apply_full_plan(data::BuildOptions& o) {
  o.plan.sets_per_bin = 500;
  o.plan.val_sets = 350;
}

struct TrainFlags {
  std::string data;
  int epochs = 0;
  int batch = 0;
  double lr = 0.0;
};

void add_train_flags(CLI::App* sub, TrainFlags& t) {
  sub->add_option("--data", t.data, "Dataset directory")->required()->envname("SPMEID_DATA");
  sub->add_option("--epochs", t.epochs, "Training epochs (0: module default)");
  sub->add_option("--batch", t.batch, "Minibatch size (0: module default)");
  sub->add_option("--lr", t.lr, "Peak learning rate (0: module default)");
}

// --- subcommands ---------------------------------------------------------------------

int run_validate_cell(const Common& c, const std::string& write_to) {
  const auto cfg = load_config(c.config);
  const auto fp = fingerprint(cfg.kv.to_string());
  const auto base = cell::ParameterSet::from_array(cell::feasible_bounds().mid());
  const double cap = sim::cc_discharge_capacity(base, cfg.cell, 1.0 / 3.0);
  fmt::print("cell configuration ok\n  fingerprint {}\n  window [{}, {}] V\n  base C/3 capacity {:.3f} A h\n", fp,
             cfg.cell.V_lo, cfg.cell.V_hi, cap);
  if (!write_to.empty()) {
    auto kv = cfg.cell.to_kv();
    kv.save(write_to);
    fmt::print("  written to {}\n", write_to);
  }
  return 0;
}

struct SimulateFlags {
  std::string params;
  double v_init = 3.8;
  int steps = 600;
};

int run_simulate(const Common& c, const SimulateFlags& f) {
  const auto cfg = load_config(c.config);
  const auto out = prepare_out(c.out);
  auto lambda = cell::ParameterSet::from_array(cell::feasible_bounds().mid());
  if (!f.params.empty()) {
    const auto kv = KeyValueFile::load(f.params);
    cell::ParamVector a{};
    for (std::size_t i = 0; i < cell::kNumParams; ++i) {
      a[i] = kv.get_double("lambda." + std::string(cell::kParamNames[i]));
    }
    lambda = cell::ParameterSet::from_array(a);
  }
  data::DriveCycleConfig drive;
  drive.steps = f.steps;
  drive.q_nom = cfg.cell.Q_nom;
  const auto current = data::generate_drive_current(drive, derive_seed(c.seed, {0xd71}));
  sim::SimGrid grid;
  grid.n_shell = static_cast<int>(cfg.kv.get_int_or("grid.n_shell", grid.n_shell));
  grid.n_x = static_cast<int>(cfg.kv.get_int_or("grid.n_x", grid.n_x));
  grid.dt = cfg.kv.get_double_or("grid.dt", grid.dt);
  const auto traj = sim::simulate(lambda, cfg.cell, current, f.v_init, grid, stoich::SolverOptions::from_kv(cfg.kv));
  const auto prov = provenance("simulate", c, cfg);
  sim::write_trajectory(out / "trajectory.traj", traj);
  sim::write_trajectory_csv(out / "trajectory.csv", traj, prov.lines());
  KeyValueFile side;
  for (std::size_t i = 0; i < cell::kNumParams; ++i) {
    side.set("lambda." + std::string(cell::kParamNames[i]), lambda.to_array()[i]);
  }
  side.set("sample.v_init", f.v_init);
  side.set("sample.steps", static_cast<long long>(f.steps));
  prov.write(side);
  side.save(out / "trajectory.ini");
  fmt::print("simulated {} steps, V in [{:.4f}, {:.4f}] V -> {}\n", traj.size(),
             *std::min_element(traj.V.begin(), traj.V.end()), *std::max_element(traj.V.begin(), traj.V.end()),
             out.string());
  return 0;
}

int run_gen_data(const Common& c, const std::string& plan_path) {
  const auto cfg = load_config(c.config);
  const auto out = prepare_out(c.out);
  data::BuildOptions o;
  if (scale_of(c) == surrogate::Scale::Large) apply_full_plan(o);
  if (!plan_path.empty()) {
    const auto kv = KeyValueFile::load(plan_path);
    o.plan = data::SamplingPlan::read(kv);
    o.drive = data::DriveCycleConfig::read(kv);
    o.grid.n_shell = static_cast<int>(kv.get_int_or("grid.n_shell", o.grid.n_shell));
    o.grid.n_x = static_cast<int>(kv.get_int_or("grid.n_x", o.grid.n_x));
    o.grid.dt = kv.get_double_or("grid.dt", o.grid.dt);
  }
  o.drive.steps = o.plan.steps;
  o.drive.q_nom = cfg.cell.Q_nom;
  o.base = cell::ParameterSet::from_array(cell::feasible_bounds().mid());
  o.seed = c.seed;
  o.workers = c.workers;
  const auto rep = data::build_dataset(o, cfg.cell, out);
  fmt::print("dataset {}: {} train samples ({} sets), {} val samples ({} sets), {} sim retries, {} replaced sets\n",
             out.string(), rep.train_samples, rep.train_sets, rep.val_samples, rep.val_sets, rep.sim_retries,
             rep.replaced_sets);
  return 0;
}

template <class Tc>
void apply_train_flags(Tc& tc, const TrainFlags& t, const Common& c) {
  if (t.epochs > 0) tc.epochs = t.epochs;
  if (t.batch > 0) tc.batch = t.batch;
  if (t.lr > 0) tc.adam.lr = t.lr;
  tc.seed = c.seed;
  tc.workers = c.workers;
}

int run_train_surrogate(const Common& c, const TrainFlags& t, bool vt) {
  const auto cfg = load_config(c.config);
  const auto out = prepare_out(c.out);
  require_paths({{"--data", t.data}});
  const auto ds = data::load_dataset(t.data, cfg.cell, c.workers);
  const auto len = static_cast<int>(ds.train.at(0).traj.size());
  surrogate::TrainConfig tc;
  tc.adam.lr = 3e-3;
  apply_train_flags(tc, t, c);
  const auto prov = provenance(vt ? "train-vt" : "train-surrogate", c, cfg);
  const auto log = [](const surrogate::EpochRecord& e) {
    fmt::print("epoch {:3d}  loss {:.3e}  val {:.3f} mV  lr {:.2e}\n", e.epoch, e.train_loss, e.val_rmse_mv, e.lr);
    std::fflush(stdout);
  };
  surrogate::TrainReport rep;
  metrics::RmseReport eval;
  const std::string label = vt ? "vt" : "nspm";
  if (vt) {
    surrogate::VoltageTransformer m(surrogate::preset(scale_of(c), surrogate::kVtInputs, true, len), c.seed);
    rep = surrogate::train_vt(m, ds, cfg.cell, tc, log);
    surrogate::save_vt(out / "vt.ckpt", m, rep.steps, ds.normalizer, prov);
    eval = surrogate::evaluate(ds.val, surrogate::vt_predictor(m, ds.normalizer, cfg.cell), c.workers);
  } else {
    surrogate::NeuralSpme m(surrogate::preset(scale_of(c), surrogate::kNspmInputs, true, len), c.seed);
    rep = surrogate::train_nspm(m, ds, cfg.cell, tc, log);
    surrogate::save_nspm(out / "nspm.ckpt", m, rep.steps, ds.normalizer, prov);
    eval = surrogate::evaluate(ds.val, surrogate::nspm_predictor(m, ds.normalizer, cfg.cell), c.workers);
  }
  surrogate::write_train_csv(out / (label + "_train.csv"), rep, prov.lines());
  metrics::write_rmse_csv(out / (label + "_val_rmse.csv"), eval, prov.lines());
  metrics::write_rmse_distribution(out / (label + "_val"), eval, prov.lines());
  const auto summary = metrics::summary_text(label, eval, prov.lines());
  metrics::write_text(out / (label + "_summary.txt"), {}, summary);
  fmt::print("{}", summary);
  return 0;
}

struct ModelPaths {
  std::string surrogate;
  std::string punet;
};

int run_train_punet(const Common& c, const TrainFlags& t, const ModelPaths& mp, int audit_draws) {
  const auto cfg = load_config(c.config);
  const auto out = prepare_out(c.out);
  require_paths({{"--data", t.data}, {"--surrogate", mp.surrogate}});
  const auto ds = data::load_dataset(t.data, cfg.cell, c.workers);
  const auto phi = surrogate::load_nspm(mp.surrogate);
  const auto groups = data::Dataset::group_by_set(ds.train);
  std::size_t rows = 0;
  for (const auto* s : groups.at(0)) rows += s->traj.size();
  punet::UpdateNet psi(punet::preset(scale_of(c), static_cast<int>(rows)), c.seed);
  punet::TrainConfig tc;
  tc.adam.lr = 2e-3;
  tc.audit_draws = audit_draws;
  apply_train_flags(tc, t, c);
  const auto prov = provenance("train-punet", c, cfg);
  const auto rep = punet::train(psi, phi, ds, cfg.cell, tc, [](const punet::EpochRecord& e) {
    fmt::print("epoch {:3d}  loss {:.4f}  val {:.4f}  recon {:.4f}  audit {:.3f}  lr {:.2e}\n", e.epoch, e.train_loss,
               e.val_loss, e.reconstruction, e.audit_pass_rate, e.lr);
    std::fflush(stdout);
  });
  punet::save(out / "punet.ckpt", psi, rep.steps, ds.normalizer, prov);
  punet::write_train_csv(out / "punet_train.csv", rep, prov.lines());
  const auto a = punet::audit(psi, phi, ds.val, ds.normalizer, cfg.cell, tc.audit_sigma, tc.audit_draws,
                              derive_seed(c.seed, {0xa0d17}), c.workers);
  const auto body = fmt::format("{{\n  \"audit_sigma\": {},\n  \"draws\": {},\n  \"pass_rate\": {:.4f},\n"
                                "  \"best_epoch\": {},\n  \"perturb_redraws\": {}\n}}\n",
                                tc.audit_sigma, a.draws, a.pass_rate, rep.best_epoch, rep.perturb_redraws);
  metrics::write_text(out / "punet_audit.txt", prov.lines(), body);
  fmt::print("{}", body);
  return 0;
}

struct IdentifyFlags {
  int set = 0;
  double delta_mv = 5.0;
  int max_iter = 100;
};

int run_identify(const Common& c, const TrainFlags& t, const ModelPaths& mp, const IdentifyFlags& f) {
  const auto cfg = load_config(c.config);
  const auto out = prepare_out(c.out);
  require_paths({{"--data", t.data}, {"--surrogate", mp.surrogate}, {"--punet", mp.punet}});
  const auto ds = data::load_dataset(t.data, cfg.cell, c.workers);
  const auto phi = surrogate::load_nspm(mp.surrogate);
  const auto psi = punet::load(mp.punet);
  const auto groups = data::Dataset::group_by_set(ds.val);
  if (f.set < 0 || static_cast<std::size_t>(f.set) >= groups.size()) {
    throw ConfigError(fmt::format("--set {} outside the {} validation sets", f.set, groups.size()));
  }
  const auto& g = groups[static_cast<std::size_t>(f.set)];
  ident::IdentifyConfig ic;
  ic.delta_mv = f.delta_mv;
  ic.max_iter = f.max_iter;
  ic.workers = c.workers;
  const auto lambda0 = ds.normalizer.denormalize(cell::ParamVector{});
  const auto run = ident::identify(punet::references_of(g), phi, ident::punet_update_fn(psi, ds.normalizer),
                                   ds.normalizer, cfg.cell, lambda0, ic);
  const auto prov = provenance("identify", c, cfg);
  ident::write_run_csv(out / "identify_trace.csv", run, prov.lines());
  const auto truth = g.front()->lambda;
  const auto summary = ident::run_summary(run, &truth, prov.lines());
  metrics::write_text(out / "identify_summary.txt", {}, summary);
  fmt::print("{}", summary);
  return 0;
}

struct BenchFlags {
  std::size_t tasks = 0;
  bool with_simulator = false;
  long cma_budget = 3000;
  double delta_mv = 5.0;
  int max_iter = 100;
};

int run_benchmark(const Common& c, const TrainFlags& t, const ModelPaths& mp, const BenchFlags& f) {
  const auto cfg = load_config(c.config);
  require_paths({{"--data", t.data}, {"--surrogate", mp.surrogate}, {"--punet", mp.punet}});
  const auto out = prepare_out(c.out);
  const auto ds = data::load_dataset(t.data, cfg.cell, c.workers);
  const auto phi = surrogate::load_nspm(mp.surrogate);
  const auto psi = punet::load(mp.punet);
  ident::BenchmarkConfig bc;
  bc.identify.delta_mv = f.delta_mv;
  bc.identify.max_iter = f.max_iter;
  bc.identify.workers = c.workers;
  bc.cma.max_evaluations = f.cma_budget;
  bc.cma.seed = c.seed;
  bc.with_simulator = f.with_simulator;
  bc.max_tasks = f.tasks;
  const auto prov = provenance("benchmark", c, cfg);
  fs::create_directories(out / "traces");
  const auto rep = ident::benchmark(ds.val, phi, psi, ds.normalizer, cfg.cell, bc, [&](const ident::TaskResult& r) {
    fmt::print("task {:3d}  punet {:3d} it {:8.3f} mV  mape {:6.2f}%  |  cmaes {:5d} ev {:8.3f} mV  mape {:6.2f}%\n",
               r.task, r.punet.iterations(),
               r.punet.records.empty() ? std::numeric_limits<double>::infinity() : r.punet.best_record().max_rmse_mv,
               r.punet_mape, r.cmaes.result.evaluations, r.cmaes.result.best_value, r.cmaes_mape);
    std::fflush(stdout);
    ident::write_run_csv(out / "traces" / fmt::format("punet_{:03d}.csv", r.task), r.punet, prov.lines());
    std::vector<std::string> names(cell::kParamNames.begin(), cell::kParamNames.end());
    opt::write_history_csv(out / "traces" / fmt::format("cmaes_{:03d}.csv", r.task), r.cmaes.result, names,
                           prov.lines());
  });
  ident::write_benchmark_csv(out / "benchmark.csv", rep, prov.lines());
  ident::write_tasks_csv(out / "benchmark_tasks.csv", rep, prov.lines());
  for (const auto& row : rep.rows) {
    fmt::print("{:16s} time {:9.3f} s  evals {:9.1f}  rmse {:8.3f} mV  mape {:6.2f}%  speedup {:8.2f}\n", row.method,
               row.mean_wall_s, row.mean_evaluations, row.mean_final_rmse_mv, row.mean_mape, row.speedup);
  }
  fmt::print("sample efficiency (CMA-ES / PUNet evaluations): {:.2f}\n", rep.sample_efficiency);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Battery parameter identification with a physics-embedded surrogate"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  Common common;
  TrainFlags train;
  ModelPaths models;
  std::string write_cell, plan;
  SimulateFlags simf;
  IdentifyFlags idf;
  BenchFlags bf;
  int audit_draws = 4;

  auto* validate = app.add_subcommand("validate-cell", "Load a cell configuration and check its invariants");
  add_common(validate, common, false);
  validate->add_option("--write", write_cell, "Write the effective configuration to this file");

  auto* simulate = app.add_subcommand("simulate", "Simulate one synthetic drive cycle with the reference model");
  add_common(simulate, common, true);
  simulate->add_option("--params", simf.params, "Parameter file with [lambda] keys (default: box midpoints)")
      ->check(CLI::ExistingFile);
  simulate->add_option("--v-init", simf.v_init, "Initial open-circuit voltage [V]")->capture_default_str();
  simulate->add_option("--steps", simf.steps, "Number of 1 s steps")->check(CLI::PositiveNumber)->capture_default_str();

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  add_common(gen, common, true);
  gen->add_option("--plan", plan, "Sampling plan file ([plan], [drive], [grid] sections)")->check(CLI::ExistingFile);

  auto* tsur = app.add_subcommand("train-surrogate", "Train NeuralSPMe");
  add_common(tsur, common, true);
  add_train_flags(tsur, train);

  auto* tvt = app.add_subcommand("train-vt", "Train the voltage-transformer baseline");
  add_common(tvt, common, true);
  add_train_flags(tvt, train);

  auto* tpu = app.add_subcommand("train-punet", "Train the parameter-update network");
  add_common(tpu, common, true);
  add_train_flags(tpu, train);
  tpu->add_option("--surrogate", models.surrogate, "NeuralSPMe checkpoint")->required()->envname("SPMEID_SURROGATE");
  tpu->add_option("--audit-draws", audit_draws, "Perturbations per validation set in the audit")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  auto* idt = app.add_subcommand("identify", "Identify the parameters of one validation set");
  add_common(idt, common, true);
  idt->add_option("--data", train.data, "Dataset directory")->required()->envname("SPMEID_DATA");
  idt->add_option("--surrogate", models.surrogate, "NeuralSPMe checkpoint")->envname("SPMEID_SURROGATE");
  idt->add_option("--punet", models.punet, "PUNet checkpoint")->envname("SPMEID_PUNET");
  idt->add_option("--set", idf.set, "Validation set index")->capture_default_str();
  idt->add_option("--delta", idf.delta_mv, "Stop threshold on the max RMSE [mV]")->capture_default_str();
  idt->add_option("--max-iter", idf.max_iter, "Iteration cap")->capture_default_str();

  auto* bench = app.add_subcommand("benchmark", "Compare PUNet and CMA-ES on the validation split");
  add_common(bench, common, true);
  bench->add_option("--data", train.data, "Dataset directory")->envname("SPMEID_DATA");
  bench->add_option("--surrogate", models.surrogate, "NeuralSPMe checkpoint")->envname("SPMEID_SURROGATE");
  bench->add_option("--punet", models.punet, "PUNet checkpoint")->envname("SPMEID_PUNET");
  bench->add_option("--tasks", bf.tasks, "Number of validation sets (0: all)")->capture_default_str();
  bench->add_flag("--with-simulator", bf.with_simulator, "Also run CMA-ES on the reference simulator");
  bench->add_option("--cma-budget", bf.cma_budget, "CMA-ES evaluation budget per task")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  bench->add_option("--delta", bf.delta_mv, "PUNet stop threshold [mV]")->capture_default_str();
  bench->add_option("--max-iter", bf.max_iter, "PUNet iteration cap")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*validate) return run_validate_cell(common, write_cell);
    if (*simulate) return run_simulate(common, simf);
    if (*gen) return run_gen_data(common, plan);
    if (*tsur) return run_train_surrogate(common, train, false);
    if (*tvt) return run_train_surrogate(common, train, true);
    if (*tpu) return run_train_punet(common, train, models, audit_draws);
    if (*idt) return run_identify(common, train, models, idf);
    if (*bench) return run_benchmark(common, train, models, bf);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
