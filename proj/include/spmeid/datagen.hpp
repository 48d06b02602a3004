#pragma once

// Synthetic dataset factory: parameter sampling with state-of-health binning,
// drive-cycle current synthesis, simulator labelling and serialisation.
//
// Directory layout
//   manifest            structured text: plan, counts, normaliser, seeds
//   train/NNNNNN.traj   one SPMETRAJ record per sample
//   train/NNNNNN.ini    sidecar: parameter set (physical and normalised), v_init, seeds
//   val/...             same for the validation split

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spmeid/cellmodel.hpp"
#include "spmeid/kvconfig.hpp"
#include "spmeid/simulator.hpp"
#include "spmeid/stoichiometry.hpp"

namespace spmeid::data {

struct SamplingPlan {
  double soh_lo = 0.70;
  double soh_hi = 1.05;
  double bin_width = 0.05;
  int sets_per_bin = 30;
  int sequences_per_set = 10;
  double range_lo = 0.5;  // multiples of the base value, all but c_s_max
  double range_hi = 1.5;
  double cmax_lo = 0.75;
  double cmax_hi = 1.25;
  int draw_cap_factor = 200;  // draws allowed per bin slot before giving up
  double soc_lo = 0.2;        // initial state-of-charge window
  double soc_hi = 0.9;
  int steps = 600;            // sequence length at grid.dt
  int val_sets = 30;          // validation sets, spread evenly over bins
  int max_sim_retries = 5;    // drive-cycle reseeds before a parameter set is replaced

  int n_bins() const;
  int bin_of(double soh) const;  // -1 when outside the window
  /// Validation sets assigned to each bin, differing by at most one.
  std::vector<int> val_per_bin() const;
  void validate() const;
  void write(KeyValueFile& kv) const;  // section [plan]
  static SamplingPlan read(const KeyValueFile& kv);
};

struct DriveCycleConfig {
  int steps = 600;
  double dt = 1.0;             // [s]
  double rest_fraction = 0.15; // share of time stationary
  double regen_fraction = 0.5; // share of braking power recovered as charge
  double peak_c = 1.5;         // |I| ≤ peak_c · Q_nom
  double q_nom = 55.0;         // [A h]

  void write(KeyValueFile& kv) const;  // section [drive]
  static DriveCycleConfig read(const KeyValueFile& kv);
};

/// Positive = discharge. Deterministic per seed.
std::vector<double> generate_drive_current(const DriveCycleConfig& cfg, std::uint64_t seed);

struct SampledSet {
  cell::ParameterSet lambda;
  double soh = 0.0;
  int bin = 0;
};

struct SamplingReport {
  std::vector<SampledSet> sets;  // bin-major, sets_per_bin per bin
  long draws = 0;
  long rejected_infeasible = 0;
  long rejected_outside = 0;
  long rejected_full = 0;
};

/// Sampling box: the scaled ranges around `base` intersected with the feasible box.
cell::ParameterBounds sampling_box(const SamplingPlan& plan, const cell::ParameterSet& base);

/// State of health: C/3 discharge capacity over `nominal_ah`.
double state_of_health(const cell::ParameterSet& p, const cell::CellConfig& cfg, double nominal_ah);

SamplingReport sample_parameters(const SamplingPlan& plan, const cell::CellConfig& cfg,
                                 const cell::ParameterSet& base, std::uint64_t seed);

struct BuildOptions {
  SamplingPlan plan;
  DriveCycleConfig drive;
  sim::SimGrid grid;
  cell::ParameterSet base;
  std::uint64_t seed = 1;
  int workers = 1;
};

struct BuildReport {
  std::size_t train_samples = 0, val_samples = 0;
  std::size_t train_sets = 0, val_sets = 0;
  long sim_retries = 0;
  long replaced_sets = 0;
};

/// Writes the dataset directory. Existing sample files are overwritten.
BuildReport build_dataset(const BuildOptions& opt, const cell::CellConfig& cfg, const std::filesystem::path& dir);

struct Sample {
  std::size_t id = 0;
  int set_id = 0;
  int seq = 0;
  cell::ParameterSet lambda;
  double v_init = 0.0;
  sim::Trajectory traj;  // values as stored (f32 precision)
  stoich::InputSequence x;
};

struct Dataset {
  KeyValueFile manifest;
  cell::ParamNormalizer normalizer;
  std::vector<Sample> train, val;

  /// Samples of one split grouped by parameter set, in set order.
  static std::vector<std::vector<const Sample*>> group_by_set(const std::vector<Sample>& split);
};

/// Loads a dataset. The coulomb-counting inputs are rebuilt from each sidecar.
Dataset load_dataset(const std::filesystem::path& dir, const cell::CellConfig& cfg, int workers = 1);

/// Fingerprint of the cell configuration as written to artifacts.
std::string cell_fingerprint(const cell::CellConfig& cfg);

}  // namespace spmeid::data
