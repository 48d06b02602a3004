#include "doctest.h"
#include "helpers.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>

#include "spmeid/datagen.hpp"
#include "spmeid/error.hpp"

using namespace spmeid;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

data::BuildOptions tiny_options() {
  data::BuildOptions o;
  o.plan.sets_per_bin = 2;
  o.plan.sequences_per_set = 2;
  o.plan.steps = 120;
  o.plan.val_sets = 7;
  o.drive.steps = 120;
  o.base = testutil::base_params();
  o.seed = 11;
  return o;
}

}  // namespace

TEST_CASE("state-of-health bins") {
  data::SamplingPlan p;
  CHECK(p.n_bins() == 7);
  CHECK(p.bin_of(0.70) == 0);
  CHECK(p.bin_of(0.7499) == 0);
  CHECK(p.bin_of(0.75) == 1);
  CHECK(p.bin_of(1.0499) == 6);
  CHECK(p.bin_of(0.6999) == -1);
  CHECK(p.bin_of(1.05) == -1);
  const auto v = p.val_per_bin();
  REQUIRE(v.size() == 7);
  CHECK(std::accumulate(v.begin(), v.end(), 0) == 30);
  CHECK(*std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end()) <= 1);

  p.val_sets = p.sets_per_bin * p.n_bins();
  CHECK_THROWS_AS(p.validate(), ConfigError);
  data::SamplingPlan q;
  q.bin_width = 0.0;
  CHECK_THROWS_AS(q.validate(), ConfigError);
}

TEST_CASE("plan round trip through structured text") {
  data::SamplingPlan p;
  p.sets_per_bin = 12;
  p.soc_lo = 0.25;
  KeyValueFile kv;
  p.write(kv);
  const auto back = data::SamplingPlan::read(KeyValueFile::parse(kv.to_string()));
  CHECK(back.sets_per_bin == 12);
  CHECK(back.soc_lo == 0.25);
  CHECK(back.bin_width == p.bin_width);
}

TEST_CASE("drive cycle") {
  data::DriveCycleConfig c;
  const auto a = data::generate_drive_current(c, 3);
  const auto b = data::generate_drive_current(c, 3);
  REQUIRE(a.size() == 600);
  CHECK(a == b);
  CHECK(a != data::generate_drive_current(c, 4));
  const double peak = c.peak_c * c.q_nom;
  bool charge = false, discharge = false;
  for (double i : a) {
    CHECK(std::isfinite(i));
    CHECK(std::abs(i) <= peak + 1e-9);
    charge |= i < 0;
    discharge |= i > 0;
  }
  CHECK(charge);
  CHECK(discharge);
  // Standstill draws only the auxiliary load: a constant plateau.
  bool plateau = false;
  for (std::uint64_t seed = 1; seed <= 10 && !plateau; ++seed) {
    const auto c2 = data::generate_drive_current(c, seed);
    for (std::size_t k = 1; k < c2.size(); ++k) plateau |= c2[k] == c2[k - 1] && c2[k] > 0;
  }
  CHECK(plateau);
}

TEST_CASE("sampling box") {
  const data::SamplingPlan plan;
  const auto base = testutil::base_params();
  const auto box = data::sampling_box(plan, base);
  const auto& feas = cell::feasible_bounds();
  const auto b = base.to_array();
  for (std::size_t i = 0; i < cell::kNumParams; ++i) {
    CHECK(box.lo[i] >= feas.lo[i]);
    CHECK(box.hi[i] <= feas.hi[i]);
    CHECK(box.lo[i] < b[i]);
    CHECK(box.hi[i] > b[i]);
  }
  CHECK(box.lo[4] >= 0.75 * b[4] * (1 - 1e-12));
  CHECK(box.hi[5] <= 1.25 * b[5] * (1 + 1e-12));
}

TEST_CASE("parameter sampling fills every bin") {
  const auto cfg = cell::CellConfig::defaults();
  auto plan = tiny_options().plan;
  const auto rep = data::sample_parameters(plan, cfg, testutil::base_params(), 5);
  REQUIRE(rep.sets.size() == static_cast<std::size_t>(plan.sets_per_bin * plan.n_bins()));
  for (std::size_t s = 0; s < rep.sets.size(); ++s) {
    CHECK(rep.sets[s].bin == static_cast<int>(s) / plan.sets_per_bin);
    CHECK(plan.bin_of(rep.sets[s].soh) == rep.sets[s].bin);
  }
  CHECK(rep.draws >= static_cast<long>(rep.sets.size()));
  const auto again = data::sample_parameters(plan, cfg, testutil::base_params(), 5);
  CHECK(again.sets.front().lambda.to_array() == rep.sets.front().lambda.to_array());
}

TEST_CASE("dataset build, load and determinism") {
  const auto cfg = cell::CellConfig::defaults();
  const auto opt = tiny_options();
  const auto dir = fs::temp_directory_path() / "spmeid_datagen_a";
  const auto dir2 = fs::temp_directory_path() / "spmeid_datagen_b";
  fs::remove_all(dir);
  fs::remove_all(dir2);
  const auto rep = data::build_dataset(opt, cfg, dir);
  CHECK(rep.train_sets == 7);
  CHECK(rep.val_sets == 7);
  CHECK(rep.train_samples == 14);
  CHECK(rep.val_samples == 14);

  const auto ds = data::load_dataset(dir, cfg);
  CHECK(ds.train.size() == 14);
  CHECK(ds.val.size() == 14);
  CHECK(ds.manifest.get_int("dataset.train_samples") == 14);
  CHECK(ds.manifest.get_string("seeds.master") == "11");
  CHECK(ds.manifest.get_string("fingerprints.cell") == data::cell_fingerprint(cfg));
  CHECK(ds.manifest.contains("normalizer.mean"));
  CHECK(ds.manifest.contains("base.Q_Li"));
  for (const auto& s : ds.train) {
    CHECK(s.traj.V.size() == 120);
    CHECK(s.x.x.size() == 120);
    CHECK(cell::feasible_bounds().contains(s.lambda));
  }
  const auto groups = data::Dataset::group_by_set(ds.val);
  CHECK(groups.size() == 7);
  for (const auto& g : groups) CHECK(g.size() == 2);

  data::build_dataset(opt, cfg, dir2);
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto other = dir2 / fs::relative(e.path(), dir);
    REQUIRE(fs::exists(other));
    CHECK_MESSAGE(slurp(e.path()) == slurp(other), e.path().string());
  }

  auto other_cfg = cfg;
  other_cfg.T += 1.0;
  CHECK_THROWS_AS(data::load_dataset(dir, other_cfg), ConfigError);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}
