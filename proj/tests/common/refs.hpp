#pragma once

#include <vector>

#include "helpers.hpp"
#include "spmeid/punet.hpp"
#include "spmeid/simulator.hpp"

namespace testutil {

/// M simulated reference sequences of n steps with staggered rest voltages and loads.
inline std::vector<punet::Reference> make_refs(const cell::ParameterSet& p, const cell::CellConfig& cfg, std::size_t m,
                                               std::size_t n) {
  std::vector<punet::Reference> refs;
  for (std::size_t i = 0; i < m; ++i) {
    punet::Reference r;
    r.v_init = 3.65 + 0.05 * static_cast<double>(i % 5);
    r.I = wavy_current(n, 15.0 + 5.0 * static_cast<double>(i % 3), 20.0);
    r.V = sim::simulate(p, cfg, r.I, r.v_init, sim::SimGrid{}).V;
    refs.push_back(std::move(r));
  }
  return refs;
}

/// Forward model that returns the simulator's own concentrations.
inline punet::YProvider oracle_provider(const std::vector<punet::Reference>& refs, const cell::CellConfig& cfg) {
  return [&refs, cfg](std::size_t seq, const stoich::InputSequence&, const cell::ParamVector&,
                      const cell::ParameterSet& lambda, std::span<const double> current) {
    return sim::simulate(lambda, cfg, current, refs[seq].v_init, sim::SimGrid{}).y;
  };
}

/// Normaliser centred in the feasible box.
inline cell::ParamNormalizer box_normalizer() {
  const auto& b = cell::feasible_bounds();
  cell::ParamVector m{}, s{};
  for (std::size_t i = 0; i < cell::kNumParams; ++i) {
    m[i] = 0.5 * (b.lo[i] + b.hi[i]);
    s[i] = (b.hi[i] - b.lo[i]) / 4.0;
  }
  return {m, s};
}

}  // namespace testutil
