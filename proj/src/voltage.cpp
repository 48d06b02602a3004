#include "spmeid/voltage.hpp"

namespace spmeid::volt {

namespace {

void check_lengths(std::size_t ny, std::size_t ni) {
  if (ny != ni) {
    throw ShapeError(fmt::format("voltage_sequence: y has {} steps but current has {}", ny, ni));
  }
}

}  // namespace

std::vector<double> voltage_sequence(const YSequence& y, const cell::ParameterSet& p,
                                     const cell::CellConfig& cfg, std::span<const double> current,
                                     GuardBand* guard) {
  check_lengths(y.size(), current.size());
  std::vector<double> v(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    try {
      v[t] = voltage(cell::observables_from_y(y[t], p, cfg), p, cfg, current[t], guard).total();
    } catch (const DomainError& e) {
      throw DomainError(fmt::format("step {}: {}", t, e.what()));
    }
  }
  return v;
}

VoltageVjp voltage_sequence_vjp(const YSequence& y, const cell::ParameterSet& p,
                                const cell::CellConfig& cfg, std::span<const double> current,
                                std::span<const double> dv, GuardBand* guard) {
  check_lengths(y.size(), current.size());
  check_lengths(y.size(), dv.size());
  using D = Dual<4 + cell::kNumParams>;

  const auto pa = p.to_array();
  std::array<D, cell::kNumParams> pd;
  for (std::size_t i = 0; i < cell::kNumParams; ++i) pd[i] = D::variable(pa[i], 4 + i);
  const auto params = cell::BasicParameterSet<D>::from_array(pd);

  VoltageVjp out;
  out.dy.resize(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    const std::array<D, 4> yd{D::variable(y[t][0], 0), D::variable(y[t][1], 1),
                              D::variable(y[t][2], 2), D::variable(y[t][3], 3)};
    D v;
    try {
      v = voltage(cell::observables_from_y(yd, params, cfg), params, cfg, current[t], guard).total();
    } catch (const DomainError& e) {
      throw DomainError(fmt::format("step {}: {}", t, e.what()));
    }
    for (std::size_t k = 0; k < 4; ++k) out.dy[t][k] = dv[t] * v.d[k];
    for (std::size_t i = 0; i < cell::kNumParams; ++i) out.dparams[i] += dv[t] * v.d[4 + i];
  }
  return out;
}

}  // namespace spmeid::volt
