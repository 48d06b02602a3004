#pragma once

// PUNet: maps the evaluation context of the current estimate to the next
// estimate. A context stacks, per reference sequence, the surrogate voltage,
// the surrogate concentrations, the repeated normalised estimate, the
// reference voltage and the current, and concatenates the M sequences in time.
// The surrogate voltage enters as its residual against the reference, which
// together with the reference channel carries the same information.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spmeid/cellmodel.hpp"
#include "spmeid/datagen.hpp"
#include "spmeid/nn/layers.hpp"
#include "spmeid/nn/optim.hpp"
#include "spmeid/surrogate.hpp"

namespace spmeid::punet {

inline constexpr int kChannels = 16;  // (V − V_ref)/10 mV, y (4), λ (9), V_ref scaled, I/100
inline constexpr double kResidualScale = 0.01;  // [V]

/// One measured sequence: reference voltage, current and rest voltage at t = 0.
struct Reference {
  std::vector<double> V;
  std::vector<double> I;
  double v_init = 0.0;
};

std::vector<Reference> references_of(const std::vector<const data::Sample*>& set);

/// Encoder sizes: small (2 layers, 4 heads, d 32, ff 64), large (4, 4, 64, 128). Patch 10.
nn::EncoderConfig preset(surrogate::Scale scale, std::size_t total_rows);

struct EvaluationContext {
  nn::Matrix<float> U;                  // Σ T_i × 16
  std::vector<std::size_t> boundaries;  // first row of each sequence, plus the total
  std::vector<std::vector<double>> V;   // surrogate voltage per sequence
  std::vector<double> rmse_mv;          // per sequence against the reference
  bool feasible = true;
  std::string diagnostic;               // set when not feasible

  double max_rmse_mv() const;
};

/// Concentrations y for sequence `seq` given its coulomb-counting input. Must be reentrant.
using YProvider = std::function<volt::YSequence(std::size_t seq, const stoich::InputSequence& x,
                                                const cell::ParamVector& z, const cell::ParameterSet& lambda,
                                                std::span<const double> current)>;

YProvider surrogate_provider(const surrogate::NeuralSpme& phi);

/// Runs the forward model at `lambda` for every reference and assembles the context.
/// A stoichiometry or voltage failure marks the context infeasible.
EvaluationContext build_context(const cell::ParameterSet& lambda, const YProvider& forward,
                                const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                                const std::vector<Reference>& refs, int workers = 1);
EvaluationContext build_context(const cell::ParameterSet& lambda, const surrogate::NeuralSpme& phi,
                                const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                                const std::vector<Reference>& refs, int workers = 1);

template <class T>
class BasicUpdateNet {
 public:
  static constexpr const char* kKind = "PUNT";

  BasicUpdateNet(const nn::EncoderConfig& cfg, std::uint64_t seed);

  /// U: rows × 16, z: 1×9 current estimate. Returns z + head(pool(encoder(U))).
  nn::BasicTensor<T> forward(const nn::BasicTensor<T>& U, const nn::BasicTensor<T>& z) const;

  nn::ParameterStore<T>& params() { return store_; }
  const nn::ParameterStore<T>& params() const { return store_; }
  const nn::EncoderConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

 private:
  nn::EncoderConfig cfg_;
  std::uint64_t seed_;
  nn::ParameterStore<T> store_;
  nn::Encoder<T> enc_;
  nn::LayerNormLayer<T> ln_;
  nn::LinearLayer<T> head_;
};

using UpdateNet = BasicUpdateNet<float>;

struct UpdateResult {
  cell::ParameterSet lambda;  // clipped to the feasible box
  std::size_t clipped = 0;    // coordinates moved by the clip
};

/// One fixed-point step from a context built at `lambda`.
UpdateResult update(const UpdateNet& psi, const EvaluationContext& ctx, const cell::ParameterSet& lambda,
                    const cell::ParamNormalizer& norm);

/// Perturbs the normalised label with one shared variance and clips to the box.
cell::ParameterSet perturb(const cell::ParameterSet& truth, double sigma, const cell::ParamNormalizer& norm,
                           std::uint64_t seed);

// --- training -------------------------------------------------------------------

struct TrainConfig {
  int epochs = 40;
  int batch = 8;
  nn::AdamConfig adam{};
  std::uint64_t seed = 1;
  int workers = 1;
  double audit_sigma = 0.5;
  int audit_draws = 4;     // per validation set
  int perturb_retries = 5; // redraws when a perturbed estimate is infeasible
  int draws_per_set = 1;   // perturbed estimates per training set and epoch
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;           // both loss terms on the audit draws
  double reconstruction = 0.0;     // mean ‖Ψ(U(λ̊)) − λ̊‖ (normalised)
  double audit_pass_rate = 0.0;    // share of draws moved closer to λ̊
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  long steps = 0;
  long perturb_redraws = 0;
};

struct AuditReport {
  double pass_rate = 0.0;
  double reconstruction = 0.0;
  double loss = 0.0;
  std::size_t draws = 0;
};

/// Contraction audit: for each set and draw, ‖Ψ(U(λ̃)) − λ̊‖ < ‖λ̃ − λ̊‖ in normalised units.
AuditReport audit(const UpdateNet& psi, const surrogate::NeuralSpme& phi, const std::vector<data::Sample>& split,
                  const cell::ParamNormalizer& norm, const cell::CellConfig& cfg, double sigma, int draws,
                  std::uint64_t seed, int workers = 1);

/// Trains against the frozen surrogate and keeps the epoch with the lowest validation loss.
TrainReport train(UpdateNet& psi, const surrogate::NeuralSpme& phi, const data::Dataset& ds,
                  const cell::CellConfig& cfg, const TrainConfig& tc,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

void write_train_csv(const std::filesystem::path& path, const TrainReport& r, const std::vector<std::string>& header);

void save(const std::filesystem::path& path, const UpdateNet& m, long steps, const cell::ParamNormalizer& norm,
          const Provenance& prov = {});
UpdateNet load(const std::filesystem::path& path, cell::ParamNormalizer* norm = nullptr);

extern template class BasicUpdateNet<float>;
extern template class BasicUpdateNet<double>;

}  // namespace spmeid::punet
