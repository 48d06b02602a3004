#pragma once

// NeuralSPMe: a causal transformer encoder that maps the coulomb-counting
// stoichiometries, the normalised parameters and the current to the four
// normalised concentration channels y. The terminal voltage follows from y
// through the closed-form voltage expression. Also hosts the vanilla
// transformer baseline that regresses the scaled voltage directly.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spmeid/cellmodel.hpp"
#include "spmeid/datagen.hpp"
#include "spmeid/metrics.hpp"
#include "spmeid/nn/layers.hpp"
#include "spmeid/nn/optim.hpp"
#include "spmeid/provenance.hpp"
#include "spmeid/stoichiometry.hpp"
#include "spmeid/voltage.hpp"

namespace spmeid::surrogate {

inline constexpr int kNspmInputs = 14;  // x (4), λ (9), I/100
inline constexpr int kVtInputs = 10;    // λ (9), I/100
inline constexpr double kCurrentScale = 100.0;

enum class Scale { Small, Large };
Scale parse_scale(const std::string& s);

/// Encoder sizes: small (1 layer, 1 head, d 8, ff 16), large (4, 4, 96, 192).
nn::EncoderConfig preset(Scale scale, int d_in, bool causal, int max_len);

nn::Matrix<float> nspm_features(const stoich::InputSequence& x, const cell::ParamVector& z,
                                std::span<const double> current);
nn::Matrix<float> vt_features(const cell::ParamVector& z, std::span<const double> current);

/// Logit of the clipped coulomb-counting channels, the additive prior of the output head.
template <class T>
nn::Matrix<T> skip_logits(const nn::Matrix<T>& features);

template <class T>
class BasicNeuralSpme {
 public:
  static constexpr const char* kKind = "NSPM";

  BasicNeuralSpme(const nn::EncoderConfig& cfg, std::uint64_t seed);

  /// features: T×14. Returns y: T×4 in (0,1), sigmoid(head + logit(x)).
  nn::BasicTensor<T> forward(const nn::BasicTensor<T>& features) const;

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

template <class T>
class BasicVoltageTransformer {
 public:
  static constexpr const char* kKind = "VTBL";

  BasicVoltageTransformer(const nn::EncoderConfig& cfg, std::uint64_t seed);

  /// features: T×10. Returns the scaled voltage, T×1.
  nn::BasicTensor<T> forward(const nn::BasicTensor<T>& features) const;

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

using NeuralSpme = BasicNeuralSpme<float>;
using VoltageTransformer = BasicVoltageTransformer<float>;

/// Differentiable terminal voltage V = h(H(λ)·y, λ, I) as a T×1 tensor.
/// `z` is the 1×9 normalised parameter row; gradients flow to y and z.
template <class T>
nn::BasicTensor<T> voltage_layer(const nn::BasicTensor<T>& y, const nn::BasicTensor<T>& z,
                                 const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                                 std::span<const double> current, volt::GuardBand* guard = nullptr);

/// y for a 1×9 normalised parameter row that stays in the graph. `x` is held
/// constant; gradients reach z through the network input.
template <class T>
nn::BasicTensor<T> nspm_forward(const BasicNeuralSpme<T>& m, const stoich::InputSequence& x,
                                const nn::BasicTensor<T>& z, std::span<const double> current);

// --- inference ----------------------------------------------------------------

volt::YSequence predict_y(const NeuralSpme& m, const stoich::InputSequence& x, const cell::ParamVector& z,
                          std::span<const double> current);

/// Voltage through y and the voltage expression, guard band enabled.
std::vector<double> predict_voltage(const NeuralSpme& m, const stoich::InputSequence& x, const cell::ParameterSet& p,
                                    const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                                    std::span<const double> current, volt::GuardBand* guard = nullptr);

std::vector<double> predict_voltage(const VoltageTransformer& m, const cell::ParamVector& z,
                                    const cell::CellConfig& cfg, std::span<const double> current);

// --- training -------------------------------------------------------------------

struct TrainConfig {
  int epochs = 60;
  int batch = 16;
  nn::AdamConfig adam{};
  std::uint64_t seed = 1;
  int workers = 1;  // validation only; updates are single-threaded
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_rmse_mv = 0.0;  // mean per-sample voltage RMSE on the validation split
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_rmse_mv = 0.0;
  long steps = 0;
};

/// Trains on the training split and restores the weights of the best validation epoch.
TrainReport train_nspm(NeuralSpme& m, const data::Dataset& ds, const cell::CellConfig& cfg, const TrainConfig& tc,
                       const std::function<void(const EpochRecord&)>& on_epoch = {});
TrainReport train_vt(VoltageTransformer& m, const data::Dataset& ds, const cell::CellConfig& cfg,
                     const TrainConfig& tc, const std::function<void(const EpochRecord&)>& on_epoch = {});

void write_train_csv(const std::filesystem::path& path, const TrainReport& r, const std::vector<std::string>& header);

// --- evaluation -----------------------------------------------------------------

using VoltagePredictor = std::function<std::vector<double>(const data::Sample&)>;

/// Per-sample voltage RMSE against the stored reference voltage.
metrics::RmseReport evaluate(const std::vector<data::Sample>& split, const VoltagePredictor& predict, int workers = 1);

VoltagePredictor nspm_predictor(const NeuralSpme& m, const cell::ParamNormalizer& norm, const cell::CellConfig& cfg);
VoltagePredictor vt_predictor(const VoltageTransformer& m, const cell::ParamNormalizer& norm,
                              const cell::CellConfig& cfg);

// --- checkpoints ----------------------------------------------------------------

/// Header carries the encoder config, seed, step count and parameter normaliser,
/// plus a provenance section when `prov.tool` is set.
KeyValueFile model_header(const nn::EncoderConfig& cfg, std::uint64_t seed, long steps,
                          const cell::ParamNormalizer& norm, const Provenance& prov = {});
cell::ParamNormalizer read_normalizer(const KeyValueFile& header);

void save_nspm(const std::filesystem::path& path, const NeuralSpme& m, long steps, const cell::ParamNormalizer& norm,
               const Provenance& prov = {});
NeuralSpme load_nspm(const std::filesystem::path& path, cell::ParamNormalizer* norm = nullptr);
void save_vt(const std::filesystem::path& path, const VoltageTransformer& m, long steps,
             const cell::ParamNormalizer& norm, const Provenance& prov = {});
VoltageTransformer load_vt(const std::filesystem::path& path, cell::ParamNormalizer* norm = nullptr);

extern template class BasicNeuralSpme<float>;
extern template class BasicNeuralSpme<double>;
extern template class BasicVoltageTransformer<float>;
extern template class BasicVoltageTransformer<double>;

}  // namespace spmeid::surrogate
