#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spmeid/kvconfig.hpp"
#include "spmeid/nn/layers.hpp"

namespace spmeid::nn {

struct AdamConfig {
  double lr = 1e-3;
  double lr_min = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
  long total_steps = 1;    // length of the cosine schedule
};

/// Adam with cosine learning-rate decay from lr to lr_min over total_steps.
class Adam {
 public:
  Adam(ParameterStore<float>& params, const AdamConfig& cfg);

  /// Clips, applies one update and advances the schedule. Returns the global
  /// gradient norm before clipping.
  double step();

  double learning_rate() const;
  long steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  ParameterStore<float>& params_;
  AdamConfig cfg_;
  long step_ = 0;
  std::vector<Matrix<float>> m_, v_;
};

/// Global L2 norm of all parameter gradients.
double gradient_norm(const ParameterStore<float>& params);

/// One optimisation step over a batch of sample ids: gradients of each
/// sample's scalar loss are accumulated with weight 1/|batch|, then the
/// optimizer is applied. Returns the mean loss. A non-finite loss throws
/// NumericalError naming the sample and the batch fingerprint; weights are
/// left untouched in that case.
double train_step(ParameterStore<float>& params, Adam& opt, std::span<const std::size_t> batch,
                  const std::function<Tensor(std::size_t)>& sample_loss);

/// Stable 16-hex-digit identifier of a batch of sample ids.
std::string batch_fingerprint(std::span<const std::size_t> batch);

// --- checkpoints --------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'N', 'N', 'C', 'K', 'P', 'T', '0', '1'};

struct Checkpoint {
  std::string kind;     // four-character model tag
  KeyValueFile header;  // config fields, seed, step count
  std::vector<std::pair<std::string, Matrix<float>>> tensors;
};

/// Layout: magic, 4-byte kind, u32 header length + header text, u32 tensor
/// count, manifest of (u32 name length, name, u32 rows, u32 cols), then the
/// f32 little-endian blobs in declaration order.
std::string encode_checkpoint(const std::string& kind, const KeyValueFile& header, const ParameterStore<float>& params);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const KeyValueFile& header,
                     const ParameterStore<float>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind);

}  // namespace spmeid::nn
