#pragma once

// Parameter containers and the transformer encoder shared by the surrogate,
// the voltage baseline and the update network.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "spmeid/kvconfig.hpp"
#include "spmeid/nn/ops.hpp"

namespace spmeid::nn {

using Rng = std::mt19937_64;

/// Ordered, named set of trainable tensors. Declaration order is the
/// checkpoint order.
template <class T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> tensor;
  };

  BasicTensor<T> add(const std::string& name, Matrix<T> init);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t scalar_count() const;
  void zero_grad();

  /// Copies values by position after checking names and shapes.
  template <class U>
  void copy_from(const ParameterStore<U>& other);

  /// Replaces values from (name, matrix) pairs in declaration order.
  void load(const std::vector<std::pair<std::string, Matrix<float>>>& blobs);

  /// FNV-1a over the raw bytes of every value, for determinism checks.
  std::string checksum() const;

 private:
  std::vector<Entry> entries_;
};

template <class T>
struct LinearLayer {
  BasicTensor<T> w, b;

  LinearLayer() = default;
  /// Glorot-uniform weights, zero bias.
  LinearLayer(ParameterStore<T>& store, const std::string& name, int in, int out, Rng& rng);
  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return linear(x, w, b); }
  static std::size_t count(int in, int out) { return static_cast<std::size_t>(in) * out + out; }
};

template <class T>
struct LayerNormLayer {
  BasicTensor<T> gamma, beta;

  LayerNormLayer() = default;
  LayerNormLayer(ParameterStore<T>& store, const std::string& name, int d);
  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, gamma, beta); }
  static std::size_t count(int d) { return 2 * static_cast<std::size_t>(d); }
};

struct EncoderConfig {
  int d_in = 1;       // channels per input row
  int n_layers = 1;
  int n_heads = 1;
  int d_model = 8;
  int d_ff = 16;
  bool causal = false;
  int max_len = 1024;  // longest token sequence the positional table covers
  int patch = 1;       // consecutive input rows folded into one token

  void validate() const;
  void write(KeyValueFile& kv, const std::string& prefix) const;
  static EncoderConfig read(const KeyValueFile& kv, const std::string& prefix);
};

/// Sinusoidal table, rows = positions.
template <class T>
Matrix<T> positional_encoding(int max_len, int d_model);

/// Pre-norm transformer encoder. The embedding is two feed-forward layers
/// (d_in·patch → d_model, GELU, d_model → d_model) plus the positional table.
/// Each layer adds self-attention and a GELU feed-forward block to the
/// residual stream. No final normalisation: the models own it.
template <class T>
class Encoder {
 public:
  struct Block {
    LayerNormLayer<T> ln1;
    LinearLayer<T> qkv;
    LinearLayer<T> proj;
    LayerNormLayer<T> ln2;
    LinearLayer<T> ff1;
    LinearLayer<T> ff2;
  };

  Encoder() = default;
  Encoder(const EncoderConfig& cfg, ParameterStore<T>& store, const std::string& prefix, Rng& rng);

  /// input (rows × d_in) → (rows/patch × d_model).
  BasicTensor<T> forward(const BasicTensor<T>& input) const;

  const EncoderConfig& config() const { return cfg_; }
  std::vector<Block>& blocks() { return blocks_; }
  LinearLayer<T>& embed1() { return embed1_; }
  LinearLayer<T>& embed2() { return embed2_; }

  /// Closed-form parameter count of the layer inventory above.
  static std::size_t parameter_count(const EncoderConfig& cfg);

 private:
  EncoderConfig cfg_;
  LinearLayer<T> embed1_, embed2_;
  std::vector<Block> blocks_;
  BasicTensor<T> pe_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace spmeid::nn
