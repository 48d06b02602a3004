#include "spmeid/nn/layers.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstring>

namespace spmeid::nn {

template <class T>
BasicTensor<T> ParameterStore<T>::add(const std::string& name, Matrix<T> init) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ConfigError(fmt::format("duplicate parameter name '{}'", name));
  }
  BasicTensor<T> t(std::move(init), true);
  entries_.push_back({name, t});
  return t;
}

template <class T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.tensor.rows() * e.tensor.cols());
  return n;
}

template <class T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) {
    auto t = e.tensor;
    t.zero_grad();
  }
}

template <class T>
template <class U>
void ParameterStore<T>::copy_from(const ParameterStore<U>& other) {
  const auto& src = other.entries();
  if (src.size() != entries_.size()) {
    throw ShapeError(fmt::format("parameter stores differ in size ({} vs {})", src.size(), entries_.size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& dst = entries_[i];
    if (dst.name != src[i].name || dst.tensor.rows() != src[i].tensor.rows() ||
        dst.tensor.cols() != src[i].tensor.cols()) {
      throw ShapeError(fmt::format("parameter '{}' {} does not match '{}' {}", dst.name, dst.tensor.shape_str(),
                                   src[i].name, src[i].tensor.shape_str()));
    }
    dst.tensor.mutable_value() = src[i].tensor.value().template cast<T>();
  }
}

template <class T>
void ParameterStore<T>::load(const std::vector<std::pair<std::string, Matrix<float>>>& blobs) {
  if (blobs.size() != entries_.size()) {
    throw FormatError(fmt::format("checkpoint holds {} tensors, model declares {}", blobs.size(), entries_.size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& dst = entries_[i];
    const auto& [name, m] = blobs[i];
    if (name != dst.name || m.rows() != dst.tensor.rows() || m.cols() != dst.tensor.cols()) {
      throw FormatError(fmt::format("checkpoint tensor '{}' [{}, {}] does not match model '{}' {}", name, m.rows(),
                                    m.cols(), dst.name, dst.tensor.shape_str()));
    }
    dst.tensor.mutable_value() = m.template cast<T>();
  }
}

template <class T>
std::string ParameterStore<T>::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : entries_) {
    const auto& v = e.tensor.value();
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()), sizeof(T) * v.size()), h);
  }
  return fmt::format("{:016x}", h);
}

template <class T>
LinearLayer<T>::LinearLayer(ParameterStore<T>& store, const std::string& name, int in, int out, Rng& rng) {
  const double a = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> u(-a, a);
  Matrix<T> w0(in, out);
  for (Eigen::Index i = 0; i < w0.size(); ++i) w0.data()[i] = static_cast<T>(u(rng));
  w = store.add(name + ".w", std::move(w0));
  b = store.add(name + ".b", Matrix<T>::Zero(1, out));
}

template <class T>
LayerNormLayer<T>::LayerNormLayer(ParameterStore<T>& store, const std::string& name, int d) {
  gamma = store.add(name + ".gamma", Matrix<T>::Ones(1, d));
  beta = store.add(name + ".beta", Matrix<T>::Zero(1, d));
}

void EncoderConfig::validate() const {
  if (d_in < 1 || n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || max_len < 1 || patch < 1) {
    throw ConfigError("encoder: all sizes must be at least 1");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError(fmt::format("encoder: d_model {} not divisible by n_heads {}", d_model, n_heads));
  }
}

void EncoderConfig::write(KeyValueFile& kv, const std::string& p) const {
  kv.set(p + ".d_in", static_cast<long long>(d_in));
  kv.set(p + ".n_layers", static_cast<long long>(n_layers));
  kv.set(p + ".n_heads", static_cast<long long>(n_heads));
  kv.set(p + ".d_model", static_cast<long long>(d_model));
  kv.set(p + ".d_ff", static_cast<long long>(d_ff));
  kv.set(p + ".causal", static_cast<long long>(causal ? 1 : 0));
  kv.set(p + ".max_len", static_cast<long long>(max_len));
  kv.set(p + ".patch", static_cast<long long>(patch));
}

EncoderConfig EncoderConfig::read(const KeyValueFile& kv, const std::string& p) {
  EncoderConfig c;
  c.d_in = static_cast<int>(kv.get_int(p + ".d_in"));
  c.n_layers = static_cast<int>(kv.get_int(p + ".n_layers"));
  c.n_heads = static_cast<int>(kv.get_int(p + ".n_heads"));
  c.d_model = static_cast<int>(kv.get_int(p + ".d_model"));
  c.d_ff = static_cast<int>(kv.get_int(p + ".d_ff"));
  c.causal = kv.get_int(p + ".causal") != 0;
  c.max_len = static_cast<int>(kv.get_int(p + ".max_len"));
  c.patch = static_cast<int>(kv.get_int_or(p + ".patch", 1));
  c.validate();
  return c;
}

template <class T>
Matrix<T> positional_encoding(int max_len, int d_model) {
  Matrix<T> pe(max_len, d_model);
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d_model; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d_model);
      const double angle = pos * freq;
      pe(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

template <class T>
Encoder<T>::Encoder(const EncoderConfig& cfg, ParameterStore<T>& store, const std::string& prefix, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg.d_model;
  embed1_ = LinearLayer<T>(store, prefix + ".embed1", cfg.d_in * cfg.patch, d, rng);
  embed2_ = LinearLayer<T>(store, prefix + ".embed2", d, d, rng);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = fmt::format("{}.layer{}", prefix, l);
    Block b;
    b.ln1 = LayerNormLayer<T>(store, p + ".ln1", d);
    b.qkv = LinearLayer<T>(store, p + ".qkv", d, 3 * d, rng);
    b.proj = LinearLayer<T>(store, p + ".proj", d, d, rng);
    b.ln2 = LayerNormLayer<T>(store, p + ".ln2", d);
    b.ff1 = LinearLayer<T>(store, p + ".ff1", d, cfg.d_ff, rng);
    b.ff2 = LinearLayer<T>(store, p + ".ff2", cfg.d_ff, d, rng);
    blocks_.push_back(std::move(b));
  }
  pe_ = BasicTensor<T>(positional_encoding<T>(cfg.max_len, d));
}

template <class T>
BasicTensor<T> Encoder<T>::forward(const BasicTensor<T>& input) const {
  if (input.cols() != cfg_.d_in) {
    throw ShapeError(fmt::format("encoder: expected {} input channels, got {}", cfg_.d_in, input.cols()));
  }
  if (input.rows() % cfg_.patch != 0) {
    throw ShapeError(fmt::format("encoder: {} rows not divisible by patch {}", input.rows(), cfg_.patch));
  }
  const Eigen::Index tokens = input.rows() / cfg_.patch;
  if (tokens > cfg_.max_len) {
    throw ShapeError(fmt::format("encoder: sequence of {} tokens exceeds max_len {}", tokens, cfg_.max_len));
  }
  const int d = cfg_.d_model;
  BasicTensor<T> x = cfg_.patch == 1 ? input : reshape(input, tokens, static_cast<Eigen::Index>(cfg_.d_in) * cfg_.patch);
  BasicTensor<T> h = embed2_(gelu(embed1_(x)));
  h = add(h, BasicTensor<T>(pe_.value().topRows(tokens)));
  for (const auto& b : blocks_) {
    const auto qkv = b.qkv(b.ln1(h));
    const auto att = attention(slice_cols(qkv, 0, d), slice_cols(qkv, d, d), slice_cols(qkv, 2 * d, d), cfg_.n_heads,
                               cfg_.causal);
    h = add(h, b.proj(att));
    h = add(h, b.ff2(gelu(b.ff1(b.ln2(h)))));
  }
  return h;
}

template <class T>
std::size_t Encoder<T>::parameter_count(const EncoderConfig& c) {
  const int d = c.d_model;
  const std::size_t embed = LinearLayer<T>::count(c.d_in * c.patch, d) + LinearLayer<T>::count(d, d);
  const std::size_t layer = 2 * LayerNormLayer<T>::count(d) + LinearLayer<T>::count(d, 3 * d) +
                            LinearLayer<T>::count(d, d) + LinearLayer<T>::count(d, c.d_ff) +
                            LinearLayer<T>::count(c.d_ff, d);
  return embed + static_cast<std::size_t>(c.n_layers) * layer;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void ParameterStore<float>::copy_from(const ParameterStore<float>&);
template void ParameterStore<float>::copy_from(const ParameterStore<double>&);
template void ParameterStore<double>::copy_from(const ParameterStore<float>&);
template void ParameterStore<double>::copy_from(const ParameterStore<double>&);
template struct LinearLayer<float>;
template struct LinearLayer<double>;
template struct LayerNormLayer<float>;
template struct LayerNormLayer<double>;
template Matrix<float> positional_encoding<float>(int, int);
template Matrix<double> positional_encoding<double>(int, int);
template class Encoder<float>;
template class Encoder<double>;

}  // namespace spmeid::nn
