#include "spmeid/nn/optim.hpp"

#include <fmt/format.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace spmeid::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

Adam::Adam(ParameterStore<float>& params, const AdamConfig& cfg) : params_(params), cfg_(cfg) {
  if (cfg_.total_steps < 1) cfg_.total_steps = 1;
  for (const auto& e : params_.entries()) {
    m_.push_back(Matrix<float>::Zero(e.tensor.rows(), e.tensor.cols()));
    v_.push_back(Matrix<float>::Zero(e.tensor.rows(), e.tensor.cols()));
  }
}

double Adam::learning_rate() const {
  const double frac = std::min(1.0, static_cast<double>(step_) / static_cast<double>(cfg_.total_steps));
  return cfg_.lr_min + 0.5 * (cfg_.lr - cfg_.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

double gradient_norm(const ParameterStore<float>& params) {
  double s = 0.0;
  for (const auto& e : params.entries()) {
    if (e.tensor.has_grad()) s += e.tensor.node()->grad.template cast<double>().squaredNorm();
  }
  return std::sqrt(s);
}

double Adam::step() {
  const double norm = gradient_norm(params_);
  const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  const double lr = learning_rate();
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  const auto step_size = static_cast<float>(lr / bc1);
  const auto inv_bc2 = static_cast<float>(1.0 / bc2);
  const auto eps = static_cast<float>(cfg_.eps);
  const auto& entries = params_.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto t = entries[i].tensor;
    if (!t.has_grad()) continue;
    const Matrix<float> g = t.node()->grad * static_cast<float>(clip);
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g.cwiseProduct(g);
    auto& w = t.mutable_value();
    w.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_bc2).sqrt() + eps);
  }
  return norm;
}

std::string batch_fingerprint(std::span<const std::size_t> batch) {
  std::string bytes;
  for (auto id : batch) bytes += fmt::format("{},", id);
  return fingerprint(bytes);
}

double train_step(ParameterStore<float>& params, Adam& opt, std::span<const std::size_t> batch,
                  const std::function<Tensor(std::size_t)>& sample_loss) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  params.zero_grad();
  const float w = 1.0f / static_cast<float>(batch.size());
  double total = 0.0;
  for (auto id : batch) {
    Tensor loss = sample_loss(id);
    const double v = loss.item();
    if (!std::isfinite(v)) {
      params.zero_grad();
      throw NumericalError(fmt::format("non-finite loss on sample {} (batch {})", id, batch_fingerprint(batch)));
    }
    total += v;
    scale(loss, w).backward();
  }
  opt.step();
  return total / static_cast<double>(batch.size());
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  explicit Reader(std::string_view s) : s_(s) {}
  const char* take(std::size_t n) {
    if (pos_ + n > s_.size()) throw FormatError("truncated checkpoint");
    const char* p = s_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  std::string str(std::size_t n) { return std::string(take(n), n); }
  bool done() const { return pos_ == s_.size(); }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::string& kind, const KeyValueFile& header, const ParameterStore<float>& params) {
  if (kind.size() != 4) throw ConfigError(fmt::format("checkpoint kind '{}' must have 4 characters", kind));
  std::string out(kCheckpointMagic, 8);
  out += kind;
  const std::string text = header.to_string();
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto& entries = params.entries();
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.tensor.rows()));
    put_u32(out, static_cast<std::uint32_t>(e.tensor.cols()));
  }
  for (const auto& e : entries) {
    const auto& v = e.tensor.value();
    out.append(reinterpret_cast<const char*>(v.data()), sizeof(float) * static_cast<std::size_t>(v.size()));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(8), kCheckpointMagic, 8) != 0) throw FormatError("not a checkpoint (bad magic)");
  Checkpoint ck;
  ck.kind = r.str(4);
  const auto header_len = r.u32();
  ck.header = KeyValueFile::parse(r.str(header_len), "checkpoint header");
  const auto n = r.u32();
  std::vector<std::tuple<std::string, std::uint32_t, std::uint32_t>> manifest;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = r.u32();
    std::string name = r.str(len);
    const auto rows = r.u32();
    const auto cols = r.u32();
    manifest.emplace_back(std::move(name), rows, cols);
  }
  for (auto& [name, rows, cols] : manifest) {
    Matrix<float> m(rows, cols);
    std::memcpy(m.data(), r.take(sizeof(float) * rows * cols), sizeof(float) * rows * cols);
    ck.tensors.emplace_back(name, std::move(m));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint blobs");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const KeyValueFile& header,
                     const ParameterStore<float>& params) {
  const auto bytes = encode_checkpoint(kind, header, params);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(fmt::format("cannot write {}", path.string()));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError(fmt::format("missing checkpoint {}", path.string()));
  std::ostringstream ss;
  ss << f.rdbuf();
  auto ck = decode_checkpoint(ss.str());
  if (ck.kind != expected_kind) {
    throw FormatError(fmt::format("{}: checkpoint kind '{}' where '{}' was expected", path.string(), ck.kind,
                                  expected_kind));
  }
  return ck;
}

}  // namespace spmeid::nn
