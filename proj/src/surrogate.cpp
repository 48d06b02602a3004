#include "spmeid/surrogate.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>

#include "spmeid/error.hpp"
#include "spmeid/parallel.hpp"
#include "spmeid/provenance.hpp"

namespace spmeid::surrogate {

using nn::BasicTensor;
using nn::Matrix;

Scale parse_scale(const std::string& s) {
  if (s == "small" || s == "desk") return Scale::Small;
  if (s == "large" || s == "full") return Scale::Large;
  throw ConfigError(fmt::format("unknown model scale '{}' (expected small or large)", s));
}

nn::EncoderConfig preset(Scale scale, int d_in, bool causal, int max_len) {
  nn::EncoderConfig c;
  c.d_in = d_in;
  c.causal = causal;
  c.max_len = max_len;
  if (scale == Scale::Small) {
    c.n_layers = 1;
    c.n_heads = 1;
    c.d_model = 8;
    c.d_ff = 16;
  } else {
    c.n_layers = 4;
    c.n_heads = 4;
    c.d_model = 96;
    c.d_ff = 192;
  }
  return c;
}

Matrix<float> nspm_features(const stoich::InputSequence& x, const cell::ParamVector& z,
                            std::span<const double> current) {
  if (x.x.size() != current.size()) {
    throw ShapeError(fmt::format("features: {} input rows but {} currents", x.x.size(), current.size()));
  }
  Matrix<float> f(static_cast<Eigen::Index>(current.size()), kNspmInputs);
  for (std::size_t t = 0; t < current.size(); ++t) {
    const auto r = static_cast<Eigen::Index>(t);
    for (int k = 0; k < 4; ++k) f(r, k) = static_cast<float>(x.x[t][static_cast<std::size_t>(k)]);
    for (std::size_t i = 0; i < cell::kNumParams; ++i) f(r, 4 + static_cast<Eigen::Index>(i)) = static_cast<float>(z[i]);
    f(r, 13) = static_cast<float>(current[t] / kCurrentScale);
  }
  return f;
}

Matrix<float> vt_features(const cell::ParamVector& z, std::span<const double> current) {
  Matrix<float> f(static_cast<Eigen::Index>(current.size()), kVtInputs);
  for (std::size_t t = 0; t < current.size(); ++t) {
    const auto r = static_cast<Eigen::Index>(t);
    for (std::size_t i = 0; i < cell::kNumParams; ++i) f(r, static_cast<Eigen::Index>(i)) = static_cast<float>(z[i]);
    f(r, 9) = static_cast<float>(current[t] / kCurrentScale);
  }
  return f;
}

template <class T>
Matrix<T> skip_logits(const Matrix<T>& features) {
  constexpr T kEdge = T(1e-3);
  const auto x = features.leftCols(4).array().min(T(1) - kEdge).max(kEdge);
  return (x / (T(1) - x)).log().matrix();
}

// --- models ---------------------------------------------------------------------

template <class T>
BasicNeuralSpme<T>::BasicNeuralSpme(const nn::EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  if (cfg.d_in != kNspmInputs || !cfg.causal) throw ConfigError("NeuralSPMe needs a causal encoder over 14 inputs");
  nn::Rng rng(seed);
  enc_ = nn::Encoder<T>(cfg, store_, "enc", rng);
  ln_ = nn::LayerNormLayer<T>(store_, "out.ln", cfg.d_model);
  head_ = nn::LinearLayer<T>(store_, "out.head", cfg.d_model, 4, rng);
}

template <class T>
BasicTensor<T> BasicNeuralSpme<T>::forward(const BasicTensor<T>& features) const {
  const BasicTensor<T> prior(skip_logits<T>(features.value()));
  return nn::sigmoid(nn::add(head_(ln_(enc_.forward(features))), prior));
}

template <class T>
BasicVoltageTransformer<T>::BasicVoltageTransformer(const nn::EncoderConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  if (cfg.d_in != kVtInputs || !cfg.causal) throw ConfigError("VT baseline needs a causal encoder over 10 inputs");
  nn::Rng rng(seed);
  enc_ = nn::Encoder<T>(cfg, store_, "enc", rng);
  ln_ = nn::LayerNormLayer<T>(store_, "out.ln", cfg.d_model);
  head_ = nn::LinearLayer<T>(store_, "out.head", cfg.d_model, 1, rng);
}

template <class T>
BasicTensor<T> BasicVoltageTransformer<T>::forward(const BasicTensor<T>& features) const {
  return head_(ln_(enc_.forward(features)));
}

template class BasicNeuralSpme<float>;
template class BasicNeuralSpme<double>;
template class BasicVoltageTransformer<float>;
template class BasicVoltageTransformer<double>;

// --- voltage layer ------------------------------------------------------------------

template <class T>
BasicTensor<T> voltage_layer(const BasicTensor<T>& y, const BasicTensor<T>& z, const cell::ParamNormalizer& norm,
                             const cell::CellConfig& cfg, std::span<const double> current, volt::GuardBand* guard) {
  if (y.cols() != 4 || y.rows() != static_cast<Eigen::Index>(current.size())) {
    throw ShapeError(fmt::format("voltage layer: expected y [{}, 4], got {}", current.size(), y.shape_str()));
  }
  if (z.rows() != 1 || z.cols() != static_cast<Eigen::Index>(cell::kNumParams)) {
    throw ShapeError(fmt::format("voltage layer: expected parameters [1, 9], got {}", z.shape_str()));
  }
  volt::YSequence ys(current.size());
  for (std::size_t t = 0; t < ys.size(); ++t) {
    for (int k = 0; k < 4; ++k) ys[t][static_cast<std::size_t>(k)] = static_cast<double>(y.value()(static_cast<Eigen::Index>(t), k));
  }
  cell::ParamVector zv{};
  for (std::size_t i = 0; i < cell::kNumParams; ++i) zv[i] = static_cast<double>(z.value()(0, static_cast<Eigen::Index>(i)));
  const auto p = norm.denormalize(zv);
  const auto v = volt::voltage_sequence(ys, p, cfg, current, guard);
  Matrix<T> out(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t t = 0; t < v.size(); ++t) out(static_cast<Eigen::Index>(t), 0) = static_cast<T>(v[t]);

  std::vector<double> cur(current.begin(), current.end());
  const bool guarded = guard != nullptr;
  return BasicTensor<T>::make_result(
      std::move(out), {y, z},
      [ys = std::move(ys), p, cfg, cur = std::move(cur), guarded, sd = norm.stddev()](nn::Node<T>& n) {
        std::vector<double> dv(cur.size());
        for (std::size_t t = 0; t < dv.size(); ++t) dv[t] = static_cast<double>(n.grad(static_cast<Eigen::Index>(t), 0));
        volt::GuardBand local;
        const auto vjp = volt::voltage_sequence_vjp(ys, p, cfg, cur, dv, guarded ? &local : nullptr);
        auto& py = *n.parents[0];
        auto& pz = *n.parents[1];
        if (py.requires_grad) {
          Matrix<T> g(static_cast<Eigen::Index>(ys.size()), 4);
          for (std::size_t t = 0; t < ys.size(); ++t) {
            for (int k = 0; k < 4; ++k) g(static_cast<Eigen::Index>(t), k) = static_cast<T>(vjp.dy[t][static_cast<std::size_t>(k)]);
          }
          py.accumulate(g);
        }
        if (pz.requires_grad) {
          Matrix<T> g(1, static_cast<Eigen::Index>(cell::kNumParams));
          for (std::size_t i = 0; i < cell::kNumParams; ++i) g(0, static_cast<Eigen::Index>(i)) = static_cast<T>(vjp.dparams[i] * sd[i]);
          pz.accumulate(g);
        }
      });
}

template <class T>
BasicTensor<T> nspm_forward(const BasicNeuralSpme<T>& m, const stoich::InputSequence& x, const BasicTensor<T>& z,
                            std::span<const double> current) {
  const auto n = static_cast<Eigen::Index>(current.size());
  if (static_cast<Eigen::Index>(x.x.size()) != n) {
    throw ShapeError(fmt::format("features: {} input rows but {} currents", x.x.size(), current.size()));
  }
  Matrix<T> xs(n, 4), is(n, 1);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (int k = 0; k < 4; ++k) xs(t, k) = static_cast<T>(x.x[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)]);
    is(t, 0) = static_cast<T>(current[static_cast<std::size_t>(t)] / kCurrentScale);
  }
  return m.forward(nn::concat_cols<T>({BasicTensor<T>(std::move(xs)), nn::broadcast_rows(z, n), BasicTensor<T>(std::move(is))}));
}

template BasicTensor<float> nspm_forward(const BasicNeuralSpme<float>&, const stoich::InputSequence&,
                                         const BasicTensor<float>&, std::span<const double>);
template BasicTensor<double> nspm_forward(const BasicNeuralSpme<double>&, const stoich::InputSequence&,
                                          const BasicTensor<double>&, std::span<const double>);
template BasicTensor<float> voltage_layer(const BasicTensor<float>&, const BasicTensor<float>&,
                                          const cell::ParamNormalizer&, const cell::CellConfig&,
                                          std::span<const double>, volt::GuardBand*);
template BasicTensor<double> voltage_layer(const BasicTensor<double>&, const BasicTensor<double>&,
                                           const cell::ParamNormalizer&, const cell::CellConfig&,
                                           std::span<const double>, volt::GuardBand*);
template Matrix<float> skip_logits(const Matrix<float>&);
template Matrix<double> skip_logits(const Matrix<double>&);

// --- inference ----------------------------------------------------------------------

volt::YSequence predict_y(const NeuralSpme& m, const stoich::InputSequence& x, const cell::ParamVector& z,
                          std::span<const double> current) {
  nn::NoGradGuard ng;
  const auto y = m.forward(nn::Tensor(nspm_features(x, z, current))).value();
  volt::YSequence out(static_cast<std::size_t>(y.rows()));
  for (Eigen::Index t = 0; t < y.rows(); ++t) {
    for (int k = 0; k < 4; ++k) out[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] = static_cast<double>(y(t, k));
  }
  return out;
}

std::vector<double> predict_voltage(const NeuralSpme& m, const stoich::InputSequence& x, const cell::ParameterSet& p,
                                    const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                                    std::span<const double> current, volt::GuardBand* guard) {
  volt::GuardBand local;
  const auto y = predict_y(m, x, norm.normalize(p), current);
  return volt::voltage_sequence(y, p, cfg, current, guard ? guard : &local);
}

std::vector<double> predict_voltage(const VoltageTransformer& m, const cell::ParamVector& z,
                                    const cell::CellConfig& cfg, std::span<const double> current) {
  nn::NoGradGuard ng;
  const auto s = m.forward(nn::Tensor(vt_features(z, current))).value();
  std::vector<double> v(static_cast<std::size_t>(s.rows()));
  for (std::size_t t = 0; t < v.size(); ++t) v[t] = volt::unscale_voltage(static_cast<double>(s(static_cast<Eigen::Index>(t), 0)), cfg);
  return v;
}

// --- evaluation -----------------------------------------------------------------------

metrics::RmseReport evaluate(const std::vector<data::Sample>& split, const VoltagePredictor& predict, int workers) {
  std::vector<std::size_t> ids(split.size());
  std::vector<double> rmse(split.size());
  parallel_for(split.size(), workers, [&](std::size_t i) {
    ids[i] = split[i].id;
    rmse[i] = metrics::rmse_mv(predict(split[i]), split[i].traj.V);
  });
  return metrics::summarize(std::move(ids), std::move(rmse));
}

VoltagePredictor nspm_predictor(const NeuralSpme& m, const cell::ParamNormalizer& norm, const cell::CellConfig& cfg) {
  return [&m, norm, cfg](const data::Sample& s) {
    return predict_voltage(m, s.x, s.lambda, norm, cfg, s.traj.I);
  };
}

VoltagePredictor vt_predictor(const VoltageTransformer& m, const cell::ParamNormalizer& norm,
                              const cell::CellConfig& cfg) {
  return [&m, norm, cfg](const data::Sample& s) { return predict_voltage(m, norm.normalize(s.lambda), cfg, s.traj.I); };
}

// --- training ---------------------------------------------------------------------------

namespace {

struct Snapshot {
  std::vector<Matrix<float>> values;
  void take(const nn::ParameterStore<float>& s) {
    values.clear();
    for (const auto& e : s.entries()) values.push_back(e.tensor.value());
  }
  void restore(nn::ParameterStore<float>& s) const {
    for (std::size_t i = 0; i < values.size(); ++i) {
      auto t = s.entries()[i].tensor;
      t.mutable_value() = values[i];
    }
  }
};

// Shared epoch loop. `loss(id)` builds the per-sample loss graph for a sample id
// and `validate()` returns the selection metric (lower is better).
TrainReport run_training(nn::ParameterStore<float>& store, const std::vector<std::size_t>& ids,
                         const std::function<nn::Tensor(std::size_t)>& loss, const std::function<double()>& validate,
                         const TrainConfig& tc, const std::function<void(const EpochRecord&)>& on_epoch) {
  if (ids.empty()) throw ConfigError("training split is empty");
  if (tc.epochs < 1 || tc.batch < 1) throw ConfigError("epochs and batch size must be positive");
  const std::size_t per_epoch = (ids.size() + static_cast<std::size_t>(tc.batch) - 1) / static_cast<std::size_t>(tc.batch);
  nn::AdamConfig ac = tc.adam;
  ac.total_steps = static_cast<long>(per_epoch) * tc.epochs;
  nn::Adam opt(store, ac);
  std::mt19937_64 rng(derive_seed(tc.seed, {0x7a1}));
  std::vector<std::size_t> order = ids;
  TrainReport rep;
  Snapshot best;
  rep.best_val_rmse_mv = std::numeric_limits<double>::infinity();
  for (int e = 0; e < tc.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0, gnorm = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * static_cast<std::size_t>(tc.batch);
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(tc.batch));
      const std::span<const std::size_t> batch(order.data() + lo, hi - lo);
      total += nn::train_step(store, opt, batch, loss) * static_cast<double>(hi - lo);
      gnorm = nn::gradient_norm(store);
    }
    EpochRecord r;
    r.epoch = e + 1;
    r.train_loss = total / static_cast<double>(order.size());
    r.val_rmse_mv = validate();
    r.lr = opt.learning_rate();
    r.grad_norm = gnorm;
    rep.epochs.push_back(r);
    if (r.val_rmse_mv < rep.best_val_rmse_mv) {
      rep.best_val_rmse_mv = r.val_rmse_mv;
      rep.best_epoch = r.epoch;
      best.take(store);
    }
    if (on_epoch) on_epoch(r);
  }
  best.restore(store);
  rep.steps = opt.steps();
  return rep;
}

}  // namespace

TrainReport train_nspm(NeuralSpme& m, const data::Dataset& ds, const cell::CellConfig& cfg, const TrainConfig& tc,
                       const std::function<void(const EpochRecord&)>& on_epoch) {
  std::unordered_map<std::size_t, std::pair<Matrix<float>, Matrix<float>>> cache;
  std::vector<std::size_t> ids;
  for (const auto& s : ds.train) {
    Matrix<float> label(static_cast<Eigen::Index>(s.traj.size()), 4);
    for (std::size_t t = 0; t < s.traj.size(); ++t) {
      for (int k = 0; k < 4; ++k) label(static_cast<Eigen::Index>(t), k) = static_cast<float>(s.traj.y[t][static_cast<std::size_t>(k)]);
    }
    cache.emplace(s.id, std::make_pair(nspm_features(s.x, ds.normalizer.normalize(s.lambda), s.traj.I), std::move(label)));
    ids.push_back(s.id);
  }
  const auto loss = [&](std::size_t id) {
    const auto& [f, label] = cache.at(id);
    return nn::mse(m.forward(nn::Tensor(f)), nn::Tensor(label));
  };
  const auto validate = [&] { return evaluate(ds.val, nspm_predictor(m, ds.normalizer, cfg), tc.workers).mean; };
  return run_training(m.params(), ids, loss, validate, tc, on_epoch);
}

TrainReport train_vt(VoltageTransformer& m, const data::Dataset& ds, const cell::CellConfig& cfg,
                     const TrainConfig& tc, const std::function<void(const EpochRecord&)>& on_epoch) {
  std::unordered_map<std::size_t, std::pair<Matrix<float>, Matrix<float>>> cache;
  std::vector<std::size_t> ids;
  for (const auto& s : ds.train) {
    Matrix<float> label(static_cast<Eigen::Index>(s.traj.size()), 1);
    for (std::size_t t = 0; t < s.traj.size(); ++t) {
      label(static_cast<Eigen::Index>(t), 0) = static_cast<float>(volt::scale_voltage(s.traj.V[t], cfg));
    }
    cache.emplace(s.id, std::make_pair(vt_features(ds.normalizer.normalize(s.lambda), s.traj.I), std::move(label)));
    ids.push_back(s.id);
  }
  const auto loss = [&](std::size_t id) {
    const auto& [f, label] = cache.at(id);
    return nn::mse(m.forward(nn::Tensor(f)), nn::Tensor(label));
  };
  const auto validate = [&] { return evaluate(ds.val, vt_predictor(m, ds.normalizer, cfg), tc.workers).mean; };
  return run_training(m.params(), ids, loss, validate, tc, on_epoch);
}

void write_train_csv(const std::filesystem::path& path, const TrainReport& r, const std::vector<std::string>& header) {
  std::string body = "epoch,train_loss,val_rmse_mv,lr,grad_norm\n";
  for (const auto& e : r.epochs) body += fmt::format("{},{},{},{},{}\n", e.epoch, e.train_loss, e.val_rmse_mv, e.lr, e.grad_norm);
  metrics::write_text(path, header, body);
}

// --- checkpoints -------------------------------------------------------------------------

KeyValueFile model_header(const nn::EncoderConfig& cfg, std::uint64_t seed, long steps,
                          const cell::ParamNormalizer& norm, const Provenance& prov) {
  KeyValueFile kv;
  cfg.write(kv, "encoder");
  kv.set("model.seed", std::to_string(seed));
  kv.set("model.steps", static_cast<long long>(steps));
  kv.set("normalizer.mean", std::vector<double>(norm.mean().begin(), norm.mean().end()));
  kv.set("normalizer.std", std::vector<double>(norm.stddev().begin(), norm.stddev().end()));
  if (!prov.tool.empty()) prov.write(kv);
  return kv;
}

cell::ParamNormalizer read_normalizer(const KeyValueFile& header) {
  const auto m = header.get_doubles("normalizer.mean");
  const auto s = header.get_doubles("normalizer.std");
  if (m.size() != cell::kNumParams || s.size() != cell::kNumParams) throw FormatError("normalizer needs nine entries");
  cell::ParamVector a{}, b{};
  std::copy(m.begin(), m.end(), a.begin());
  std::copy(s.begin(), s.end(), b.begin());
  return {a, b};
}

namespace {

template <class Model>
void save_model(const std::filesystem::path& path, const Model& m, long steps, const cell::ParamNormalizer& norm,
                const Provenance& prov) {
  nn::save_checkpoint(path, Model::kKind, model_header(m.config(), m.seed(), steps, norm, prov), m.params());
}

template <class Model>
Model load_model(const std::filesystem::path& path, cell::ParamNormalizer* norm) {
  const auto ck = nn::load_checkpoint(path, Model::kKind);
  const auto cfg = nn::EncoderConfig::read(ck.header, "encoder");
  Model m(cfg, std::stoull(ck.header.get_string("model.seed")));
  m.params().load(ck.tensors);
  if (norm) *norm = read_normalizer(ck.header);
  return m;
}

}  // namespace

void save_nspm(const std::filesystem::path& path, const NeuralSpme& m, long steps, const cell::ParamNormalizer& norm,
               const Provenance& prov) {
  save_model(path, m, steps, norm, prov);
}
NeuralSpme load_nspm(const std::filesystem::path& path, cell::ParamNormalizer* norm) {
  return load_model<NeuralSpme>(path, norm);
}
void save_vt(const std::filesystem::path& path, const VoltageTransformer& m, long steps,
             const cell::ParamNormalizer& norm, const Provenance& prov) {
  save_model(path, m, steps, norm, prov);
}
VoltageTransformer load_vt(const std::filesystem::path& path, cell::ParamNormalizer* norm) {
  return load_model<VoltageTransformer>(path, norm);
}

}  // namespace spmeid::surrogate
