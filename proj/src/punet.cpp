#include "spmeid/punet.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "spmeid/error.hpp"
#include "spmeid/metrics.hpp"
#include "spmeid/parallel.hpp"
#include "spmeid/provenance.hpp"

namespace spmeid::punet {

using nn::BasicTensor;
using nn::Matrix;

std::vector<Reference> references_of(const std::vector<const data::Sample*>& set) {
  std::vector<Reference> refs;
  refs.reserve(set.size());
  for (const auto* s : set) refs.push_back({s->traj.V, s->traj.I, s->v_init});
  return refs;
}

nn::EncoderConfig preset(surrogate::Scale scale, std::size_t total_rows) {
  nn::EncoderConfig c;
  c.d_in = kChannels;
  c.causal = false;
  c.patch = 10;
  c.max_len = static_cast<int>((total_rows + 9) / 10);
  c.n_heads = 4;
  if (scale == surrogate::Scale::Small) {
    c.n_layers = 2;
    c.d_model = 32;
    c.d_ff = 64;
  } else {
    c.n_layers = 4;
    c.d_model = 64;
    c.d_ff = 128;
  }
  return c;
}

double EvaluationContext::max_rmse_mv() const {
  if (!feasible || rmse_mv.empty()) return std::numeric_limits<double>::infinity();
  return *std::max_element(rmse_mv.begin(), rmse_mv.end());
}

YProvider surrogate_provider(const surrogate::NeuralSpme& phi) {
  return [&phi](std::size_t, const stoich::InputSequence& x, const cell::ParamVector& z, const cell::ParameterSet&,
                std::span<const double> current) { return surrogate::predict_y(phi, x, z, current); };
}

EvaluationContext build_context(const cell::ParameterSet& lambda, const surrogate::NeuralSpme& phi,
                                const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                                const std::vector<Reference>& refs, int workers) {
  return build_context(lambda, surrogate_provider(phi), norm, cfg, refs, workers);
}

EvaluationContext build_context(const cell::ParameterSet& lambda, const YProvider& forward,
                                const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                                const std::vector<Reference>& refs, int workers) {
  if (refs.empty()) throw ConfigError("context needs at least one reference sequence");
  EvaluationContext ctx;
  std::size_t rows = 0;
  for (const auto& r : refs) {
    if (r.V.size() != r.I.size() || r.V.empty()) {
      throw ShapeError(fmt::format("reference has {} voltages and {} currents", r.V.size(), r.I.size()));
    }
    ctx.boundaries.push_back(rows);
    rows += r.V.size();
  }
  ctx.boundaries.push_back(rows);
  ctx.U.resize(static_cast<Eigen::Index>(rows), kChannels);
  ctx.V.resize(refs.size());
  ctx.rmse_mv.resize(refs.size());
  const auto z = norm.normalize(lambda);

  std::vector<std::string> failure(refs.size());
  parallel_for(refs.size(), workers, [&](std::size_t i) {
    const auto& r = refs[i];
    try {
      const auto sol = stoich::solve_initial_stoichiometry(lambda, cfg, r.v_init);
      const auto x = stoich::build_input_sequence(sol, lambda, cfg, r.I, 1.0);
      const auto y = forward(i, x, z, lambda, r.I);
      volt::GuardBand guard;
      ctx.V[i] = volt::voltage_sequence(y, lambda, cfg, r.I, &guard);
      ctx.rmse_mv[i] = metrics::rmse_mv(ctx.V[i], r.V);
      for (std::size_t t = 0; t < r.V.size(); ++t) {
        const auto row = static_cast<Eigen::Index>(ctx.boundaries[i] + t);
        ctx.U(row, 0) = static_cast<float>((ctx.V[i][t] - r.V[t]) / kResidualScale);
        for (int k = 0; k < 4; ++k) ctx.U(row, 1 + k) = static_cast<float>(y[t][static_cast<std::size_t>(k)]);
        for (std::size_t j = 0; j < cell::kNumParams; ++j) ctx.U(row, 5 + static_cast<Eigen::Index>(j)) = static_cast<float>(z[j]);
        ctx.U(row, 14) = static_cast<float>(volt::scale_voltage(r.V[t], cfg));
        ctx.U(row, 15) = static_cast<float>(r.I[t] / surrogate::kCurrentScale);
      }
    } catch (const InfeasibleError& e) {
      failure[i] = e.what();
    } catch (const DomainError& e) {
      failure[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!failure[i].empty()) {
      ctx.feasible = false;
      ctx.diagnostic = fmt::format("sequence {}: {}", i, failure[i]);
      break;
    }
  }
  return ctx;
}

// --- model -----------------------------------------------------------------------

template <class T>
BasicUpdateNet<T>::BasicUpdateNet(const nn::EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  if (cfg.d_in != kChannels || cfg.causal) throw ConfigError("PUNet needs a non-causal encoder over 16 channels");
  nn::Rng rng(seed);
  enc_ = nn::Encoder<T>(cfg, store_, "enc", rng);
  ln_ = nn::LayerNormLayer<T>(store_, "out.ln", cfg.d_model);
  head_ = nn::LinearLayer<T>(store_, "out.head", cfg.d_model, static_cast<int>(cell::kNumParams), rng);
}

template <class T>
BasicTensor<T> BasicUpdateNet<T>::forward(const BasicTensor<T>& U, const BasicTensor<T>& z) const {
  return nn::add(z, head_(ln_(nn::mean_rows(enc_.forward(U)))));
}

template class BasicUpdateNet<float>;
template class BasicUpdateNet<double>;

namespace {

Matrix<float> row_of(const cell::ParamVector& z) {
  Matrix<float> r(1, static_cast<Eigen::Index>(cell::kNumParams));
  for (std::size_t i = 0; i < cell::kNumParams; ++i) r(0, static_cast<Eigen::Index>(i)) = static_cast<float>(z[i]);
  return r;
}

double distance(const Matrix<float>& a, const cell::ParamVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < cell::kNumParams; ++i) {
    const double d = static_cast<double>(a(0, static_cast<Eigen::Index>(i))) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double distance(const cell::ParamVector& a, const cell::ParamVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < cell::kNumParams; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

UpdateResult update(const UpdateNet& psi, const EvaluationContext& ctx, const cell::ParameterSet& lambda,
                    const cell::ParamNormalizer& norm) {
  if (!ctx.feasible) throw InfeasibleError("update needs a feasible context", ctx.diagnostic);
  if (!ctx.U.allFinite()) throw NumericalError("evaluation context holds non-finite values");
  nn::NoGradGuard ng;
  const auto out = psi.forward(nn::Tensor(ctx.U), nn::Tensor(row_of(norm.normalize(lambda)))).value();
  cell::ParamVector z{};
  for (std::size_t i = 0; i < cell::kNumParams; ++i) z[i] = static_cast<double>(out(0, static_cast<Eigen::Index>(i)));
  UpdateResult r;
  r.lambda = cell::feasible_bounds().clip(norm.denormalize(z), &r.clipped);
  return r;
}

cell::ParameterSet perturb(const cell::ParameterSet& truth, double sigma, const cell::ParamNormalizer& norm,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  auto z = norm.normalize(truth);
  for (auto& v : z) v += sigma * n(rng);
  return cell::feasible_bounds().clip(norm.denormalize(z));
}

// --- training -----------------------------------------------------------------------

namespace {

struct Perturbed {
  cell::ParameterSet lambda;
  EvaluationContext ctx;
  int redraws = 0;
};

// Draws until the perturbed estimate gives a feasible context; falls back to the label.
Perturbed draw_perturbed(const cell::ParameterSet& truth, double sigma, const surrogate::NeuralSpme& phi,
                         const cell::ParamNormalizer& norm, const cell::CellConfig& cfg,
                         const std::vector<Reference>& refs, std::uint64_t seed, int retries, int workers) {
  Perturbed p;
  for (int a = 0; a <= retries; ++a) {
    p.lambda = perturb(truth, sigma, norm, derive_seed(seed, {static_cast<std::uint64_t>(a)}));
    p.ctx = build_context(p.lambda, phi, norm, cfg, refs, workers);
    if (p.ctx.feasible) return p;
    ++p.redraws;
  }
  p.lambda = truth;
  p.ctx = build_context(truth, phi, norm, cfg, refs, workers);
  return p;
}

nn::Tensor two_term_loss(const UpdateNet& psi, const Perturbed& pert, const EvaluationContext& clean,
                         const cell::ParamNormalizer& norm, const nn::Tensor& label, const cell::ParameterSet& truth) {
  const auto a = psi.forward(nn::Tensor(pert.ctx.U), nn::Tensor(row_of(norm.normalize(pert.lambda))));
  const auto b = psi.forward(nn::Tensor(clean.U), nn::Tensor(row_of(norm.normalize(truth))));
  return nn::add(nn::mse(a, label), nn::mse(b, label));
}

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

}  // namespace

AuditReport audit(const UpdateNet& psi, const surrogate::NeuralSpme& phi, const std::vector<data::Sample>& split,
                  const cell::ParamNormalizer& norm, const cell::CellConfig& cfg, double sigma, int draws,
                  std::uint64_t seed, int workers) {
  const auto sets = data::Dataset::group_by_set(split);
  const std::size_t n = sets.size() * static_cast<std::size_t>(draws);
  std::vector<int> pass(n, 0);
  std::vector<double> recon(sets.size(), 0.0), loss(n, 0.0);
  parallel_for(sets.size(), workers, [&](std::size_t s) {
    nn::NoGradGuard ng;
    const auto& truth = sets[s].front()->lambda;
    const auto refs = references_of(sets[s]);
    const auto zt = norm.normalize(truth);
    const nn::Tensor label(row_of(zt));
    const auto clean = build_context(truth, phi, norm, cfg, refs);
    if (!clean.feasible) throw InfeasibleError(fmt::format("audit: label of set {} is infeasible", s), clean.diagnostic);
    recon[s] = distance(psi.forward(nn::Tensor(clean.U), label).value(), zt);
    for (int d = 0; d < draws; ++d) {
      const auto pert = draw_perturbed(truth, sigma, phi, norm, cfg, refs,
                                       derive_seed(seed, {s, static_cast<std::uint64_t>(d)}), 5, 1);
      const auto zp = norm.normalize(pert.lambda);
      const auto out = psi.forward(nn::Tensor(pert.ctx.U), nn::Tensor(row_of(zp))).value();
      const std::size_t k = s * static_cast<std::size_t>(draws) + static_cast<std::size_t>(d);
      pass[k] = distance(out, zt) < distance(zp, zt) ? 1 : 0;
      loss[k] = two_term_loss(psi, pert, clean, norm, label, truth).item();
    }
  });
  AuditReport r;
  r.draws = n;
  for (std::size_t k = 0; k < n; ++k) {
    r.pass_rate += pass[k];
    r.loss += loss[k];
  }
  r.pass_rate /= static_cast<double>(std::max<std::size_t>(n, 1));
  r.loss /= static_cast<double>(std::max<std::size_t>(n, 1));
  for (double v : recon) r.reconstruction += v;
  r.reconstruction /= static_cast<double>(std::max<std::size_t>(sets.size(), 1));
  return r;
}

TrainReport train(UpdateNet& psi, const surrogate::NeuralSpme& phi, const data::Dataset& ds,
                  const cell::CellConfig& cfg, const TrainConfig& tc,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  if (tc.epochs < 1 || tc.batch < 1 || tc.draws_per_set < 1) {
    throw ConfigError("epochs, batch size and draws per set must be positive");
  }
  const auto sets = data::Dataset::group_by_set(ds.train);
  if (sets.empty()) throw ConfigError("training split is empty");
  const auto& norm = ds.normalizer;

  std::vector<std::vector<Reference>> refs(sets.size());
  std::vector<EvaluationContext> clean(sets.size());
  parallel_for(sets.size(), tc.workers, [&](std::size_t s) {
    refs[s] = references_of(sets[s]);
    clean[s] = build_context(sets[s].front()->lambda, phi, norm, cfg, refs[s]);
  });
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (!clean[s].feasible) throw InfeasibleError(fmt::format("training set {} label is infeasible", s), clean[s].diagnostic);
  }

  const auto draws = static_cast<std::size_t>(tc.draws_per_set);
  const std::size_t items = sets.size() * draws;
  const std::size_t per_epoch = (items + static_cast<std::size_t>(tc.batch) - 1) / static_cast<std::size_t>(tc.batch);
  nn::AdamConfig ac = tc.adam;
  ac.total_steps = static_cast<long>(per_epoch) * tc.epochs;
  nn::Adam opt(psi.params(), ac);
  std::mt19937_64 shuffle_rng(derive_seed(tc.seed, {0x5e7}));
  std::vector<std::size_t> order(items);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainReport rep;
  Snapshot best;
  double best_loss = std::numeric_limits<double>::infinity();
  int epoch = 0;
  const auto loss = [&](std::size_t item) {
    const std::size_t s = item / draws;
    const auto& truth = sets[s].front()->lambda;
    const std::uint64_t seed = derive_seed(tc.seed, {static_cast<std::uint64_t>(epoch), s, item % draws});
    std::mt19937_64 rng(seed);
    const double sigma = std::sqrt(std::uniform_real_distribution<double>(0.0, 1.0)(rng));
    const auto pert = draw_perturbed(truth, sigma, phi, norm, cfg, refs[s], derive_seed(seed, {1}), tc.perturb_retries,
                                     tc.workers);
    rep.perturb_redraws += pert.redraws;
    return two_term_loss(psi, pert, clean[s], norm, nn::Tensor(row_of(norm.normalize(truth))), truth);
  };

  for (epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * static_cast<std::size_t>(tc.batch);
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(tc.batch));
      total += nn::train_step(psi.params(), opt, std::span<const std::size_t>(order.data() + lo, hi - lo), loss) *
               static_cast<double>(hi - lo);
    }
    const auto a = audit(psi, phi, ds.val, norm, cfg, tc.audit_sigma, tc.audit_draws, derive_seed(tc.seed, {0xa0d}),
                         tc.workers);
    EpochRecord r;
    r.epoch = epoch + 1;
    r.train_loss = total / static_cast<double>(order.size());
    r.val_loss = a.loss;
    r.reconstruction = a.reconstruction;
    r.audit_pass_rate = a.pass_rate;
    r.lr = opt.learning_rate();
    rep.epochs.push_back(r);
    if (r.val_loss < best_loss) {
      best_loss = r.val_loss;
      rep.best_epoch = r.epoch;
      best.take(psi.params());
    }
    if (on_epoch) on_epoch(r);
  }
  best.restore(psi.params());
  rep.steps = opt.steps();
  return rep;
}

void write_train_csv(const std::filesystem::path& path, const TrainReport& r, const std::vector<std::string>& header) {
  std::string body = "epoch,train_loss,val_loss,reconstruction,audit_pass_rate,lr\n";
  for (const auto& e : r.epochs) {
    body += fmt::format("{},{},{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.reconstruction, e.audit_pass_rate, e.lr);
  }
  metrics::write_text(path, header, body);
}

void save(const std::filesystem::path& path, const UpdateNet& m, long steps, const cell::ParamNormalizer& norm,
          const Provenance& prov) {
  nn::save_checkpoint(path, UpdateNet::kKind, surrogate::model_header(m.config(), m.seed(), steps, norm, prov),
                      m.params());
}

UpdateNet load(const std::filesystem::path& path, cell::ParamNormalizer* norm) {
  const auto ck = nn::load_checkpoint(path, UpdateNet::kKind);
  UpdateNet m(nn::EncoderConfig::read(ck.header, "encoder"), std::stoull(ck.header.get_string("model.seed")));
  m.params().load(ck.tensors);
  if (norm) *norm = surrogate::read_normalizer(ck.header);
  return m;
}

}  // namespace spmeid::punet
