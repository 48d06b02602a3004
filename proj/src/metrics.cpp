#include "spmeid/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "spmeid/error.hpp"

namespace spmeid::metrics {

double rmse_mv(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw ShapeError(fmt::format("rmse: sequence lengths {} and {} must be equal and positive", a.size(), b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size())) * 1000.0;
}

Mape parameter_mape(const cell::ParameterSet& est, const cell::ParameterSet& truth) {
  const auto e = est.to_array(), t = truth.to_array();
  Mape m;
  for (std::size_t i = 0; i < cell::kNumParams; ++i) {
    m.per_param[i] = 100.0 * std::abs(e[i] - t[i]) / std::abs(t[i]);
    m.mean += m.per_param[i] / cell::kNumParams;
  }
  return m;
}

RmseReport summarize(std::vector<std::size_t> ids, std::vector<double> rmse) {
  if (rmse.empty() || ids.size() != rmse.size()) throw ShapeError("summarize: need one id per non-empty RMSE entry");
  RmseReport r;
  r.ids = std::move(ids);
  r.rmse_mv = std::move(rmse);
  std::vector<double> s = r.rmse_mv;
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    return s[std::clamp<std::size_t>(k, 1, n) - 1];
  };
  r.mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(n);
  r.median = rank(0.5);
  r.p90 = rank(0.9);
  r.max = s.back();
  constexpr int kBins = 20;
  const double width = r.max > 0 ? r.max / kBins : 1.0;
  r.hist_counts.assign(kBins, 0);
  for (int b = 0; b <= kBins; ++b) r.hist_edges.push_back(b * width);
  for (double v : s) ++r.hist_counts[std::min<std::size_t>(kBins - 1, static_cast<std::size_t>(v / width))];
  for (std::size_t i = 0; i < n; ++i) r.cdf.emplace_back(s[i], static_cast<double>(i + 1) / static_cast<double>(n));
  return r;
}

void write_text(const std::filesystem::path& path, const std::vector<std::string>& header, const std::string& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError(fmt::format("cannot write {}", path.string()));
  for (const auto& h : header) f << "# " << h << '\n';
  f << body;
  if (!f) throw ConfigError(fmt::format("write failed for {}", path.string()));
}

void write_rmse_csv(const std::filesystem::path& path, const RmseReport& r, const std::vector<std::string>& header) {
  std::string body = "sample_id,rmse_mv\n";
  for (std::size_t i = 0; i < r.ids.size(); ++i) body += fmt::format("{},{}\n", r.ids[i], r.rmse_mv[i]);
  write_text(path, header, body);
}

void write_rmse_distribution(const std::filesystem::path& stem, const RmseReport& r,
                             const std::vector<std::string>& header) {
  std::string hist = "lo_mv,hi_mv,count\n";
  for (std::size_t b = 0; b < r.hist_counts.size(); ++b) {
    hist += fmt::format("{},{},{}\n", r.hist_edges[b], r.hist_edges[b + 1], r.hist_counts[b]);
  }
  write_text(stem.string() + "_hist.csv", header, hist);
  std::string cdf = "rmse_mv,fraction\n";
  for (const auto& [v, f] : r.cdf) cdf += fmt::format("{},{}\n", v, f);
  write_text(stem.string() + "_cdf.csv", header, cdf);
}

std::string summary_text(const std::string& label, const RmseReport& r, const std::vector<std::string>& header) {
  std::string s = "{\n";
  s += fmt::format("  \"model\": \"{}\",\n", label);
  for (const auto& h : header) {
    const auto eq = h.find('=');
    if (eq != std::string::npos) s += fmt::format("  \"{}\": \"{}\",\n", h.substr(0, eq), h.substr(eq + 1));
  }
  s += fmt::format("  \"samples\": {},\n  \"mean_rmse_mv\": {},\n  \"median_rmse_mv\": {},\n", r.ids.size(), r.mean,
                   r.median);
  s += fmt::format("  \"p90_rmse_mv\": {},\n  \"max_rmse_mv\": {}\n}}\n", r.p90, r.max);
  return s;
}

}  // namespace spmeid::metrics
