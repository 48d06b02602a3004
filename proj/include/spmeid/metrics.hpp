#pragma once

// Error metrics and their distribution summaries.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spmeid/cellmodel.hpp"

namespace spmeid::metrics {

/// Root-mean-square difference in millivolts. Throws ShapeError on length mismatch or empty input.
double rmse_mv(std::span<const double> a, std::span<const double> b);

struct Mape {
  cell::ParamVector per_param{};  // [%]
  double mean = 0.0;              // [%]
};

/// 100·|est − true|/|true| per parameter and its mean.
Mape parameter_mape(const cell::ParameterSet& est, const cell::ParameterSet& truth);

struct RmseReport {
  std::vector<std::size_t> ids;
  std::vector<double> rmse_mv;
  double mean = 0.0, median = 0.0, p90 = 0.0, max = 0.0;
  std::vector<double> hist_edges;  // bin edges [mV], size = counts + 1
  std::vector<std::size_t> hist_counts;
  std::vector<std::pair<double, double>> cdf;  // (rmse_mv, fraction ≤)
};

/// Order statistics (nearest-rank percentiles), a 20-bin histogram and the empirical CDF.
RmseReport summarize(std::vector<std::size_t> ids, std::vector<double> rmse);

/// CSV (sample_id, rmse_mv) with provenance comment lines.
void write_rmse_csv(const std::filesystem::path& path, const RmseReport& r, const std::vector<std::string>& header);
/// Histogram and CDF as plot-ready CSVs next to `stem`.
void write_rmse_distribution(const std::filesystem::path& stem, const RmseReport& r,
                             const std::vector<std::string>& header);
/// JSON-like summary text.
std::string summary_text(const std::string& label, const RmseReport& r, const std::vector<std::string>& header);

/// Writes "# line" comments then the body.
void write_text(const std::filesystem::path& path, const std::vector<std::string>& header, const std::string& body);

}  // namespace spmeid::metrics
