#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "premixer/tensor.hpp"

namespace premixer {

/// 1 where the truth is a usable reading (finite and non-zero), else 0.
Tensor valid_mask(const Tensor& truth);

double mae(const Tensor& pred, const Tensor& truth, const Tensor& mask);
double rmse(const Tensor& pred, const Tensor& truth, const Tensor& mask);
/// Percent. Entries with |truth| < threshold are left out as well.
double mape(const Tensor& pred, const Tensor& truth, const Tensor& mask, double threshold = 1.0);

struct MetricValues {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // percent
};

struct HorizonRow {
  std::string label;  // "3", "6", "12" or "average"
  MetricValues values;
};

struct MetricsReport {
  std::vector<HorizonRow> rows;
  std::size_t sample_count = 0;
  std::size_t masked_count = 0;  // entries excluded by the validity mask

  const HorizonRow& row(const std::string& label) const;
  const MetricValues& average() const { return row("average").values; }
};

struct ReportOptions {
  double mape_threshold = 1.0;
  bool allow_any_horizon = false;
};

/// preds/truths: [S × horizon × N × C] in raw units. Horizons 3, 6 and 12
/// are 1-based step indices; the average row pools every step.
MetricsReport horizon_report(const Tensor& preds, const Tensor& truths, const ReportOptions& options = {});

std::string report_csv(const MetricsReport& report);
nlohmann::json report_json(const MetricsReport& report);
/// Writes `<stem>.csv` and `<stem>.json`.
void write_report(const std::filesystem::path& stem, const MetricsReport& report);

}  // namespace premixer
