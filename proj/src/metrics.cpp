#include "premixer/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "premixer/error.hpp"

namespace premixer {
namespace {

void check(const Tensor& pred, const Tensor& truth, const Tensor& mask, const char* what) {
  require_same_shape(pred, truth, what);
  if (mask.size() != truth.size()) throw ShapeError(std::string(what) + ": mask size does not match");
}

struct Sums {
  double abs = 0.0, sq = 0.0, pct = 0.0;
  std::size_t n = 0, n_pct = 0;

  void add(double p, double t, double threshold) {
    const double d = p - t;
    abs += std::abs(d);
    sq += d * d;
    ++n;
    if (std::abs(t) >= threshold) {
      pct += std::abs(d / t);
      ++n_pct;
    }
  }

  MetricValues values(const std::string& what) const {
    if (n == 0) throw DataError(what + ": no valid entries, metric undefined");
    if (n_pct == 0) throw DataError(what + ": no entries above the MAPE threshold, MAPE undefined");
    return {abs / static_cast<double>(n), std::sqrt(sq / static_cast<double>(n)),
            100.0 * pct / static_cast<double>(n_pct)};
  }
};

}  // namespace

Tensor valid_mask(const Tensor& truth) {
  Tensor m(truth.shape());
  for (std::size_t i = 0; i < truth.size(); ++i) m[i] = (std::isfinite(truth[i]) && truth[i] != 0.0) ? 1.0 : 0.0;
  return m;
}

double mae(const Tensor& pred, const Tensor& truth, const Tensor& mask) {
  check(pred, truth, mask, "mae");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (mask[i] != 0.0) {
      acc += std::abs(pred[i] - truth[i]);
      ++n;
    }
  if (n == 0) throw DataError("mae: no valid entries, metric undefined");
  return acc / static_cast<double>(n);
}

double rmse(const Tensor& pred, const Tensor& truth, const Tensor& mask) {
  check(pred, truth, mask, "rmse");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (mask[i] != 0.0) {
      acc += (pred[i] - truth[i]) * (pred[i] - truth[i]);
      ++n;
    }
  if (n == 0) throw DataError("rmse: no valid entries, metric undefined");
  return std::sqrt(acc / static_cast<double>(n));
}

double mape(const Tensor& pred, const Tensor& truth, const Tensor& mask, double threshold) {
  check(pred, truth, mask, "mape");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (mask[i] != 0.0 && std::abs(truth[i]) >= threshold) {
      acc += std::abs((pred[i] - truth[i]) / truth[i]);
      ++n;
    }
  if (n == 0) throw DataError("mape: no entries above the threshold, metric undefined");
  return 100.0 * acc / static_cast<double>(n);
}

const HorizonRow& MetricsReport::row(const std::string& label) const {
  for (const auto& r : rows)
    if (r.label == label) return r;
  throw ParameterError("metrics report has no row '" + label + "'");
}

MetricsReport horizon_report(const Tensor& preds, const Tensor& truths, const ReportOptions& options) {
  require_same_shape(preds, truths, "horizon_report");
  require_rank(truths, 4, "horizon_report");
  const std::size_t samples = truths.dim(0), hz = truths.dim(1), inner = truths.dim(2) * truths.dim(3);
  if (hz != 12 && !options.allow_any_horizon)
    throw ShapeError("horizon_report: horizon axis has length " + std::to_string(hz) + ", expected 12");
  std::vector<Sums> per_step(hz);
  Sums pooled;
  std::size_t masked = 0;
  for (std::size_t s = 0; s < samples; ++s)
    for (std::size_t h = 0; h < hz; ++h)
      for (std::size_t k = 0; k < inner; ++k) {
        const std::size_t i = (s * hz + h) * inner + k;
        const double t = truths[i];
        if (!std::isfinite(t) || t == 0.0) {
          ++masked;
          continue;
        }
        per_step[h].add(preds[i], t, options.mape_threshold);
        pooled.add(preds[i], t, options.mape_threshold);
      }
  MetricsReport r;
  r.sample_count = samples;
  r.masked_count = masked;
  for (std::size_t h : {3u, 6u, 12u})
    if (h <= hz) r.rows.push_back({std::to_string(h), per_step[h - 1].values("horizon " + std::to_string(h))});
  r.rows.push_back({"average", pooled.values("average")});
  return r;
}

std::string report_csv(const MetricsReport& report) {
  std::string out = "horizon,mae,rmse,mape_percent\n";
  char buf[160];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f\n", r.label.c_str(), r.values.mae, r.values.rmse, r.values.mape);
    out += buf;
  }
  return out;
}

nlohmann::json report_json(const MetricsReport& report) {
  nlohmann::json j;
  for (const auto& r : report.rows)
    j["horizons"][r.label] = {{"mae", r.values.mae}, {"rmse", r.values.rmse}, {"mape_percent", r.values.mape}};
  j["sample_count"] = report.sample_count;
  j["masked_count"] = report.masked_count;
  return j;
}

void write_report(const std::filesystem::path& stem, const MetricsReport& report) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  std::ofstream csv(stem.string() + ".csv");
  std::ofstream js(stem.string() + ".json");
  if (!csv || !js) throw ConfigError("cannot write report " + stem.string());
  csv << report_csv(report);
  js << report_json(report).dump(2) << '\n';
}

}  // namespace premixer
