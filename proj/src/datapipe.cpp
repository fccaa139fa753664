#include "premixer/datapipe.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

#include "premixer/error.hpp"
#include "premixer/pmxt.hpp"

namespace premixer {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".json";
  return p;
}

std::vector<std::string> default_ids(std::size_t n) {
  std::vector<std::string> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = "node" + std::to_string(i);
  return ids;
}

// Minutes since the Unix epoch for "YYYY-MM-DD[T ]HH:MM[:SS][Z]".
long long parse_timestamp(const std::string& s, std::size_t line) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  char sep = 0;
  int n = std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &sec);
  if (n < 6 || (sep != 'T' && sep != ' '))
    throw DataError("csv line " + std::to_string(line) + ": bad ISO-8601 timestamp '" + s + "'");
  using namespace std::chrono;
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) throw DataError("csv line " + std::to_string(line) + ": invalid date '" + s + "'");
  const long long days = sys_days(ymd).time_since_epoch().count();
  return days * 1440 + h * 60 + mi + sec / 60;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

RawSeries load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "timestamp,node_id,value")
    throw FormatError("csv: expected header 'timestamp,node_id,value' in " + path.string());

  struct Reading {
    long long minute;
    std::size_t node;
    double value;
  };
  std::vector<Reading> readings;
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<long long> last_seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string ts, node, val;
    if (!std::getline(ss, ts, ',') || !std::getline(ss, node, ',') || !std::getline(ss, val))
      throw FormatError("csv line " + std::to_string(lineno) + ": expected 3 fields");
    const long long minute = parse_timestamp(trim(ts), lineno);
    node = trim(node);
    auto [it, inserted] = index.try_emplace(node, ids.size());
    if (inserted) {
      ids.push_back(node);
      last_seen.push_back(std::numeric_limits<long long>::min());
    }
    const std::size_t n = it->second;
    if (minute <= last_seen[n])
      throw DataError("csv line " + std::to_string(lineno) + ": non-monotone timestamp for node " + node);
    last_seen[n] = minute;
    double v = kNaN;
    val = trim(val);
    if (!val.empty() && val != "nan" && val != "NaN") {
      try {
        v = std::stod(val);
      } catch (...) {
        throw FormatError("csv line " + std::to_string(lineno) + ": bad value '" + val + "'");
      }
    }
    readings.push_back({minute, n, v});
  }
  if (readings.empty()) throw DataError("csv: no readings in " + path.string());

  std::vector<long long> stamps;
  stamps.reserve(readings.size());
  for (const auto& r : readings) stamps.push_back(r.minute);
  std::sort(stamps.begin(), stamps.end());
  stamps.erase(std::unique(stamps.begin(), stamps.end()), stamps.end());
  long long interval = 0;
  for (std::size_t i = 1; i < stamps.size(); ++i) {
    long long d = stamps[i] - stamps[i - 1];
    interval = interval == 0 ? d : std::min(interval, d);
  }
  if (interval == 0) interval = 5;
  const long long t0 = stamps.front();
  const std::size_t steps = static_cast<std::size_t>((stamps.back() - t0) / interval) + 1;

  Tensor values({steps, ids.size(), 1}, kNaN);
  for (const auto& r : readings) {
    if ((r.minute - t0) % interval != 0)
      throw DataError("csv: timestamp off the " + std::to_string(interval) + "-minute grid for node " + ids[r.node]);
    values.at(static_cast<std::size_t>((r.minute - t0) / interval), r.node, 0) = r.value;
  }
  RawSeries out;
  out.values = std::move(values);
  out.interval_minutes = static_cast<int>(interval);
  out.node_ids = std::move(ids);
  return out;
}

}  // namespace

std::size_t count_nan(const Tensor& t) {
  return static_cast<std::size_t>(std::count_if(t.data().begin(), t.data().end(), [](double v) { return std::isnan(v); }));
}

RawSeries load_series(const std::filesystem::path& path, std::size_t* nan_count) {
  RawSeries out;
  if (path.extension() == ".csv") {
    out = load_csv(path);
  } else {
    Tensor t = pmxt::read(path);
    if (t.rank() == 2) t = std::move(t).reshaped({t.dim(0), t.dim(1), 1});
    if (t.rank() != 3)
      throw FormatError("series file must hold a rank-3 [T × N × C] tensor, got " + shape_str(t.shape()));
    out.values = std::move(t);
    out.node_ids = default_ids(out.nodes());
    const auto side = sidecar_path(path);
    if (std::filesystem::exists(side)) {
      std::ifstream in(side);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad series manifest " + side.string() + ": " + e.what());
      }
      out.interval_minutes = j.value("interval_minutes", 5);
      if (j.contains("node_ids")) {
        auto ids = j["node_ids"].get<std::vector<std::string>>();
        if (ids.size() != out.nodes())
          throw FormatError("series manifest lists " + std::to_string(ids.size()) + " node ids for " +
                            std::to_string(out.nodes()) + " nodes");
        out.node_ids = std::move(ids);
      }
    }
  }
  const std::size_t nans = count_nan(out.values);
  if (nans > 0)
    std::cerr << "[premixer] " << path.string() << ": " << nans << " missing readings\n";
  if (nan_count) *nan_count = nans;
  return out;
}

void save_series(const std::filesystem::path& path, const RawSeries& series) {
  pmxt::write(path, series.values);
  nlohmann::json j;
  j["dims"] = series.values.shape();
  j["interval_minutes"] = series.interval_minutes;
  j["node_ids"] = series.node_ids;
  std::ofstream out(sidecar_path(path));
  out << j.dump(2) << '\n';
}

std::size_t fill_missing(RawSeries& series, std::size_t max_gap) {
  Tensor& v = series.values;
  const std::size_t steps = v.dim(0), nodes = v.dim(1), chans = v.dim(2);
  std::size_t filled = 0;
  for (std::size_t n = 0; n < nodes; ++n) {
    for (std::size_t c = 0; c < chans; ++c) {
      auto at = [&](std::size_t t) -> double& { return v.at(t, n, c); };
      std::size_t first_valid = steps;
      for (std::size_t t = 0; t < steps; ++t)
        if (!std::isnan(at(t))) {
          first_valid = t;
          break;
        }
      if (first_valid == steps)
        throw DataError("node " + (n < series.node_ids.size() ? series.node_ids[n] : std::to_string(n)) +
                        " has no valid readings");
      for (std::size_t t = 0; t < first_valid; ++t, ++filled) at(t) = at(first_valid);
      std::size_t t = first_valid + 1;
      while (t < steps) {
        if (!std::isnan(at(t))) {
          ++t;
          continue;
        }
        std::size_t end = t;
        while (end < steps && std::isnan(at(end))) ++end;
        const double left = at(t - 1);
        const std::size_t gap = end - t;
        if (end < steps && gap <= max_gap) {
          const double right = at(end);
          for (std::size_t k = t; k < end; ++k) {
            const double w = static_cast<double>(k - t + 1) / static_cast<double>(gap + 1);
            at(k) = left + w * (right - left);
          }
        } else {
          for (std::size_t k = t; k < end; ++k) at(k) = left;
        }
        filled += gap;
        t = end;
      }
    }
  }
  return filled;
}

RawSeries aggregate(const RawSeries& raw, std::size_t factor) {
  if (factor < 1) throw ParameterError("aggregate: factor must be >= 1");
  const std::size_t steps = raw.steps();
  const std::size_t out_steps = steps / factor;
  if (steps % factor != 0)
    std::cerr << "[premixer] aggregate: dropping " << steps % factor << " trailing steps not filling a group of "
              << factor << '\n';
  if (out_steps == 0) throw DataError("aggregate: series shorter than one group");
  const std::size_t inner = raw.nodes() * raw.channels();
  Tensor out({out_steps, raw.nodes(), raw.channels()});
  for (std::size_t g = 0; g < out_steps; ++g) {
    for (std::size_t j = 0; j < inner; ++j) {
      double s = 0.0;
      std::size_t cnt = 0;
      for (std::size_t k = 0; k < factor; ++k) {
        const double x = raw.values[(g * factor + k) * inner + j];
        if (!std::isnan(x)) {
          s += x;
          ++cnt;
        }
      }
      out[g * inner + j] = cnt ? s / static_cast<double>(cnt) : kNaN;
    }
  }
  RawSeries r;
  r.values = std::move(out);
  r.interval_minutes = raw.interval_minutes * static_cast<int>(factor);
  r.node_ids = raw.node_ids;
  return r;
}

Tensor slice_time(const Tensor& series, std::size_t begin, std::size_t end) {
  if (begin >= end || end > series.dim(0))
    throw ShapeError("slice_time: bad range [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     shape_str(series.shape()));
  Shape shape = series.shape();
  shape[0] = end - begin;
  const std::size_t inner = series.size() / series.dim(0);
  std::vector<double> v(series.ptr() + begin * inner, series.ptr() + end * inner);
  return Tensor(std::move(shape), std::move(v));
}

RawSeries slice_steps(const RawSeries& raw, std::size_t begin, std::size_t end) {
  RawSeries r;
  r.values = slice_time(raw.values, begin, end);
  r.interval_minutes = raw.interval_minutes;
  r.node_ids = raw.node_ids;
  return r;
}

Splits split_chronological(const RawSeries& raw, const SplitSpec& spec) {
  const std::size_t total_w = spec.train + spec.val + spec.test;
  if (total_w == 0) throw ConfigError("split: weights must not all be zero");
  const std::size_t steps = raw.steps();
  if (steps < 10) throw ConfigError("split: need at least 10 steps, got " + std::to_string(steps));
  const std::size_t b1 = steps * spec.train / total_w;
  const std::size_t b2 = steps * (spec.train + spec.val) / total_w;
  if (b1 == 0 || b2 == b1 || b2 == steps)
    throw ConfigError("split: empty slice for " + std::to_string(steps) + " steps with weights " +
                      std::to_string(spec.train) + ":" + std::to_string(spec.val) + ":" + std::to_string(spec.test));
  Splits s;
  s.train = slice_steps(raw, 0, b1);
  s.val = slice_steps(raw, b1, b2);
  s.test = slice_steps(raw, b2, steps);
  s.val_begin = b1;
  s.test_begin = b2;
  return s;
}

// ---------------------------------------------------------------------------

Normalizer::Normalizer(std::vector<double> mean, std::vector<double> stddev)
    : mean_(std::move(mean)), std_(std::move(stddev)) {
  if (mean_.size() != std_.size()) throw ConfigError("normalizer: mean/std length mismatch");
  for (std::size_t c = 0; c < std_.size(); ++c)
    if (!(std_[c] > 0.0)) throw ConfigError("normalizer: channel " + std::to_string(c) + " has zero variance");
}

Normalizer Normalizer::fit(const Tensor& train) {
  if (train.empty()) throw ConfigError("normalizer: empty training slice");
  const std::size_t chans = train.cols(), rows = train.rows();
  std::vector<double> mean(chans, 0.0), var(chans, 0.0);
  std::vector<std::size_t> count(chans, 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < chans; ++c) {
      const double x = train[r * chans + c];
      if (std::isnan(x)) continue;
      mean[c] += x;
      ++count[c];
    }
  for (std::size_t c = 0; c < chans; ++c) {
    if (count[c] == 0) throw ConfigError("normalizer: channel " + std::to_string(c) + " has no valid readings");
    mean[c] /= static_cast<double>(count[c]);
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < chans; ++c) {
      const double x = train[r * chans + c];
      if (!std::isnan(x)) var[c] += (x - mean[c]) * (x - mean[c]);
    }
  std::vector<double> sd(chans);
  for (std::size_t c = 0; c < chans; ++c) {
    sd[c] = std::sqrt(var[c] / static_cast<double>(count[c]));
    if (!(sd[c] > 0.0)) throw ConfigError("normalizer: channel " + std::to_string(c) + " has zero variance");
  }
  return Normalizer(std::move(mean), std::move(sd));
}

Tensor Normalizer::normalize(const Tensor& x) const {
  if (x.cols() != mean_.size())
    throw ShapeError("normalize: tensor " + shape_str(x.shape()) + " has wrong channel count");
  Tensor y = x;
  const std::size_t c = mean_.size();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = (y[i] - mean_[i % c]) / std_[i % c];
  return y;
}

Tensor Normalizer::denormalize(const Tensor& x) const {
  if (x.cols() != mean_.size())
    throw ShapeError("denormalize: tensor " + shape_str(x.shape()) + " has wrong channel count");
  Tensor y = x;
  const std::size_t c = mean_.size();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] * std_[i % c] + mean_[i % c];
  return y;
}

// ---------------------------------------------------------------------------

WindowSampler::WindowSampler(const Tensor& series, std::size_t t_short, std::size_t horizon, std::size_t t_long,
                             std::size_t stride)
    : series_(&series), t_short_(t_short), horizon_(horizon), t_long_(t_long) {
  if (t_short == 0 || t_long < t_short)
    throw ConfigError("windows: need 0 < T <= T_long (T=" + std::to_string(t_short) +
                      ", T_long=" + std::to_string(t_long) + ")");
  if (stride == 0) throw ConfigError("windows: stride must be positive");
  const std::size_t len = series.dim(0);
  if (len < t_long + horizon) return;
  for (std::size_t t = t_long; t <= len - horizon; t += stride) order_.push_back(t);
}

WindowSample WindowSampler::at(std::size_t k) const {
  const std::size_t t = order_.at(k);
  WindowSample w;
  w.anchor = t;
  w.x_long = slice_time(*series_, t - t_long_, t);
  w.x_short = slice_time(*series_, t - t_short_, t);
  if (horizon_ > 0) w.y = slice_time(*series_, t, t + horizon_);
  return w;
}

void WindowSampler::shuffle(Rng& rng) { rng.shuffle(order_.begin(), order_.end()); }

void WindowSampler::truncate(std::size_t n) {
  if (n < order_.size()) order_.resize(n);
}

WindowSampler sample_windows(const Tensor& series, std::size_t t_short, std::size_t horizon, std::size_t t_long,
                             std::size_t stride) {
  WindowSampler s(series, t_short, horizon, t_long, stride);
  if (s.empty())
    std::cerr << "[premixer] windows: series of " << series.dim(0) << " steps is shorter than T_long + horizon = "
              << t_long + horizon << "; no windows\n";
  return s;
}

// ---------------------------------------------------------------------------

RawSeries generate_synthetic(const SyntheticSpec& spec) {
  if (spec.nodes < 1 || spec.days < 1) throw ParameterError("synthetic: nodes and days must be >= 1");
  if (spec.steps_per_day < 1) throw ParameterError("synthetic: steps_per_day must be >= 1");
  const std::size_t steps = spec.days * spec.steps_per_day;
  const double day = static_cast<double>(spec.steps_per_day);
  const double week = 7.0 * day;
  constexpr double two_pi = 2.0 * std::numbers::pi;

  Rng coef(spec.seed, 1);
  Rng noise(spec.seed, 2);
  struct Node {
    double base, a, phi, b, psi, sigma;
  };
  std::vector<Node> nodes(spec.nodes);
  for (auto& n : nodes) {
    n.base = coef.uniform(100.0, 500.0);
    n.a = coef.uniform(0.3, 0.6) * n.base;
    n.phi = coef.uniform(0.0, two_pi);
    n.b = coef.uniform(0.05, 0.15) * n.base;
    n.psi = coef.uniform(0.0, two_pi);
    n.sigma = spec.noise * n.base;
  }
  Tensor v({steps, spec.nodes, 1});
  for (std::size_t t = 0; t < steps; ++t) {
    const double tt = static_cast<double>(t);
    const std::size_t weekday = (t / spec.steps_per_day) % 7;
    const double w = weekday >= 5 ? 0.6 : 1.0;
    for (std::size_t i = 0; i < spec.nodes; ++i) {
      const Node& n = nodes[i];
      double x = n.base + n.a * w * std::sin(two_pi * tt / day + n.phi) + n.b * std::sin(two_pi * tt / week + n.psi);
      if (n.sigma > 0.0) x += n.sigma * noise.normal();
      v.at(t, i, 0) = x;
    }
  }
  RawSeries r;
  r.values = std::move(v);
  r.interval_minutes = static_cast<int>(1440 / spec.steps_per_day);
  r.node_ids = default_ids(spec.nodes);
  return r;
}

}  // namespace premixer
