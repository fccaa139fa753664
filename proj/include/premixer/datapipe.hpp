#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "premixer/rng.hpp"
#include "premixer/tensor.hpp"

namespace premixer {

/// Sensor readings [T_total × N × C]. Missing readings are NaN until
/// fill_missing runs; everything downstream of loading expects them resolved.
struct RawSeries {
  Tensor values;
  int interval_minutes = 5;
  std::vector<std::string> node_ids;

  std::size_t steps() const { return values.dim(0); }
  std::size_t nodes() const { return values.dim(1); }
  std::size_t channels() const { return values.dim(2); }
};

std::size_t count_nan(const Tensor& t);

/// Loads a `.pmxt` tensor (with optional `<file>.json` sidecar holding
/// interval and node ids) or a long-format `timestamp,node_id,value` CSV.
RawSeries load_series(const std::filesystem::path& path, std::size_t* nan_count = nullptr);
void save_series(const std::filesystem::path& path, const RawSeries& series);

/// Per node and channel: gaps of up to `max_gap` steps between valid
/// readings are linearly interpolated, longer gaps carry the last reading
/// forward and leading gaps take the first valid reading. Returns the number
/// of values filled. A node/channel with no valid reading is a DataError.
std::size_t fill_missing(RawSeries& series, std::size_t max_gap = 3);

/// Mean over consecutive groups of `factor` steps; NaNs are skipped inside a
/// group and an all-NaN group stays NaN. A trailing partial group is dropped.
RawSeries aggregate(const RawSeries& raw, std::size_t factor);

/// Integer weights of the chronological train/val/test partition.
struct SplitSpec {
  std::size_t train = 6;
  std::size_t val = 2;
  std::size_t test = 2;
};

struct Splits {
  RawSeries train;
  RawSeries val;
  RawSeries test;
  std::size_t val_begin = 0;
  std::size_t test_begin = 0;
};

/// Boundaries are floor(T·w_train/Σw) and floor(T·(w_train+w_val)/Σw).
Splits split_chronological(const RawSeries& raw, const SplitSpec& spec);

RawSeries slice_steps(const RawSeries& raw, std::size_t begin, std::size_t end);
Tensor slice_time(const Tensor& series, std::size_t begin, std::size_t end);

/// Per-channel z-score (channel = last axis), statistics pooled over every
/// time step and node of the fitting slice. NaNs are ignored.
class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(std::vector<double> mean, std::vector<double> stddev);

  static Normalizer fit(const Tensor& train);

  Tensor normalize(const Tensor& x) const;
  Tensor denormalize(const Tensor& x) const;

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }
  std::size_t channels() const { return mean_.size(); }

 private:
  std::vector<double> mean_;
  std::vector<double> std_;
};

struct WindowSample {
  Tensor x_short;  // [T × N × C], steps [anchor - T, anchor)
  Tensor y;        // [horizon × N × C], steps [anchor, anchor + horizon)
  Tensor x_long;   // [T_long × N × C], steps [anchor - T_long, anchor)
  std::size_t anchor = 0;
};

/// Deterministic window index over one series. Anchors run over
/// [T_long, len - horizon] with the given stride in ascending order until
/// shuffle() applies a seeded permutation. The series must outlive the
/// sampler.
class WindowSampler {
 public:
  WindowSampler(const Tensor& series, std::size_t t_short, std::size_t horizon, std::size_t t_long,
                std::size_t stride = 1);

  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }
  /// Anchors in current iteration order.
  const std::vector<std::size_t>& anchors() const { return order_; }
  WindowSample at(std::size_t k) const;
  void shuffle(Rng& rng);
  /// Keeps the first `n` anchors of the current order.
  void truncate(std::size_t n);

  std::size_t t_short() const { return t_short_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t t_long() const { return t_long_; }

 private:
  const Tensor* series_;
  std::size_t t_short_, horizon_, t_long_;
  std::vector<std::size_t> order_;
};

/// Series too short for a single window yields an empty sampler and a
/// warning on stderr.
WindowSampler sample_windows(const Tensor& series, std::size_t t_short, std::size_t horizon, std::size_t t_long,
                             std::size_t stride = 1);

struct SyntheticSpec {
  std::size_t nodes = 50;
  std::size_t days = 28;
  std::uint64_t seed = 7;
  std::size_t steps_per_day = 96;
  double noise = 0.02;  // noise σ as a fraction of each node's base flow
};

/// Per node n: base + a·w(t)·sin(2πt/day + φ) + b·sin(2πt/week + ψ) + σ·ε, with
/// w(t) = 0.6 on the last two days of each week and 1 otherwise.
RawSeries generate_synthetic(const SyntheticSpec& spec);

}  // namespace premixer
