#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "pipealloc/regression_tree.hpp"
#include "pipealloc/workload.hpp"

namespace pipealloc {

// One solo-run measurement. flops and footprint come from the same profiling
// pass and feed the two linear models.
struct ProfileSample {
  int batch = 0;
  double share = 0;
  double duration_ms = 0;
  double bandwidth_mbps = 0;
  double throughput_qps = 0;
  double flops_gflop = 0;
  double footprint_mb = 0;
};

// Throws InvalidArgument on an empty grid or a share outside (0, 100].
std::vector<ProfileSample> collect_profile(const MicroserviceSpec& m, const GpuSpec& gpu,
                                           std::span<const int> batches,
                                           std::span<const double> shares);

// 10%..100% in 10% steps.
std::vector<double> default_share_grid();
std::vector<int> batch_range(int first, int last);

struct LinearModel {
  double slope = 0;
  double intercept = 0;
  double operator()(double x) const { return slope * x + intercept; }
};

// Least-squares line through (x, y).
LinearModel fit_line(std::span<const double> x, std::span<const double> y);

// Plain multiple regression y ~ a + b*batch + c*share; the baseline the
// trees are compared against.
struct PlaneModel {
  double intercept = 0;
  double batch_coeff = 0;
  double share_coeff = 0;
  double operator()(double batch, double share) const {
    return intercept + batch_coeff * batch + share_coeff * share;
  }
};
PlaneModel fit_plane(std::span<const RegressionTree::Features> x, std::span<const double> y);

struct PerfModel {
  int stage_id = 0;
  RegressionTree duration;  // per-item milliseconds; predictions multiply by batch
  RegressionTree bandwidth;
  RegressionTree throughput;
  LinearModel flops;
  LinearModel footprint;
  // Distinct training inputs; predictions clamp share to [front, back] and
  // the duration post-check walks `batch_levels`.
  std::vector<double> share_levels;
  std::vector<int> batch_levels;

  double min_share() const { return share_levels.front(); }
  double max_share() const { return share_levels.back(); }
};

struct TargetError {
  double median = 0;
  double max = 0;
  double baseline_median = 0;  // plain linear fit on the same split
};

struct TrainingReport {
  std::uint64_t split_seed = 0;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
  TargetError duration;
  TargetError bandwidth;
  TargetError throughput;
  double flops_max_error = 0;
  double footprint_max_error = 0;
};

struct TrainResult {
  PerfModel model;
  TrainingReport report;
};

struct TrainOptions {
  RegressionTree::Params tree;
  double train_fraction = 0.7;
};

// Shuffles with `split_seed`, trains on 70%, reports relative error
// |pred - true| / true on the remaining 30%. Throws TrainingError with fewer
// than 10 samples.
TrainResult train(std::span<const ProfileSample> samples, std::uint64_t split_seed,
                  int stage_id = 0, const TrainOptions& options = {});

struct Prediction {
  double value = 0;
  bool clamped = false;  // share was outside the trained range
};

// Duration is made nondecreasing in batch by taking the running maximum of
// the tree over the trained batch levels up to `batch`.
Prediction predict_duration(const PerfModel& model, int batch, double share);
Prediction predict_bandwidth(const PerfModel& model, int batch, double share);
Prediction predict_throughput(const PerfModel& model, int batch, double share);
double predict_flops(const PerfModel& model, int batch);
double predict_footprint(const PerfModel& model, int batch);

// Planning estimate for a share that may fall between profiled levels. Trees
// are flat between levels, so the allocator never credits a share with more
// than the next profiled level below it delivers: duration and throughput are
// read at the closest level <= share, bandwidth at the closest level >= share.
struct StageEstimate {
  double duration_ms = 0;
  double throughput_qps = 0;
  double bandwidth_mbps = 0;
};
StageEstimate plan_estimate(const PerfModel& model, int batch, double share);

nlohmann::json to_json(const PerfModel& model);
PerfModel perf_model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainingReport& report);

}  // namespace pipealloc
