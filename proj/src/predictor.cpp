#include "pipealloc/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pipealloc/errors.hpp"

namespace pipealloc {

namespace {

constexpr std::size_t kMinSamples = 10;

double relative_error(double predicted, double truth) {
  return std::abs(predicted - truth) / std::abs(truth);
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lower + upper);
}

double clamp_share(const PerfModel& model, double share, bool& clamped) {
  if (model.share_levels.empty()) throw InvalidArgument("prediction from an untrained model");
  const double lo = model.min_share(), hi = model.max_share();
  clamped = share < lo || share > hi;
  return std::clamp(share, lo, hi);
}

// Closest trained share level at or below `share` (share already clamped).
double level_below(const PerfModel& model, double share) {
  auto it = std::upper_bound(model.share_levels.begin(), model.share_levels.end(), share);
  return *std::prev(it);
}

double level_above(const PerfModel& model, double share) {
  auto it = std::lower_bound(model.share_levels.begin(), model.share_levels.end(), share);
  return it == model.share_levels.end() ? model.share_levels.back() : *it;
}

// The duration tree holds per-item time; scaling by batch keeps predictions
// proportional between profiled batch sizes instead of stepping.
double scaled_duration(const PerfModel& model, int batch, double share) {
  return batch * model.duration.predict({static_cast<double>(batch), share});
}

double monotone_duration(const PerfModel& model, int batch, double share) {
  double best = scaled_duration(model, batch, share);
  for (int level : model.batch_levels) {
    if (level >= batch) break;
    best = std::max(best, scaled_duration(model, level, share));
  }
  return best;
}

template <class T>
std::vector<T> sorted_unique(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

nlohmann::json line_json(const LinearModel& m) {
  return {{"slope", m.slope}, {"intercept", m.intercept}};
}

LinearModel line_from_json(const nlohmann::json& j) {
  return {j.at("slope").get<double>(), j.at("intercept").get<double>()};
}

nlohmann::json error_json(const TargetError& e) {
  return {{"median_rel_error", e.median},
          {"max_rel_error", e.max},
          {"linear_baseline_median_rel_error", e.baseline_median}};
}

}  // namespace

std::vector<ProfileSample> collect_profile(const MicroserviceSpec& m, const GpuSpec& gpu,
                                           std::span<const int> batches,
                                           std::span<const double> shares) {
  if (batches.empty() || shares.empty()) throw InvalidArgument("profiling grid is empty");
  for (double s : shares) {
    if (!(s > 0.0 && s <= 100.0)) throw InvalidArgument("profiling share outside (0, 100]");
  }
  std::vector<ProfileSample> out;
  out.reserve(batches.size() * shares.size());
  for (int b : batches) {
    for (double s : shares) {
      ProfileSample p;
      p.batch = b;
      p.share = s;
      p.duration_ms = oracle_duration_ms(m, b, s, gpu);
      p.bandwidth_mbps = oracle_bandwidth_mbps(m, b, s, gpu);
      p.throughput_qps = oracle_throughput_qps(m, b, s, gpu);
      p.flops_gflop = oracle_flops_gflop(m, b);
      p.footprint_mb = oracle_footprint_mb(m, b);
      out.push_back(p);
    }
  }
  return out;
}

std::vector<double> default_share_grid() {
  std::vector<double> g;
  for (int s = 10; s <= 100; s += 10) g.push_back(s);
  return g;
}

std::vector<int> batch_range(int first, int last) {
  if (first < 1 || last < first) throw InvalidArgument("bad batch range");
  std::vector<int> v(static_cast<std::size_t>(last - first + 1));
  std::iota(v.begin(), v.end(), first);
  return v;
}

LinearModel fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw InvalidArgument("fit_line: bad input");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LinearModel m;
  m.slope = sxx > 0 ? sxy / sxx : 0.0;
  m.intercept = my - m.slope * mx;
  return m;
}

PlaneModel fit_plane(std::span<const RegressionTree::Features> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw InvalidArgument("fit_plane: bad input");
  // Normal equations on centred data: 2x2 system for the two slopes.
  const double n = static_cast<double>(x.size());
  double m0 = 0, m1 = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    m0 += x[i][0];
    m1 += x[i][1];
    my += y[i];
  }
  m0 /= n;
  m1 /= n;
  my /= n;
  double s00 = 0, s01 = 0, s11 = 0, s0y = 0, s1y = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = x[i][0] - m0, b = x[i][1] - m1, c = y[i] - my;
    s00 += a * a;
    s01 += a * b;
    s11 += b * b;
    s0y += a * c;
    s1y += b * c;
  }
  PlaneModel p;
  const double det = s00 * s11 - s01 * s01;
  if (std::abs(det) > 1e-12 * std::max(1.0, s00 * s11)) {
    p.batch_coeff = (s0y * s11 - s1y * s01) / det;
    p.share_coeff = (s1y * s00 - s0y * s01) / det;
  } else if (s00 > 0) {
    p.batch_coeff = s0y / s00;
  } else if (s11 > 0) {
    p.share_coeff = s1y / s11;
  }
  p.intercept = my - p.batch_coeff * m0 - p.share_coeff * m1;
  return p;
}

TrainResult train(std::span<const ProfileSample> samples, std::uint64_t split_seed, int stage_id,
                  const TrainOptions& options) {
  if (samples.size() < kMinSamples) {
    throw TrainingError("need at least " + std::to_string(kMinSamples) + " samples, got " +
                        std::to_string(samples.size()));
  }
  for (const auto& s : samples) {
    if (!(s.batch >= 1 && s.share > 0 && s.duration_ms > 0 && s.throughput_qps > 0 &&
          s.bandwidth_mbps >= 0)) {
      throw TrainingError("profile sample with non-positive field");
    }
  }

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(split_seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_train = static_cast<std::size_t>(std::llround(options.train_fraction * samples.size()));
  n_train = std::clamp<std::size_t>(n_train, 1, samples.size() - 1);

  std::vector<RegressionTree::Features> x;
  std::vector<double> y_dur, y_bw, y_thr, batch_x, y_flops, y_foot;
  std::vector<double> shares;
  std::vector<int> batches;
  for (std::size_t k = 0; k < n_train; ++k) {
    const auto& s = samples[order[k]];
    x.push_back({static_cast<double>(s.batch), s.share});
    y_dur.push_back(s.duration_ms / s.batch);
    y_bw.push_back(s.bandwidth_mbps);
    y_thr.push_back(s.throughput_qps);
    batch_x.push_back(s.batch);
    y_flops.push_back(s.flops_gflop);
    y_foot.push_back(s.footprint_mb);
    shares.push_back(s.share);
    batches.push_back(s.batch);
  }

  TrainResult result;
  PerfModel& model = result.model;
  model.stage_id = stage_id;
  model.duration = RegressionTree::fit(x, y_dur, options.tree);
  model.bandwidth = RegressionTree::fit(x, y_bw, options.tree);
  model.throughput = RegressionTree::fit(x, y_thr, options.tree);
  model.flops = fit_line(batch_x, y_flops);
  model.footprint = fit_line(batch_x, y_foot);
  model.flops.slope = std::max(0.0, model.flops.slope);
  model.flops.intercept = std::max(0.0, model.flops.intercept);
  model.footprint.slope = std::max(0.0, model.footprint.slope);
  model.footprint.intercept = std::max(0.0, model.footprint.intercept);
  model.share_levels = sorted_unique(shares);
  model.batch_levels = sorted_unique(batches);

  const PlaneModel base_dur = fit_plane(x, y_dur);
  const PlaneModel base_bw = fit_plane(x, y_bw);
  const PlaneModel base_thr = fit_plane(x, y_thr);

  std::vector<double> e_dur, e_bw, e_thr, b_dur, b_bw, b_thr;
  double flops_err = 0, foot_err = 0;
  for (std::size_t k = n_train; k < samples.size(); ++k) {
    const auto& s = samples[order[k]];
    const double b = s.batch;
    e_dur.push_back(relative_error(predict_duration(model, s.batch, s.share).value, s.duration_ms));
    e_thr.push_back(
        relative_error(predict_throughput(model, s.batch, s.share).value, s.throughput_qps));
    b_dur.push_back(relative_error(base_dur(b, s.share), s.duration_ms));
    b_thr.push_back(relative_error(base_thr(b, s.share), s.throughput_qps));
    if (s.bandwidth_mbps > 0) {
      e_bw.push_back(
          relative_error(predict_bandwidth(model, s.batch, s.share).value, s.bandwidth_mbps));
      b_bw.push_back(relative_error(base_bw(b, s.share), s.bandwidth_mbps));
    }
    if (s.flops_gflop > 0) {
      flops_err = std::max(flops_err, relative_error(predict_flops(model, s.batch), s.flops_gflop));
    }
    if (s.footprint_mb > 0) {
      foot_err =
          std::max(foot_err, relative_error(predict_footprint(model, s.batch), s.footprint_mb));
    }
  }

  auto summarize = [](const std::vector<double>& e, const std::vector<double>& base) {
    TargetError t;
    t.median = median_of(e);
    t.max = e.empty() ? 0 : *std::max_element(e.begin(), e.end());
    t.baseline_median = median_of(base);
    return t;
  };
  TrainingReport& report = result.report;
  report.split_seed = split_seed;
  report.train_count = n_train;
  report.test_count = samples.size() - n_train;
  report.duration = summarize(e_dur, b_dur);
  report.bandwidth = summarize(e_bw, b_bw);
  report.throughput = summarize(e_thr, b_thr);
  report.flops_max_error = flops_err;
  report.footprint_max_error = foot_err;
  return result;
}

Prediction predict_duration(const PerfModel& model, int batch, double share) {
  Prediction p;
  const double s = clamp_share(model, share, p.clamped);
  p.value = monotone_duration(model, batch, s);
  return p;
}

Prediction predict_bandwidth(const PerfModel& model, int batch, double share) {
  Prediction p;
  const double s = clamp_share(model, share, p.clamped);
  p.value = model.bandwidth.predict({static_cast<double>(batch), s});
  return p;
}

Prediction predict_throughput(const PerfModel& model, int batch, double share) {
  Prediction p;
  const double s = clamp_share(model, share, p.clamped);
  p.value = model.throughput.predict({static_cast<double>(batch), s});
  return p;
}

double predict_flops(const PerfModel& model, int batch) { return model.flops(batch); }

double predict_footprint(const PerfModel& model, int batch) { return model.footprint(batch); }

StageEstimate plan_estimate(const PerfModel& model, int batch, double share) {
  bool clamped = false;
  const double s = clamp_share(model, share, clamped);
  const double below = level_below(model, s);
  const double above = level_above(model, s);
  StageEstimate e;
  e.duration_ms = monotone_duration(model, batch, below);
  e.throughput_qps = model.throughput.predict({static_cast<double>(batch), below});
  e.bandwidth_mbps = model.bandwidth.predict({static_cast<double>(batch), above});
  return e;
}

nlohmann::json to_json(const PerfModel& model) {
  return {{"stage_id", model.stage_id},
          {"features", {"batch", "share"}},
          {"share_levels", model.share_levels},
          {"batch_levels", model.batch_levels},
          {"duration_ms_per_item", model.duration.to_json()},
          {"bandwidth_mbps", model.bandwidth.to_json()},
          {"throughput_qps", model.throughput.to_json()},
          {"flops_gflop", line_json(model.flops)},
          {"footprint_mb", line_json(model.footprint)}};
}

PerfModel perf_model_from_json(const nlohmann::json& j) {
  PerfModel m;
  m.stage_id = j.at("stage_id").get<int>();
  m.share_levels = j.at("share_levels").get<std::vector<double>>();
  m.batch_levels = j.at("batch_levels").get<std::vector<int>>();
  if (m.share_levels.empty() || m.batch_levels.empty()) {
    throw InvalidArgument("model file has empty training levels");
  }
  m.duration = RegressionTree::from_json(j.at("duration_ms_per_item"));
  m.bandwidth = RegressionTree::from_json(j.at("bandwidth_mbps"));
  m.throughput = RegressionTree::from_json(j.at("throughput_qps"));
  m.flops = line_from_json(j.at("flops_gflop"));
  m.footprint = line_from_json(j.at("footprint_mb"));
  return m;
}

nlohmann::json to_json(const TrainingReport& r) {
  return {{"split_seed", r.split_seed},
          {"train_count", r.train_count},
          {"test_count", r.test_count},
          {"duration", error_json(r.duration)},
          {"bandwidth", error_json(r.bandwidth)},
          {"throughput", error_json(r.throughput)},
          {"flops_max_rel_error", r.flops_max_error},
          {"footprint_max_rel_error", r.footprint_max_error}};
}

}  // namespace pipealloc
