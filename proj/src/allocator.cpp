#include "pipealloc/allocator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "pipealloc/errors.hpp"
#include "pipealloc/placement.hpp"

namespace pipealloc {

namespace {

constexpr double kRelTol = 1e-9;
constexpr int kNumConstraints = 7;

bool within(double used, double limit) { return used <= limit + kRelTol * std::max(1.0, std::abs(limit)); }

struct Checks {
  std::array<ConstraintCheck, kNumConstraints> items;
  int count = 0;
  bool feasible = true;
  double violation = 0;  // sum of relative excesses
  Constraint worst = Constraint::kCompute;
  double worst_excess = -1;

  void add(Constraint kind, double used, double limit, bool ok, bool reverse = false) {
    const double denom = std::max(std::abs(limit), 1e-12);
    add_with_excess(kind, used, limit, ok, reverse ? (limit - used) / denom : (used - limit) / denom);
  }

  void add_with_excess(Constraint kind, double used, double limit, bool ok, double excess) {
    items[count++] = {kind, used, limit, ok};
    if (ok) return;
    feasible = false;
    violation += std::max(excess, 1e-12);
    if (excess > worst_excess) {
      worst_excess = excess;
      worst = kind;
    }
  }
};

// Shared by feasible() and the solvers' inner loops.
void evaluate_checks(const AllocationProblem& problem, std::span<const int> n,
                     std::span<const double> p, int gpu_count,
                     std::optional<double> throughput_floor, Checks& out) {
  const auto& gpus = problem.gpus();
  if (gpu_count < 1 || gpu_count > static_cast<int>(gpus.size())) {
    throw InvalidArgument("allocation uses " + std::to_string(gpu_count) + " GPUs but the cluster has " +
                          std::to_string(gpus.size()));
  }
  const int stages = problem.stage_count();
  if (static_cast<int>(n.size()) != stages || static_cast<int>(p.size()) != stages) {
    throw InvalidArgument("allocation does not match the pipeline's stage count");
  }

  double compute_limit = 0, instance_limit = 0, bw_limit = 0, mem_limit = 0;
  int per_gpu_cap = std::numeric_limits<int>::max();
  for (int g = 0; g < gpu_count; ++g) {
    compute_limit += gpus[g].compute_share_total;
    instance_limit += gpus[g].instance_cap;
    bw_limit += gpus[g].mem_bandwidth_mbps;
    mem_limit += gpus[g].mem_capacity_mb;
    per_gpu_cap = std::min(per_gpu_cap, gpus[g].instance_cap);
  }

  double compute = 0, instances = 0, bw = 0, mem = 0, latency = 0;
  double bottleneck = std::numeric_limits<double>::infinity();
  bool shares_ok = true, counts_ok = true;
  for (int i = 0; i < stages; ++i) {
    shares_ok = shares_ok && p[i] > 0 && p[i] <= 100.0 + kRelTol;
    counts_ok = counts_ok && n[i] >= 1 && n[i] <= per_gpu_cap;
    const double share = std::clamp(p[i], 1e-9, 100.0);
    const StageEstimate e = problem.estimate(i, share);
    compute += n[i] * p[i];
    instances += n[i];
    bw += n[i] * e.bandwidth_mbps;
    mem += n[i] * problem.footprint_mb(i);
    latency += e.duration_ms;
    bottleneck = std::min(bottleneck, n[i] * e.throughput_qps);
  }
  if (problem.options().comm_in_qos) latency += problem.comm_estimate_ms(gpu_count);

  out.add(Constraint::kCompute, compute, compute_limit, shares_ok && within(compute, compute_limit));
  out.add(Constraint::kInstanceCap, instances, instance_limit,
          counts_ok && within(instances, instance_limit));
  out.add(Constraint::kBandwidth, bw, bw_limit,
          !problem.options().enforce_bandwidth || within(bw, bw_limit));
  out.add(Constraint::kMemory, mem, mem_limit, within(mem, mem_limit));
  out.add(Constraint::kQos, latency, problem.pipeline().qos_target_ms,
          within(latency, problem.pipeline().qos_target_ms));
  if (throughput_floor) {
    const double floor = *throughput_floor;
    out.add(Constraint::kThroughputFloor, bottleneck, floor,
            bottleneck >= floor * (1 - kRelTol), /*reverse=*/true);
  }
  // The aggregate rows can hold while no per-GPU packing exists; only asked
  // once everything else passes since it runs the placement heuristic.
  if (gpu_count > 1 && problem.options().check_packing && out.feasible) {
    Allocation a;
    a.instances.assign(n.begin(), n.end());
    a.shares.assign(p.begin(), p.end());
    a.gpu_count = gpu_count;
    bool packed = true;
    try {
      place(a, problem);
    } catch (const PlacementError&) {
      packed = false;
    }
    out.add_with_excess(Constraint::kPacking, packed ? 0 : 1, 0, packed, 1.0);
  }
}

double bottleneck_throughput(const AllocationProblem& problem, std::span<const int> n,
                             std::span<const double> p) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < problem.stage_count(); ++i) {
    best = std::min(best, n[i] * problem.estimate(i, std::clamp(p[i], 1e-9, 100.0)).throughput_qps);
  }
  return best;
}

double usage(std::span<const int> n, std::span<const double> p) {
  double u = 0;
  for (std::size_t i = 0; i < n.size(); ++i) u += n[i] * p[i];
  return u;
}

enum class Goal { kMaxLoad, kMinResource };

struct State {
  std::vector<int> n;
  std::vector<int> k;  // share = k * grid
  bool feasible = false;
  double score = 0;      // maximised
  double violation = 0;  // when infeasible
  Constraint worst = Constraint::kCompute;
};

class Annealer {
 public:
  Annealer(const AllocationProblem& problem, const SaParams& sa, Goal goal, int gpu_count,
           std::optional<double> floor)
      : problem_(problem), sa_(sa), goal_(goal), gpu_count_(gpu_count), floor_(floor) {
    const int stages = problem.stage_count();
    k_min_ = std::max(1, static_cast<int>(std::ceil(problem.min_share() / sa.share_grid - 1e-9)));
    k_max_ = static_cast<int>(std::floor(100.0 / sa.share_grid + 1e-9));
    int cap = std::numeric_limits<int>::max(), total = 0;
    for (int g = 0; g < gpu_count; ++g) {
      cap = std::min(cap, problem.gpus()[g].instance_cap);
      total += problem.gpus()[g].instance_cap;
    }
    n_max_ = std::min(cap, std::max(1, total - (stages - 1)));
    k_step_ = std::max(1, static_cast<int>(std::lround(sa.share_step / sa.share_grid)));
    p_.resize(stages);
  }

  Allocation run() {
    Allocation best;
    bool have_best = false;
    double best_score = 0;
    std::map<Constraint, long> violation_counts;

    SolverTrace trace;
    trace.restarts = sa_.restarts;
    trace.iterations_per_restart = sa_.iterations;

    for (int r = 0; r < sa_.restarts; ++r) {
      std::seed_seq seq{static_cast<std::uint32_t>(sa_.seed), static_cast<std::uint32_t>(sa_.seed >> 32),
                        static_cast<std::uint32_t>(r)};
      std::mt19937_64 rng(seq);
      State cur = random_state(rng);
      evaluate(cur);
      ++trace.evaluations;
      std::optional<State> run_best;
      if (cur.feasible) run_best = cur;

      double temperature = sa_.initial_temperature;
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (int it = 0; it < sa_.iterations; ++it) {
        if (it > 0 && it % SaParams::kItersPerCooling == 0) temperature *= sa_.cooling_rate;
        State cand = neighbour(cur, rng);
        evaluate(cand);
        ++trace.evaluations;
        if (!cand.feasible) ++violation_counts[cand.worst];

        bool accept = false;
        if (cand.feasible && !cur.feasible) {
          accept = true;
        } else if (cand.feasible && cur.feasible) {
          const double delta = relative_delta(cand.score, cur.score);
          accept = delta >= 0 || unit(rng) < std::exp(delta / std::max(temperature, 1e-300));
        } else if (!cand.feasible && !cur.feasible) {
          // Repair phase: walk towards feasibility.
          const double delta = (cur.violation - cand.violation) / std::max(cur.violation, 1e-12);
          accept = delta >= 0 || unit(rng) < std::exp(delta / std::max(temperature, 1e-300));
        }
        if (!accept) continue;
        cur = std::move(cand);
        if (cur.feasible && (!run_best || cur.score > run_best->score)) run_best = cur;
      }

      if (run_best) {
        ++trace.feasible_restarts;
        if (!have_best || run_best->score > best_score) {
          have_best = true;
          best_score = run_best->score;
          best.instances = run_best->n;
          best.shares = shares_of(*run_best);
          trace.best_restart = r;
        }
      }
      if (have_best) trace.best_so_far.push_back(objective_of(best_score));
    }

    if (!have_best) {
      Constraint dominant = Constraint::kCompute;
      long most = -1;
      for (const auto& [c, count] : violation_counts) {
        if (count > most) {
          most = count;
          dominant = c;
        }
      }
      throw InfeasibleError(std::string("no feasible allocation found; dominant violation: ") +
                                to_string(dominant),
                            to_string(dominant));
    }
    best.gpu_count = gpu_count_;
    best.objective = objective_of(best_score);
    best.trace = std::move(trace);
    return best;
  }

 private:
  double objective_of(double score) const { return goal_ == Goal::kMaxLoad ? score : -score; }

  static double relative_delta(double next, double prev) {
    const double scale = std::max({std::abs(prev), std::abs(next), 1e-12});
    return (next - prev) / scale;
  }

  std::vector<double> shares_of(const State& s) const {
    std::vector<double> out(s.k.size());
    for (std::size_t i = 0; i < s.k.size(); ++i) out[i] = s.k[i] * sa_.share_grid;
    return out;
  }

  State random_state(std::mt19937_64& rng) const {
    const int stages = problem_.stage_count();
    State s;
    s.n.resize(stages);
    s.k.resize(stages);
    std::uniform_int_distribution<int> n_dist(1, std::min(n_max_, 4));
    std::uniform_int_distribution<int> k_dist(k_min_, k_max_);
    for (int i = 0; i < stages; ++i) {
      s.n[i] = n_dist(rng);
      s.k[i] = k_dist(rng);
    }
    return s;
  }

  State neighbour(const State& cur, std::mt19937_64& rng) const {
    const int stages = problem_.stage_count();
    State next{cur.n, cur.k};
    std::uniform_int_distribution<int> coord(0, 2 * stages - 1);
    std::uniform_int_distribution<int> sign(0, 1);
    std::uniform_int_distribution<int> k_delta(1, k_step_);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const double move = unit(rng);
    if (move < 0.25) {
      // Split or merge instances of one stage, keeping N_i * p_i about constant.
      std::uniform_int_distribution<int> stage(0, stages - 1);
      const int i = stage(rng);
      const int dir = sign(rng) ? 1 : -1;
      const int n = std::clamp(next.n[i] + dir, 1, n_max_);
      const double total = static_cast<double>(next.n[i]) * next.k[i];
      next.n[i] = n;
      next.k[i] = std::clamp(static_cast<int>(std::lround(total / n)), k_min_, k_max_);
      return next;
    }
    if (stages > 1 && move < 0.5) {
      // Move share between two stages.
      std::uniform_int_distribution<int> stage(0, stages - 1);
      const int from = stage(rng);
      int to = stage(rng);
      if (to == from) to = (from + 1) % stages;
      const int d = k_delta(rng);
      next.k[from] = std::clamp(next.k[from] - d, k_min_, k_max_);
      next.k[to] = std::clamp(next.k[to] + d, k_min_, k_max_);
      return next;
    }
    const int c = coord(rng);
    const int dir = sign(rng) ? 1 : -1;
    if (c < stages) {
      next.n[c] = std::clamp(next.n[c] + dir * sa_.instance_step, 1, n_max_);
    } else {
      const int i = c - stages;
      next.k[i] = std::clamp(next.k[i] + dir * k_delta(rng), k_min_, k_max_);
    }
    return next;
  }

  void evaluate(State& s) {
    for (std::size_t i = 0; i < s.k.size(); ++i) p_[i] = s.k[i] * sa_.share_grid;
    Checks checks;
    evaluate_checks(problem_, s.n, p_, gpu_count_, floor_, checks);
    s.feasible = checks.feasible;
    s.violation = checks.violation;
    s.worst = checks.worst;
    s.score = goal_ == Goal::kMaxLoad ? bottleneck_throughput(problem_, s.n, p_) : -usage(s.n, p_);
  }

  const AllocationProblem& problem_;
  SaParams sa_;
  Goal goal_;
  int gpu_count_;
  std::optional<double> floor_;
  int k_min_ = 1, k_max_ = 100, k_step_ = 1, n_max_ = 1;
  std::vector<double> p_;
};

nlohmann::json trace_json(const SolverTrace& t) {
  return {{"restarts", t.restarts},
          {"iterations_per_restart", t.iterations_per_restart},
          {"feasible_restarts", t.feasible_restarts},
          {"best_restart", t.best_restart},
          {"evaluations", t.evaluations},
          {"final_best", t.best_so_far.empty() ? nlohmann::json(nullptr)
                                               : nlohmann::json(t.best_so_far.back())}};
}

}  // namespace

const char* to_string(Constraint c) {
  switch (c) {
    case Constraint::kCompute: return "compute";
    case Constraint::kInstanceCap: return "instance-cap";
    case Constraint::kBandwidth: return "bandwidth";
    case Constraint::kMemory: return "memory";
    case Constraint::kQos: return "qos";
    case Constraint::kThroughputFloor: return "throughput-floor";
    case Constraint::kPacking: return "packing";
  }
  return "unknown";
}

bool FeasibilityReport::violates(Constraint c) const {
  return std::find(violations.begin(), violations.end(), c) != violations.end();
}

double Allocation::resource_usage() const { return usage(instances, shares); }

int Allocation::total_instances() const {
  int total = 0;
  for (int n : instances) total += n;
  return total;
}

void SaParams::validate() const {
  if (iterations < 1) throw InvalidArgument("SA iterations must be >= 1");
  if (restarts < 1) throw InvalidArgument("SA restarts must be >= 1");
  if (!(cooling_rate > 0 && cooling_rate < 1)) throw InvalidArgument("cooling_rate must be in (0, 1)");
  if (!(initial_temperature > 0)) throw InvalidArgument("initial_temperature must be positive");
  if (!(share_grid > 0 && share_grid <= 100)) throw InvalidArgument("share_grid must be in (0, 100]");
  if (!(share_step >= share_grid)) throw InvalidArgument("share_step must be >= share_grid");
  if (instance_step < 1) throw InvalidArgument("instance_step must be >= 1");
}

AllocationProblem::AllocationProblem(PipelineSpec pipeline, std::vector<GpuSpec> gpus,
                                     std::vector<PerfModel> models, int batch,
                                     AllocatorOptions options)
    : pipeline_(std::move(pipeline)),
      gpus_(std::move(gpus)),
      models_(std::move(models)),
      batch_(batch),
      options_(options) {
  pipeline_.validate_against(gpus_);
  if (batch_ < 1) throw InvalidArgument("batch must be >= 1");
  if (models_.size() != pipeline_.stages.size()) {
    throw InvalidArgument("need one trained model per stage");
  }
  if (!(options_.target_utilization > 0 && options_.target_utilization <= 1)) {
    throw InvalidArgument("target_utilization must be in (0, 1]");
  }
  min_share_ = 1;
  for (const auto& m : models_) {
    if (m.share_levels.empty()) throw InvalidArgument("model is untrained");
    min_share_ = std::max(min_share_, m.min_share());
  }
  footprint_.resize(models_.size());
  table_.assign(models_.size(), std::vector<StageEstimate>(101));
  for (std::size_t i = 0; i < models_.size(); ++i) {
    footprint_[i] = predict_footprint(models_[i], batch_);
    for (int s = 1; s <= 100; ++s) table_[i][s] = plan_estimate(models_[i], batch_, s);
  }
}

StageEstimate AllocationProblem::estimate(int stage, double share) const {
  const double rounded = std::round(share);
  if (std::abs(share - rounded) < 1e-9 && rounded >= 1 && rounded <= 100) {
    return table_[stage][static_cast<int>(rounded)];
  }
  return plan_estimate(models_[stage], batch_, share);
}

double AllocationProblem::comm_estimate_ms(int gpu_count) const {
  double total = 0;
  for (std::size_t i = 0; i + 1 < pipeline_.stages.size(); ++i) {
    const auto& stage = pipeline_.stages[i];
    if (gpu_count == 1) {
      total += comm_time_global_memory(options_.comm, gpus_.front());
    } else {
      total += comm_time_main_memory(options_.comm, stage.payload_out_mb * batch_, 1, gpus_.front(),
                                     stage.pinned_output);
    }
  }
  return total;
}

AllocationProblem AllocationProblem::with_options(AllocatorOptions options) const {
  return AllocationProblem(pipeline_, gpus_, models_, batch_, options);
}

double predicted_throughput(const Allocation& a, const AllocationProblem& problem) {
  return bottleneck_throughput(problem, a.instances, a.shares);
}

FeasibilityReport feasible(const Allocation& a, const AllocationProblem& problem,
                           std::optional<double> throughput_floor) {
  Checks checks;
  evaluate_checks(problem, a.instances, a.shares, a.gpu_count, throughput_floor, checks);
  FeasibilityReport report;
  report.feasible = checks.feasible;
  report.checks.assign(checks.items.begin(), checks.items.begin() + checks.count);
  for (const auto& c : report.checks) {
    if (!c.ok) report.violations.push_back(c.kind);
  }
  return report;
}

Allocation solve_max_load(const AllocationProblem& problem, const SaParams& sa) {
  sa.validate();
  Annealer annealer(problem, sa, Goal::kMaxLoad, static_cast<int>(problem.gpus().size()),
                    std::nullopt);
  return annealer.run();
}

int min_gpu_count(const PipelineSpec& pipeline, const std::vector<PerfModel>& models, int batch,
                  const GpuSpec& gpu) {
  if (!(gpu.gflops > 0 && gpu.mem_capacity_mb > 0)) throw InvalidArgument("GPU needs positive G and F");
  if (models.size() != pipeline.stages.size()) throw InvalidArgument("need one model per stage");
  double flops = 0, footprint = 0;
  for (const auto& m : models) {
    flops += predict_flops(m, batch);
    footprint += predict_footprint(m, batch);
  }
  const double compute_budget = gpu.gflops * pipeline.qos_target_ms / 1000.0;
  // The relative nudge keeps exact multiples (2.0 * F) from rounding up.
  auto ceil_ratio = [](double num, double den) {
    return static_cast<int>(std::ceil(num / den * (1 - 1e-12)));
  };
  return std::max({1, ceil_ratio(flops, compute_budget), ceil_ratio(footprint, gpu.mem_capacity_mb)});
}

Allocation solve_min_resource(const AllocationProblem& problem, double offered_load_qps,
                              const SaParams& sa) {
  sa.validate();
  if (!(offered_load_qps >= 0)) throw InvalidArgument("offered load must be >= 0");
  const int y = min_gpu_count(problem.pipeline(), problem.models(), problem.batch(),
                              problem.gpus().front());
  const double floor = offered_load_qps / problem.options().target_utilization;
  const int available = static_cast<int>(problem.gpus().size());
  if (y > available) {
    throw InfeasibleError("minimum GPU count " + std::to_string(y) + " exceeds the cluster size " +
                              std::to_string(available),
                          to_string(Constraint::kMemory));
  }
  try {
    Annealer annealer(problem, sa, Goal::kMinResource, y, floor);
    return annealer.run();
  } catch (const InfeasibleError& first) {
    if (y + 1 > available) throw;
    Annealer retry(problem, sa, Goal::kMinResource, y + 1, floor);
    return retry.run();
  }
}

Allocation brute_force_max_load(const AllocationProblem& problem, double share_step,
                                int max_instances) {
  if (!(share_step > 0 && share_step <= 100)) throw InvalidArgument("share_step must be in (0, 100]");
  if (max_instances < 1) throw InvalidArgument("max_instances must be >= 1");
  const int stages = problem.stage_count();
  std::vector<double> share_values;
  for (int k = 1; k * share_step <= 100.0 + 1e-9; ++k) {
    if (k * share_step >= problem.min_share() - 1e-9) share_values.push_back(k * share_step);
  }
  if (share_values.empty()) throw InvalidArgument("share grid lies below the trained share range");
  const double per_stage = static_cast<double>(share_values.size()) * max_instances;
  const double space = std::pow(per_stage, stages);
  if (space > 1e7) {
    throw InvalidArgument("brute-force space of " + std::to_string(space) + " points exceeds 1e7");
  }

  const int gpu_count = static_cast<int>(problem.gpus().size());
  std::vector<int> n(stages, 1), idx(stages, 0);
  std::vector<double> p(stages, share_values[0]);
  bool found = false;
  double best = 0;
  Allocation out;
  std::map<Constraint, long> violation_counts;
  const int radix = static_cast<int>(share_values.size()) * max_instances;
  std::vector<int> digit(stages, 0);
  while (true) {
    for (int i = 0; i < stages; ++i) {
      n[i] = 1 + digit[i] / static_cast<int>(share_values.size());
      p[i] = share_values[digit[i] % share_values.size()];
    }
    Checks checks;
    evaluate_checks(problem, n, p, gpu_count, std::nullopt, checks);
    if (checks.feasible) {
      const double value = bottleneck_throughput(problem, n, p);
      if (!found || value > best) {
        found = true;
        best = value;
        out.instances = n;
        out.shares = p;
      }
    } else {
      ++violation_counts[checks.worst];
    }
    int pos = stages - 1;
    while (pos >= 0 && ++digit[pos] == radix) digit[pos--] = 0;
    if (pos < 0) break;
  }
  if (!found) {
    Constraint dominant = Constraint::kCompute;
    long most = -1;
    for (const auto& [c, count] : violation_counts) {
      if (count > most) {
        most = count;
        dominant = c;
      }
    }
    throw InfeasibleError(std::string("no feasible allocation on the grid; dominant violation: ") +
                              to_string(dominant),
                          to_string(dominant));
  }
  out.gpu_count = gpu_count;
  out.objective = best;
  return out;
}

Allocation even_allocation_baseline(const PipelineSpec& pipeline, const std::vector<GpuSpec>& gpus) {
  if (gpus.empty() || pipeline.stages.empty()) throw InvalidArgument("empty pipeline or cluster");
  const int stages = static_cast<int>(pipeline.stages.size());
  const int gpu_count = static_cast<int>(gpus.size());
  Allocation a;
  a.gpu_count = gpu_count;
  a.instances.assign(stages, 1);
  a.shares.assign(stages, std::min(100.0, 100.0 * gpu_count / stages));
  return a;
}

Allocation even_allocation_baseline(const AllocationProblem& problem) {
  Allocation a = even_allocation_baseline(problem.pipeline(), problem.gpus());
  a.objective = predicted_throughput(a, problem);
  return a;
}

nlohmann::json to_json(const Allocation& a, const AllocationProblem& problem,
                       std::optional<double> throughput_floor) {
  nlohmann::json stages = nlohmann::json::array();
  for (std::size_t i = 0; i < a.instances.size(); ++i) {
    const StageEstimate e = problem.estimate(static_cast<int>(i), a.shares[i]);
    stages.push_back({{"stage", problem.pipeline().stages[i].name},
                      {"instances", a.instances[i]},
                      {"share", a.shares[i]},
                      {"predicted_duration_ms", e.duration_ms},
                      {"predicted_throughput_qps", e.throughput_qps},
                      {"predicted_bandwidth_mbps", e.bandwidth_mbps}});
  }
  const FeasibilityReport report = feasible(a, problem, throughput_floor);
  nlohmann::json constraints = nlohmann::json::array();
  for (const auto& c : report.checks) {
    constraints.push_back({{"constraint", to_string(c.kind)},
                           {"used", c.used},
                           {"limit", c.limit},
                           {"slack", c.slack()},
                           {"ok", c.ok}});
  }
  return {{"gpu_count", a.gpu_count},
          {"objective", a.objective},
          {"resource_usage", a.resource_usage()},
          {"stages", stages},
          {"feasible", report.feasible},
          {"constraints", constraints},
          {"solver", trace_json(a.trace)}};
}

}  // namespace pipealloc
