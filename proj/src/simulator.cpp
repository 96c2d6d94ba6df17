#include "pipealloc/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <sstream>

#include "pipealloc/errors.hpp"

namespace pipealloc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSlackEps = 1e-7;  // ms

enum class EventType { kArrival, kFlush, kServiceStart, kServiceDone };

struct Event {
  double t;
  std::uint64_t seq;
  EventType type;
  int target;  // stage for kFlush, instance otherwise
};

struct EventLater {
  bool operator()(const Event& a, const Event& b) const {
    if (a.t != b.t) return a.t > b.t;
    return a.seq > b.seq;
  }
};

struct Query {
  double arrival = 0;
  double enqueued = 0;
  double completion = -1;
  int src_gpu = -1;
};

struct Instance {
  int stage = 0;
  int gpu = 0;
  double share = 0;
  bool busy = false;
  bool in_service = false;
  double dispatched = 0;
  double service_start = 0;
  double demand_mbps = 0;
  std::vector<int> batch;
};

class Engine {
 public:
  Engine(const SimulationInput& in, const WorkloadTrace& trace, const SimOptions& opt)
      : in_(in), trace_(trace), opt_(opt), rng_(trace.seed) {
    stages_ = static_cast<int>(in.pipeline.stages.size());
    batch_ = in.pipeline.batch_size;
    for (const auto& p : in.plan.instances) {
      if (p.stage < 0 || p.stage >= stages_) throw InvalidArgument("placed instance has an unknown stage");
      if (p.gpu < 0 || p.gpu >= static_cast<int>(in.gpus.size())) {
        throw InvalidArgument("placed instance has an unknown GPU");
      }
      Instance inst;
      inst.stage = p.stage;
      inst.gpu = p.gpu;
      inst.share = p.share;
      instances_.push_back(inst);
    }
    by_stage_.assign(stages_, {});
    for (int i = 0; i < static_cast<int>(instances_.size()); ++i) by_stage_[instances_[i].stage].push_back(i);
    for (int k = 0; k < stages_; ++k) {
      if (by_stage_[k].empty()) throw InvalidArgument("stage " + in.pipeline.stages[k].name + " has no instance");
    }
    queues_.assign(stages_, {});
    rr_.assign(stages_, 0);
    pending_flush_.assign(stages_, kInf);
    transfers_.assign(in.gpus.size(), {});
    resident_demand_.assign(in.gpus.size(), 0.0);
    for (const auto& inst : instances_) {
      resident_demand_[inst.gpu] +=
          oracle_bandwidth_mbps(in.pipeline.stages[inst.stage], batch_, inst.share, in.gpus[inst.gpu]);
    }
    build_slack_budget();
    horizon_ms_ = trace.duration_s * 1000.0;
    end_ms_ = horizon_ms_ + std::max(opt.drain_s * 1000.0, 20.0 * in.pipeline.qos_target_ms);
  }

  SimulationResult run() {
    if (trace_.max_queries > 0) push(first_arrival(), EventType::kArrival, 0);
    double now = 0;
    while (!events_.empty()) {
      const Event ev = events_.top();
      if (ev.t > end_ms_) break;
      events_.pop();
      if (ev.t < now) result_.clock_monotone = false;
      now = ev.t;
      ++result_.events;
      switch (ev.type) {
        case EventType::kArrival: on_arrival(now); break;
        case EventType::kFlush:
          if (now >= pending_flush_[ev.target]) pending_flush_[ev.target] = kInf;
          dispatch(ev.target, now);
          break;
        case EventType::kServiceStart: on_service_start(ev.target, now); break;
        case EventType::kServiceDone: on_service_done(ev.target, now); break;
      }
    }
    return summarize();
  }

 private:
  double stage_estimate_ms(int k) const {
    const auto& inst = instances_[by_stage_[k].front()];
    if (!in_.models.empty()) return plan_estimate(in_.models[k], batch_, inst.share).duration_ms;
    return oracle_duration_ms(in_.pipeline.stages[k], batch_, inst.share, in_.gpus[inst.gpu]);
  }

  // Remaining-time estimate from the moment a query waits at stage k.
  void build_slack_budget() {
    std::vector<bool> hop_is_main(stages_, false);
    for (const auto& hop : effective_comm_paths(in_.plan, in_.pipeline)) {
      hop_is_main[hop.producer_stage + 1] = hop.has_main || !opt_.global_memory_comm;
    }
    remaining_ms_.assign(stages_ + 1, 0.0);
    for (int k = stages_ - 1; k >= 0; --k) {
      double hop = 0;
      if (k > 0) {
        const auto& prev = in_.pipeline.stages[k - 1];
        const GpuSpec& gpu = in_.gpus[instances_[by_stage_[k].front()].gpu];
        hop = hop_is_main[k] ? comm_time_main_memory(in_.comm, batch_ * prev.payload_out_mb, 1, gpu,
                                                     prev.pinned_output)
                             : comm_time_global_memory(in_.comm, gpu);
      }
      remaining_ms_[k] = remaining_ms_[k + 1] + stage_estimate_ms(k) + hop;
    }
    deadline_ms_ = in_.pipeline.qos_target_ms * (1.0 - opt_.flush_guard_fraction);
  }

  void push(double t, EventType type, int target) {
    if (!std::isfinite(t)) throw SimulationError("non-finite event time");
    events_.push({t, seq_++, type, target});
  }

  double interarrival_ms() {
    if (trace_.process == ArrivalProcess::kFixedInterval) return 1000.0 / trace_.rate_qps;
    std::exponential_distribution<double> exp(trace_.rate_qps / 1000.0);
    return exp(rng_);
  }

  double first_arrival() { return trace_.process == ArrivalProcess::kFixedInterval ? 0.0 : interarrival_ms(); }

  void on_arrival(double now) {
    if (now >= horizon_ms_) return;
    const int id = static_cast<int>(queries_.size());
    queries_.push_back({now, now, -1, -1});
    stage_times_.emplace_back(stages_);
    queues_[0].push_back(id);
    dispatch(0, now);
    if (static_cast<std::int64_t>(queries_.size()) < trace_.max_queries) {
      const double next = now + interarrival_ms();
      if (next < horizon_ms_) push(next, EventType::kArrival, 0);
    }
  }

  int pick_instance(int k, int preferred_gpu) {
    const auto& ids = by_stage_[k];
    if (preferred_gpu >= 0) {
      for (int id : ids) {
        if (!instances_[id].busy && instances_[id].gpu == preferred_gpu) return id;
      }
    }
    const int n = static_cast<int>(ids.size());
    for (int step = 0; step < n; ++step) {
      const int pos = (rr_[k] + step) % n;
      if (!instances_[ids[pos]].busy) {
        rr_[k] = (pos + 1) % n;
        return ids[pos];
      }
    }
    return -1;
  }

  void dispatch(int k, double now) {
    auto& q = queues_[k];
    while (!q.empty()) {
      const Query& head = queries_[q.front()];
      const bool full = static_cast<int>(q.size()) >= batch_;
      const double slack = deadline_ms_ - (now - head.arrival) - remaining_ms_[k];
      if (!full && slack > kSlackEps) {
        const double due = now + slack;
        if (due < pending_flush_[k]) {
          pending_flush_[k] = due;
          push(due, EventType::kFlush, k);
        }
        return;
      }
      const int id = pick_instance(k, head.src_gpu);
      if (id < 0) return;
      Instance& inst = instances_[id];
      inst.busy = true;
      inst.dispatched = now;
      inst.batch.clear();
      const int take = std::min<int>(batch_, static_cast<int>(q.size()));
      for (int n = 0; n < take; ++n) {
        const int qid = q.front();
        q.pop_front();
        stage_times_[qid][k].queue_ms = now - queries_[qid].enqueued;
        inst.batch.push_back(qid);
      }
      const double comm = k == 0 ? 0.0 : comm_phase_ms(k, inst, now);
      push(now + comm, EventType::kServiceStart, id);
    }
  }

  int live_transfers(int gpu, double now) {
    auto& t = transfers_[gpu];
    t.erase(std::remove_if(t.begin(), t.end(), [now](double end) { return end <= now; }), t.end());
    return static_cast<int>(t.size());
  }

  // The consumer starts once every query of the batch has arrived; queries
  // from different source GPUs move concurrently.
  double comm_phase_ms(int k, const Instance& inst, double now) {
    const MicroserviceSpec& prev = in_.pipeline.stages[k - 1];
    const GpuSpec& dst = in_.gpus[inst.gpu];
    std::vector<int> count(in_.gpus.size(), 0);
    for (int qid : inst.batch) count[queries_[qid].src_gpu]++;
    double phase = 0;
    for (int g = 0; g < static_cast<int>(count.size()); ++g) {
      if (count[g] == 0) continue;
      double t;
      if (g == inst.gpu && opt_.global_memory_comm) {
        t = comm_time_global_memory(in_.comm, dst);
      } else {
        const int streams = 1 + std::max(live_transfers(g, now), live_transfers(inst.gpu, now));
        t = comm_time_main_memory(in_.comm, count[g] * prev.payload_out_mb, streams, dst, prev.pinned_output);
        transfers_[g].push_back(now + t);
        if (g != inst.gpu) transfers_[inst.gpu].push_back(now + t);
      }
      phase = std::max(phase, t);
    }
    return phase;
  }

  void on_service_start(int id, double now) {
    Instance& inst = instances_[id];
    const MicroserviceSpec& m = in_.pipeline.stages[inst.stage];
    const GpuSpec& gpu = in_.gpus[inst.gpu];
    const int n = static_cast<int>(inst.batch.size());
    inst.demand_mbps = oracle_bandwidth_mbps(m, n, inst.share, gpu);
    std::vector<double> demands;
    if (opt_.contention == ContentionPolicy::kResidentDemand) {
      demands.push_back(resident_demand_[inst.gpu]);
    } else {
      demands.push_back(inst.demand_mbps);
      for (const auto& other : instances_) {
        if (other.in_service && other.gpu == inst.gpu) demands.push_back(other.demand_mbps);
      }
    }
    const double mult = contention_multiplier(demands, gpu.mem_bandwidth_mbps);
    result_.max_contention = std::max(result_.max_contention, mult);
    const double service = oracle_duration_ms(m, n, inst.share, gpu) * mult;
    for (int qid : inst.batch) stage_times_[qid][inst.stage].comm_ms = now - inst.dispatched;
    inst.in_service = true;
    inst.service_start = now;
    push(now + service, EventType::kServiceDone, id);
  }

  void on_service_done(int id, double now) {
    Instance& inst = instances_[id];
    const int k = inst.stage;
    for (int qid : inst.batch) {
      stage_times_[qid][k].service_ms = now - inst.service_start;
      Query& q = queries_[qid];
      if (k + 1 == stages_) {
        q.completion = now;
      } else {
        q.src_gpu = inst.gpu;
        q.enqueued = now;
        queues_[k + 1].push_back(qid);
      }
    }
    inst.batch.clear();
    inst.busy = false;
    inst.in_service = false;
    inst.demand_mbps = 0;
    dispatch(k, now);
    if (k + 1 < stages_) dispatch(k + 1, now);
  }

  SimulationResult summarize() {
    SimulationResult& r = result_;
    r.arrived = static_cast<std::int64_t>(queries_.size());
    for (const auto& q : queries_) r.completed += q.completion >= 0 ? 1 : 0;
    r.in_flight = r.arrived - r.completed;
    const auto first = static_cast<std::size_t>(std::floor(opt_.warmup_fraction * r.arrived));
    std::vector<double> lat;
    r.stage_means.assign(stages_, {});
    double sum = 0;
    std::int64_t done = 0;
    for (std::size_t i = first; i < queries_.size(); ++i) {
      const Query& q = queries_[i];
      if (q.completion < 0) {
        lat.push_back(kInf);
        continue;
      }
      const double l = q.completion - q.arrival;
      lat.push_back(l);
      sum += l;
      ++done;
      for (int k = 0; k < stages_; ++k) {
        r.stage_means[k].queue_ms += stage_times_[i][k].queue_ms;
        r.stage_means[k].comm_ms += stage_times_[i][k].comm_ms;
        r.stage_means[k].service_ms += stage_times_[i][k].service_ms;
      }
    }
    r.measured = static_cast<std::int64_t>(lat.size());
    if (done > 0) {
      r.mean_latency_ms = sum / done;
      for (auto& s : r.stage_means) {
        s.queue_ms /= done;
        s.comm_ms /= done;
        s.service_ms /= done;
      }
    }
    if (!lat.empty()) {
      const auto rank = static_cast<std::size_t>(std::ceil(0.99 * lat.size())) - 1;
      std::nth_element(lat.begin(), lat.begin() + rank, lat.end());
      r.p99_latency_ms = lat[rank];
      const double span = queries_.back().arrival - queries_[first].arrival;
      if (span > 0) r.achieved_qps = done / (span / 1000.0);
    }
    if (opt_.keep_records) {
      r.records.reserve(queries_.size());
      for (std::size_t i = 0; i < queries_.size(); ++i) {
        r.records.push_back({queries_[i].arrival, queries_[i].completion, std::move(stage_times_[i])});
      }
    }
    return r;
  }

  const SimulationInput& in_;
  const WorkloadTrace& trace_;
  const SimOptions& opt_;
  std::mt19937_64 rng_;
  int stages_ = 0;
  int batch_ = 1;
  double horizon_ms_ = 0;
  double end_ms_ = 0;
  double deadline_ms_ = 0;
  std::uint64_t seq_ = 0;
  std::priority_queue<Event, std::vector<Event>, EventLater> events_;
  std::vector<Instance> instances_;
  std::vector<std::vector<int>> by_stage_;
  std::vector<std::deque<int>> queues_;
  std::vector<int> rr_;
  std::vector<double> pending_flush_;
  std::vector<std::vector<double>> transfers_;  // end times of live PCIe copies per GPU
  std::vector<double> resident_demand_;
  std::vector<double> remaining_ms_;
  std::vector<Query> queries_;
  std::vector<std::vector<StageTimes>> stage_times_;
  SimulationResult result_;
};

}  // namespace

void WorkloadTrace::validate() const {
  if (!(rate_qps > 0) || !std::isfinite(rate_qps)) throw InvalidArgument("arrival rate must be positive");
  if (!(duration_s > 0) || !std::isfinite(duration_s)) throw InvalidArgument("trace duration must be positive");
  if (max_queries < 1) throw InvalidArgument("query cap must be at least 1");
}

double contention_multiplier(std::span<const double> demands_mbps, double bandwidth_mbps) {
  if (!(bandwidth_mbps > 0)) throw InvalidArgument("bandwidth must be positive");
  const double total = std::accumulate(demands_mbps.begin(), demands_mbps.end(), 0.0);
  return std::max(1.0, total / bandwidth_mbps);
}

SimulationInput make_sim_input(const AllocationProblem& problem, const Allocation& allocation,
                               const PlacementPlan& plan) {
  SimulationInput in;
  in.plan = plan;
  in.allocation = allocation;
  in.pipeline = problem.pipeline();
  in.pipeline.batch_size = problem.batch();
  in.gpus = problem.gpus();
  in.comm = problem.options().comm;
  in.models = problem.models();
  return in;
}

SimulationResult simulate(const SimulationInput& input, const WorkloadTrace& trace, const SimOptions& options) {
  trace.validate();
  input.pipeline.validate();
  if (!input.models.empty() && input.models.size() != input.pipeline.stages.size()) {
    throw InvalidArgument("one model per stage is required");
  }
  if (options.warmup_fraction < 0 || options.warmup_fraction >= 1) {
    throw InvalidArgument("warm-up fraction must be in [0, 1)");
  }
  if (options.flush_guard_fraction < 0 || options.flush_guard_fraction >= 1) {
    throw InvalidArgument("flush guard must be in [0, 1)");
  }
  Engine engine(input, trace, options);
  return engine.run();
}

double oracle_bottleneck_qps(const Allocation& allocation, const PipelineSpec& pipeline, const GpuSpec& gpu) {
  double best = kInf;
  for (std::size_t i = 0; i < pipeline.stages.size(); ++i) {
    best = std::min(best, allocation.instances[i] *
                              oracle_throughput_qps(pipeline.stages[i], pipeline.batch_size,
                                                    allocation.shares[i], gpu));
  }
  return std::isfinite(best) ? best : 0.0;
}

PeakLoad find_peak_load(const SimulationInput& input, const WorkloadTrace& trace, const SimOptions& options) {
  constexpr int kBisections = 12;
  constexpr int kMaxBracket = 20;
  constexpr double kMinQueries = 400;
  const double qos = input.pipeline.qos_target_ms;
  PeakLoad out;

  auto run = [&](double rate) {
    WorkloadTrace t = trace;
    t.rate_qps = rate;
    t.duration_s = std::max(trace.duration_s, kMinQueries / rate);
    ++out.simulations;
    return simulate(input, t, options).p99_latency_ms;
  };

  double r0 = 0.5 * oracle_bottleneck_qps(input.allocation, input.pipeline, input.gpus.front());
  if (!(r0 > 0)) r0 = 1;
  double lo = 0, hi = 0, lo_p99 = 0;
  double p = run(r0);
  if (p <= qos) {
    lo = r0;
    lo_p99 = p;
    double r = r0;
    for (int i = 0; i < kMaxBracket && hi == 0; ++i) {
      r *= 2;
      p = run(r);
      if (p <= qos) {
        lo = r;
        lo_p99 = p;
      } else {
        hi = r;
      }
    }
    if (hi == 0) {
      out.rate_qps = lo;
      out.p99_latency_ms = lo_p99;
      out.diagnostic = "upper bracket not found";
      return out;
    }
  } else {
    hi = r0;
    double r = r0;
    for (int i = 0; i < kMaxBracket && lo == 0; ++i) {
      r /= 2;
      p = run(r);
      if (p <= qos) {
        lo = r;
        lo_p99 = p;
      } else {
        hi = r;
      }
    }
    if (lo == 0) {
      std::ostringstream msg;
      msg << "QoS target " << qos << " ms not met even at " << r << " qps (p99 " << p << " ms)";
      out.diagnostic = msg.str();
      return out;
    }
  }
  for (int i = 0; i < kBisections; ++i) {
    const double mid = 0.5 * (lo + hi);
    p = run(mid);
    if (p <= qos) {
      lo = mid;
      lo_p99 = p;
    } else {
      hi = mid;
    }
  }
  out.rate_qps = lo;
  out.p99_latency_ms = lo_p99;
  return out;
}

ValidationReport validate_allocation(const AllocationProblem& problem, const SaParams& sa,
                                     const WorkloadTrace& trace, double load_fraction,
                                     const SimOptions& options) {
  if (!(load_fraction > 0)) throw InvalidArgument("load fraction must be positive");
  AllocatorOptions relaxed = problem.options();
  relaxed.enforce_bandwidth = false;
  const AllocationProblem nc_problem = problem.with_options(relaxed);

  ValidationReport report;
  report.qos_ms = problem.pipeline().qos_target_ms;
  auto evaluate = [&](const AllocationProblem& p, VariantOutcome& out) {
    out.allocation = solve_max_load(p, sa);
    out.plan = place(out.allocation, p);
    out.offered_qps = load_fraction * out.allocation.objective;
    WorkloadTrace t = trace;
    t.rate_qps = out.offered_qps;
    out.result = simulate(make_sim_input(p, out.allocation, out.plan), t, options);
    out.meets_qos = out.result.p99_latency_ms <= report.qos_ms;
  };
  evaluate(problem, report.constrained);
  evaluate(nc_problem, report.unconstrained);
  report.p99_ratio = report.unconstrained.result.p99_latency_ms / report.constrained.result.p99_latency_ms;
  return report;
}

}  // namespace pipealloc
