#include "pipealloc/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <map>
#include <sstream>

#include "pipealloc/errors.hpp"
#include "pipealloc/placement.hpp"
#include "pipealloc/predictor.hpp"

namespace pipealloc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kProfileHeader =
    "config_hash,seed,stage,batch,share,duration_ms,bandwidth_mbps,throughput_qps,flops_gflop,footprint_mb";

std::string num(double v, const char* format = "%.4f") {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

// Round-trips a double through text.
std::string exact(double v) { return num(v, "%.17g"); }

std::string csv_field(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n') c = ';';
  }
  return s;
}

void write_file(const fs::path& path, const std::string& text, Written& written) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
  written.push_back(path);
}

std::string read_file(const fs::path& path, const char* producer) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw MissingArtifactError("missing " + path.string() + "; run `pipealloc " + producer + "` first");
  }
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

void check_hash(const std::string& found, const ExperimentConfig& cfg, const fs::path& path, const char* producer) {
  if (found != hash_hex(cfg.hash)) {
    throw MissingArtifactError(path.string() + " was written under config hash " + found + " but the current one is " +
                               hash_hex(cfg.hash) + "; rerun `pipealloc " + producer + "`");
  }
}

json read_artifact(const ExperimentConfig& cfg, const fs::path& path, const char* producer) {
  json j;
  try {
    j = json::parse(read_file(path, producer));
  } catch (const json::parse_error& e) {
    throw MissingArtifactError(path.string() + " is corrupt (" + e.what() + "); rerun `pipealloc " + producer + "`");
  }
  check_hash(j.value("config_hash", std::string()), cfg, path, producer);
  return j;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string level_label(double level) { return "min-resource-" + num(level, "%.2f"); }

std::vector<double> load_levels(const ExperimentConfig& cfg) {
  return cfg.load_levels.empty() ? std::vector<double>{0.3} : cfg.load_levels;
}

PipelineSpec with_batch(PipelineSpec p, int batch) {
  p.batch_size = batch;
  return p;
}

// ---- profile / train -------------------------------------------------------

std::vector<std::vector<ProfileSample>> read_profile(const ExperimentConfig& cfg) {
  const fs::path path = cfg.output_dir / "profile" / "samples.csv";
  std::istringstream in(read_file(path, "profile"));
  std::string line;
  std::getline(in, line);
  if (line != kProfileHeader) throw MissingArtifactError(path.string() + " has an unexpected header; rerun `pipealloc profile`");
  std::vector<std::vector<ProfileSample>> by_stage(cfg.pipeline.stages.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 10) throw MissingArtifactError(path.string() + " has a malformed row; rerun `pipealloc profile`");
    check_hash(f[0], cfg, path, "profile");
    const int stage = std::stoi(f[2]);
    if (stage < 0 || stage >= static_cast<int>(by_stage.size())) {
      throw MissingArtifactError(path.string() + " names an unknown stage; rerun `pipealloc profile`");
    }
    ProfileSample s;
    s.batch = std::stoi(f[3]);
    s.share = std::stod(f[4]);
    s.duration_ms = std::stod(f[5]);
    s.bandwidth_mbps = std::stod(f[6]);
    s.throughput_qps = std::stod(f[7]);
    s.flops_gflop = std::stod(f[8]);
    s.footprint_mb = std::stod(f[9]);
    by_stage[stage].push_back(s);
  }
  return by_stage;
}

std::vector<PerfModel> read_models(const ExperimentConfig& cfg) {
  const fs::path path = cfg.output_dir / "models" / "models.json";
  const json j = read_artifact(cfg, path, "train");
  std::vector<PerfModel> models;
  for (const auto& m : j.at("models")) models.push_back(perf_model_from_json(m));
  if (models.size() != cfg.pipeline.stages.size()) {
    throw MissingArtifactError(path.string() + " does not match the pipeline; rerun `pipealloc train`");
  }
  return models;
}

AllocationProblem make_problem(const ExperimentConfig& cfg, const std::vector<PerfModel>& models, int batch) {
  return AllocationProblem(with_batch(cfg.pipeline, batch), cfg.cluster(), models, batch, cfg.allocator);
}

// ---- allocation / placement artifacts --------------------------------------

json allocation_artifact(const ExperimentConfig& cfg, const std::string& plan, const Allocation& a,
                         const AllocationProblem& problem, std::optional<double> floor) {
  return {{"config_hash", hash_hex(cfg.hash)},
          {"seed", cfg.seeds.sa},
          {"plan", plan},
          {"batch_size", problem.batch()},
          {"instances", a.instances},
          {"shares", a.shares},
          {"report", to_json(a, problem, floor)}};
}

Allocation read_allocation(const ExperimentConfig& cfg, const std::string& plan, json* raw = nullptr) {
  const json j = read_artifact(cfg, cfg.output_dir / "alloc" / (plan + ".json"),
                               plan == "max-load" ? "allocate --mode max-load" : "allocate --mode min-resource");
  Allocation a;
  a.instances = j.at("instances").get<std::vector<int>>();
  a.shares = j.at("shares").get<std::vector<double>>();
  a.gpu_count = j.at("report").at("gpu_count").get<int>();
  a.objective = j.at("report").at("objective").get<double>();
  if (raw) *raw = j;
  return a;
}

PlacementPlan read_placement(const ExperimentConfig& cfg, const std::string& plan) {
  const json j = read_artifact(cfg, cfg.output_dir / "place" / (plan + ".json"),
                               plan == "max-load" ? "place --mode max-load" : "place --mode min-resource");
  PlacementPlan p;
  for (const auto& inst : j.at("placement").at("instances")) {
    p.instances.push_back({inst.at("stage_index").get<int>(), inst.at("replica").get<int>(), inst.at("gpu").get<int>(),
                           inst.at("share").get<double>()});
  }
  for (const auto& g : j.at("placement").at("gpus")) {
    p.residual.push_back({g.at("residual_compute").get<double>(), g.at("residual_memory_mb").get<double>(),
                          g.at("residual_bandwidth_mbps").get<double>(), g.at("instances").get<int>()});
  }
  return p;
}

std::vector<std::string> plans_for(const ExperimentConfig& cfg, AllocMode mode) {
  if (mode == AllocMode::kMaxLoad) return {"max-load"};
  std::vector<std::string> out;
  for (double l : load_levels(cfg)) out.push_back(level_label(l));
  return out;
}

WorkloadTrace make_trace(const ExperimentConfig& cfg, double rate) {
  WorkloadTrace t;
  t.process = cfg.simulation.arrival;
  t.rate_qps = rate;
  t.duration_s = cfg.simulation.duration_s;
  t.max_queries = cfg.simulation.max_queries;
  t.seed = cfg.seeds.trace;
  return t;
}

std::string row_prefix(const ExperimentConfig& cfg) {
  return hash_hex(cfg.hash) + "," + std::to_string(cfg.seeds.sa) + "," + std::to_string(cfg.seeds.trace);
}

// ---- sweep -----------------------------------------------------------------

struct SweepRow {
  int gpu_count = 0;
  double usage = 0;
  double predicted = 0;
  double peak = 0;
  double p99 = 0;
  std::string diagnostic;
};

SweepRow sweep_cell(const ExperimentConfig& cfg, const std::vector<PerfModel>& models, int batch, bool annealed) {
  SweepRow row;
  try {
    const AllocationProblem problem = make_problem(cfg, models, batch);
    Allocation a;
    PlacementPlan plan;
    if (annealed) {
      a = solve_max_load(problem, cfg.sa);
      plan = place(a, problem);
    } else {
      // The even split ignores bandwidth by construction, so it is packed without that dimension.
      a = even_allocation_baseline(problem);
      PlacementOptions options;
      options.enforce_bandwidth = false;
      plan = place(a, problem.pipeline(), problem.gpus(), models, batch, options);
    }
    row.gpu_count = a.gpu_count;
    row.usage = a.resource_usage();
    row.predicted = a.objective;
    const PeakLoad peak = find_peak_load(make_sim_input(problem, a, plan), make_trace(cfg, 1), cfg.simulation.options);
    row.peak = peak.rate_qps;
    row.p99 = peak.p99_latency_ms;
    row.diagnostic = peak.diagnostic;
  } catch (const InfeasibleError& e) {
    row.diagnostic = std::string("infeasible: ") + e.what();
  } catch (const PlacementError& e) {
    row.diagnostic = std::string("placement: ") + e.what();
  }
  return row;
}

struct LevelRow {
  double offered = 0;
  double max_usage = 0;
  double min_usage = 0;
  int gpu_count = 0;
  double p99 = 0;
  bool meets = false;
  std::string diagnostic;
};

std::vector<LevelRow> level_cells(const ExperimentConfig& cfg, const std::vector<PerfModel>& models, int batch) {
  const std::vector<double> levels = load_levels(cfg);
  std::vector<LevelRow> rows(levels.size());
  try {
    const AllocationProblem problem = make_problem(cfg, models, batch);
    const Allocation peak = solve_max_load(problem, cfg.sa);
    for (std::size_t i = 0; i < levels.size(); ++i) {
      LevelRow& r = rows[i];
      r.offered = levels[i] * peak.objective;
      r.max_usage = peak.resource_usage();
      try {
        const Allocation a = solve_min_resource(problem, r.offered, cfg.sa);
        const PlacementPlan plan = place(a, problem);
        const SimulationResult sim =
            simulate(make_sim_input(problem, a, plan), make_trace(cfg, r.offered), cfg.simulation.options);
        r.min_usage = a.resource_usage();
        r.gpu_count = a.gpu_count;
        r.p99 = sim.p99_latency_ms;
        r.meets = sim.p99_latency_ms <= cfg.pipeline.qos_target_ms;
      } catch (const InfeasibleError& e) {
        r.diagnostic = std::string("infeasible: ") + e.what();
      } catch (const PlacementError& e) {
        r.diagnostic = std::string("placement: ") + e.what();
      }
    }
  } catch (const InfeasibleError& e) {
    for (auto& r : rows) r.diagnostic = std::string("infeasible: ") + e.what();
  }
  return rows;
}

}  // namespace

AllocMode parse_mode(std::string_view text) {
  if (text == "max-load") return AllocMode::kMaxLoad;
  if (text == "min-resource") return AllocMode::kMinResource;
  throw ConfigError("unknown mode \"" + std::string(text) + "\"; expected max-load or min-resource");
}

Written cmd_profile(const ExperimentConfig& cfg) {
  const std::vector<double> shares = cfg.profile.shares.empty() ? default_share_grid() : cfg.profile.shares;
  const std::vector<int> batches = batch_range(cfg.profile.batch_first, cfg.profile.batch_last);
  std::string text = std::string(kProfileHeader) + "\n";
  const std::string prefix = hash_hex(cfg.hash) + "," + std::to_string(cfg.seeds.profile) + ",";
  for (std::size_t i = 0; i < cfg.pipeline.stages.size(); ++i) {
    for (const auto& s : collect_profile(cfg.pipeline.stages[i], cfg.gpu, batches, shares)) {
      text += prefix + std::to_string(i) + "," + std::to_string(s.batch) + "," + exact(s.share) + "," +
              exact(s.duration_ms) + "," + exact(s.bandwidth_mbps) + "," + exact(s.throughput_qps) + "," +
              exact(s.flops_gflop) + "," + exact(s.footprint_mb) + "\n";
    }
  }
  Written written;
  write_file(cfg.output_dir / "profile" / "samples.csv", text, written);
  return written;
}

Written cmd_train(const ExperimentConfig& cfg) {
  const auto by_stage = read_profile(cfg);
  json models = json::array();
  json reports = json::array();
  for (std::size_t i = 0; i < by_stage.size(); ++i) {
    const TrainResult r = train(by_stage[i], cfg.seeds.split, static_cast<int>(i));
    models.push_back(to_json(r.model));
    json rep = to_json(r.report);
    rep["stage"] = cfg.pipeline.stages[i].name;
    reports.push_back(rep);
  }
  Written written;
  const json header = {{"config_hash", hash_hex(cfg.hash)}, {"seed", cfg.seeds.split}};
  json m = header;
  m["models"] = models;
  json rep = header;
  rep["stages"] = reports;
  write_file(cfg.output_dir / "models" / "models.json", dump(m), written);
  write_file(cfg.output_dir / "models" / "report.json", dump(rep), written);
  return written;
}

Written cmd_allocate(const ExperimentConfig& cfg, AllocMode mode) {
  const auto models = read_models(cfg);
  const AllocationProblem problem = make_problem(cfg, models, cfg.pipeline.batch_size);
  Written written;
  if (mode == AllocMode::kMaxLoad) {
    const Allocation a = solve_max_load(problem, cfg.sa);
    write_file(cfg.output_dir / "alloc" / "max-load.json",
               dump(allocation_artifact(cfg, "max-load", a, problem, std::nullopt)), written);
    return written;
  }
  const Allocation peak = read_allocation(cfg, "max-load");
  for (double level : load_levels(cfg)) {
    const double offered = level * peak.objective;
    const Allocation a = solve_min_resource(problem, offered, cfg.sa);
    const double floor = offered / cfg.allocator.target_utilization;
    json j = allocation_artifact(cfg, level_label(level), a, problem, floor);
    j["load_level"] = level;
    j["offered_qps"] = offered;
    j["throughput_floor_qps"] = floor;
    j["max_load_resource_usage"] = peak.resource_usage();
    j["resource_saving"] = 1.0 - a.resource_usage() / peak.resource_usage();
    write_file(cfg.output_dir / "alloc" / (level_label(level) + ".json"), dump(j), written);
  }
  return written;
}

Written cmd_place(const ExperimentConfig& cfg, AllocMode mode) {
  const auto models = read_models(cfg);
  const AllocationProblem problem = make_problem(cfg, models, cfg.pipeline.batch_size);
  Written written;
  for (const std::string& plan_id : plans_for(cfg, mode)) {
    const Allocation a = read_allocation(cfg, plan_id);
    const PlacementPlan plan = place(a, problem);
    PlacementOptions options;
    options.enforce_bandwidth = cfg.allocator.enforce_bandwidth;
    verify_plan(plan, a, problem.pipeline(), problem.gpus(), models, problem.batch(), options);
    const json j = {{"config_hash", hash_hex(cfg.hash)},
                    {"seed", cfg.seeds.sa},
                    {"plan", plan_id},
                    {"gpus_used", plan.gpus_used()},
                    {"placement", to_json(plan, problem.pipeline())}};
    write_file(cfg.output_dir / "place" / (plan_id + ".json"), dump(j), written);
  }
  return written;
}

Written cmd_simulate(const ExperimentConfig& cfg, AllocMode mode) {
  const auto models = read_models(cfg);
  const AllocationProblem problem = make_problem(cfg, models, cfg.pipeline.batch_size);
  std::string text = "config_hash,seed,trace_seed,plan,rate_qps,p99_ms,mean_ms,achieved_qps,arrived,completed,in_flight";
  for (const auto& s : cfg.pipeline.stages) {
    text += "," + s.name + "_queue_ms," + s.name + "_comm_ms," + s.name + "_service_ms";
  }
  text += "\n";
  for (const std::string& plan_id : plans_for(cfg, mode)) {
    json raw;
    const Allocation a = read_allocation(cfg, plan_id, &raw);
    const PlacementPlan plan = read_placement(cfg, plan_id);
    const double rate = mode == AllocMode::kMaxLoad ? cfg.simulation.rate_fraction * a.objective
                                                    : raw.at("offered_qps").get<double>();
    const SimulationResult r =
        simulate(make_sim_input(problem, a, plan), make_trace(cfg, rate), cfg.simulation.options);
    text += row_prefix(cfg) + "," + plan_id + "," + num(rate) + "," + num(r.p99_latency_ms) + "," +
            num(r.mean_latency_ms) + "," + num(r.achieved_qps) + "," + std::to_string(r.arrived) + "," +
            std::to_string(r.completed) + "," + std::to_string(r.in_flight);
    for (const auto& st : r.stage_means) {
      text += "," + num(st.queue_ms) + "," + num(st.comm_ms) + "," + num(st.service_ms);
    }
    text += "\n";
  }
  Written written;
  write_file(cfg.output_dir / "sim" / (mode == AllocMode::kMaxLoad ? "max-load.csv" : "min-resource.csv"), text,
             written);
  return written;
}

Written cmd_sweep(const ExperimentConfig& cfg) {
  const auto models = read_models(cfg);
  // Keyed by (batch, policy) so the merge order never depends on completion order.
  std::map<std::pair<int, int>, std::future<SweepRow>> peaks;
  std::map<int, std::future<std::vector<LevelRow>>> levels;
  for (int batch : cfg.batch_sizes) {
    for (int annealed = 0; annealed < 2; ++annealed) {
      peaks.emplace(std::make_pair(batch, annealed), std::async(std::launch::async, [&cfg, &models, batch, annealed] {
                      return sweep_cell(cfg, models, batch, annealed == 1);
                    }));
    }
    levels.emplace(batch, std::async(std::launch::async, [&cfg, &models, batch] {
                     return level_cells(cfg, models, batch);
                   }));
  }

  std::string sweep =
      "config_hash,seed,trace_seed,batch_size,policy,gpu_count,resource_usage,predicted_qps,peak_qps,p99_ms,"
      "diagnostic\n";
  for (auto& [key, fut] : peaks) {
    const SweepRow r = fut.get();
    sweep += row_prefix(cfg) + "," + std::to_string(key.first) + "," + (key.second ? "annealed" : "even") + "," +
             std::to_string(r.gpu_count) + "," + num(r.usage) + "," + num(r.predicted) + "," + num(r.peak) + "," +
             num(r.p99) + "," + csv_field(r.diagnostic) + "\n";
  }
  std::string level_text =
      "config_hash,seed,trace_seed,batch_size,load_level,offered_qps,max_load_usage,min_resource_usage,gpu_count,"
      "p99_ms,meets_qos,diagnostic\n";
  const std::vector<double> ls = load_levels(cfg);
  for (auto& [batch, fut] : levels) {
    const std::vector<LevelRow> rows = fut.get();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const LevelRow& r = rows[i];
      level_text += row_prefix(cfg) + "," + std::to_string(batch) + "," + num(ls[i], "%.2f") + "," + num(r.offered) +
                    "," + num(r.max_usage) + "," + num(r.min_usage) + "," + std::to_string(r.gpu_count) + "," +
                    num(r.p99) + "," + (r.meets ? "1" : "0") + "," + csv_field(r.diagnostic) + "\n";
    }
  }
  Written written;
  write_file(cfg.output_dir / "sim" / "sweep.csv", sweep, written);
  write_file(cfg.output_dir / "sim" / "load_levels.csv", level_text, written);
  return written;
}

}  // namespace pipealloc
