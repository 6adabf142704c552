#include "nvec/env.hpp"

#include "nvec/process.hpp"
#include "nvec/rewriter.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <thread>
#include <unistd.h>

namespace nvec {

nlohmann::json to_json(const SimLoopFeatures &f) {
  return {{"N", f.trip_count},     {"c", f.ops_per_iter},       {"s", f.stride},
          {"reduction", f.has_reduction}, {"predicate", f.has_predicate}, {"w", f.elem_bits}};
}

SimLoopFeatures sim_features_from_json(const nlohmann::json &j) {
  SimLoopFeatures f;
  try {
    f.trip_count = j.at("N").get<double>();
    f.ops_per_iter = j.at("c").get<int>();
    f.stride = j.at("s").get<int>();
    f.has_reduction = j.at("reduction").get<bool>();
    f.has_predicate = j.at("predicate").get<bool>();
    f.elem_bits = j.at("w").get<int>();
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::Schema, std::string("sim features: ") + e.what());
  }
  return f;
}

int sim_vf_star(const SimLoopFeatures &f) {
  double raw = 128.0 / f.elem_bits * (f.stride == 1 ? 1.0 : 1.0 / f.stride);
  raw = std::clamp(raw, 1.0, 64.0);
  int v = 1;
  while (v * 2 <= raw)
    v *= 2;
  return v;
}

int sim_if_star(const SimLoopFeatures &f) { return f.has_reduction ? 4 : 2; }

double sim_cost(const SimLoopFeatures &f, int vf, int if_) {
  if (!is_pow2(vf) || !is_pow2(if_))
    throw Error(ErrorCode::InvalidArgument, "sim_cost: factors must be powers of two");
  const int vstar = sim_vf_star(f);
  const int istar = sim_if_star(f);
  const double work = f.trip_count * f.ops_per_iter;
  const int vf_eff = std::min(vf, vstar);
  double t = work / vf_eff * (1.0 + 0.15 * std::abs(std::log2(if_) - std::log2(istar))) *
             (f.has_predicate ? 1.3 : 1.0);
  if (vf > vstar)
    t += 0.02 * work * std::log2(static_cast<double>(vf) / vstar);
  return t * 1e-9;
}

std::string_view status_name(CompileStatus s) {
  switch (s) {
  case CompileStatus::Ok: return "ok";
  case CompileStatus::Timeout: return "timeout";
  case CompileStatus::Error: return "error";
  }
  return "error";
}

CompileStatus status_from_name(std::string_view s) {
  if (s == "ok")
    return CompileStatus::Ok;
  if (s == "timeout")
    return CompileStatus::Timeout;
  if (s == "error")
    return CompileStatus::Error;
  throw Error(ErrorCode::Schema, "unknown compile status '" + std::string(s) + "'");
}

double reward(double t_baseline, double t_candidate, CompileStatus status) {
  if (!(t_baseline > 0.0))
    throw Error(ErrorCode::NonPositiveTime, "baseline time must be positive");
  if (status != CompileStatus::Ok)
    return kPenaltyReward;
  if (!(t_candidate > 0.0))
    throw Error(ErrorCode::NonPositiveTime, "candidate time must be positive");
  return (t_baseline - t_candidate) / t_baseline;
}

//===-- Simulated backend -------------------------------------------------===//

double SimBackend::compile_time(const SimConfig &cfg, int vf, int if_) {
  return cfg.compile_base_seconds * (1.0 + 0.05 * vf * if_);
}

BaselineInfo SimBackend::baseline(const SourceFile &src, const LoopNest &nest,
                                  const TimeoutPolicy &) {
  SimLoopFeatures f = extract_sim_features(src, nest);
  return {sim_cost(f, cfg_.baseline_vf, cfg_.baseline_if),
          compile_time(cfg_, cfg_.baseline_vf, cfg_.baseline_if)};
}

CandidateResult SimBackend::candidate(const SourceFile &src, const LoopNest &nest,
                                      const std::string &, const Action &action,
                                      const TimeoutPolicy &policy, const BaselineInfo &base) {
  CandidateResult r;
  r.compile_time = compile_time(cfg_, action.vf, action.if_);
  if (r.compile_time > policy.multiplier * base.compile_time) {
    r.status = CompileStatus::Timeout;
    r.detail = "simulated compile time over limit";
    return r;
  }
  r.exec_time = sim_cost(extract_sim_features(src, nest), action.vf, action.if_);
  if (r.exec_time > policy.multiplier * base.exec_time) {
    r.status = CompileStatus::Timeout;
    r.detail = "simulated run time over limit";
  }
  return r;
}

//===-- Clang backend -----------------------------------------------------===//

std::string resolve_compiler(const ClangConfig &cfg) {
  std::string name = cfg.compiler;
  if (name.empty()) {
    const char *env = std::getenv("NVEC_CC");
    name = (env && *env) ? env : "clang";
  }
  auto found = find_executable(name);
  if (!found)
    throw Error(ErrorCode::CompilerNotFound, "C compiler '" + name + "' not found");
  return *found;
}

namespace {

enum class Outcome { Ok, CompileTimeout, CompileFailed, RunTimeout, RunFailed };

struct MeasureResult {
  Outcome outcome = Outcome::Ok;
  ClangMeasure m;
  double run_wall = 0.0; // median process wall time
  std::string detail;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::optional<double> harness_time(const std::string &out) {
  static constexpr std::string_view key = "nvec_time_ns=";
  size_t p = out.find(key);
  if (p == std::string::npos)
    return std::nullopt;
  char *end = nullptr;
  double ns = std::strtod(out.c_str() + p + key.size(), &end);
  if (end == out.c_str() + p + key.size() || !(ns > 0.0))
    return std::nullopt;
  return ns * 1e-9;
}

MeasureResult measure(const std::string &cc, const ClangConfig &cfg,
                      const std::string &source_path, double compile_timeout,
                      double run_timeout) {
  MeasureResult res;
  std::string exe = source_path + ".bin";
  std::vector<std::string> argv = {cc};
  argv.insert(argv.end(), cfg.flags.begin(), cfg.flags.end());
  argv.insert(argv.end(), {"-o", exe, source_path, "-lm"});
  ProcessResult c = run_process(argv, compile_timeout);
  res.m.compile_time = c.wall_seconds;
  if (c.timed_out) {
    res.outcome = Outcome::CompileTimeout;
    res.detail = "compile exceeded " + std::to_string(compile_timeout) + " s";
    std::filesystem::remove(exe);
    return res;
  }
  if (c.exit_code != 0) {
    res.outcome = Outcome::CompileFailed;
    res.detail = c.err.substr(0, 2000);
    std::filesystem::remove(exe);
    return res;
  }
  std::vector<double> times, walls;
  for (int i = 0; i < cfg.warmups + cfg.runs; ++i) {
    ProcessResult r = run_process({exe}, run_timeout);
    if (r.timed_out) {
      res.outcome = Outcome::RunTimeout;
      res.detail = "run exceeded " + std::to_string(run_timeout) + " s";
      break;
    }
    if (r.exit_code != 0) {
      res.outcome = Outcome::RunFailed;
      res.detail = "exit code " + std::to_string(r.exit_code) + ": " + r.err.substr(0, 500);
      break;
    }
    if (i >= cfg.warmups) {
      times.push_back(harness_time(r.out).value_or(r.wall_seconds));
      walls.push_back(r.wall_seconds);
    }
  }
  std::filesystem::remove(exe);
  if (res.outcome == Outcome::Ok) {
    res.m.exec_time =
        cfg.statistic == "min" ? *std::min_element(times.begin(), times.end()) : median(times);
    res.run_wall = median(walls);
  }
  return res;
}

std::atomic<uint64_t> g_scratch_counter{0};

void validate(const ClangConfig &cfg) {
  if (cfg.runs < 1 || cfg.warmups < 0)
    throw Error(ErrorCode::InvalidArgument, "runs must be >= 1 and warmups >= 0");
  if (cfg.statistic != "median" && cfg.statistic != "min")
    throw Error(ErrorCode::InvalidArgument, "statistic must be median or min");
}

} // namespace

ClangMeasure clang_backend_measure(const ClangConfig &cfg, const std::string &source_path,
                                   double compile_timeout, double run_timeout) {
  validate(cfg);
  std::string cc = resolve_compiler(cfg);
  MeasureResult r = measure(cc, cfg, source_path, compile_timeout, run_timeout);
  switch (r.outcome) {
  case Outcome::Ok:
    return r.m;
  case Outcome::CompileFailed:
    throw Error(ErrorCode::CompileError, r.detail);
  case Outcome::CompileTimeout:
  case Outcome::RunTimeout:
    throw Error(ErrorCode::RunTimeout, r.detail);
  case Outcome::RunFailed:
    throw Error(ErrorCode::CompileError, r.detail);
  }
  return r.m;
}

ClangBackend::ClangBackend(ClangConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.compiler = resolve_compiler(cfg_);
  validate(cfg_);
}

std::string ClangBackend::scratch_path(const std::string &tag) {
  std::filesystem::path dir = cfg_.work_dir.empty()
                                  ? std::filesystem::temp_directory_path()
                                  : std::filesystem::path(cfg_.work_dir);
  std::filesystem::create_directories(dir);
  return (dir / ("nvec-" + std::to_string(::getpid()) + "-" +
                 std::to_string(g_scratch_counter++) + "-" + tag + ".c"))
      .string();
}

BaselineInfo ClangBackend::baseline(const SourceFile &src, const LoopNest &nest,
                                    const TimeoutPolicy &policy) {
  std::string path = scratch_path("base");
  write_file(path, src.text);
  MeasureResult r = measure(cfg_.compiler, cfg_, path, policy.baseline_limit_seconds,
                            policy.baseline_limit_seconds);
  std::filesystem::remove(path);
  if (r.outcome != Outcome::Ok)
    throw Error(ErrorCode::BaselineCompileFailed,
                "baseline build of " + nest.nest_id + " failed: " + r.detail);
  return {r.m.exec_time, r.m.compile_time};
}

CandidateResult ClangBackend::candidate(const SourceFile &, const LoopNest &,
                                        const std::string &injected, const Action &action,
                                        const TimeoutPolicy &policy, const BaselineInfo &base) {
  std::string path = scratch_path("vf" + std::to_string(action.vf) + "if" +
                                  std::to_string(action.if_));
  write_file(path, injected);
  double compile_limit =
      std::max(policy.multiplier * base.compile_time, policy.compile_floor_seconds);
  // The harness repeats the kernel, so process time is dominated by it.
  double run_limit = std::max(policy.multiplier * std::max(base.exec_time, 1e-3) * 50.0,
                              policy.compile_floor_seconds);
  MeasureResult r = measure(cfg_.compiler, cfg_, path, compile_limit, run_limit);
  std::filesystem::remove(path);
  CandidateResult c;
  c.compile_time = r.m.compile_time;
  c.exec_time = r.m.exec_time;
  c.detail = r.detail;
  switch (r.outcome) {
  case Outcome::Ok:
    c.status = CompileStatus::Ok;
    if (c.exec_time > policy.multiplier * base.exec_time)
      c.status = CompileStatus::Timeout;
    break;
  case Outcome::CompileTimeout:
  case Outcome::RunTimeout:
    c.status = CompileStatus::Timeout;
    break;
  case Outcome::CompileFailed:
  case Outcome::RunFailed:
    c.status = CompileStatus::Error;
    break;
  }
  return c;
}

//===-- Evaluation cache --------------------------------------------------===//

EvalCache::EvalCache(std::string path) : path_(std::move(path)) {
  std::ifstream in(path_);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty())
      continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw Error(ErrorCode::Schema, path_ + ":" + std::to_string(lineno) + ": malformed record");
    try {
      std::string nest_id = j.at("nest_id").get<std::string>();
      uint64_t digest = std::stoull(j.at("digest").get<std::string>(), nullptr, 16);
      if (j.at("kind") == "baseline") {
        baselines_[{nest_id, digest}] = {j.at("exec").get<double>(),
                                         j.at("compile").get<double>()};
      } else {
        Measurement m{j.at("t_baseline").get<double>(), j.at("t_candidate").get<double>(),
                      status_from_name(j.at("status").get<std::string>()),
                      j.at("reward").get<double>()};
        cells_[{nest_id, digest, j.at("vf").get<int>(), j.at("if").get<int>()}] = m;
      }
    } catch (const std::exception &e) {
      throw Error(ErrorCode::Schema,
                  path_ + ":" + std::to_string(lineno) + ": " + std::string(e.what()));
    }
  }
}

void EvalCache::append(const nlohmann::json &record) {
  if (path_.empty())
    return;
  std::ofstream out(path_, std::ios::app);
  if (!out)
    throw Error(ErrorCode::Io, "cannot append to " + path_);
  out << record.dump() << '\n';
}

std::optional<Measurement> EvalCache::find(const LoopNest &nest, int vf, int if_) const {
  std::lock_guard lock(mu_);
  auto it = cells_.find({nest.nest_id, nest.source_digest, vf, if_});
  if (it == cells_.end())
    return std::nullopt;
  return it->second;
}

void EvalCache::insert(const LoopNest &nest, int vf, int if_, const Measurement &m) {
  std::lock_guard lock(mu_);
  auto [it, fresh] = cells_.emplace(Key{nest.nest_id, nest.source_digest, vf, if_}, m);
  if (fresh)
    append({{"kind", "cell"},
            {"nest_id", nest.nest_id},
            {"digest", hex64(nest.source_digest)},
            {"vf", vf},
            {"if", if_},
            {"t_baseline", m.t_baseline},
            {"t_candidate", m.t_candidate},
            {"status", status_name(m.status)},
            {"reward", m.reward}});
}

std::optional<BaselineInfo> EvalCache::find_baseline(const LoopNest &nest) const {
  std::lock_guard lock(mu_);
  auto it = baselines_.find({nest.nest_id, nest.source_digest});
  if (it == baselines_.end())
    return std::nullopt;
  return it->second;
}

void EvalCache::insert_baseline(const LoopNest &nest, const BaselineInfo &b) {
  std::lock_guard lock(mu_);
  auto [it, fresh] = baselines_.emplace(std::make_pair(nest.nest_id, nest.source_digest), b);
  if (fresh)
    append({{"kind", "baseline"},
            {"nest_id", nest.nest_id},
            {"digest", hex64(nest.source_digest)},
            {"exec", b.exec_time},
            {"compile", b.compile_time}});
}

size_t EvalCache::size() const {
  std::lock_guard lock(mu_);
  return cells_.size();
}

Measurement evaluate(const SourceFile &src, const LoopNest &nest, const Action &action,
                     Backend &backend, const TimeoutPolicy &policy, EvalCache *cache) {
  if (cache)
    if (auto hit = cache->find(nest, action.vf, action.if_))
      return *hit;
  std::optional<BaselineInfo> base = cache ? cache->find_baseline(nest) : std::nullopt;
  if (!base) {
    base = backend.baseline(src, nest, policy);
    if (!(base->exec_time > 0.0))
      throw Error(ErrorCode::BaselineCompileFailed,
                  "baseline of " + nest.nest_id + " reported a non-positive time");
    if (cache)
      cache->insert_baseline(nest, *base);
  }
  std::string injected = inject(src.text, nest, {action.vf, action.if_});
  CandidateResult c = backend.candidate(src, nest, injected, action, policy, *base);
  Measurement m;
  m.t_baseline = base->exec_time;
  m.status = c.status;
  m.t_candidate =
      c.status == CompileStatus::Ok ? c.exec_time : policy.multiplier * base->exec_time;
  m.reward = reward(m.t_baseline, m.t_candidate, m.status);
  if (cache)
    cache->insert(nest, action.vf, action.if_, m);
  return m;
}

//===-- Configuration -----------------------------------------------------===//

nlohmann::json to_json(const EnvConfig &c) {
  return {{"backend", c.backend},
          {"action_space", to_json(c.space)},
          {"workers", c.workers},
          {"timeout_multiplier", c.timeout.multiplier},
          {"compile_floor_seconds", c.timeout.compile_floor_seconds},
          {"sim",
           {{"baseline_vf", c.sim.baseline_vf},
            {"baseline_if", c.sim.baseline_if},
            {"compile_base_seconds", c.sim.compile_base_seconds}}},
          {"clang",
           {{"compiler", c.clang.compiler},
            {"flags", c.clang.flags},
            {"runs", c.clang.runs},
            {"warmups", c.clang.warmups},
            {"statistic", c.clang.statistic}}}};
}

EnvConfig env_config_from_json(const nlohmann::json &j) {
  EnvConfig c;
  if (!j.is_object())
    throw Error(ErrorCode::Schema, "env config: expected object");
  try {
    c.backend = j.value("backend", c.backend);
    if (j.contains("action_space"))
      c.space = action_space_from_json(j["action_space"]);
    c.workers = j.value("workers", c.workers);
    c.timeout.multiplier = j.value("timeout_multiplier", c.timeout.multiplier);
    c.timeout.compile_floor_seconds =
        j.value("compile_floor_seconds", c.timeout.compile_floor_seconds);
    if (j.contains("sim")) {
      const auto &s = j["sim"];
      c.sim.baseline_vf = s.value("baseline_vf", c.sim.baseline_vf);
      c.sim.baseline_if = s.value("baseline_if", c.sim.baseline_if);
      c.sim.compile_base_seconds = s.value("compile_base_seconds", c.sim.compile_base_seconds);
    }
    if (j.contains("clang")) {
      const auto &k = j["clang"];
      c.clang.compiler = k.value("compiler", c.clang.compiler);
      c.clang.flags = k.value("flags", c.clang.flags);
      c.clang.runs = k.value("runs", c.clang.runs);
      c.clang.warmups = k.value("warmups", c.clang.warmups);
      c.clang.statistic = k.value("statistic", c.clang.statistic);
    }
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::Schema, std::string("env config: ") + e.what());
  }
  if (c.workers < 1 || !(c.timeout.multiplier > 0.0) || !is_pow2(c.sim.baseline_vf) ||
      !is_pow2(c.sim.baseline_if))
    throw Error(ErrorCode::Schema, "env config: value out of range");
  return c;
}

std::unique_ptr<Backend> make_backend(const EnvConfig &c) {
  if (c.backend == "sim")
    return std::make_unique<SimBackend>(c.sim);
  if (c.backend == "clang")
    return std::make_unique<ClangBackend>(c.clang);
  throw Error(ErrorCode::BackendUnavailable, "unknown backend '" + c.backend + "'");
}

void parallel_for(size_t n, int workers, const std::function<void(size_t)> &fn) {
  if (workers <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  size_t threads = std::min(n, static_cast<size_t>(workers));
  for (size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(err_mu);
          if (!first_error)
            first_error = std::current_exception();
        }
      }
    });
  for (auto &th : pool)
    th.join();
  if (first_error)
    std::rethrow_exception(first_error);
}

} // namespace nvec
