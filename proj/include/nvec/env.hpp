//===- env.hpp - Reward, simulated and clang backends, evaluation cache --===//
#pragma once

#include "nvec/agent.hpp"
#include "nvec/loop_ir.hpp"

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>

namespace nvec {

/// Static loop properties consumed by the simulated backend.
struct SimLoopFeatures {
  double trip_count = 1024; // N, iterations of the innermost body
  int ops_per_iter = 1;     // c
  int stride = 1;           // s, elements between consecutive iterations
  bool has_reduction = false;
  bool has_predicate = false;
  int elem_bits = 32; // w

  friend bool operator==(const SimLoopFeatures &, const SimLoopFeatures &) = default;
};

nlohmann::json to_json(const SimLoopFeatures &f);
SimLoopFeatures sim_features_from_json(const nlohmann::json &j);

/// Derives SimLoopFeatures from the innermost loop of `nest`.
SimLoopFeatures extract_sim_features(const SourceFile &src, const LoopNest &nest);

/// Best VF under the simulator: 128/w, divided by the stride, clamped to
/// [1, 64] and rounded down to a power of two.
int sim_vf_star(const SimLoopFeatures &f);
int sim_if_star(const SimLoopFeatures &f);

/// Simulated execution time in seconds.
double sim_cost(const SimLoopFeatures &f, int vf, int if_);

enum class CompileStatus { Ok, Timeout, Error };
std::string_view status_name(CompileStatus s);
CompileStatus status_from_name(std::string_view s);

inline constexpr double kPenaltyReward = -9.0;

/// (t_baseline - t_candidate) / t_baseline for ok runs, -9 otherwise.
double reward(double t_baseline, double t_candidate, CompileStatus status);

struct Measurement {
  double t_baseline = 0.0;
  double t_candidate = 0.0;
  CompileStatus status = CompileStatus::Ok;
  double reward = 0.0;

  friend bool operator==(const Measurement &, const Measurement &) = default;
};

struct TimeoutPolicy {
  double multiplier = 10.0;
  /// Lower bound for the real compile limit, so that very fast baseline
  /// compiles do not make every candidate time out on process start-up noise.
  double compile_floor_seconds = 2.0;
  /// Wall-clock limit for the baseline compile and run themselves.
  double baseline_limit_seconds = 120.0;
};

struct BaselineInfo {
  double exec_time = 0.0;
  double compile_time = 0.0;
};

struct CandidateResult {
  CompileStatus status = CompileStatus::Ok;
  double exec_time = 0.0;
  double compile_time = 0.0;
  std::string detail;
};

class Backend {
public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  virtual bool deterministic() const = 0;
  /// Throws BaselineCompileFailed when the unmodified source does not build.
  virtual BaselineInfo baseline(const SourceFile &src, const LoopNest &nest,
                                const TimeoutPolicy &policy) = 0;
  virtual CandidateResult candidate(const SourceFile &src, const LoopNest &nest,
                                    const std::string &injected, const Action &action,
                                    const TimeoutPolicy &policy, const BaselineInfo &base) = 0;
};

struct SimConfig {
  int baseline_vf = 4;
  int baseline_if = 2;
  /// Compile time of a scalar build; a candidate takes
  /// base * (1 + 0.05 * vf * if).
  double compile_base_seconds = 0.05;
};

class SimBackend : public Backend {
public:
  explicit SimBackend(SimConfig cfg = {}) : cfg_(cfg) {}
  std::string name() const override { return "sim"; }
  bool deterministic() const override { return true; }
  BaselineInfo baseline(const SourceFile &src, const LoopNest &nest,
                        const TimeoutPolicy &policy) override;
  CandidateResult candidate(const SourceFile &src, const LoopNest &nest,
                            const std::string &injected, const Action &action,
                            const TimeoutPolicy &policy, const BaselineInfo &base) override;
  static double compile_time(const SimConfig &cfg, int vf, int if_);
  const SimConfig &config() const { return cfg_; }

private:
  SimConfig cfg_;
};

struct ClangConfig {
  std::string compiler; // empty: $NVEC_CC, then "clang"
  std::vector<std::string> flags = {"-O3", "-march=native"};
  int runs = 5;
  int warmups = 1;
  /// How repeated runs are combined: "median" or "min".
  std::string statistic = "median";
  std::string work_dir; // empty: system temp directory
};

/// Compiles `source_path` and times the resulting executable. The harness may
/// print "nvec_time_ns=<value>"; otherwise process wall time is used.
struct ClangMeasure {
  double compile_time = 0.0;
  double exec_time = 0.0;
};
ClangMeasure clang_backend_measure(const ClangConfig &cfg, const std::string &source_path,
                                   double compile_timeout, double run_timeout);

/// Compiler binary chosen by config, then $NVEC_CC, then "clang". Throws
/// CompilerNotFound.
std::string resolve_compiler(const ClangConfig &cfg);

class ClangBackend : public Backend {
public:
  explicit ClangBackend(ClangConfig cfg);
  std::string name() const override { return "clang"; }
  bool deterministic() const override { return false; }
  BaselineInfo baseline(const SourceFile &src, const LoopNest &nest,
                        const TimeoutPolicy &policy) override;
  CandidateResult candidate(const SourceFile &src, const LoopNest &nest,
                            const std::string &injected, const Action &action,
                            const TimeoutPolicy &policy, const BaselineInfo &base) override;

private:
  ClangConfig cfg_;
  std::string scratch_path(const std::string &tag);
};

/// Memoizes measurements keyed by (nest_id, source digest, vf, if) and
/// baselines keyed by (nest_id, source digest). Optionally persisted as JSON
/// lines. Safe for concurrent use.
class EvalCache {
public:
  EvalCache() = default;
  /// Loads existing records from `path` (if present) and appends new ones.
  explicit EvalCache(std::string path);

  std::optional<Measurement> find(const LoopNest &nest, int vf, int if_) const;
  void insert(const LoopNest &nest, int vf, int if_, const Measurement &m);
  std::optional<BaselineInfo> find_baseline(const LoopNest &nest) const;
  void insert_baseline(const LoopNest &nest, const BaselineInfo &b);
  size_t size() const;

private:
  using Key = std::tuple<std::string, uint64_t, int, int>;
  mutable std::mutex mu_;
  std::map<Key, Measurement> cells_;
  std::map<std::pair<std::string, uint64_t>, BaselineInfo> baselines_;
  std::string path_;
  void append(const nlohmann::json &record);
};

/// Injects the pragma for `action`, measures candidate and (memoized)
/// baseline, and applies the timeout policy. A timed-out or failed candidate
/// is recorded with t_candidate = multiplier * t_baseline and reward -9.
Measurement evaluate(const SourceFile &src, const LoopNest &nest, const Action &action,
                     Backend &backend, const TimeoutPolicy &policy, EvalCache *cache);

struct EnvConfig {
  std::string backend = "sim";
  ActionSpace space; // the (VF, IF) grid the target supports
  SimConfig sim;
  ClangConfig clang;
  TimeoutPolicy timeout;
  int workers = 1;
};

nlohmann::json to_json(const EnvConfig &c);
EnvConfig env_config_from_json(const nlohmann::json &j);
std::unique_ptr<Backend> make_backend(const EnvConfig &c);

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(size_t n, int workers, const std::function<void(size_t)> &fn);

} // namespace nvec
