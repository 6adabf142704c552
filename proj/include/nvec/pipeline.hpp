//===- pipeline.hpp - Training, prediction and benchmarking ---------------===//
#pragma once

#include "nvec/agent.hpp"
#include "nvec/baselines.hpp"
#include "nvec/datasetgen.hpp"
#include "nvec/embedding.hpp"
#include "nvec/env.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace nvec {

struct TrainConfig {
  long steps = 20000;
  PpoConfig ppo;
  EmbeddingConfig embedding;
  std::vector<size_t> hidden = {64, 64};
  bool joint = true; // gradients flow into the embedding
  uint64_t seed = 0;
};

nlohmann::json to_json(const TrainConfig &c);
TrainConfig train_config_from_json(const nlohmann::json &j);

/// Embedding and policy trained together, plus what is needed to reuse them.
struct Checkpoint {
  EmbeddingNet embedding;
  PolicyNet policy;
  ActionSpace space;
  nlohmann::json config = nlohmann::json::object();
};

nlohmann::json to_json(const Checkpoint &c);
Checkpoint checkpoint_from_json(const nlohmann::json &j);
void save_checkpoint(const Checkpoint &c, const std::string &path);
Checkpoint load_checkpoint(const std::string &path);

/// Builds the vocabulary from `programs` and draws fresh parameters.
Checkpoint init_checkpoint(const std::vector<Program> &programs, const ActionSpace &space,
                           const TrainConfig &cfg);

struct BatchLog {
  int batch = 0;
  long steps = 0; // environment steps so far
  double reward_mean = 0.0;
  PpoStats stats;
};

struct TrainResult {
  std::vector<BatchLog> batches;
  std::vector<double> rewards; // one per environment step
  /// Mean reward over the last `window` steps (all when fewer).
  double tail_reward_mean(size_t window = 1000) const;
};

/// Alternates rollouts (programs drawn uniformly from `programs`, actions
/// sampled from the policy) with PPO updates until cfg.steps.
TrainResult train(Checkpoint &ckpt, const std::vector<Program> &programs, Backend &backend,
                  const TimeoutPolicy &policy, EvalCache *cache, const TrainConfig &cfg,
                  const std::function<void(const BatchLog &)> &on_batch = {});

std::string training_log_csv(const TrainResult &r);

/// Code vector of a nest under a checkpoint's embedding.
nn::Vector code_vector(const Checkpoint &ckpt, const LoopNest &nest);
/// Greedy action under the checkpoint's policy.
Action predict(const Checkpoint &ckpt, const LoopNest &nest);

//===-- Comparison models -------------------------------------------------===//

/// NNS, tree and FCNN fitted on frozen code vectors of a trained checkpoint.
struct FittedBaselines {
  KnnModel nns;
  TreeModel tree;
  SupervisedNet supervised;
};

/// Throws MissingOracleResult when a program has no label.
FittedBaselines fit_baselines(const Checkpoint &ckpt, const std::vector<Program> &programs,
                              const std::map<std::string, OracleLabel> &labels, int k,
                              const TreeConfig &tree, const SupervisedConfig &supervised);

nlohmann::json to_json(const FittedBaselines &b);
FittedBaselines baselines_from_json(const nlohmann::json &j);

//===-- Benchmarking ------------------------------------------------------===//

/// Geometric mean; throws InvalidArgument for an empty input or a
/// non-positive value.
double geomean(const std::vector<double> &v);

/// Method names accepted by bench(), "baseline" first.
const std::vector<std::string> &bench_methods();

/// What bench() may use. Null members make the matching method unavailable.
struct BenchModels {
  const Checkpoint *rl = nullptr; // also supplies frozen vectors for nns/tree/supervised
  const FittedBaselines *baselines = nullptr;
  const std::map<std::string, OracleLabel> *labels = nullptr; // bruteforce
  ActionSpace space;
};

struct BenchOptions {
  std::vector<std::string> methods; // "baseline" is always reported
  int random_trials = 1;
  /// RL keeps the fastest of the greedy action and best_of - 1 sampled ones.
  int best_of = 1;
  uint64_t seed = 0;
  int workers = 1;
};

struct BenchRow {
  std::string program_id;
  std::map<std::string, Action> action;
  std::map<std::string, double> normalized; // t_candidate / t_baseline
};

struct EfficiencyPoint {
  std::string method;
  long compilations = 0;
  double geomean = 0.0;
};

struct BenchReport {
  std::vector<std::string> methods; // "baseline" first, then bench_methods() order
  std::vector<BenchRow> rows;
  std::map<std::string, double> geomean;
  std::vector<EfficiencyPoint> efficiency;
};

/// Evaluates each method's chosen action once per program. Throws
/// MissingModel when a requested method has nothing to run.
BenchReport bench(const std::vector<Program> &programs, const BenchModels &models,
                  const BenchOptions &opt, Backend &backend, const TimeoutPolicy &policy,
                  EvalCache *cache);

struct EfficiencyConfig {
  std::vector<long> budgets = {2000, 4000, 8000, 12000, 16000, 20000};
  TrainConfig train;
  SupervisedConfig supervised;
  int workers = 1;
};

/// Test-split geomean of RL and of the end-to-end supervised FCNN as a
/// function of compilations spent. RL spends one per training step; a
/// supervised label costs one full grid. RL points are taken at the first
/// batch boundary at or past each budget.
std::vector<EfficiencyPoint> efficiency_curve(const std::vector<Program> &train,
                                              const std::vector<Program> &test,
                                              const ActionSpace &space,
                                              const EfficiencyConfig &cfg, Backend &backend,
                                              const TimeoutPolicy &policy, EvalCache *cache);

nlohmann::json to_json(const BenchReport &r);
BenchReport bench_report_from_json(const nlohmann::json &j);
/// One row per program, one column per method.
std::string bench_csv(const BenchReport &r);
std::string efficiency_csv(const BenchReport &r);
/// Plain-text summary: geomeans, speedups and the efficiency table.
std::string render_report(const BenchReport &r);

} // namespace nvec
