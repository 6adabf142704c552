//===- agent.hpp - Contextual-bandit PPO over joint (VF, IF) actions -----===//
#pragma once

#include "nvec/embedding.hpp"
#include "nvec/nn.hpp"

#include <optional>
#include <vector>

namespace nvec {

struct Action {
  size_t index = 0;
  int vf = 1;
  int if_ = 1;

  friend bool operator==(const Action &, const Action &) = default;
};

class ActionSpace {
public:
  ActionSpace() : ActionSpace(16, 8) {}
  /// Powers of two 1..max_vf and 1..max_if. Both maxima must be powers of two.
  ActionSpace(int max_vf, int max_if);

  size_t size() const { return vfs_.size() * ifs_.size(); }
  const std::vector<int> &vfs() const { return vfs_; }
  const std::vector<int> &ifs() const { return ifs_; }
  int max_vf() const { return vfs_.back(); }
  int max_if() const { return ifs_.back(); }

  size_t encode(size_t vf_idx, size_t if_idx) const;
  Action decode(size_t index) const;
  /// Index of an in-grid (vf, if) pair; nullopt otherwise.
  std::optional<size_t> index_of(int vf, int if_) const;

  friend bool operator==(const ActionSpace &, const ActionSpace &) = default;

private:
  std::vector<int> vfs_;
  std::vector<int> ifs_;
};

nlohmann::json to_json(const ActionSpace &s);
ActionSpace action_space_from_json(const nlohmann::json &j);

bool is_pow2(long long v);

struct PolicyNet {
  nn::Mlp trunk;  // in -> 64 -> 64, tanh
  nn::Mlp policy; // 64 -> |actions|
  nn::Mlp value;  // 64 -> 1

  static PolicyNet create(size_t in_dim, size_t n_actions, Rng &rng,
                          const std::vector<size_t> &hidden = {64, 64});
  size_t in_dim() const { return trunk.in_dim(); }
  size_t n_actions() const { return policy.out_dim(); }
};

struct PolicyCache {
  nn::MlpCache trunk, policy, value;
};

struct PolicyOutput {
  nn::Vector logits;
  nn::Vector log_probs;
  double value = 0.0;
};

PolicyOutput policy_forward(const PolicyNet &net, const nn::Vector &state,
                            PolicyCache *cache = nullptr);

enum class ActMode { Sample, Greedy };

struct ActResult {
  size_t action = 0;
  double logp = 0.0;
  double value = 0.0;
};

ActResult act(const PolicyNet &net, const nn::Vector &state, ActMode mode, Rng &rng);
/// Greedy decision from a precomputed output (argmax, lowest index on ties).
size_t greedy_index(const nn::Vector &logits);

struct Transition {
  nn::Vector state;
  /// When set and joint training is on, the state is recomputed from this bag
  /// and gradients flow into the embedding.
  const ResolvedBag *bag = nullptr;
  size_t action = 0;
  double reward = 0.0;
  double logp_old = 0.0;
  double value_old = 0.0;
};

struct PpoConfig {
  double lr = 5e-5;
  /// Adam step size for the embedding under joint training.
  double embedding_lr = 1e-3;
  double clip_eps = 0.2;
  int epochs_per_batch = 4;
  size_t batch_size = 500;
  size_t minibatch_size = 25;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  uint64_t seed = 0;
};

nlohmann::json to_json(const PpoConfig &c);
PpoConfig ppo_config_from_json(const nlohmann::json &j);

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  /// Before any parameter step: max |ratio - 1| and clipped fraction over the
  /// whole batch. Both are exactly 0 when logp_old came from the same net.
  double initial_ratio_dev = 0.0;
  double initial_clip_frac = 0.0;
  size_t steps = 0; // optimizer steps taken
};

/// Optimizer state carried across updates.
struct PpoOptimizer {
  nn::AdamState policy;
  nn::AdamState embedding;
  uint64_t updates = 0;
};

struct PolicyGrads {
  nn::MlpGrads trunk, policy, value;

  static PolicyGrads zeros_like(const PolicyNet &net);
  void set_zero();
};

struct MinibatchTally {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  size_t clipped = 0;
  size_t count = 0;
};

/// Mean PPO loss over `items` (transition, normalized advantage) with its
/// gradient accumulated into `grads` and, when joint, `emb_grads`.
double ppo_loss_grads(const PolicyNet &net, const EmbeddingNet *embedding,
                      const std::vector<std::pair<const Transition *, double>> &items,
                      const PpoConfig &cfg, PolicyGrads &grads, EmbeddingGrads *emb_grads,
                      MinibatchTally *tally = nullptr);

/// Clipped-surrogate PPO on one batch. `embedding` may be null (frozen).
PpoStats ppo_update(PolicyNet &net, EmbeddingNet *embedding, const std::vector<Transition> &batch,
                    const PpoConfig &cfg, PpoOptimizer &opt);

nlohmann::json to_json(const PolicyNet &net);
PolicyNet policy_from_json(const nlohmann::json &j);
/// Parses serialized JSON text; malformed or truncated text is a SchemaError.
PolicyNet policy_from_text(std::string_view text);

} // namespace nvec
