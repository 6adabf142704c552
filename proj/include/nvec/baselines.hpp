//===- baselines.hpp - Brute-force oracle and comparison predictors -------===//
#pragma once

#include "nvec/agent.hpp"
#include "nvec/embedding.hpp"
#include "nvec/env.hpp"
#include "nvec/nn.hpp"

#include <string>
#include <vector>

namespace nvec {

/// Exhaustive measurement of one program over the action grid.
struct OracleLabel {
  std::string program_id;
  Action best_action;
  double best_time = 0.0;
  double t_baseline = 0.0;
  /// Candidate time per action index; +inf where the cell timed out or failed.
  std::vector<double> grid_time;
};

/// First minimum of `times`, so ties go to the smallest VF, then smallest IF.
size_t oracle_argmin(const std::vector<double> &times);

OracleLabel brute_force(const std::string &program_id, const SourceFile &src,
                        const LoopNest &nest, const ActionSpace &space, Backend &backend,
                        const TimeoutPolicy &policy, EvalCache *cache, int workers = 1);

nlohmann::json to_json(const OracleLabel &l);
OracleLabel label_from_json(const nlohmann::json &j, const ActionSpace &space);
/// One JSON object per line.
void save_labels(const std::vector<OracleLabel> &labels, const std::string &path);
std::vector<OracleLabel> load_labels(const std::string &path, const ActionSpace &space);

struct SearchResult {
  Action action;
  double time = 0.0; // +inf when every sampled cell failed
  int evaluations = 0;
};

/// Samples `trials` distinct cells uniformly (capped at the grid size) and
/// keeps the fastest, with the oracle's tie-break.
SearchResult random_search(const SourceFile &src, const LoopNest &nest, const ActionSpace &space,
                           Backend &backend, const TimeoutPolicy &policy, EvalCache *cache,
                           int trials, uint64_t seed);

//===-- Nearest neighbours ------------------------------------------------===//

struct KnnModel {
  int k = 5;
  std::vector<nn::Vector> x;
  std::vector<size_t> labels;
  std::vector<std::string> ids; // tie-break key for equal distances
};

/// Majority vote among the k nearest (Euclidean). Equal distances go to the
/// lower id; a vote tie goes to the tied label seen nearest. Throws EmptyModel.
size_t knn_predict(const KnnModel &m, const nn::Vector &v);

nlohmann::json to_json(const KnnModel &m);
KnnModel knn_from_json(const nlohmann::json &j);

//===-- Decision tree -----------------------------------------------------===//

struct TreeConfig {
  int max_depth = 12;
  int min_leaf = 1;
};

struct TreeNode {
  int feature = -1; // -1 for a leaf
  double threshold = 0.0;
  int left = -1; // x[feature] <= threshold
  int right = -1;
  size_t label = 0;
};

struct TreeModel {
  std::vector<TreeNode> nodes; // nodes[0] is the root
  size_t n_classes = 0;
  int depth() const;
};

/// CART with Gini impurity and axis-aligned thresholds at midpoints between
/// distinct values. Ties go to the lowest feature, then the lowest threshold;
/// leaves predict the majority class, lowest index on ties. Throws EmptyModel.
TreeModel tree_fit(const std::vector<nn::Vector> &x, const std::vector<size_t> &y,
                   size_t n_classes, const TreeConfig &cfg = {});
size_t tree_predict(const TreeModel &m, const nn::Vector &v);

nlohmann::json to_json(const TreeModel &m);
TreeModel tree_from_json(const nlohmann::json &j);

//===-- Supervised network ------------------------------------------------===//

struct SupervisedConfig {
  std::vector<size_t> hidden = {64, 64};
  int epochs = 200;
  size_t batch_size = 32;
  double lr = 1e-3;
  uint64_t seed = 0;
};

struct SupervisedNet {
  nn::Mlp mlp; // in -> hidden (tanh) -> n_classes logits
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double heldout_acc = 0.0; // NaN without a held-out set
};

SupervisedNet supervised_init(size_t in_dim, size_t n_classes, const SupervisedConfig &cfg);

/// Cross-entropy training with Adam on fixed input vectors. Throws
/// EmptyModel for an empty training set.
SupervisedNet supervised_fit(const std::vector<nn::Vector> &x, const std::vector<size_t> &y,
                             size_t n_classes, const SupervisedConfig &cfg,
                             const std::vector<nn::Vector> *heldout_x = nullptr,
                             const std::vector<size_t> *heldout_y = nullptr,
                             std::vector<EpochStats> *log = nullptr);

/// End-to-end variant: gradients also flow into `embedding`.
SupervisedNet supervised_fit_joint(EmbeddingNet &embedding,
                                   const std::vector<const ResolvedBag *> &bags,
                                   const std::vector<size_t> &y, size_t n_classes,
                                   const SupervisedConfig &cfg,
                                   std::vector<EpochStats> *log = nullptr);

size_t supervised_predict(const SupervisedNet &net, const nn::Vector &v);

nlohmann::json to_json(const SupervisedNet &n);
SupervisedNet supervised_from_json(const nlohmann::json &j);

} // namespace nvec
