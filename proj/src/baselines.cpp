//===- baselines.cpp - Oracle, random search, kNN, CART and supervised ----===//

#include "nvec/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>

namespace nvec {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double cell_time(const Measurement &m) {
  return m.status == CompileStatus::Ok ? m.t_candidate : kInf;
}

} // namespace

size_t oracle_argmin(const std::vector<double> &times) {
  if (times.empty())
    throw Error(ErrorCode::InvalidArgument, "empty grid");
  size_t best = 0;
  for (size_t i = 1; i < times.size(); ++i)
    if (times[i] < times[best])
      best = i;
  return best;
}

OracleLabel brute_force(const std::string &program_id, const SourceFile &src,
                        const LoopNest &nest, const ActionSpace &space, Backend &backend,
                        const TimeoutPolicy &policy, EvalCache *cache, int workers) {
  OracleLabel l;
  l.program_id = program_id;
  l.grid_time.assign(space.size(), kInf);
  std::vector<Measurement> cells(space.size());
  // The baseline is measured once up front so that workers share it.
  cells[0] = evaluate(src, nest, space.decode(0), backend, policy, cache);
  parallel_for(space.size() - 1, workers, [&](size_t i) {
    cells[i + 1] = evaluate(src, nest, space.decode(i + 1), backend, policy, cache);
  });
  for (size_t i = 0; i < space.size(); ++i)
    l.grid_time[i] = cell_time(cells[i]);
  l.t_baseline = cells[0].t_baseline;
  size_t best = oracle_argmin(l.grid_time);
  l.best_action = space.decode(best);
  l.best_time = l.grid_time[best];
  return l;
}

nlohmann::json to_json(const OracleLabel &l) {
  nlohmann::json grid = nlohmann::json::array();
  for (double t : l.grid_time)
    grid.push_back(std::isfinite(t) ? nlohmann::json(t) : nlohmann::json(nullptr));
  return {{"program_id", l.program_id},
          {"vf", l.best_action.vf},
          {"if", l.best_action.if_},
          {"time", std::isfinite(l.best_time) ? nlohmann::json(l.best_time) : nlohmann::json(nullptr)},
          {"t_baseline", l.t_baseline},
          {"full_grid", grid}};
}

OracleLabel label_from_json(const nlohmann::json &j, const ActionSpace &space) {
  OracleLabel l;
  try {
    l.program_id = j.at("program_id").get<std::string>();
    auto idx = space.index_of(j.at("vf").get<int>(), j.at("if").get<int>());
    if (!idx)
      throw Error(ErrorCode::Schema, "label of " + l.program_id + " is off the grid");
    l.best_action = space.decode(*idx);
    l.t_baseline = j.at("t_baseline").get<double>();
    const auto &grid = j.at("full_grid");
    if (grid.size() != space.size())
      throw Error(ErrorCode::Schema, "label of " + l.program_id + " has a wrong grid size");
    for (const auto &t : grid)
      l.grid_time.push_back(t.is_null() ? kInf : t.get<double>());
    l.best_time = l.grid_time[*idx];
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::Schema, std::string("label: ") + e.what());
  }
  return l;
}

void save_labels(const std::vector<OracleLabel> &labels, const std::string &path) {
  std::string out;
  for (const auto &l : labels)
    out += to_json(l).dump() + "\n";
  write_file(path, out);
}

std::vector<OracleLabel> load_labels(const std::string &path, const ActionSpace &space) {
  std::ifstream in(path);
  if (!in)
    throw Error(ErrorCode::Io, "cannot open " + path);
  std::vector<OracleLabel> out;
  for (std::string line; std::getline(in, line);) {
    if (line.empty())
      continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw Error(ErrorCode::Schema, path + ": malformed label line");
    out.push_back(label_from_json(j, space));
  }
  return out;
}

SearchResult random_search(const SourceFile &src, const LoopNest &nest, const ActionSpace &space,
                           Backend &backend, const TimeoutPolicy &policy, EvalCache *cache,
                           int trials, uint64_t seed) {
  if (trials < 1)
    throw Error(ErrorCode::InvalidArgument, "random search needs at least one trial");
  std::vector<size_t> order(space.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(seed);
  size_t n = std::min(order.size(), static_cast<size_t>(trials));
  for (size_t i = 0; i < n; ++i)
    std::swap(order[i], order[i + static_cast<size_t>(rng.below(order.size() - i))]);
  SearchResult r;
  size_t best = order[0];
  r.time = kInf;
  for (size_t i = 0; i < n; ++i) {
    double t = cell_time(evaluate(src, nest, space.decode(order[i]), backend, policy, cache));
    ++r.evaluations;
    if (t < r.time || (t == r.time && order[i] < best)) {
      r.time = t;
      best = order[i];
    }
  }
  r.action = space.decode(best);
  return r;
}

//===-- Nearest neighbours ------------------------------------------------===//

size_t knn_predict(const KnnModel &m, const nn::Vector &v) {
  if (m.x.empty())
    throw Error(ErrorCode::EmptyModel, "kNN model has no training points");
  if (m.k < 1)
    throw Error(ErrorCode::InvalidArgument, "kNN needs k >= 1");
  std::vector<std::pair<double, size_t>> dist(m.x.size());
  for (size_t i = 0; i < m.x.size(); ++i) {
    nn::require_dim(static_cast<size_t>(m.x[i].size()), static_cast<size_t>(v.size()),
                    "knn query");
    dist[i] = {(m.x[i] - v).squaredNorm(), i};
  }
  auto closer = [&](const auto &a, const auto &b) {
    if (a.first != b.first)
      return a.first < b.first;
    return m.ids[a.second] < m.ids[b.second];
  };
  size_t k = std::min(static_cast<size_t>(m.k), dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(k), dist.end(), closer);
  std::map<size_t, int> votes;
  for (size_t i = 0; i < k; ++i)
    ++votes[m.labels[dist[i].second]];
  int top = 0;
  for (const auto &[label, n] : votes)
    top = std::max(top, n);
  for (size_t i = 0; i < k; ++i) {
    size_t label = m.labels[dist[i].second];
    if (votes[label] == top)
      return label;
  }
  return m.labels[dist[0].second];
}

nlohmann::json to_json(const KnnModel &m) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto &x : m.x)
    pts.push_back(nn::doubles_to_json({x.data(), static_cast<size_t>(x.size())}));
  return {{"k", m.k}, {"points", pts}, {"labels", m.labels}, {"ids", m.ids}};
}

KnnModel knn_from_json(const nlohmann::json &j) {
  KnnModel m;
  try {
    m.k = j.at("k").get<int>();
    m.labels = j.at("labels").get<std::vector<size_t>>();
    m.ids = j.at("ids").get<std::vector<std::string>>();
    for (const auto &p : j.at("points")) {
      nn::Vector x(static_cast<long>(p.size()));
      nn::doubles_from_json(p, {x.data(), static_cast<size_t>(x.size())}, "knn point");
      m.x.push_back(std::move(x));
    }
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::Schema, std::string("knn model: ") + e.what());
  }
  if (m.labels.size() != m.x.size() || m.ids.size() != m.x.size())
    throw Error(ErrorCode::Schema, "knn model: inconsistent sizes");
  return m;
}

//===-- Decision tree -----------------------------------------------------===//

namespace {

struct TreeBuilder {
  const std::vector<nn::Vector> &x;
  const std::vector<size_t> &y;
  size_t n_classes;
  TreeConfig cfg;
  std::vector<TreeNode> nodes;

  static double impurity(double n, double sum_sq) { return n <= 0 ? 0.0 : n - sum_sq / n; }

  int build(std::vector<size_t> idx, int depth) {
    std::vector<double> counts(n_classes, 0.0);
    for (size_t i : idx)
      counts[y[i]] += 1.0;
    TreeNode node;
    node.label = static_cast<size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    int id = static_cast<int>(nodes.size());
    nodes.push_back(node);

    double n = static_cast<double>(idx.size());
    double sq = 0.0;
    for (double c : counts)
      sq += c * c;
    double parent = impurity(n, sq);
    bool pure = counts[node.label] == n;
    if (pure || depth >= cfg.max_depth || idx.size() < 2 * static_cast<size_t>(cfg.min_leaf))
      return id;

    double best = parent - 1e-12;
    int best_f = -1;
    double best_thr = 0.0;
    size_t dims = static_cast<size_t>(x[idx[0]].size());
    std::vector<size_t> sorted = idx;
    for (size_t f = 0; f < dims; ++f) {
      std::sort(sorted.begin(), sorted.end(), [&](size_t a, size_t b) {
        double va = x[a][static_cast<long>(f)], vb = x[b][static_cast<long>(f)];
        return va != vb ? va < vb : a < b;
      });
      std::vector<double> left(n_classes, 0.0), right = counts;
      double sq_l = 0.0, sq_r = sq;
      for (size_t p = 0; p + 1 < sorted.size(); ++p) {
        size_t c = y[sorted[p]];
        sq_l += 2.0 * left[c] + 1.0;
        sq_r -= 2.0 * right[c] - 1.0;
        left[c] += 1.0;
        right[c] -= 1.0;
        double v = x[sorted[p]][static_cast<long>(f)];
        double next = x[sorted[p + 1]][static_cast<long>(f)];
        if (v == next)
          continue;
        double nl = static_cast<double>(p + 1), nr = n - nl;
        if (nl < cfg.min_leaf || nr < cfg.min_leaf)
          continue;
        double imp = impurity(nl, sq_l) + impurity(nr, sq_r);
        if (imp < best - 1e-12) {
          best = imp;
          best_f = static_cast<int>(f);
          best_thr = 0.5 * (v + next);
        }
      }
    }
    if (best_f < 0)
      return id;

    std::vector<size_t> li, ri;
    for (size_t i : idx)
      (x[i][best_f] <= best_thr ? li : ri).push_back(i);
    nodes[static_cast<size_t>(id)].feature = best_f;
    nodes[static_cast<size_t>(id)].threshold = best_thr;
    int l = build(std::move(li), depth + 1);
    int r = build(std::move(ri), depth + 1);
    nodes[static_cast<size_t>(id)].left = l;
    nodes[static_cast<size_t>(id)].right = r;
    return id;
  }
};

int subtree_depth(const TreeModel &m, int id) {
  const TreeNode &n = m.nodes[static_cast<size_t>(id)];
  if (n.feature < 0)
    return 0;
  return 1 + std::max(subtree_depth(m, n.left), subtree_depth(m, n.right));
}

} // namespace

int TreeModel::depth() const { return nodes.empty() ? 0 : subtree_depth(*this, 0); }

TreeModel tree_fit(const std::vector<nn::Vector> &x, const std::vector<size_t> &y,
                   size_t n_classes, const TreeConfig &cfg) {
  if (x.empty())
    throw Error(ErrorCode::EmptyModel, "decision tree needs training data");
  if (x.size() != y.size())
    throw Error(ErrorCode::DimMismatch, "tree_fit: inputs and labels differ in count");
  if (cfg.max_depth < 0 || cfg.min_leaf < 1)
    throw Error(ErrorCode::InvalidArgument, "tree_fit: bad depth or leaf size");
  for (const auto &v : x)
    nn::require_dim(static_cast<size_t>(v.size()), static_cast<size_t>(x[0].size()), "tree input");
  for (size_t c : y)
    if (c >= n_classes)
      throw Error(ErrorCode::InvalidArgument, "tree_fit: label out of range");
  TreeBuilder b{x, y, n_classes, cfg, {}};
  std::vector<size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  b.build(std::move(idx), 0);
  TreeModel m;
  m.nodes = std::move(b.nodes);
  m.n_classes = n_classes;
  return m;
}

size_t tree_predict(const TreeModel &m, const nn::Vector &v) {
  if (m.nodes.empty())
    throw Error(ErrorCode::EmptyModel, "decision tree is empty");
  const TreeNode *n = &m.nodes[0];
  while (n->feature >= 0) {
    if (n->feature >= v.size())
      throw Error(ErrorCode::DimMismatch, "tree query is too short");
    n = &m.nodes[static_cast<size_t>(v[n->feature] <= n->threshold ? n->left : n->right)];
  }
  return n->label;
}

nlohmann::json to_json(const TreeModel &m) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto &n : m.nodes)
    nodes.push_back({{"f", n.feature}, {"t", n.threshold}, {"l", n.left}, {"r", n.right},
                     {"y", n.label}});
  return {{"n_classes", m.n_classes}, {"nodes", nodes}};
}

TreeModel tree_from_json(const nlohmann::json &j) {
  TreeModel m;
  try {
    m.n_classes = j.at("n_classes").get<size_t>();
    for (const auto &n : j.at("nodes"))
      m.nodes.push_back({n.at("f").get<int>(), n.at("t").get<double>(), n.at("l").get<int>(),
                         n.at("r").get<int>(), n.at("y").get<size_t>()});
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::Schema, std::string("tree model: ") + e.what());
  }
  int n = static_cast<int>(m.nodes.size());
  for (const auto &node : m.nodes)
    if (node.feature >= 0 && (node.left <= 0 || node.left >= n || node.right <= 0 || node.right >= n))
      throw Error(ErrorCode::Schema, "tree model: child index out of range");
  return m;
}

//===-- Supervised network ------------------------------------------------===//

SupervisedNet supervised_init(size_t in_dim, size_t n_classes, const SupervisedConfig &cfg) {
  Rng rng(mix_seed(cfg.seed, 0x5e1));
  std::vector<size_t> dims = {in_dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(n_classes);
  return {nn::Mlp::create(dims, nn::Activation::Tanh, nn::Activation::Identity, rng,
                          nn::Init::Xavier, nn::Init::SmallXavier)};
}

namespace {

// Shared minibatch loop. `input(i)` returns the network input of example i;
// `push(i, dx)` receives dL/dinput (joint training only).
template <class Input, class Push, class Extra>
void train_classifier(SupervisedNet &net, size_t n, const std::vector<size_t> &y,
                               const SupervisedConfig &cfg, Input input, Push push,
                               Extra extra_slots, const std::function<double()> &heldout,
                               std::vector<EpochStats> *log) {
  nn::AdamState adam;
  adam.config.lr = cfg.lr;
  nn::MlpGrads grads = nn::MlpGrads::zeros_like(net.mlp);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(mix_seed(cfg.seed, 0x5e2));
  size_t batch = std::max<size_t>(1, cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(rng.below(i))]);
    double loss = 0.0;
    size_t correct = 0;
    for (size_t s = 0; s < n; s += batch) {
      size_t e = std::min(n, s + batch);
      double scale = 1.0 / static_cast<double>(e - s);
      grads.set_zero();
      for (size_t p = s; p < e; ++p) {
        size_t i = order[p];
        nn::Vector x = input(i);
        nn::MlpCache cache;
        nn::Vector logits = nn::forward(net.mlp, x, &cache);
        nn::Vector prob = nn::softmax(logits);
        loss -= std::log(std::max(prob[static_cast<long>(y[i])], 1e-300));
        if (greedy_index(logits) == y[i])
          ++correct;
        prob[static_cast<long>(y[i])] -= 1.0;
        nn::Vector dx = nn::backward(net.mlp, cache, prob * scale, grads);
        push(i, dx);
      }
      std::vector<nn::ParamSlot> slots;
      nn::append_slots(net.mlp, grads, slots);
      extra_slots(slots);
      nn::adam_step(slots, adam);
    }
    if (log)
      log->push_back({epoch + 1, loss / static_cast<double>(n),
                      static_cast<double>(correct) / static_cast<double>(n), heldout()});
  }
}

void check_labels(size_t n, const std::vector<size_t> &y, size_t n_classes) {
  if (n == 0)
    throw Error(ErrorCode::EmptyModel, "supervised training needs examples");
  if (y.size() != n)
    throw Error(ErrorCode::DimMismatch, "inputs and labels differ in count");
  for (size_t c : y)
    if (c >= n_classes)
      throw Error(ErrorCode::InvalidArgument, "label out of range");
}

} // namespace

SupervisedNet supervised_fit(const std::vector<nn::Vector> &x, const std::vector<size_t> &y,
                             size_t n_classes, const SupervisedConfig &cfg,
                             const std::vector<nn::Vector> *heldout_x,
                             const std::vector<size_t> *heldout_y,
                             std::vector<EpochStats> *log) {
  check_labels(x.size(), y, n_classes);
  SupervisedNet net = supervised_init(static_cast<size_t>(x[0].size()), n_classes, cfg);
  auto heldout = [&]() {
    if (!heldout_x || !heldout_y || heldout_x->empty())
      return std::numeric_limits<double>::quiet_NaN();
    size_t ok = 0;
    for (size_t i = 0; i < heldout_x->size(); ++i)
      ok += supervised_predict(net, (*heldout_x)[i]) == (*heldout_y)[i];
    return static_cast<double>(ok) / static_cast<double>(heldout_x->size());
  };
  train_classifier(
      net, x.size(), y, cfg, [&](size_t i) { return x[i]; }, [](size_t, const nn::Vector &) {},
      [](std::vector<nn::ParamSlot> &) {}, std::function<double()>(heldout), log);
  return net;
}

SupervisedNet supervised_fit_joint(EmbeddingNet &embedding,
                                   const std::vector<const ResolvedBag *> &bags,
                                   const std::vector<size_t> &y, size_t n_classes,
                                   const SupervisedConfig &cfg, std::vector<EpochStats> *log) {
  check_labels(bags.size(), y, n_classes);
  SupervisedNet net = supervised_init(static_cast<size_t>(embedding.config.dim), n_classes, cfg);
  EmbeddingGrads eg = EmbeddingGrads::zeros_like(embedding);
  std::vector<EmbedCache> caches(bags.size());
  nn::AdamState emb_adam;
  emb_adam.config.lr = cfg.lr;
  auto input = [&](size_t i) { return embed(*bags[i], embedding, &caches[i]); };
  auto push = [&](size_t i, const nn::Vector &dx) {
    embed_backward(embedding, caches[i], dx, eg);
  };
  // Embedding slots are stepped by their own optimizer right after the
  // network step, inside the same minibatch.
  auto extra = [&](std::vector<nn::ParamSlot> &) {
    eg.finalize_rows();
    std::vector<nn::ParamSlot> es;
    append_slots(embedding, eg, es);
    nn::adam_step(es, emb_adam);
    eg.clear();
  };
  train_classifier(net, bags.size(), y, cfg, input, push, extra,
                   std::function<double()>([] { return std::numeric_limits<double>::quiet_NaN(); }),
                   log);
  return net;
}

size_t supervised_predict(const SupervisedNet &net, const nn::Vector &v) {
  return greedy_index(nn::forward(net.mlp, v));
}

nlohmann::json to_json(const SupervisedNet &n) { return {{"mlp", nn::to_json(n.mlp)}}; }

SupervisedNet supervised_from_json(const nlohmann::json &j) {
  if (!j.is_object() || !j.contains("mlp"))
    throw Error(ErrorCode::Schema, "supervised model: missing 'mlp'");
  return {nn::mlp_from_json(j.at("mlp"))};
}

} // namespace nvec
