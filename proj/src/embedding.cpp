#include "nvec/embedding.hpp"

#include "nvec/loop_ir.hpp"

#include <algorithm>
#include <numeric>

namespace nvec {
namespace {

struct Terminal {
  const AstNode *node;
  // Ancestors from the snippet root down to the terminal's parent, with the
  // child index taken at each step.
  std::vector<std::pair<const AstNode *, size_t>> chain;
};

void collect_terminals(const AstNode &n, std::vector<std::pair<const AstNode *, size_t>> &chain,
                       std::vector<Terminal> &out) {
  if (n.is_terminal()) {
    out.push_back({&n, chain});
    return;
  }
  for (size_t i = 0; i < n.children.size(); ++i) {
    chain.emplace_back(&n, i);
    collect_terminals(n.children[i], chain, out);
    chain.pop_back();
  }
}

std::string label(const AstNode &n) {
  std::string s(kind_name(n.kind));
  if (!n.op.empty())
    s += "{" + n.op + "}";
  return s;
}

void fill_uniform(nn::Tensor2 &m, Rng &rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = rng.uniform(-0.05, 0.05);
}

void fill_uniform(nn::Vector &v, Rng &rng) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v[i] = rng.uniform(-0.05, 0.05);
}

nn::Tensor2 initial_path_table(const EmbeddingConfig &cfg, uint64_t seed) {
  nn::Tensor2 t(cfg.path_buckets, cfg.d_path);
  Rng rng(mix_seed(seed, 2));
  fill_uniform(t, rng);
  return t;
}

// Distinct token ids of a bag, and for each context the local slot of its
// start and end token.
struct TokenSlots {
  std::vector<uint32_t> ids;
  std::vector<uint32_t> start, end;
};

TokenSlots token_slots(const ResolvedBag &bag) {
  TokenSlots t;
  t.ids = bag.start;
  t.ids.insert(t.ids.end(), bag.end.begin(), bag.end.end());
  std::sort(t.ids.begin(), t.ids.end());
  t.ids.erase(std::unique(t.ids.begin(), t.ids.end()), t.ids.end());
  auto slot = [&](uint32_t id) {
    return static_cast<uint32_t>(std::lower_bound(t.ids.begin(), t.ids.end(), id) - t.ids.begin());
  };
  t.start.reserve(bag.size());
  t.end.reserve(bag.size());
  for (size_t i = 0; i < bag.size(); ++i) {
    t.start.push_back(slot(bag.start[i]));
    t.end.push_back(slot(bag.end[i]));
  }
  return t;
}

nn::Tensor2 gather_rows(const nn::Tensor2 &table, const std::vector<uint32_t> &rows) {
  nn::Tensor2 out(static_cast<Eigen::Index>(rows.size()), table.cols());
  for (size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = table.row(rows[i]);
  return out;
}

void mark_row(size_t row, std::vector<char> &mark, std::vector<size_t> &rows) {
  if (!mark[row]) {
    mark[row] = 1;
    rows.push_back(row);
  }
}

} // namespace

nlohmann::json to_json(const EmbeddingConfig &c) {
  return {{"d_tok", c.d_tok},
          {"d_path", c.d_path},
          {"dim", c.dim},
          {"max_path_len", c.max_path_len},
          {"max_width", c.max_width},
          {"max_contexts", c.max_contexts},
          {"path_buckets", c.path_buckets},
          {"seed", c.seed}};
}

EmbeddingConfig embedding_config_from_json(const nlohmann::json &j) {
  EmbeddingConfig c;
  if (!j.is_object())
    throw Error(ErrorCode::Schema, "embedding config: expected object");
  try {
    c.d_tok = j.value("d_tok", c.d_tok);
    c.d_path = j.value("d_path", c.d_path);
    c.dim = j.value("dim", c.dim);
    c.max_path_len = j.value("max_path_len", c.max_path_len);
    c.max_width = j.value("max_width", c.max_width);
    c.max_contexts = j.value("max_contexts", c.max_contexts);
    c.path_buckets = j.value("path_buckets", c.path_buckets);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::Schema, std::string("embedding config: ") + e.what());
  }
  if (c.d_tok == 0 || c.d_path == 0 || c.dim == 0 || c.path_buckets == 0)
    throw Error(ErrorCode::Schema, "embedding config: dimensions must be positive");
  return c;
}

PathContextBag extract_contexts(std::string_view snippet, const EmbeddingConfig &cfg) {
  AstNode root = parse_statement(snippet);
  PathContextBag bag;
  bag.snippet_hash = fnv1a64(snippet);

  std::vector<Terminal> terms;
  std::vector<std::pair<const AstNode *, size_t>> chain;
  collect_terminals(root, chain, terms);

  std::vector<PathContext> all;
  std::unordered_map<std::string, char> seen;
  for (size_t a = 0; a < terms.size(); ++a) {
    for (size_t b = a + 1; b < terms.size(); ++b) {
      const auto &ca = terms[a].chain, &cb = terms[b].chain;
      size_t lca = 0;
      while (lca < ca.size() && lca < cb.size() && ca[lca].first == cb[lca].first &&
             ca[lca].second == cb[lca].second)
        ++lca;
      // ca[lca] / cb[lca] diverge; both share the node at lca (same pointer).
      if (lca >= ca.size() || lca >= cb.size() || ca[lca].first != cb[lca].first)
        continue;
      size_t edges = (ca.size() - lca) + (cb.size() - lca);
      if (edges > cfg.max_path_len)
        continue;
      size_t ia = ca[lca].second, ib = cb[lca].second;
      if ((ia > ib ? ia - ib : ib - ia) > cfg.max_width)
        continue;
      std::string p = label(*terms[a].node);
      for (size_t k = ca.size(); k-- > lca + 1;)
        p += "^" + label(*ca[k].first);
      p += "^" + label(*ca[lca].first);
      for (size_t k = lca + 1; k < cb.size(); ++k)
        p += "_" + label(*cb[k].first);
      p += "_" + label(*terms[b].node);

      PathContext ctx{terms[a].node->token_text, p, fnv1a64(p) % cfg.path_buckets,
                      terms[b].node->token_text};
      std::string key = ctx.start + '\x1f' + ctx.path_text + '\x1f' + ctx.end;
      if (seen.emplace(key, 1).second)
        all.push_back(std::move(ctx));
    }
  }

  if (all.size() > cfg.max_contexts) {
    std::vector<size_t> idx(all.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    Rng rng(mix_seed(cfg.seed, bag.snippet_hash));
    for (size_t i = 0; i < cfg.max_contexts; ++i) {
      size_t j = i + static_cast<size_t>(rng.below(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(cfg.max_contexts);
    std::sort(idx.begin(), idx.end());
    for (size_t i : idx)
      bag.contexts.push_back(std::move(all[i]));
  } else {
    bag.contexts = std::move(all);
  }
  return bag;
}

PathContextBag observe_snippet(std::string_view snippet, const EmbeddingConfig &cfg) {
  return extract_contexts(normalize_identifiers(snippet).text, cfg);
}

TokenVocab::TokenVocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (size_t i = 0; i < tokens_.size(); ++i)
    index_.emplace(tokens_[i], static_cast<uint32_t>(i + 1));
}

TokenVocab TokenVocab::build(const std::vector<PathContextBag> &bags) {
  std::vector<std::string> toks;
  for (const auto &b : bags)
    for (const auto &c : b.contexts) {
      toks.push_back(c.start);
      toks.push_back(c.end);
    }
  std::sort(toks.begin(), toks.end());
  toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
  return TokenVocab(std::move(toks));
}

uint32_t TokenVocab::id(const std::string &token) const {
  auto it = index_.find(token);
  return it == index_.end() ? 0 : it->second;
}

EmbeddingNet EmbeddingNet::create(const EmbeddingConfig &cfg, TokenVocab vocab, uint64_t seed) {
  EmbeddingNet net;
  net.config = cfg;
  net.vocab = std::move(vocab);
  net.init_seed = seed;
  net.token_table = nn::Tensor2(net.vocab.size(), cfg.d_tok);
  Rng tok_rng(mix_seed(seed, 1));
  fill_uniform(net.token_table, tok_rng);
  net.path_table = initial_path_table(cfg, seed);
  net.combine_w = nn::Tensor2(cfg.dim, net.in_width());
  Rng comb_rng(mix_seed(seed, 3));
  fill_uniform(net.combine_w, comb_rng);
  net.combine_b = nn::Vector::Zero(static_cast<Eigen::Index>(cfg.dim));
  net.attention = nn::Vector(static_cast<Eigen::Index>(cfg.dim));
  Rng att_rng(mix_seed(seed, 4));
  fill_uniform(net.attention, att_rng);
  return net;
}

ResolvedBag resolve(const PathContextBag &bag, const EmbeddingNet &net) {
  ResolvedBag r;
  r.start.reserve(bag.contexts.size());
  r.path.reserve(bag.contexts.size());
  r.end.reserve(bag.contexts.size());
  for (const auto &c : bag.contexts) {
    if (c.path_id >= net.config.path_buckets)
      throw Error(ErrorCode::DimMismatch, "path id outside the path table");
    r.start.push_back(net.vocab.id(c.start));
    r.path.push_back(static_cast<uint32_t>(c.path_id));
    r.end.push_back(net.vocab.id(c.end));
  }
  return r;
}

nn::Vector embed(const ResolvedBag &bag, const EmbeddingNet &net, EmbedCache *cache) {
  const auto n = static_cast<Eigen::Index>(bag.size());
  const auto dt = static_cast<Eigen::Index>(net.config.d_tok);
  const auto dp = static_cast<Eigen::Index>(net.config.d_path);
  if (n == 0) {
    if (cache) {
      cache->ids = bag;
      cache->contexts.resize(0, static_cast<Eigen::Index>(net.config.dim));
      cache->alpha.resize(0);
    }
    return nn::Vector::Zero(static_cast<Eigen::Index>(net.config.dim));
  }
  // The combine layer splits into start-token, path and end-token blocks;
  // token blocks are projected once per distinct token.
  TokenSlots slots = token_slots(bag);
  nn::Tensor2 tok = gather_rows(net.token_table, slots.ids);
  nn::Tensor2 proj_s = tok * net.combine_w.leftCols(dt).transpose();
  nn::Tensor2 proj_e = tok * net.combine_w.rightCols(dt).transpose();
  nn::Tensor2 c = gather_rows(net.path_table, bag.path) * net.combine_w.middleCols(dt, dp).transpose();
  for (Eigen::Index i = 0; i < n; ++i)
    c.row(i) += proj_s.row(slots.start[static_cast<size_t>(i)]) +
                proj_e.row(slots.end[static_cast<size_t>(i)]) + net.combine_b.transpose();
  c = c.array().tanh();
  nn::Vector alpha = nn::softmax(c * net.attention);
  nn::Vector v = c.transpose() * alpha;
  nn::require_finite(v, "code vector");
  if (cache) {
    cache->ids = bag;
    cache->contexts = std::move(c);
    cache->alpha = std::move(alpha);
  }
  return v;
}

nn::Vector embed(const PathContextBag &bag, const EmbeddingNet &net) {
  return embed(resolve(bag, net), net);
}

EmbeddingGrads EmbeddingGrads::zeros_like(const EmbeddingNet &net) {
  EmbeddingGrads g;
  g.token_table = nn::Tensor2::Zero(net.token_table.rows(), net.token_table.cols());
  g.path_table = nn::Tensor2::Zero(net.path_table.rows(), net.path_table.cols());
  g.combine_w = nn::Tensor2::Zero(net.combine_w.rows(), net.combine_w.cols());
  g.combine_b = nn::Vector::Zero(net.combine_b.size());
  g.attention = nn::Vector::Zero(net.attention.size());
  g.token_mark_.assign(static_cast<size_t>(net.token_table.rows()), 0);
  g.path_mark_.assign(static_cast<size_t>(net.path_table.rows()), 0);
  return g;
}

void EmbeddingGrads::clear() {
  for (size_t r : token_rows) {
    token_table.row(static_cast<Eigen::Index>(r)).setZero();
    token_mark_[r] = 0;
  }
  for (size_t r : path_rows) {
    path_table.row(static_cast<Eigen::Index>(r)).setZero();
    path_mark_[r] = 0;
  }
  token_rows.clear();
  path_rows.clear();
  combine_w.setZero();
  combine_b.setZero();
  attention.setZero();
}

void EmbeddingGrads::finalize_rows() {
  std::sort(token_rows.begin(), token_rows.end());
  std::sort(path_rows.begin(), path_rows.end());
}

void embed_backward(const EmbeddingNet &net, const EmbedCache &cache, const nn::Vector &upstream,
                    EmbeddingGrads &grads) {
  nn::require_dim(static_cast<size_t>(upstream.size()), net.config.dim, "embedding upstream");
  const auto n = static_cast<Eigen::Index>(cache.ids.size());
  if (n == 0)
    return;
  const auto dt = static_cast<Eigen::Index>(net.config.d_tok);
  const auto dp = static_cast<Eigen::Index>(net.config.d_path);
  const nn::Tensor2 &c = cache.contexts;
  const nn::Vector &alpha = cache.alpha;

  nn::Vector dalpha = c * upstream;
  nn::Vector ds = alpha.array() * (dalpha.array() - alpha.dot(dalpha));
  grads.attention.noalias() += c.transpose() * ds;
  nn::Tensor2 dz = alpha * upstream.transpose();
  dz.noalias() += ds * net.attention.transpose();
  dz.array() *= 1.0 - c.array().square();

  const ResolvedBag &bag = cache.ids;
  TokenSlots slots = token_slots(bag);
  const auto u = static_cast<Eigen::Index>(slots.ids.size());
  // Sum dz over contexts sharing a start (end) token.
  nn::Tensor2 dz_s = nn::Tensor2::Zero(u, dz.cols());
  nn::Tensor2 dz_e = nn::Tensor2::Zero(u, dz.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    dz_s.row(slots.start[static_cast<size_t>(i)]) += dz.row(i);
    dz_e.row(slots.end[static_cast<size_t>(i)]) += dz.row(i);
  }
  nn::Tensor2 tok = gather_rows(net.token_table, slots.ids);
  nn::Tensor2 paths = gather_rows(net.path_table, bag.path);
  grads.combine_w.leftCols(dt).noalias() += dz_s.transpose() * tok;
  grads.combine_w.middleCols(dt, dp).noalias() += dz.transpose() * paths;
  grads.combine_w.rightCols(dt).noalias() += dz_e.transpose() * tok;
  grads.combine_b.noalias() += dz.colwise().sum().transpose();

  nn::Tensor2 dtok = dz_s * net.combine_w.leftCols(dt);
  dtok.noalias() += dz_e * net.combine_w.rightCols(dt);
  for (Eigen::Index k = 0; k < u; ++k) {
    size_t row = slots.ids[static_cast<size_t>(k)];
    grads.token_table.row(static_cast<Eigen::Index>(row)) += dtok.row(k);
    mark_row(row, grads.token_mark_, grads.token_rows);
  }
  nn::Tensor2 dpath = dz * net.combine_w.middleCols(dt, dp);
  for (Eigen::Index i = 0; i < n; ++i) {
    size_t row = bag.path[static_cast<size_t>(i)];
    grads.path_table.row(static_cast<Eigen::Index>(row)) += dpath.row(i);
    mark_row(row, grads.path_mark_, grads.path_rows);
  }
}

void append_slots(EmbeddingNet &net, EmbeddingGrads &grads, std::vector<nn::ParamSlot> &out) {
  auto span_of = [](auto &m) { return std::span(m.data(), static_cast<size_t>(m.size())); };
  auto cspan_of = [](const auto &m) {
    return std::span<const double>(m.data(), static_cast<size_t>(m.size()));
  };
  out.push_back({span_of(net.token_table), cspan_of(grads.token_table), net.config.d_tok,
                 &grads.token_rows});
  out.push_back({span_of(net.path_table), cspan_of(grads.path_table), net.config.d_path,
                 &grads.path_rows});
  out.push_back({span_of(net.combine_w), cspan_of(grads.combine_w), 1, nullptr});
  out.push_back({span_of(net.combine_b), cspan_of(grads.combine_b), 1, nullptr});
  out.push_back({span_of(net.attention), cspan_of(grads.attention), 1, nullptr});
}

nlohmann::json to_json(const EmbeddingNet &net) {
  nn::Tensor2 init = initial_path_table(net.config, net.init_seed);
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < net.path_table.rows(); ++r) {
    if (net.path_table.row(r) != init.row(r))
      rows.push_back({r, nn::doubles_to_json({net.path_table.row(r).data(),
                                              static_cast<size_t>(net.path_table.cols())})});
  }
  auto flat = [](const auto &m) {
    return nn::doubles_to_json({m.data(), static_cast<size_t>(m.size())});
  };
  return {{"config", to_json(net.config)},
          {"init_seed", net.init_seed},
          {"token_vocab", net.vocab.tokens()},
          {"token_table", flat(net.token_table)},
          {"path_rows", rows},
          {"combine_w", flat(net.combine_w)},
          {"combine_b", flat(net.combine_b)},
          {"attention", flat(net.attention)}};
}

EmbeddingNet embedding_from_json(const nlohmann::json &j) {
  if (!j.is_object() || !j.contains("config") || !j.contains("token_vocab") ||
      !j.contains("init_seed"))
    throw Error(ErrorCode::Schema, "embedding: missing fields");
  EmbeddingConfig cfg = embedding_config_from_json(j["config"]);
  std::vector<std::string> tokens;
  uint64_t seed = 0;
  try {
    tokens = j["token_vocab"].get<std::vector<std::string>>();
    seed = j["init_seed"].get<uint64_t>();
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::Schema, std::string("embedding: ") + e.what());
  }
  EmbeddingNet net = EmbeddingNet::create(cfg, TokenVocab(std::move(tokens)), seed);
  auto load = [&](const char *key, auto &m) {
    nn::doubles_from_json(j.value(key, nlohmann::json()), {m.data(), static_cast<size_t>(m.size())},
                          key);
  };
  load("token_table", net.token_table);
  load("combine_w", net.combine_w);
  load("combine_b", net.combine_b);
  load("attention", net.attention);
  const auto &rows = j.value("path_rows", nlohmann::json::array());
  if (!rows.is_array())
    throw Error(ErrorCode::Schema, "embedding: path_rows must be an array");
  for (const auto &row : rows) {
    if (!row.is_array() || row.size() != 2 || !row[0].is_number_unsigned())
      throw Error(ErrorCode::Schema, "embedding: malformed path row");
    auto r = row[0].get<size_t>();
    if (r >= cfg.path_buckets)
      throw Error(ErrorCode::Schema, "embedding: path row out of range");
    nn::doubles_from_json(row[1], {net.path_table.row(static_cast<Eigen::Index>(r)).data(),
                                   cfg.d_path},
                          "path row");
  }
  return net;
}

} // namespace nvec
