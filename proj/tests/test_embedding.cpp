#include "doctest.h"
#include "fd_oracle.hpp"
#include "fixtures.hpp"

#include "nvec/embedding.hpp"
#include "nvec/loop_ir.hpp"

#include <algorithm>

using namespace nvec;

namespace {

EmbeddingConfig small_config() {
  EmbeddingConfig c;
  c.d_tok = 4;
  c.d_path = 3;
  c.dim = 5;
  c.path_buckets = 17;
  return c;
}

EmbeddingNet random_net(const EmbeddingConfig &cfg, size_t vocab, Rng &rng) {
  std::vector<std::string> toks;
  for (size_t i = 0; i < vocab; ++i)
    toks.push_back("t" + std::to_string(i));
  EmbeddingNet net = EmbeddingNet::create(cfg, TokenVocab(toks), rng.next());
  // Larger weights than the default init so tanh and softmax are non-linear.
  auto scale = [&](auto &m) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = rng.uniform(-1, 1);
  };
  scale(net.token_table);
  scale(net.path_table);
  scale(net.combine_w);
  scale(net.combine_b);
  scale(net.attention);
  return net;
}

ResolvedBag random_bag(size_t n, const EmbeddingNet &net, Rng &rng) {
  ResolvedBag b;
  for (size_t i = 0; i < n; ++i) {
    b.start.push_back(static_cast<uint32_t>(rng.below(net.vocab.size())));
    b.path.push_back(static_cast<uint32_t>(rng.below(net.config.path_buckets)));
    b.end.push_back(static_cast<uint32_t>(rng.below(net.vocab.size())));
  }
  return b;
}

bool has_context(const PathContextBag &bag, const std::string &s, const std::string &p,
                 const std::string &e) {
  return std::any_of(bag.contexts.begin(), bag.contexts.end(), [&](const PathContext &c) {
    return c.start == s && c.path_text == p && c.end == e;
  });
}

} // namespace

TEST_CASE("assignment snippet contains the Index-Assign-Index context") {
  EmbeddingConfig cfg;
  PathContextBag bag = extract_contexts("for (i = 0; i < n; i++) a[i] = b[i];", cfg);
  CHECK(has_context(bag, "a", "Ident^Index^Assign{=}_Index_Ident", "b"));
  // a and i under the same Index: one edge up, one edge down.
  CHECK(has_context(bag, "a", "Ident^Index_Ident", "i"));
  for (const auto &c : bag.contexts)
    CHECK(c.path_id < cfg.path_buckets);
}

TEST_CASE("single terminal snippet yields an empty bag") {
  PathContextBag bag = extract_contexts("x;", EmbeddingConfig{});
  CHECK(bag.contexts.empty());
}

TEST_CASE("extraction is deterministic and duplicate free") {
  EmbeddingConfig cfg;
  auto a = extract_contexts(fixtures::kExample1Loop, cfg);
  auto b = extract_contexts(fixtures::kExample1Loop, cfg);
  CHECK(a == b);
  CHECK(!a.contexts.empty());
  for (size_t i = 0; i < a.contexts.size(); ++i)
    for (size_t j = i + 1; j < a.contexts.size(); ++j)
      CHECK_FALSE(a.contexts[i] == a.contexts[j]);
}

TEST_CASE("path length and width limits are enforced") {
  EmbeddingConfig tight;
  tight.max_path_len = 2;
  auto bag = extract_contexts("for (i = 0; i < n; i++) a[i] = b[i];", tight);
  for (const auto &c : bag.contexts) {
    // Two edges means exactly one interior node.
    CHECK(std::count(c.path_text.begin(), c.path_text.end(), '^') +
              std::count(c.path_text.begin(), c.path_text.end(), '_') <=
          2);
  }
  EmbeddingConfig narrow;
  narrow.max_width = 0;
  CHECK(extract_contexts("f(a, b, c);", narrow).contexts.empty());
}

TEST_CASE("large bags are subsampled to max_contexts reproducibly") {
  EmbeddingConfig cfg;
  cfg.max_contexts = 10;
  auto a = extract_contexts(fixtures::kExample1Loop, cfg);
  CHECK(a.contexts.size() == 10);
  CHECK(a == extract_contexts(fixtures::kExample1Loop, cfg));
  EmbeddingConfig full;
  auto all = extract_contexts(fixtures::kExample1Loop, full);
  for (const auto &c : a.contexts)
    CHECK(std::find(all.contexts.begin(), all.contexts.end(), c) != all.contexts.end());
}

TEST_CASE("empty bag embeds to the zero vector") {
  EmbeddingConfig cfg;
  EmbeddingNet net = EmbeddingNet::create(cfg, TokenVocab(), 1);
  nn::Vector v = embed(ResolvedBag{}, net);
  CHECK(v.size() == 340);
  CHECK(v.isZero(0.0));
}

TEST_CASE("single context equals its combined vector") {
  EmbeddingConfig cfg = small_config();
  Rng rng(3);
  EmbeddingNet net = random_net(cfg, 6, rng);
  ResolvedBag b = random_bag(1, net, rng);
  EmbedCache cache;
  nn::Vector v = embed(b, net, &cache);
  CHECK(cache.alpha.size() == 1);
  CHECK(cache.alpha[0] == 1.0);
  CHECK((v - cache.contexts.row(0).transpose()).norm() == 0.0);

  EmbeddingGrads g = EmbeddingGrads::zeros_like(net);
  Rng r2(4);
  nn::Vector up(static_cast<Eigen::Index>(cfg.dim));
  for (Eigen::Index i = 0; i < up.size(); ++i)
    up[i] = r2.uniform(-1, 1);
  embed_backward(net, cache, up, g);
  CHECK(g.attention.isZero(0.0));
}

TEST_CASE("attention weights sum to one") {
  EmbeddingConfig cfg = small_config();
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    EmbeddingNet net = random_net(cfg, 8, rng);
    EmbedCache cache;
    embed(random_bag(1 + rng.below(30), net, rng), net, &cache);
    CHECK(std::abs(cache.alpha.sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("alpha-equivalent snippets embed identically") {
  EmbeddingConfig cfg;
  const char *s1 = "for (i = 0; i < n; i++) { float t = x[i] * 2.0f; y[i] = t; }";
  const char *s2 = "for (k = 0; k < len; k++) { float tmp = src[k] * 2.0f; dst[k] = tmp; }";
  auto b1 = observe_snippet(s1, cfg), b2 = observe_snippet(s2, cfg);
  CHECK(b1 == b2);
  EmbeddingNet net = EmbeddingNet::create(cfg, TokenVocab::build({b1}), 7);
  nn::Vector v1 = embed(b1, net), v2 = embed(b2, net);
  CHECK(v1 == v2);
  CHECK(v1.norm() > 0.0);
}

TEST_CASE("unknown tokens resolve to the reserved row") {
  EmbeddingConfig cfg;
  auto bag = extract_contexts("a = b;", cfg);
  EmbeddingNet net = EmbeddingNet::create(cfg, TokenVocab({"a"}), 1);
  ResolvedBag r = resolve(bag, net);
  REQUIRE(r.size() == 1);
  CHECK(r.start[0] == 1);
  CHECK(r.end[0] == 0);
}

TEST_CASE("zero upstream gives zero gradients") {
  EmbeddingConfig cfg = small_config();
  Rng rng(8);
  EmbeddingNet net = random_net(cfg, 5, rng);
  EmbedCache cache;
  embed(random_bag(6, net, rng), net, &cache);
  EmbeddingGrads g = EmbeddingGrads::zeros_like(net);
  embed_backward(net, cache, nn::Vector::Zero(static_cast<Eigen::Index>(cfg.dim)), g);
  CHECK(g.token_table.isZero(0.0));
  CHECK(g.path_table.isZero(0.0));
  CHECK(g.combine_w.isZero(0.0));
  CHECK(g.combine_b.isZero(0.0));
  CHECK(g.attention.isZero(0.0));
}

TEST_CASE("embedding backward agrees with central finite differences") {
  EmbeddingConfig cfg = small_config();
  Rng rng(9);
  double worst = 0.0;
  int triples = 0;
  for (int rep = 0; rep < 150; ++rep) {
    EmbeddingNet net = random_net(cfg, 6, rng);
    ResolvedBag bag = random_bag(1 + rng.below(12), net, rng);
    nn::Vector up(static_cast<Eigen::Index>(cfg.dim));
    for (Eigen::Index i = 0; i < up.size(); ++i)
      up[i] = rng.uniform(-1, 1);
    EmbedCache cache;
    embed(bag, net, &cache);
    EmbeddingGrads g = EmbeddingGrads::zeros_like(net);
    embed_backward(net, cache, up, g);
    auto loss = [&] { return up.dot(embed(bag, net)); };

    double *param = nullptr;
    double analytic = 0.0;
    size_t i = static_cast<size_t>(rng.below(bag.size()));
    switch (rep % 5) {
    case 0: {
      auto col = static_cast<Eigen::Index>(rng.below(cfg.d_tok));
      auto row = static_cast<Eigen::Index>(bag.start[i]);
      param = &net.token_table(row, col);
      analytic = g.token_table(row, col);
      break;
    }
    case 1: {
      auto col = static_cast<Eigen::Index>(rng.below(cfg.d_path));
      auto row = static_cast<Eigen::Index>(bag.path[i]);
      param = &net.path_table(row, col);
      analytic = g.path_table(row, col);
      break;
    }
    case 2: {
      auto k = static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(net.combine_w.size())));
      param = net.combine_w.data() + k;
      analytic = g.combine_w.data()[k];
      break;
    }
    case 3: {
      auto k = static_cast<Eigen::Index>(rng.below(cfg.dim));
      param = &net.combine_b[k];
      analytic = g.combine_b[k];
      break;
    }
    default: {
      auto k = static_cast<Eigen::Index>(rng.below(cfg.dim));
      param = &net.attention[k];
      analytic = g.attention[k];
      break;
    }
    }
    worst = std::max(worst, fd::rel_err(analytic, fd::central(param, loss)));
    ++triples;
  }
  CHECK(triples >= 100);
  CHECK(worst < 1e-4);
}

TEST_CASE("grads track touched rows and clear them") {
  EmbeddingConfig cfg = small_config();
  Rng rng(10);
  EmbeddingNet net = random_net(cfg, 5, rng);
  ResolvedBag bag;
  bag.start = {1, 1};
  bag.path = {3, 7};
  bag.end = {2, 4};
  EmbedCache cache;
  embed(bag, net, &cache);
  EmbeddingGrads g = EmbeddingGrads::zeros_like(net);
  nn::Vector up = nn::Vector::Ones(static_cast<Eigen::Index>(cfg.dim));
  embed_backward(net, cache, up, g);
  g.finalize_rows();
  CHECK(g.token_rows == std::vector<size_t>{1, 2, 4});
  CHECK(g.path_rows == std::vector<size_t>{3, 7});
  g.clear();
  CHECK(g.token_table.isZero(0.0));
  CHECK(g.path_table.isZero(0.0));
  CHECK(g.token_rows.empty());
}

TEST_CASE("embedding json round-trip is bit exact") {
  EmbeddingConfig cfg;
  cfg.d_tok = 8;
  cfg.d_path = 8;
  cfg.dim = 16;
  cfg.path_buckets = 101;
  auto bag = observe_snippet(fixtures::kExample1Loop, cfg);
  EmbeddingNet net = EmbeddingNet::create(cfg, TokenVocab::build({bag}), 11);
  net.path_table(5, 2) += 0.125;
  net.combine_w(3, 1) = 1.0 / 3.0;
  EmbeddingNet back = embedding_from_json(nlohmann::json::parse(to_json(net).dump()));
  CHECK(back.vocab.tokens() == net.vocab.tokens());
  CHECK(back.token_table == net.token_table);
  CHECK(back.path_table == net.path_table);
  CHECK(back.combine_w == net.combine_w);
  CHECK(back.combine_b == net.combine_b);
  CHECK(back.attention == net.attention);
  CHECK(embed(bag, back) == embed(bag, net));
  CHECK_THROWS_AS(embedding_from_json(nlohmann::json::parse("{\"config\":{}}")), Error);
}
