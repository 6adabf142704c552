#include "doctest.h"
#include "fixtures.hpp"

#include "nvec/baselines.hpp"
#include "nvec/datasetgen.hpp"

#include <cmath>
#include <filesystem>
#include <map>
#include <unistd.h>

using namespace nvec;
namespace fs = std::filesystem;

namespace {

LoopNest first_nest(const SourceFile &src) {
  auto nests = extract_loop_nests(src);
  REQUIRE(!nests.empty());
  return nests.front();
}

// Small sim-labelled corpus shared by several cases.
struct Corpus {
  std::string dir;
  DatasetManifest manifest;
  std::vector<Program> programs;

  explicit Corpus(int count, uint64_t seed = 12) {
    dir = (fs::temp_directory_path() /
           ("nvec-bl-" + std::to_string(::getpid()) + "-" + std::to_string(seed)))
              .string();
    fs::remove_all(dir);
    manifest = generate(default_templates(), count, seed, dir);
    std::vector<std::string> ids;
    for (const auto &r : manifest.records)
      ids.push_back(r.program_id);
    programs = load_programs(manifest, ids);
  }
  ~Corpus() { fs::remove_all(dir); }
};

nn::Vector vec2(double a, double b) {
  nn::Vector v(2);
  v << a, b;
  return v;
}

} // namespace

TEST_CASE("oracle tie-break: smallest VF, then smallest IF") {
  CHECK(oracle_argmin({1.0, 2.0, 3.0}) == 0);
  CHECK(oracle_argmin({3.0, 1.0, 1.0, 2.0}) == 1);
  CHECK(oracle_argmin({INFINITY, 5.0, INFINITY}) == 1);
  ActionSpace space;
  // Indices are VF-major, so the first minimum is the smallest (VF, IF).
  std::vector<double> t(20, 2.0);
  t[space.encode(2, 3)] = 1.0;
  t[space.encode(3, 0)] = 1.0;
  t[space.encode(2, 1)] = 1.0;
  Action a = space.decode(oracle_argmin(t));
  CHECK(a.vf == 4);
  CHECK(a.if_ == 2);
  CHECK_THROWS_AS(oracle_argmin({}), Error);
}

TEST_CASE("brute force on the dot product picks (4, 4)") {
  SourceFile src = make_source("dot.c", fixtures::kDotProduct);
  LoopNest nest = first_nest(src);
  SimBackend backend;
  ActionSpace space;
  OracleLabel l = brute_force("dot", src, nest, space, backend, {}, nullptr);
  CHECK(l.best_action.vf == 4);
  CHECK(l.best_action.if_ == 4);
  SimLoopFeatures f = extract_sim_features(src, nest);
  for (size_t i = 0; i < space.size(); ++i) {
    Action a = space.decode(i);
    CHECK(l.grid_time[i] == sim_cost(f, a.vf, a.if_));
    CHECK(l.best_time <= l.grid_time[i]);
  }
  CHECK(l.t_baseline == sim_cost(f, 4, 2));
  CHECK(l.best_time < l.t_baseline);
}

TEST_CASE("brute force: unique scalar optimum") {
  // Stride 4 over 64-bit data: VF* = 1, no reduction: IF* = 2.
  SourceFile src = make_source("s.c", "double a[4100], b[4100];\nvoid k(void) {\n  int i;\n"
                                      "  for (i = 0; i < 1024; i++) {\n"
                                      "    a[4*i] = b[4*i] * 2;\n  }\n}\n");
  SimBackend backend;
  OracleLabel l = brute_force("s", src, first_nest(src), ActionSpace(), backend, {}, nullptr);
  CHECK(l.best_action.vf == 1);
  CHECK(l.best_action.if_ == 2);
}

TEST_CASE("brute force is cache-aware and worker-count independent") {
  Corpus c(24, 31);
  SimBackend backend;
  ActionSpace space;
  EvalCache cache;
  for (const auto &p : c.programs) {
    OracleLabel serial = brute_force(p.program_id, p.src, p.nest, space, backend, {}, nullptr);
    OracleLabel threaded =
        brute_force(p.program_id, p.src, p.nest, space, backend, {}, &cache, 4);
    CHECK(serial.grid_time == threaded.grid_time);
    CHECK(serial.best_action.index == threaded.best_action.index);
  }
  CHECK(cache.size() == 24 * 20);
}

TEST_CASE("random search: exhaustive equals brute force, reproducible, uniform") {
  Corpus c(40, 32);
  SimBackend backend;
  ActionSpace space;
  EvalCache cache;
  for (const auto &p : c.programs) {
    OracleLabel l = brute_force(p.program_id, p.src, p.nest, space, backend, {}, &cache);
    SearchResult full = random_search(p.src, p.nest, space, backend, {}, &cache, 20, 9);
    CHECK(full.action.index == l.best_action.index);
    CHECK(full.time == l.best_time);
    CHECK(full.evaluations == 20);
    CHECK(random_search(p.src, p.nest, space, backend, {}, &cache, 500, 1).evaluations == 20);
    for (uint64_t s = 0; s < 5; ++s) {
      SearchResult a = random_search(p.src, p.nest, space, backend, {}, &cache, 3, s);
      SearchResult b = random_search(p.src, p.nest, space, backend, {}, &cache, 3, s);
      CHECK(a.action.index == b.action.index);
      CHECK(a.time >= l.best_time);
    }
  }
  const Program &p = c.programs[0];
  CHECK_THROWS_AS(random_search(p.src, p.nest, space, backend, {}, &cache, 0, 1), Error);

  // One trial picks a uniform cell: chi-square with 19 dof below the 0.999
  // quantile (43.8).
  std::vector<int> hits(20, 0);
  const int n = 4000;
  for (int s = 0; s < n; ++s)
    ++hits[random_search(p.src, p.nest, space, backend, {}, &cache, 1, static_cast<uint64_t>(s))
               .action.index];
  double chi2 = 0.0;
  for (int h : hits)
    chi2 += (h - n / 20.0) * (h - n / 20.0) / (n / 20.0);
  CHECK(chi2 < 43.8);
}

TEST_CASE("labels round-trip through JSON lines") {
  ActionSpace space;
  OracleLabel l;
  l.program_id = "p00001";
  l.grid_time.assign(20, 1.0);
  l.grid_time[3] = INFINITY;
  l.grid_time[7] = 0.25;
  l.best_action = space.decode(7);
  l.best_time = 0.25;
  l.t_baseline = 1.0;
  std::string path = (fs::temp_directory_path() / ("nvec-labels-" + std::to_string(::getpid()))).string();
  save_labels({l, l}, path);
  auto back = load_labels(path, space);
  REQUIRE(back.size() == 2);
  CHECK(back[0].grid_time[3] == INFINITY);
  CHECK(back[0].grid_time == l.grid_time);
  CHECK(back[1].best_action.index == 7);
  CHECK(back[1].best_time == 0.25);
  write_file(path, "{\"program_id\":\"x\",\"vf\":3,\"if\":1,\"t_baseline\":1,\"full_grid\":[]}\n");
  CHECK_THROWS_AS(load_labels(path, space), Error);
  fs::remove(path);
}

TEST_CASE("optimum histogram mode matches the analytic optimum of the mix") {
  Corpus c(600, 33);
  SimBackend backend;
  ActionSpace space;
  std::map<std::string, Action> best;
  std::vector<int> analytic(20, 0);
  for (const auto &p : c.programs) {
    best[p.program_id] =
        brute_force(p.program_id, p.src, p.nest, space, backend, {}, nullptr).best_action;
    SimLoopFeatures f = c.manifest.record(p.program_id).features;
    int vf = std::min(sim_vf_star(f), 16), if_ = std::clamp(sim_if_star(f), 1, 8);
    ++analytic[*space.index_of(vf, if_)];
    // Per program the two routes agree exactly.
    CHECK(best[p.program_id].vf == vf);
    CHECK(best[p.program_id].if_ == if_);
  }
  OptimumHistogram h = report_optimum_distribution(c.manifest, best, space);
  int mode = static_cast<int>(std::max_element(analytic.begin(), analytic.end()) - analytic.begin());
  CHECK(h.mode() == mode);
  MESSAGE("mode (VF, IF) = (" << space.decode(h.mode()).vf << ", " << space.decode(h.mode()).if_
                              << ") at " << h.percent(h.mode()) << "%");
}

TEST_CASE("kNN") {
  KnnModel m;
  m.k = 1;
  m.x = {vec2(0, 0), vec2(1, 0), vec2(5, 5)};
  m.labels = {3, 4, 5};
  m.ids = {"p0", "p1", "p2"};
  CHECK(knn_predict(m, vec2(1, 0)) == 4);
  CHECK(knn_predict(m, vec2(4, 4)) == 5);

  m.k = 3;
  m.labels = {7, 7, 7};
  CHECK(knn_predict(m, vec2(-3, 2)) == 7);

  // Three points on a line labelled A, B, A; query nearest the middle.
  m.x = {vec2(0, 0), vec2(1, 0), vec2(2, 0)};
  m.labels = {1, 2, 1};
  CHECK(knn_predict(m, vec2(1.1, 0)) == 1);

  // Equal distances: lower id wins.
  m.k = 1;
  m.x = {vec2(1, 0), vec2(-1, 0)};
  m.labels = {8, 9};
  m.ids = {"p9", "p1"};
  CHECK(knn_predict(m, vec2(0, 0)) == 9);

  // Vote tie: label of the nearest neighbour.
  m.k = 2;
  m.x = {vec2(3, 0), vec2(1, 0)};
  m.labels = {5, 6};
  m.ids = {"a", "b"};
  CHECK(knn_predict(m, vec2(0, 0)) == 6);

  KnnModel back = knn_from_json(to_json(m));
  CHECK(knn_predict(back, vec2(2.5, 0)) == knn_predict(m, vec2(2.5, 0)));
  CHECK(back.x[1] == m.x[1]);

  KnnModel empty;
  try {
    knn_predict(empty, vec2(0, 0));
    FAIL("expected EmptyModel");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::EmptyModel);
  }
  CHECK_THROWS_AS(knn_predict(m, nn::Vector::Zero(3)), Error);
}

TEST_CASE("decision tree basics") {
  TreeModel single = tree_fit({vec2(0, 1), vec2(2, 3), vec2(4, 5)}, {6, 6, 6}, 20);
  CHECK(single.depth() == 0);
  CHECK(single.nodes.size() == 1);
  CHECK(tree_predict(single, vec2(-9, 9)) == 6);

  TreeModel two = tree_fit({vec2(0, 5), vec2(1, 5)}, {2, 9}, 20);
  CHECK(two.depth() == 1);
  CHECK(two.nodes[0].feature == 0);
  CHECK(two.nodes[0].threshold == 0.5);
  CHECK(tree_predict(two, vec2(0, 5)) == 2);
  CHECK(tree_predict(two, vec2(1, 5)) == 9);

  // Both features separate equally well: the lowest index wins.
  TreeModel tie = tree_fit({vec2(0, 0), vec2(1, 1)}, {0, 1}, 2);
  CHECK(tie.nodes[0].feature == 0);

  // Depth cap and leaf-size floor.
  std::vector<nn::Vector> x;
  std::vector<size_t> y;
  for (int i = 0; i < 16; ++i) {
    x.push_back(vec2(i, 0));
    y.push_back(static_cast<size_t>(i % 4));
  }
  CHECK(tree_fit(x, y, 4, {2, 1}).depth() <= 2);
  TreeModel leafy = tree_fit(x, y, 4, {12, 3});
  for (const auto &n : leafy.nodes)
    if (n.feature < 0) {
      int count = 0;
      for (const auto &v : x) {
        const TreeNode *cur = &leafy.nodes[0];
        while (cur->feature >= 0)
          cur = &leafy.nodes[static_cast<size_t>(v[cur->feature] <= cur->threshold ? cur->left
                                                                                   : cur->right)];
        count += cur == &n;
      }
      CHECK(count >= 3);
    }

  TreeModel back = tree_from_json(to_json(leafy));
  for (const auto &v : x)
    CHECK(tree_predict(back, v) == tree_predict(leafy, v));

  try {
    tree_fit({}, {}, 3);
    FAIL("expected EmptyModel");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::EmptyModel);
  }
}

TEST_CASE("deep tree fits sim labels at least as well as a stump") {
  Corpus c(100, 34);
  SimBackend backend;
  ActionSpace space;
  std::vector<PathContextBag> bags;
  EmbeddingConfig ecfg;
  for (const auto &p : c.programs)
    bags.push_back(observe_snippet(p.nest.embed_snippet, ecfg));
  EmbeddingNet emb = EmbeddingNet::create(ecfg, TokenVocab::build(bags), 5);
  std::vector<nn::Vector> x;
  std::vector<size_t> y;
  for (size_t i = 0; i < c.programs.size(); ++i) {
    const Program &p = c.programs[i];
    x.push_back(embed(bags[i], emb));
    y.push_back(brute_force(p.program_id, p.src, p.nest, space, backend, {}, nullptr)
                    .best_action.index);
  }
  auto accuracy = [&](const TreeModel &m) {
    int ok = 0;
    for (size_t i = 0; i < x.size(); ++i)
      ok += tree_predict(m, x[i]) == y[i];
    return ok / static_cast<double>(x.size());
  };
  double deep = accuracy(tree_fit(x, y, 20, {12, 1}));
  double stump = accuracy(tree_fit(x, y, 20, {1, 1}));
  MESSAGE("train accuracy: depth 12 " << deep << ", stump " << stump);
  CHECK(deep >= stump);
  CHECK(deep > 0.9);
}

TEST_CASE("supervised network") {
  // Two linearly separable classes in 2-D.
  std::vector<nn::Vector> x;
  std::vector<size_t> y;
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
    size_t label = a + 0.5 * b > 0.1 ? 1 : 0;
    x.push_back(vec2(a, b));
    y.push_back(label);
  }
  SupervisedConfig cfg;
  cfg.epochs = 500;
  cfg.seed = 4;
  std::vector<EpochStats> log;
  SupervisedNet net = supervised_fit(x, y, 2, cfg, &x, &y, &log);
  REQUIRE(log.size() == 500);
  CHECK(log.back().train_acc >= 0.99);
  CHECK(log.back().heldout_acc >= 0.99);
  CHECK(log.back().loss < log.front().loss);

  SupervisedNet again = supervised_fit(x, y, 2, cfg);
  CHECK(to_json(again) == to_json(net));

  // Untrained: near-uniform over 20 classes.
  cfg.epochs = 0;
  SupervisedNet raw = supervised_fit(x, std::vector<size_t>(x.size(), 11), 20, cfg);
  for (const auto &v : x) {
    nn::Vector p = nn::softmax(nn::forward(raw.mlp, v));
    CHECK(p.maxCoeff() < 1.5 / 20);
  }

  SupervisedNet back = supervised_from_json(to_json(net));
  for (const auto &v : x)
    CHECK(supervised_predict(back, v) == supervised_predict(net, v));

  try {
    supervised_fit({}, {}, 2, cfg);
    FAIL("expected EmptyModel");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::EmptyModel);
  }
}

TEST_CASE("supervised end-to-end training moves the embedding") {
  Corpus c(60, 35);
  SimBackend backend;
  ActionSpace space;
  EmbeddingConfig ecfg;
  std::vector<PathContextBag> bags;
  for (const auto &p : c.programs)
    bags.push_back(observe_snippet(p.nest.embed_snippet, ecfg));
  EmbeddingNet emb = EmbeddingNet::create(ecfg, TokenVocab::build(bags), 6);
  EmbeddingNet before = emb;
  std::vector<ResolvedBag> resolved;
  for (const auto &b : bags)
    resolved.push_back(resolve(b, emb));
  std::vector<const ResolvedBag *> ptrs;
  std::vector<size_t> y;
  for (size_t i = 0; i < c.programs.size(); ++i) {
    const Program &p = c.programs[i];
    ptrs.push_back(&resolved[i]);
    y.push_back(brute_force(p.program_id, p.src, p.nest, space, backend, {}, nullptr)
                    .best_action.index);
  }
  SupervisedConfig cfg;
  cfg.epochs = 60;
  std::vector<EpochStats> log;
  SupervisedNet net = supervised_fit_joint(emb, ptrs, y, 20, cfg, &log);
  CHECK(log.back().loss < log.front().loss);
  // The embedding starts near zero, so a short run may not get past the
  // majority class, but it must not do worse.
  std::map<size_t, int> counts;
  for (size_t l : y)
    ++counts[l];
  int majority = 0;
  for (const auto &[l, n] : counts)
    majority = std::max(majority, n);
  CHECK(log.back().train_acc >= static_cast<double>(majority) / static_cast<double>(y.size()));
  CHECK((emb.attention - before.attention).norm() > 0.0);
  CHECK((emb.combine_w - before.combine_w).norm() > 0.0);
}
