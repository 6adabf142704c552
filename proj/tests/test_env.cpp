#include "doctest.h"
#include "fixtures.hpp"

#include "nvec/env.hpp"
#include "nvec/process.hpp"

#include <cmath>
#include <filesystem>

using namespace nvec;

namespace {

LoopNest first_nest(const SourceFile &src) {
  auto nests = extract_loop_nests(src);
  REQUIRE(!nests.empty());
  return nests.front();
}

SimLoopFeatures features(double n, int c, int s, bool red, bool pred, int w) {
  SimLoopFeatures f;
  f.trip_count = n;
  f.ops_per_iter = c;
  f.stride = s;
  f.has_reduction = red;
  f.has_predicate = pred;
  f.elem_bits = w;
  return f;
}

std::string temp_path(const std::string &name) {
  return (std::filesystem::temp_directory_path() /
          ("nvec-test-" + std::to_string(::getpid()) + "-" + name))
      .string();
}

} // namespace

TEST_CASE("reward: formula and penalty") {
  CHECK(reward(1.5, 1.5, CompileStatus::Ok) == 0.0);
  CHECK(reward(2.0, 1.0, CompileStatus::Ok) == 0.5);
  CHECK(reward(2.0, 0.0, CompileStatus::Timeout) == -9.0);
  CHECK(reward(2.0, 5.0, CompileStatus::Error) == -9.0);
  CHECK(reward(1.0, 4.0, CompileStatus::Ok) == -3.0);
}

TEST_CASE("reward: invalid times") {
  CHECK_THROWS_AS(reward(0.0, 1.0, CompileStatus::Ok), Error);
  CHECK_THROWS_AS(reward(-1.0, 1.0, CompileStatus::Timeout), Error);
  CHECK_THROWS_AS(reward(1.0, 0.0, CompileStatus::Ok), Error);
  try {
    reward(1.0, -2.0, CompileStatus::Ok);
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::NonPositiveTime);
  }
}

TEST_CASE("reward: scale invariance") {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    double tb = 1e-3 + rng.uniform() * 5.0;
    double tc = 1e-3 + rng.uniform() * 5.0;
    double k = std::exp(rng.uniform() * 20.0 - 10.0);
    CHECK(reward(k * tb, k * tc, CompileStatus::Ok) ==
          doctest::Approx(reward(tb, tc, CompileStatus::Ok)).epsilon(1e-12));
  }
}

TEST_CASE("status names round-trip") {
  for (auto s : {CompileStatus::Ok, CompileStatus::Timeout, CompileStatus::Error})
    CHECK(status_from_name(status_name(s)) == s);
  CHECK_THROWS_AS(status_from_name("crashed"), Error);
}

TEST_CASE("sim_cost: scalar cell with IF at optimum is exactly N*c ns") {
  SimLoopFeatures f = features(777, 5, 1, false, false, 32);
  CHECK(sim_cost(f, 1, sim_if_star(f)) == 777.0 * 5 * 1e-9);
  f.has_reduction = true;
  CHECK(sim_cost(f, 1, 4) == 777.0 * 5 * 1e-9);
}

TEST_CASE("sim_cost: reduction over 512 ints") {
  SimLoopFeatures f = features(512, 2, 1, true, false, 32);
  CHECK(sim_vf_star(f) == 4);
  CHECK(sim_if_star(f) == 4);
  // 1024 ops / 4 lanes at the IF optimum.
  CHECK(sim_cost(f, 4, 4) == doctest::Approx(256e-9).epsilon(1e-12));
  // Same IF: a pure factor of VF* = 4.
  CHECK(sim_cost(f, 1, 4) / sim_cost(f, 4, 4) == doctest::Approx(4.0).epsilon(1e-12));
  // At IF=1 the interleave penalty adds 0.15 * |0 - 2| on top.
  CHECK(sim_cost(f, 1, 1) / sim_cost(f, 4, 4) == doctest::Approx(4.0 * 1.3).epsilon(1e-12));
}

TEST_CASE("sim_cost: VF star from width and stride") {
  CHECK(sim_vf_star(features(1, 1, 1, false, false, 8)) == 16);
  CHECK(sim_vf_star(features(1, 1, 1, false, false, 16)) == 8);
  CHECK(sim_vf_star(features(1, 1, 1, false, false, 64)) == 2);
  CHECK(sim_vf_star(features(1, 1, 2, false, false, 32)) == 2);
  CHECK(sim_vf_star(features(1, 1, 3, false, false, 32)) == 1); // 4/3 rounds down
  CHECK(sim_vf_star(features(1, 1, 48, false, false, 8)) == 1);
}

TEST_CASE("sim_cost: penalty grows with log2(vf / VF*)") {
  SimLoopFeatures f = features(1000, 3, 1, false, true, 32); // VF* = 4
  double prev = sim_cost(f, 4, 2);
  for (int vf = 8; vf <= 64; vf *= 2) {
    double c = sim_cost(f, vf, 2);
    CHECK(c > prev);
    double expect = 1000.0 * 3 / 4 * 1.3 + 0.02 * 1000.0 * 3 * std::log2(vf / 4.0);
    CHECK(c == doctest::Approx(expect * 1e-9).epsilon(1e-12));
    prev = c;
  }
  CHECK_THROWS_AS(sim_cost(f, 3, 1), Error);
}

TEST_CASE("sim_cost: grid argmin equals the analytic optimum") {
  ActionSpace space(16, 8);
  for (int w : {8, 16, 32, 64})
    for (int s : {1, 2, 3, 4, 8, 16})
      for (bool red : {false, true})
        for (bool pred : {false, true}) {
          SimLoopFeatures f = features(4096, 4, s, red, pred, w);
          int best = 0;
          double best_t = INFINITY;
          int ties = 0;
          for (int a = 0; a < space.size(); ++a) {
            Action act = space.decode(a);
            double t = sim_cost(f, act.vf, act.if_);
            if (t < best_t) {
              best_t = t;
              best = a;
              ties = 0;
            } else if (t == best_t) {
              ++ties;
            }
          }
          CHECK(ties == 0);
          Action b = space.decode(best);
          CHECK(b.vf == std::min(sim_vf_star(f), 16));
          CHECK(b.if_ == std::clamp(sim_if_star(f), 1, 8));
        }
}

TEST_CASE("sim features of the fixtures") {
  auto feat = [](const char *text) {
    SourceFile src = make_source("f.c", text);
    return extract_sim_features(src, first_nest(src));
  };
  CHECK(feat(fixtures::kDotProduct) == features(512, 2, 1, true, false, 32));
  // N-1 is not a constant: default trip count; i += 2 gives stride 2.
  CHECK(feat(fixtures::kExample1) == features(1024, 12, 2, false, false, 32));
  CHECK(feat(fixtures::kExample2) == features(64 * 128, 1, 1, false, false, 32));
  CHECK(feat(fixtures::kExample3) == features(2048, 2, 1, false, true, 32));
  // k walks B by rows of 48 floats; sum is declared outside the k loop.
  CHECK(feat(fixtures::kExample4) == features(32 * 48 * 64, 3, 48, true, false, 32));
  CHECK(feat(fixtures::kExample5) == features(511, 18, 2, false, false, 32));
}

TEST_CASE("sim features: element width and gathers") {
  auto feat = [](const std::string &text) {
    SourceFile src = make_source("f.c", text);
    return extract_sim_features(src, first_nest(src));
  };
  SimLoopFeatures f = feat("char a[256], b[256];\nvoid k(void) {\n  int i;\n"
                           "  for (i = 0; i < 256; i++) {\n    a[i] = b[i] + 1;\n  }\n}\n");
  CHECK(f.elem_bits == 8);
  CHECK(f.trip_count == 256);
  f = feat("double a[100]; int idx[100];\nvoid k(void) {\n  int i;\n"
           "  for (i = 0; i < 100; i++) {\n    a[idx[i]] = a[idx[i]] * 2.0;\n  }\n}\n");
  CHECK(f.elem_bits == 64);
  CHECK(f.stride == 8);
}

TEST_CASE("features JSON round-trip") {
  SimLoopFeatures f = features(123, 4, 2, true, false, 16);
  CHECK(sim_features_from_json(to_json(f)) == f);
  CHECK_THROWS_AS(sim_features_from_json(nlohmann::json{{"N", 1}}), Error);
}

TEST_CASE("evaluate on the sim backend") {
  SourceFile src = make_source("dot.c", fixtures::kDotProduct);
  LoopNest nest = first_nest(src);
  SimLoopFeatures f = extract_sim_features(src, nest);
  SimBackend backend;
  TimeoutPolicy policy;

  Measurement scalar = evaluate(src, nest, {0, 1, 1}, backend, policy, nullptr);
  double base = sim_cost(f, 4, 2);
  CHECK(scalar.status == CompileStatus::Ok);
  CHECK(scalar.t_baseline == base);
  CHECK(scalar.t_candidate == sim_cost(f, 1, 1));
  CHECK(scalar.reward == doctest::Approx(1.0 - sim_cost(f, 1, 1) / base).epsilon(1e-12));

  Measurement best = evaluate(src, nest, {0, 4, 4}, backend, policy, nullptr);
  CHECK(best.reward > 0.0);
}

TEST_CASE("evaluate: cache hits and transparency") {
  SourceFile src = make_source("ex4.c", fixtures::kExample4);
  LoopNest nest = first_nest(src);
  SimBackend backend;
  TimeoutPolicy policy;
  EvalCache cache;
  ActionSpace space;
  for (int a = 0; a < space.size(); ++a) {
    Action act = space.decode(a);
    Measurement plain = evaluate(src, nest, act, backend, policy, nullptr);
    Measurement first = evaluate(src, nest, act, backend, policy, &cache);
    Measurement again = evaluate(src, nest, act, backend, policy, &cache);
    CHECK(plain == first);
    CHECK(first == again);
  }
  CHECK(cache.size() == 20);
}

TEST_CASE("evaluate: compile time over the multiplier times out") {
  SourceFile src = make_source("dot.c", fixtures::kDotProduct);
  LoopNest nest = first_nest(src);
  SimBackend backend;
  TimeoutPolicy policy;
  policy.multiplier = 2.0; // (16, 8) compiles 7.4 / 1.4 times slower than (4, 2)
  Measurement m = evaluate(src, nest, {0, 16, 8}, backend, policy, nullptr);
  CHECK(m.status == CompileStatus::Timeout);
  CHECK(m.reward == -9.0);
  CHECK(m.t_candidate == 2.0 * m.t_baseline);
  CHECK(evaluate(src, nest, {0, 4, 2}, backend, policy, nullptr).reward == 0.0);
}

TEST_CASE("evaluate: slow candidate run times out") {
  // Scalar build of a char loop is 16x slower than VF* but baseline VF=4 is
  // only 4x faster, so the runtime ratio is exactly 4.
  SourceFile src = make_source("c.c", "char a[4096];\nvoid k(void) {\n  int i;\n"
                                      "  for (i = 0; i < 4096; i++) {\n    a[i] = a[i] + 1;\n"
                                      "  }\n}\n");
  LoopNest nest = first_nest(src);
  SimBackend backend;
  TimeoutPolicy policy;
  policy.multiplier = 3.5;
  CHECK(evaluate(src, nest, {0, 1, 2}, backend, policy, nullptr).status ==
        CompileStatus::Timeout);
  policy.multiplier = 4.5;
  CHECK(evaluate(src, nest, {0, 1, 2}, backend, policy, nullptr).status == CompileStatus::Ok);
}

TEST_CASE("eval cache persists as JSON lines") {
  std::string path = temp_path("cache.jsonl");
  std::filesystem::remove(path);
  SourceFile src = make_source("ex5.c", fixtures::kExample5);
  LoopNest nest = first_nest(src);
  SimBackend backend;
  TimeoutPolicy policy;
  Measurement m;
  {
    EvalCache cache(path);
    m = evaluate(src, nest, {0, 8, 2}, backend, policy, &cache);
    evaluate(src, nest, {0, 8, 2}, backend, policy, &cache);
  }
  EvalCache reloaded(path);
  CHECK(reloaded.size() == 1);
  REQUIRE(reloaded.find(nest, 8, 2).has_value());
  CHECK(*reloaded.find(nest, 8, 2) == m);
  CHECK(reloaded.find_baseline(nest).has_value());
  // A changed source digest misses.
  LoopNest other = nest;
  other.source_digest ^= 1;
  CHECK(!reloaded.find(other, 8, 2).has_value());
  write_file(path, "{not json\n");
  CHECK_THROWS_AS(EvalCache{path}, Error);
  std::filesystem::remove(path);
}

TEST_CASE("env config JSON and backend selection") {
  EnvConfig c;
  c.workers = 3;
  c.timeout.multiplier = 7;
  c.sim.compile_base_seconds = 0.2;
  c.clang.flags = {"-O2"};
  EnvConfig back = env_config_from_json(to_json(c));
  CHECK(back.workers == 3);
  CHECK(back.timeout.multiplier == 7);
  CHECK(back.sim.compile_base_seconds == 0.2);
  CHECK(back.clang.flags == std::vector<std::string>{"-O2"});
  CHECK(make_backend(c)->name() == "sim");
  c.backend = "gpu";
  try {
    make_backend(c);
    FAIL("expected BackendUnavailable");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::BackendUnavailable);
  }
  CHECK_THROWS_AS(env_config_from_json(nlohmann::json{{"workers", 0}}), Error);
}

TEST_CASE("parallel_for visits every index once") {
  std::vector<int> hits(257, 0);
  parallel_for(hits.size(), 4, [&](size_t i) { hits[i] += 1; });
  for (int h : hits)
    CHECK(h == 1);
  CHECK_THROWS(parallel_for(10, 3, [](size_t i) {
    if (i == 7)
      throw Error(ErrorCode::Io, "boom");
  }));
}

TEST_CASE("run_process captures output and enforces the limit") {
  ProcessResult r = run_process({"sh", "-c", "echo hello; echo oops >&2; exit 3"}, 10);
  CHECK(r.exit_code == 3);
  CHECK(r.out == "hello\n");
  CHECK(r.err == "oops\n");
  CHECK(!r.timed_out);
  ProcessResult slow = run_process({"sleep", "5"}, 0.2);
  CHECK(slow.timed_out);
  CHECK(slow.wall_seconds < 2.0);
}

TEST_CASE("clang backend: missing compiler") {
  ClangConfig cfg;
  cfg.compiler = "/nonexistent/cc-nvec";
  try {
    resolve_compiler(cfg);
    FAIL("expected CompilerNotFound");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::CompilerNotFound);
  }
  CHECK_THROWS_AS(ClangBackend{cfg}, Error);
}

TEST_CASE("clang backend: harness time, compile error and run timeout") {
  ClangConfig cfg;
  try {
    resolve_compiler(cfg);
  } catch (const Error &) {
    MESSAGE("no C compiler; skipping");
    return;
  }
  cfg.flags = {"-O1"};
  cfg.runs = 3;
  std::string path = temp_path("prog.c");

  write_file(path, "#include <stdio.h>\nint main(void) { printf(\"nvec_time_ns=2500\\n\"); "
                   "return 0; }\n");
  ClangMeasure m = clang_backend_measure(cfg, path, 60, 10);
  CHECK(m.exec_time == doctest::Approx(2.5e-6));
  CHECK(m.compile_time > 0.0);

  write_file(path, "int main(void) { return undeclared; }\n");
  try {
    clang_backend_measure(cfg, path, 60, 10);
    FAIL("expected CompileError");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::CompileError);
    CHECK(std::string(e.what()).find("undeclared") != std::string::npos);
  }

  write_file(path, "int main(void) { volatile int x = 1; while (x) {} return 0; }\n");
  try {
    clang_backend_measure(cfg, path, 60, 0.3);
    FAIL("expected RunTimeout");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::RunTimeout);
  }
  std::filesystem::remove(path);
}
