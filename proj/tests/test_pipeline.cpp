#include "doctest.h"

#include "nvec/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <unistd.h>

using namespace nvec;
namespace fs = std::filesystem;

namespace {

struct Corpus {
  std::string dir;
  DatasetManifest manifest;
  std::vector<Program> train_set, test_set;
  std::map<std::string, OracleLabel> labels;

  Corpus(int count, uint64_t seed) {
    dir = (fs::temp_directory_path() /
           ("nvec-pl-" + std::to_string(::getpid()) + "-" + std::to_string(seed)))
              .string();
    fs::remove_all(dir);
    manifest = generate(default_templates(), count, seed, dir);
    train_set = load_programs(manifest, manifest.train_ids);
    test_set = load_programs(manifest, manifest.test_ids);
    SimBackend sim;
    ActionSpace space;
    for (const auto *set : {&train_set, &test_set})
      for (const auto &p : *set)
        labels[p.program_id] = brute_force(p.program_id, p.src, p.nest, space, sim, {}, nullptr);
  }
  ~Corpus() { fs::remove_all(dir); }
};

const Corpus &corpus() {
  static Corpus c(40, 21);
  return c;
}

template <class F> ErrorCode code_of(F &&f) {
  try {
    f();
  } catch (const Error &e) {
    return e.code();
  }
  FAIL("no exception thrown");
  return ErrorCode::InvalidArgument;
}

TrainConfig small_config(long steps) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.ppo.batch_size = 50;
  cfg.seed = 5;
  return cfg;
}

} // namespace

TEST_CASE("train config round-trips and rejects bad values") {
  TrainConfig c = small_config(123);
  c.joint = false;
  c.hidden = {32};
  TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"steps", -1}}), Error);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::array()), Error);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"steps", "many"}}), Error);
}

TEST_CASE("zero training steps leave the initialization untouched") {
  const auto &c = corpus();
  ActionSpace space;
  TrainConfig cfg = small_config(0);
  Checkpoint init = init_checkpoint(c.train_set, space, cfg);
  Checkpoint ckpt = init_checkpoint(c.train_set, space, cfg);
  SimBackend sim;
  TrainResult r = train(ckpt, c.train_set, sim, {}, nullptr, cfg);
  CHECK(r.batches.empty());
  CHECK(r.rewards.empty());
  CHECK(to_json(ckpt).dump() == to_json(init).dump());
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto &c = corpus();
  ActionSpace space;
  TrainConfig cfg = small_config(200);
  auto run = [&] {
    Checkpoint ckpt = init_checkpoint(c.train_set, space, cfg);
    SimBackend sim;
    TrainResult r = train(ckpt, c.train_set, sim, {}, nullptr, cfg);
    return std::make_pair(training_log_csv(r), to_json(ckpt).dump());
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);

  cfg.seed = 6;
  Checkpoint other = init_checkpoint(c.train_set, space, cfg);
  SimBackend sim;
  TrainResult r = train(other, c.train_set, sim, {}, nullptr, cfg);
  CHECK(training_log_csv(r) != a.first);
}

TEST_CASE("training log has one row per batch and the right step counts") {
  const auto &c = corpus();
  TrainConfig cfg = small_config(120);
  Checkpoint ckpt = init_checkpoint(c.train_set, ActionSpace{}, cfg);
  SimBackend sim;
  std::vector<long> seen;
  TrainResult r = train(ckpt, c.train_set, sim, {}, nullptr, cfg,
                        [&](const BatchLog &b) { seen.push_back(b.steps); });
  // 120 steps in batches of 50: the last batch is partial.
  CHECK(seen == std::vector<long>{50, 100, 120});
  CHECK(r.rewards.size() == 120);
  std::string csv = training_log_csv(r);
  CHECK(csv.rfind("batch,steps,reward_mean,policy_loss,value_loss,entropy,clip_frac\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  for (double x : r.rewards)
    CHECK((x == kPenaltyReward || (x < 1.0 && x > -9.0)));
}

TEST_CASE("tail reward mean averages the last window") {
  TrainResult r;
  CHECK(r.tail_reward_mean() == 0.0);
  r.rewards = {1.0, 2.0, 3.0, 4.0};
  CHECK(r.tail_reward_mean(2) == doctest::Approx(3.5));
  CHECK(r.tail_reward_mean(10) == doctest::Approx(2.5));
}

TEST_CASE("frozen embedding stays fixed while the policy moves") {
  const auto &c = corpus();
  TrainConfig cfg = small_config(100);
  cfg.joint = false;
  Checkpoint init = init_checkpoint(c.train_set, ActionSpace{}, cfg);
  Checkpoint ckpt = init;
  SimBackend sim;
  train(ckpt, c.train_set, sim, {}, nullptr, cfg);
  CHECK(to_json(ckpt.embedding) == to_json(init.embedding));
  CHECK(to_json(ckpt.policy) != to_json(init.policy));
}

TEST_CASE("checkpoints round-trip through a file") {
  const auto &c = corpus();
  TrainConfig cfg = small_config(100);
  Checkpoint ckpt = init_checkpoint(c.train_set, ActionSpace{}, cfg);
  SimBackend sim;
  train(ckpt, c.train_set, sim, {}, nullptr, cfg);
  std::string path = c.dir + "/ckpt.json";
  save_checkpoint(ckpt, path);
  Checkpoint back = load_checkpoint(path);
  CHECK(to_json(back).dump() == to_json(ckpt).dump());
  for (const auto &p : c.test_set) {
    CHECK(predict(back, p.nest) == predict(ckpt, p.nest));
    CHECK(code_vector(back, p.nest) == code_vector(ckpt, p.nest));
  }
}

TEST_CASE("checkpoint loading rejects inconsistent parts") {
  const auto &c = corpus();
  Checkpoint ckpt = init_checkpoint(c.train_set, ActionSpace{}, small_config(0));
  nlohmann::json j = to_json(ckpt);
  j["action_space"] = to_json(ActionSpace(8, 8));
  CHECK_THROWS_AS(checkpoint_from_json(j), Error);
  nlohmann::json missing = to_json(ckpt);
  missing.erase("policy");
  CHECK_THROWS_AS(checkpoint_from_json(missing), Error);
  CHECK_THROWS_AS(load_checkpoint(c.dir + "/does-not-exist.json"), Error);
}

TEST_CASE("geomean") {
  CHECK(geomean({2.0, 8.0}) == doctest::Approx(4.0));
  CHECK(geomean({1.0, 1.0, 1.0}) == 1.0);
  CHECK_THROWS_AS(geomean({}), Error);
  CHECK_THROWS_AS(geomean({1.0, 0.0}), Error);
  CHECK_THROWS_AS(geomean({1.0, -2.0}), Error);
}

TEST_CASE("bench: baseline is exactly 1, oracle never loses, random never beats oracle") {
  const auto &c = corpus();
  BenchModels models;
  models.labels = &c.labels;
  BenchOptions opt;
  opt.methods = {"bruteforce", "random"};
  opt.seed = 3;
  SimBackend sim;
  BenchReport r = bench(c.test_set, models, opt, sim, {}, nullptr);
  CHECK(r.methods == std::vector<std::string>{"baseline", "random", "bruteforce"});
  CHECK(r.rows.size() == c.test_set.size());
  CHECK(r.geomean.at("baseline") == 1.0);
  for (const auto &row : r.rows) {
    CHECK(row.normalized.at("baseline") == 1.0);
    CHECK(row.action.count("baseline") == 0); // the baseline injects nothing
    CHECK(row.normalized.at("bruteforce") <= 1.0);
    CHECK(row.normalized.at("random") >= row.normalized.at("bruteforce"));
  }
  CHECK(r.geomean.at("bruteforce") <= 1.0);
  CHECK(r.geomean.at("random") >= r.geomean.at("bruteforce"));
}

TEST_CASE("bench: every method runs and the report is reproducible") {
  const auto &c = corpus();
  TrainConfig cfg = small_config(150);
  Checkpoint ckpt = init_checkpoint(c.train_set, ActionSpace{}, cfg);
  SimBackend sim;
  train(ckpt, c.train_set, sim, {}, nullptr, cfg);
  SupervisedConfig sup;
  sup.epochs = 20;
  FittedBaselines fitted = fit_baselines(ckpt, c.train_set, c.labels, 3, {}, sup);
  BenchModels models{&ckpt, &fitted, &c.labels, ActionSpace{}};
  BenchOptions opt;
  opt.methods = {"rl", "nns", "tree", "supervised", "random", "bruteforce"};
  opt.best_of = 3;
  opt.random_trials = 2;
  opt.seed = 9;
  auto run = [&](int workers) {
    opt.workers = workers;
    SimBackend backend;
    return bench(c.test_set, models, opt, backend, {}, nullptr);
  };
  BenchReport a = run(1);
  BenchReport b = run(3);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(bench_csv(a) == bench_csv(b));
  CHECK(a.methods == bench_methods());
  for (const auto &row : a.rows) {
    // Keeping the best of several inferences includes the greedy one.
    CHECK(row.normalized.at("rl") >= row.normalized.at("bruteforce"));
    auto greedy = predict(ckpt, std::find_if(c.test_set.begin(), c.test_set.end(),
                                             [&](const Program &p) {
                                               return p.program_id == row.program_id;
                                             })->nest);
    const auto &lbl = c.labels.at(row.program_id);
    CHECK(row.normalized.at("rl") <= lbl.grid_time[greedy.index] / lbl.t_baseline + 1e-12);
  }
}

TEST_CASE("bench reports missing models and unknown methods") {
  const auto &c = corpus();
  SimBackend sim;
  BenchOptions opt;
  auto run = [&] { bench(c.test_set, BenchModels{}, opt, sim, {}, nullptr); };
  opt.methods = {"rl"};
  CHECK(code_of(run) == ErrorCode::MissingModel);
  opt.methods = {"nns"};
  CHECK(code_of(run) == ErrorCode::MissingModel);
  opt.methods = {"bruteforce"};
  CHECK(code_of(run) == ErrorCode::MissingModel);
  opt.methods = {"oracle"};
  CHECK_THROWS_AS(bench(c.test_set, BenchModels{}, opt, sim, {}, nullptr), Error);
  // Baseline alone needs nothing.
  opt.methods = {};
  BenchReport r = bench(c.test_set, BenchModels{}, opt, sim, {}, nullptr);
  CHECK(r.methods == std::vector<std::string>{"baseline"});
}

TEST_CASE("fitting comparison models needs a label for every program") {
  const auto &c = corpus();
  Checkpoint ckpt = init_checkpoint(c.train_set, ActionSpace{}, small_config(0));
  std::map<std::string, OracleLabel> partial = c.labels;
  partial.erase(c.train_set.front().program_id);
  CHECK(code_of([&] { fit_baselines(ckpt, c.train_set, partial, 3, {}, {}); }) ==
        ErrorCode::MissingOracleResult);
  FittedBaselines fb = fit_baselines(ckpt, c.train_set, c.labels, 3, {}, SupervisedConfig{{8}, 5});
  FittedBaselines back = baselines_from_json(to_json(fb));
  CHECK(to_json(back) == to_json(fb));
}

TEST_CASE("efficiency curve has a point per budget for both methods") {
  const auto &c = corpus();
  EfficiencyConfig ec;
  ec.budgets = {100, 200, 300, 400, 500};
  ec.train = small_config(0);
  ec.supervised.epochs = 10;
  SimBackend sim;
  auto points = efficiency_curve(c.train_set, c.test_set, ActionSpace{}, ec, sim, {}, nullptr);
  std::map<std::string, std::vector<long>> by_method;
  for (const auto &p : points) {
    by_method[p.method].push_back(p.compilations);
    CHECK(p.geomean > 0.0);
  }
  REQUIRE(by_method.size() == 2);
  for (const auto &[m, xs] : by_method) {
    CHECK(xs.size() >= 5);
    CHECK(std::is_sorted(xs.begin(), xs.end()));
  }
  // RL reports at batch boundaries at or past each budget.
  CHECK(by_method["rl"] == std::vector<long>{100, 200, 300, 400, 500});
  // A supervised label costs a whole grid: 100 compilations buy 5 programs.
  CHECK(by_method["supervised"].front() == 100);

  ec.budgets = {};
  CHECK_THROWS_AS(efficiency_curve(c.train_set, c.test_set, ActionSpace{}, ec, sim, {}, nullptr),
                  Error);
}

TEST_CASE("report serialization, CSV and rendering") {
  BenchReport r;
  r.methods = {"baseline", "rl", "bruteforce"};
  BenchRow row;
  row.program_id = "p00001";
  ActionSpace space;
  row.action = {{"baseline", space.decode(*space.index_of(4, 2))},
                {"rl", space.decode(*space.index_of(8, 2))},
                {"bruteforce", space.decode(*space.index_of(8, 4))}};
  row.normalized = {{"baseline", 1.0}, {"rl", 0.5}, {"bruteforce", 0.25}};
  r.rows.push_back(row);
  r.geomean = {{"baseline", 1.0}, {"rl", 0.5}, {"bruteforce", 0.25}};
  r.efficiency = {{"rl", 100, 0.9}, {"supervised", 100, 1.1}};

  BenchReport back = bench_report_from_json(to_json(r));
  CHECK(to_json(back) == to_json(r));
  CHECK_THROWS_AS(bench_report_from_json(nlohmann::json{{"rows", 3}}), Error);

  std::string csv = bench_csv(r);
  CHECK(csv.rfind("program_id,baseline,rl,bruteforce\n", 0) == 0);
  CHECK(csv.find("p00001,1,0.5,0.25\n") != std::string::npos);
  CHECK(csv.find("geomean,1,0.5,0.25\n") != std::string::npos);
  std::string ecsv = efficiency_csv(r);
  CHECK(ecsv == "method,compilations,geomean\nrl,100,0.9\nsupervised,100,1.1\n");

  std::string text = render_report(r);
  CHECK(text.find("rl") != std::string::npos);
  CHECK(text.find("2.000x") != std::string::npos);
  CHECK(text.find("4.000x") != std::string::npos);
}
