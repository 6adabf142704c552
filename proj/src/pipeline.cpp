//===- pipeline.cpp - Training, prediction and benchmarking ---------------===//
#include "nvec/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace nvec {

nlohmann::json to_json(const TrainConfig &c) {
  return {{"steps", c.steps},         {"ppo", to_json(c.ppo)}, {"embedding", to_json(c.embedding)},
          {"hidden", c.hidden},       {"joint", c.joint},      {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json &j) {
  TrainConfig c;
  if (!j.is_object())
    throw Error(ErrorCode::Schema, "train config: expected object");
  try {
    c.steps = j.value("steps", c.steps);
    if (j.contains("ppo"))
      c.ppo = ppo_config_from_json(j.at("ppo"));
    if (j.contains("embedding"))
      c.embedding = embedding_config_from_json(j.at("embedding"));
    c.hidden = j.value("hidden", c.hidden);
    c.joint = j.value("joint", c.joint);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::Schema, std::string("train config: ") + e.what());
  }
  if (c.steps < 0 || c.hidden.empty())
    throw Error(ErrorCode::Schema, "train config: value out of range");
  return c;
}

nlohmann::json to_json(const Checkpoint &c) {
  return {{"embedding", to_json(c.embedding)},
          {"policy", to_json(c.policy)},
          {"action_space", to_json(c.space)},
          {"config", c.config}};
}

Checkpoint checkpoint_from_json(const nlohmann::json &j) {
  if (!j.is_object())
    throw Error(ErrorCode::Schema, "checkpoint: expected object");
  for (const char *key : {"embedding", "policy", "action_space"})
    if (!j.contains(key))
      throw Error(ErrorCode::Schema, std::string("checkpoint: missing '") + key + "'");
  Checkpoint c;
  c.embedding = embedding_from_json(j.at("embedding"));
  c.policy = policy_from_json(j.at("policy"));
  c.space = action_space_from_json(j.at("action_space"));
  c.config = j.value("config", nlohmann::json::object());
  if (c.policy.in_dim() != c.embedding.config.dim || c.policy.n_actions() != c.space.size())
    throw Error(ErrorCode::Schema, "checkpoint: policy does not match embedding or actions");
  return c;
}

void save_checkpoint(const Checkpoint &c, const std::string &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error(ErrorCode::Io, "cannot write " + path);
  out << to_json(c).dump() << '\n';
  if (!out)
    throw Error(ErrorCode::Io, "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string &path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded())
    throw Error(ErrorCode::Schema, "checkpoint: malformed JSON in " + path);
  return checkpoint_from_json(j);
}

Checkpoint init_checkpoint(const std::vector<Program> &programs, const ActionSpace &space,
                           const TrainConfig &cfg) {
  std::vector<PathContextBag> bags;
  bags.reserve(programs.size());
  for (const auto &p : programs)
    bags.push_back(observe_snippet(p.nest.embed_snippet, cfg.embedding));
  Checkpoint c;
  c.embedding = EmbeddingNet::create(cfg.embedding, TokenVocab::build(bags),
                                     mix_seed(cfg.seed, 0xe1));
  Rng rng(mix_seed(cfg.seed, 0xa1));
  c.policy = PolicyNet::create(cfg.embedding.dim, space.size(), rng, cfg.hidden);
  c.space = space;
  c.config = to_json(cfg);
  return c;
}

double TrainResult::tail_reward_mean(size_t window) const {
  if (rewards.empty())
    return 0.0;
  size_t n = std::min(window, rewards.size());
  return std::accumulate(rewards.end() - static_cast<long>(n), rewards.end(), 0.0) /
         static_cast<double>(n);
}

TrainResult train(Checkpoint &ckpt, const std::vector<Program> &programs, Backend &backend,
                  const TimeoutPolicy &policy, EvalCache *cache, const TrainConfig &cfg,
                  const std::function<void(const BatchLog &)> &on_batch) {
  TrainResult result;
  if (cfg.steps == 0)
    return result;
  if (programs.empty())
    throw Error(ErrorCode::EmptyBatch, "train: no programs");

  std::vector<ResolvedBag> bags;
  bags.reserve(programs.size());
  for (const auto &p : programs)
    bags.push_back(resolve(observe_snippet(p.nest.embed_snippet, ckpt.embedding.config),
                           ckpt.embedding));

  PpoConfig ppo = cfg.ppo;
  ppo.seed = mix_seed(cfg.seed, 0x990);
  PpoOptimizer opt;
  Rng rng(mix_seed(cfg.seed, 0x70));
  EmbeddingNet *emb = cfg.joint ? &ckpt.embedding : nullptr;
  std::vector<Transition> batch;
  batch.reserve(ppo.batch_size);
  long steps = 0;
  int batch_no = 0;
  while (steps < cfg.steps) {
    batch.clear();
    double reward_sum = 0.0;
    while (batch.size() < ppo.batch_size && steps < cfg.steps) {
      auto i = static_cast<size_t>(rng.below(programs.size()));
      const Program &p = programs[i];
      Transition t;
      t.state = embed(bags[i], ckpt.embedding);
      t.bag = &bags[i];
      ActResult a = act(ckpt.policy, t.state, ActMode::Sample, rng);
      Measurement m = evaluate(p.src, p.nest, ckpt.space.decode(a.action), backend, policy, cache);
      t.action = a.action;
      t.reward = m.reward;
      t.logp_old = a.logp;
      t.value_old = a.value;
      batch.push_back(std::move(t));
      result.rewards.push_back(m.reward);
      reward_sum += m.reward;
      ++steps;
    }
    BatchLog log;
    log.batch = batch_no++;
    log.steps = steps;
    log.reward_mean = reward_sum / static_cast<double>(batch.size());
    log.stats = ppo_update(ckpt.policy, emb, batch, ppo, opt);
    result.batches.push_back(log);
    if (on_batch)
      on_batch(log);
  }
  return result;
}

std::string training_log_csv(const TrainResult &r) {
  std::ostringstream out;
  out.precision(17);
  out << "batch,steps,reward_mean,policy_loss,value_loss,entropy,clip_frac\n";
  for (const auto &b : r.batches)
    out << b.batch << ',' << b.steps << ',' << b.reward_mean << ',' << b.stats.policy_loss << ','
        << b.stats.value_loss << ',' << b.stats.entropy << ',' << b.stats.clip_frac << '\n';
  return out.str();
}

nn::Vector code_vector(const Checkpoint &ckpt, const LoopNest &nest) {
  return embed(observe_snippet(nest.embed_snippet, ckpt.embedding.config), ckpt.embedding);
}

Action predict(const Checkpoint &ckpt, const LoopNest &nest) {
  PolicyOutput out = policy_forward(ckpt.policy, code_vector(ckpt, nest));
  return ckpt.space.decode(greedy_index(out.logits));
}

FittedBaselines fit_baselines(const Checkpoint &ckpt, const std::vector<Program> &programs,
                              const std::map<std::string, OracleLabel> &labels, int k,
                              const TreeConfig &tree, const SupervisedConfig &supervised) {
  if (programs.empty())
    throw Error(ErrorCode::EmptyModel, "fit_baselines: no programs");
  std::vector<nn::Vector> x;
  std::vector<size_t> y;
  FittedBaselines b;
  b.nns.k = k;
  for (const auto &p : programs) {
    auto it = labels.find(p.program_id);
    if (it == labels.end())
      throw Error(ErrorCode::MissingOracleResult, "no oracle label for " + p.program_id);
    x.push_back(code_vector(ckpt, p.nest));
    y.push_back(it->second.best_action.index);
    b.nns.ids.push_back(p.program_id);
  }
  b.nns.x = x;
  b.nns.labels = y;
  b.tree = tree_fit(x, y, ckpt.space.size(), tree);
  b.supervised = supervised_fit(x, y, ckpt.space.size(), supervised);
  return b;
}

nlohmann::json to_json(const FittedBaselines &b) {
  return {{"nns", to_json(b.nns)}, {"tree", to_json(b.tree)}, {"supervised", to_json(b.supervised)}};
}

FittedBaselines baselines_from_json(const nlohmann::json &j) {
  if (!j.is_object() || !j.contains("nns") || !j.contains("tree") || !j.contains("supervised"))
    throw Error(ErrorCode::Schema, "baselines: expected nns, tree and supervised");
  return {knn_from_json(j.at("nns")), tree_from_json(j.at("tree")),
          supervised_from_json(j.at("supervised"))};
}

double geomean(const std::vector<double> &v) {
  if (v.empty())
    throw Error(ErrorCode::InvalidArgument, "geomean of nothing");
  double s = 0.0;
  for (double x : v) {
    if (!(x > 0.0) || !std::isfinite(x))
      throw Error(ErrorCode::InvalidArgument, "geomean needs finite positive values");
    s += std::log(x);
  }
  return std::exp(s / static_cast<double>(v.size()));
}

const std::vector<std::string> &bench_methods() {
  static const std::vector<std::string> m = {"baseline", "rl",     "nns",       "tree",
                                             "supervised", "random", "bruteforce"};
  return m;
}

namespace {

uint64_t program_seed(uint64_t seed, uint64_t stream, const std::string &id) {
  return mix_seed(seed ^ fnv1a64(id), stream);
}

} // namespace

BenchReport bench(const std::vector<Program> &programs, const BenchModels &models,
                  const BenchOptions &opt, Backend &backend, const TimeoutPolicy &policy,
                  EvalCache *cache) {
  const auto &known = bench_methods();
  for (const auto &m : opt.methods)
    if (std::find(known.begin(), known.end(), m) == known.end())
      throw Error(ErrorCode::InvalidArgument, "unknown bench method '" + m + "'");
  auto wanted = [&](const std::string &m) {
    return m == "baseline" || std::find(opt.methods.begin(), opt.methods.end(), m) !=
                                  opt.methods.end();
  };
  BenchReport report;
  for (const auto &m : known)
    if (wanted(m))
      report.methods.push_back(m);

  const ActionSpace &space = models.space;
  auto need = [&](bool ok, const std::string &m, const char *what) {
    if (wanted(m) && !ok)
      throw Error(ErrorCode::MissingModel, "bench method '" + m + "' needs " + what);
  };
  need(models.rl != nullptr, "rl", "a trained checkpoint");
  for (const char *m : {"nns", "tree", "supervised"})
    need(models.rl && models.baselines, m, "a checkpoint and fitted baselines");
  need(models.labels != nullptr, "bruteforce", "oracle labels");
  if (models.rl && !(models.rl->space == space))
    throw Error(ErrorCode::InvalidArgument, "bench: checkpoint action space differs");
  if (opt.best_of < 1 || opt.random_trials < 1)
    throw Error(ErrorCode::InvalidArgument, "bench: best_of and random_trials must be >= 1");

  report.rows.resize(programs.size());
  parallel_for(programs.size(), opt.workers, [&](size_t i) {
    const Program &p = programs[i];
    BenchRow &row = report.rows[i];
    row.program_id = p.program_id;
    row.normalized["baseline"] = 1.0;
    auto run = [&](const Action &a) {
      Measurement m = evaluate(p.src, p.nest, a, backend, policy, cache);
      return m.t_candidate / m.t_baseline;
    };
    auto record = [&](const std::string &method, const Action &a) {
      row.action[method] = a;
      row.normalized[method] = run(a);
    };
    nn::Vector v;
    if (models.rl)
      v = code_vector(*models.rl, p.nest);
    if (wanted("rl")) {
      PolicyOutput out = policy_forward(models.rl->policy, v);
      Action best = space.decode(greedy_index(out.logits));
      double best_t = run(best);
      Rng rng(program_seed(opt.seed, 0xb0, p.program_id));
      for (int k = 1; k < opt.best_of; ++k) {
        Action a = space.decode(act(models.rl->policy, v, ActMode::Sample, rng).action);
        double t = run(a);
        if (t < best_t) {
          best = a;
          best_t = t;
        }
      }
      row.action["rl"] = best;
      row.normalized["rl"] = best_t;
    }
    if (wanted("nns"))
      record("nns", space.decode(knn_predict(models.baselines->nns, v)));
    if (wanted("tree"))
      record("tree", space.decode(tree_predict(models.baselines->tree, v)));
    if (wanted("supervised"))
      record("supervised", space.decode(supervised_predict(models.baselines->supervised, v)));
    if (wanted("random")) {
      SearchResult r = random_search(p.src, p.nest, space, backend, policy, cache,
                                     opt.random_trials,
                                     program_seed(opt.seed, 0x7a, p.program_id));
      record("random", r.action);
    }
    if (wanted("bruteforce")) {
      auto it = models.labels->find(p.program_id);
      if (it == models.labels->end())
        throw Error(ErrorCode::MissingOracleResult, "no oracle label for " + p.program_id);
      record("bruteforce", it->second.best_action);
    }
  });

  for (const auto &m : report.methods) {
    std::vector<double> xs;
    for (const auto &row : report.rows)
      xs.push_back(row.normalized.at(m));
    report.geomean[m] = m == "baseline" ? 1.0 : (xs.empty() ? 1.0 : geomean(xs));
  }
  return report;
}

std::vector<EfficiencyPoint> efficiency_curve(const std::vector<Program> &train_set,
                                              const std::vector<Program> &test,
                                              const ActionSpace &space,
                                              const EfficiencyConfig &cfg, Backend &backend,
                                              const TimeoutPolicy &policy, EvalCache *cache) {
  std::vector<long> budgets = cfg.budgets;
  std::sort(budgets.begin(), budgets.end());
  if (budgets.empty() || budgets.front() <= 0)
    throw Error(ErrorCode::InvalidArgument, "efficiency: budgets must be positive");
  if (train_set.empty() || test.empty())
    throw Error(ErrorCode::EmptyModel, "efficiency: empty train or test split");

  auto test_geomean = [&](const std::function<Action(const Program &)> &choose) {
    std::vector<double> xs;
    for (const auto &p : test) {
      Measurement m = evaluate(p.src, p.nest, choose(p), backend, policy, cache);
      xs.push_back(m.t_candidate / m.t_baseline);
    }
    return geomean(xs);
  };

  std::vector<EfficiencyPoint> points;
  Checkpoint ck = init_checkpoint(train_set, space, cfg.train);
  TrainConfig tc = cfg.train;
  tc.steps = budgets.back();
  size_t next = 0;
  train(ck, train_set, backend, policy, cache, tc, [&](const BatchLog &b) {
    if (next >= budgets.size() || b.steps < budgets[next])
      return;
    while (next < budgets.size() && budgets[next] <= b.steps)
      ++next;
    points.push_back({"rl", b.steps,
                      test_geomean([&](const Program &p) { return predict(ck, p.nest); })});
  });

  long prev_labels = 0;
  for (long budget : budgets) {
    long n = std::min<long>(budget / static_cast<long>(space.size()),
                            static_cast<long>(train_set.size()));
    if (n == 0 || n == prev_labels)
      continue;
    prev_labels = n;
    std::vector<OracleLabel> labels(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) {
      const Program &p = train_set[static_cast<size_t>(i)];
      labels[static_cast<size_t>(i)] =
          brute_force(p.program_id, p.src, p.nest, space, backend, policy, cache, cfg.workers);
    }
    Checkpoint fresh = init_checkpoint(train_set, space, cfg.train);
    std::vector<ResolvedBag> bags;
    std::vector<size_t> y;
    for (long i = 0; i < n; ++i) {
      const Program &p = train_set[static_cast<size_t>(i)];
      bags.push_back(resolve(observe_snippet(p.nest.embed_snippet, fresh.embedding.config),
                             fresh.embedding));
      y.push_back(labels[static_cast<size_t>(i)].best_action.index);
    }
    std::vector<const ResolvedBag *> ptrs;
    for (const auto &b : bags)
      ptrs.push_back(&b);
    SupervisedNet net = supervised_fit_joint(fresh.embedding, ptrs, y, space.size(), cfg.supervised);
    double g = test_geomean([&](const Program &p) {
      return space.decode(supervised_predict(net, code_vector(fresh, p.nest)));
    });
    points.push_back({"supervised", n * static_cast<long>(space.size()), g});
  }
  return points;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

} // namespace

nlohmann::json to_json(const BenchReport &r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto &row : r.rows) {
    nlohmann::json actions = nlohmann::json::object();
    for (const auto &[m, a] : row.action)
      actions[m] = {{"vf", a.vf}, {"if", a.if_}};
    rows.push_back({{"program_id", row.program_id},
                    {"normalized", row.normalized},
                    {"action", actions}});
  }
  nlohmann::json eff = nlohmann::json::array();
  for (const auto &e : r.efficiency)
    eff.push_back({{"method", e.method}, {"compilations", e.compilations}, {"geomean", e.geomean}});
  return {{"methods", r.methods}, {"geomean", r.geomean}, {"programs", rows}, {"efficiency", eff}};
}

BenchReport bench_report_from_json(const nlohmann::json &j) {
  BenchReport r;
  try {
    r.methods = j.at("methods").get<std::vector<std::string>>();
    r.geomean = j.at("geomean").get<std::map<std::string, double>>();
    for (const auto &row : j.at("programs")) {
      BenchRow b;
      b.program_id = row.at("program_id").get<std::string>();
      b.normalized = row.at("normalized").get<std::map<std::string, double>>();
      for (const auto &[m, a] : row.at("action").items()) {
        Action act;
        act.vf = a.at("vf").get<int>();
        act.if_ = a.at("if").get<int>();
        b.action[m] = act;
      }
      r.rows.push_back(std::move(b));
    }
    for (const auto &e : j.value("efficiency", nlohmann::json::array()))
      r.efficiency.push_back({e.at("method").get<std::string>(), e.at("compilations").get<long>(),
                              e.at("geomean").get<double>()});
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::Schema, std::string("bench report: ") + e.what());
  }
  return r;
}

std::string bench_csv(const BenchReport &r) {
  std::ostringstream out;
  out << "program_id";
  for (const auto &m : r.methods)
    out << ',' << m;
  out << '\n';
  for (const auto &row : r.rows) {
    out << row.program_id;
    for (const auto &m : r.methods)
      out << ',' << fmt(row.normalized.at(m));
    out << '\n';
  }
  out << "geomean";
  for (const auto &m : r.methods)
    out << ',' << fmt(r.geomean.at(m));
  out << '\n';
  return out.str();
}

std::string efficiency_csv(const BenchReport &r) {
  std::ostringstream out;
  out << "method,compilations,geomean\n";
  for (const auto &e : r.efficiency)
    out << e.method << ',' << e.compilations << ',' << fmt(e.geomean) << '\n';
  return out.str();
}

std::string render_report(const BenchReport &r) {
  std::ostringstream out;
  out << std::fixed;
  auto oracle = r.geomean.find("bruteforce");
  out << "programs: " << r.rows.size() << "\n\n";
  out << std::left << std::setw(12) << "method" << std::right << std::setw(10) << "geomean"
      << std::setw(10) << "speedup";
  if (oracle != r.geomean.end())
    out << std::setw(12) << "vs oracle";
  out << '\n';
  for (const auto &m : r.methods) {
    double g = r.geomean.at(m);
    out << std::left << std::setw(12) << m << std::right << std::setprecision(4) << std::setw(10)
        << g << std::setprecision(3) << std::setw(9) << 1.0 / g << 'x';
    if (oracle != r.geomean.end())
      out << std::setprecision(4) << std::setw(12) << g / oracle->second;
    out << '\n';
  }
  if (!r.efficiency.empty()) {
    out << "\ncompilations vs test geomean\n";
    out << std::left << std::setw(12) << "method" << std::right << std::setw(14)
        << "compilations" << std::setw(10) << "geomean" << '\n';
    for (const auto &e : r.efficiency)
      out << std::left << std::setw(12) << e.method << std::right << std::setw(14)
          << e.compilations << std::setprecision(4) << std::setw(10) << e.geomean << '\n';
  }
  return out.str();
}

} // namespace nvec
