//===- capi.cpp - extern "C" wrapper over the C++ core --------------------===//
#include "nvec/nvec.h"
#include "nvec/pipeline.hpp"
#include "nvec/rewriter.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <optional>

using nlohmann::json;

struct nvec_source {
  nvec::SourceFile src;
  std::vector<nvec::LoopNest> nests;
  std::vector<std::string> warnings;
};

struct nvec_env {
  nvec::EnvConfig cfg;
  std::unique_ptr<nvec::Backend> backend;
  std::unique_ptr<nvec::EvalCache> cache;
};

struct nvec_dataset {
  nvec::DatasetManifest manifest;
};

struct nvec_model {
  nvec::Checkpoint ckpt;
};

static_assert(static_cast<int>(nvec::ErrorCode::InvalidArgument) == NVEC_E_INVALID_ARGUMENT);
static_assert(static_cast<int>(nvec::ErrorCode::MissingOracleResult) ==
              NVEC_E_MISSING_ORACLE_RESULT);
static_assert(static_cast<int>(nvec::ErrorCode::Io) == NVEC_E_IO);

namespace {

thread_local std::string last_error;

template <class F> nvec_status guard(F &&f) noexcept {
  last_error.clear();
  try {
    f();
    return NVEC_OK;
  } catch (const nvec::Error &e) {
    last_error = e.what();
    return static_cast<nvec_status>(e.code());
  } catch (const json::exception &e) {
    last_error = e.what();
    return NVEC_E_SCHEMA;
  } catch (const std::exception &e) {
    last_error = e.what();
    return NVEC_E_INTERNAL;
  } catch (...) {
    last_error = "unknown exception";
    return NVEC_E_INTERNAL;
  }
}

void require(bool ok, const char *what) {
  if (!ok)
    throw nvec::Error(nvec::ErrorCode::InvalidArgument, what);
}

char *dup_string(const std::string &s) {
  char *p = static_cast<char *>(std::malloc(s.size() + 1));
  if (!p)
    throw std::bad_alloc();
  std::memcpy(p, s.data(), s.size() + 1);
  return p;
}

void put(char **out, const std::string &s) {
  if (out)
    *out = dup_string(s);
}

json parse_json(const char *text, const char *what) {
  if (!text)
    return json::object();
  try {
    return json::parse(text);
  } catch (const json::exception &e) {
    throw nvec::Error(nvec::ErrorCode::Schema, std::string(what) + ": " + e.what());
  }
}

const nvec::LoopNest &nest_at(const nvec_source *src, size_t nest) {
  require(src != nullptr, "null source");
  if (nest >= src->nests.size())
    throw nvec::Error(nvec::ErrorCode::InvalidArgument,
                      "nest " + std::to_string(nest) + " out of range (" +
                          std::to_string(src->nests.size()) + " nests)");
  return src->nests[nest];
}

std::vector<std::string> split_ids(const nvec::DatasetManifest &m, const std::string &split) {
  if (split == "train")
    return m.train_ids;
  if (split == "test")
    return m.test_ids;
  if (split == "all") {
    std::vector<std::string> ids;
    for (const auto &r : m.records)
      ids.push_back(r.program_id);
    return ids;
  }
  throw nvec::Error(nvec::ErrorCode::InvalidArgument,
                    "split must be train, test or all, got '" + split + "'");
}

std::map<std::string, nvec::OracleLabel> load_label_map(const std::string &path,
                                                        const nvec::ActionSpace &space) {
  std::map<std::string, nvec::OracleLabel> out;
  for (auto &l : nvec::load_labels(path, space))
    out[l.program_id] = std::move(l);
  return out;
}

nvec::SupervisedConfig supervised_config_from_json(const json &j) {
  nvec::SupervisedConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  if (c.hidden.empty() || c.epochs < 0 || c.batch_size == 0 || !(c.lr > 0))
    throw nvec::Error(nvec::ErrorCode::Schema, "supervised config: value out of range");
  return c;
}

nvec::TreeConfig tree_config_from_json(const json &j) {
  nvec::TreeConfig c;
  c.max_depth = j.value("max_depth", c.max_depth);
  c.min_leaf = j.value("min_leaf", c.min_leaf);
  if (c.max_depth < 0 || c.min_leaf < 1)
    throw nvec::Error(nvec::ErrorCode::Schema, "tree config: value out of range");
  return c;
}

void check_space(const nvec_model *model, const nvec_env *env) {
  if (model && !(model->ckpt.space == env->cfg.space))
    throw nvec::Error(nvec::ErrorCode::DimMismatch,
                      "model action space differs from the environment's");
}

} // namespace

extern "C" {

const char *nvec_version(void) { return "0.1.0"; }

const char *nvec_status_name(nvec_status status) {
  if (status == NVEC_OK)
    return "Ok";
  if (status == NVEC_E_INTERNAL)
    return "Internal";
  if (status >= NVEC_E_INVALID_ARGUMENT && status <= NVEC_E_IO)
    return nvec::error_code_name(static_cast<nvec::ErrorCode>(status)).data();
  return "Unknown";
}

const char *nvec_last_error(void) { return last_error.c_str(); }

void nvec_string_free(char *s) { std::free(s); }

//===-- Sources ------------------------------------------------------------===//

nvec_status nvec_source_open(const char *path, nvec_source **out) {
  return guard([&] {
    require(path && out, "null argument");
    auto s = std::make_unique<nvec_source>();
    s->src = nvec::load_source(path);
    s->nests = nvec::extract_loop_nests(s->src, &s->warnings);
    *out = s.release();
  });
}

nvec_status nvec_source_from_text(const char *path, const char *text, nvec_source **out) {
  return guard([&] {
    require(path && text && out, "null argument");
    auto s = std::make_unique<nvec_source>();
    s->src = nvec::make_source(path, text);
    s->nests = nvec::extract_loop_nests(s->src, &s->warnings);
    *out = s.release();
  });
}

void nvec_source_free(nvec_source *src) { delete src; }

nvec_status nvec_source_nest_count(const nvec_source *src, size_t *out) {
  return guard([&] {
    require(src && out, "null argument");
    *out = src->nests.size();
  });
}

nvec_status nvec_source_nests_json(const nvec_source *src, char **out) {
  return guard([&] {
    require(src && out, "null argument");
    json nests = json::array();
    for (const auto &n : src->nests)
      nests.push_back({{"nest_id", n.nest_id},
                       {"file", n.file},
                       {"line", n.line},
                       {"depth", n.depth},
                       {"embed_snippet", n.embed_snippet}});
    put(out, json{{"nests", nests}, {"warnings", src->warnings}}.dump());
  });
}

nvec_status nvec_inject(const nvec_source *src, size_t nest, int vf, int if_, char **text) {
  return guard([&] {
    require(text != nullptr, "null argument");
    const auto &n = nest_at(src, nest);
    require(vf >= 1 && if_ >= 1 && nvec::is_pow2(vf) && nvec::is_pow2(if_),
            "vf and if must be positive powers of two");
    put(text, nvec::inject(src->src.text, n, {vf, if_}));
  });
}

nvec_status nvec_remove_pragma(const nvec_source *src, size_t nest, char **text) {
  return guard([&] {
    require(text != nullptr, "null argument");
    put(text, nvec::remove_pragma(src->src.text, nest_at(src, nest)));
  });
}

//===-- Environment --------------------------------------------------------===//

nvec_status nvec_env_create(const char *config_json, const char *cache_path, nvec_env **out) {
  return guard([&] {
    require(out != nullptr, "null argument");
    auto e = std::make_unique<nvec_env>();
    e->cfg = nvec::env_config_from_json(parse_json(config_json, "env config"));
    e->backend = nvec::make_backend(e->cfg);
    e->cache = cache_path ? std::make_unique<nvec::EvalCache>(cache_path)
                          : std::make_unique<nvec::EvalCache>();
    *out = e.release();
  });
}

void nvec_env_free(nvec_env *env) { delete env; }

nvec_status nvec_env_evaluate(nvec_env *env, const nvec_source *src, size_t nest, int vf,
                              int if_, char **out) {
  return guard([&] {
    require(env && out, "null argument");
    const auto &n = nest_at(src, nest);
    auto idx = env->cfg.space.index_of(vf, if_);
    if (!idx)
      throw nvec::Error(nvec::ErrorCode::InvalidArgument,
                        "(" + std::to_string(vf) + ", " + std::to_string(if_) +
                            ") is outside the action grid");
    auto m = nvec::evaluate(src->src, n, env->cfg.space.decode(*idx), *env->backend,
                            env->cfg.timeout, env->cache.get());
    put(out, json{{"t_baseline", m.t_baseline},
                  {"t_candidate", m.t_candidate},
                  {"status", nvec::status_name(m.status)},
                  {"reward", m.reward}}
                 .dump());
  });
}

//===-- Datasets -----------------------------------------------------------===//

nvec_status nvec_dataset_generate(const char *out_dir, int count, uint64_t seed,
                                  double train_fraction, nvec_dataset **out) {
  return guard([&] {
    require(out_dir && out, "null argument");
    require(count >= 1, "count must be positive");
    require(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction must be in (0, 1)");
    auto d = std::make_unique<nvec_dataset>();
    d->manifest =
        nvec::generate(nvec::default_templates(), count, seed, out_dir, train_fraction);
    *out = d.release();
  });
}

nvec_status nvec_dataset_load(const char *manifest_path, nvec_dataset **out) {
  return guard([&] {
    require(manifest_path && out, "null argument");
    auto d = std::make_unique<nvec_dataset>();
    d->manifest = nvec::load_manifest(manifest_path);
    *out = d.release();
  });
}

void nvec_dataset_free(nvec_dataset *ds) { delete ds; }

nvec_status nvec_dataset_summary_json(const nvec_dataset *ds, char **out) {
  return guard([&] {
    require(ds && out, "null argument");
    const auto &m = ds->manifest;
    std::map<std::string, int> families;
    int duplicates = 0;
    for (const auto &r : m.records) {
      ++families[r.template_id];
      duplicates += !r.duplicate_of.empty();
    }
    put(out, json{{"root", m.root},
                  {"count", m.count},
                  {"seed", m.seed},
                  {"train", m.train_ids.size()},
                  {"test", m.test_ids.size()},
                  {"families", families},
                  {"duplicates", duplicates}}
                 .dump());
  });
}

nvec_status nvec_bruteforce(nvec_env *env, const nvec_dataset *ds, const char *split,
                            const char *labels_path, char **summary_json) {
  return guard([&] {
    require(env && ds && split && labels_path, "null argument");
    const auto &space = env->cfg.space;
    auto programs = nvec::load_programs(ds->manifest, split_ids(ds->manifest, split));
    std::vector<nvec::OracleLabel> labels(programs.size());
    for (size_t i = 0; i < programs.size(); ++i) {
      const auto &p = programs[i];
      labels[i] = nvec::brute_force(p.program_id, p.src, p.nest, space, *env->backend,
                                    env->cfg.timeout, env->cache.get(), env->cfg.workers);
    }
    nvec::save_labels(labels, labels_path);
    if (!summary_json)
      return;

    nvec::DatasetManifest sub = ds->manifest;
    sub.records.clear();
    std::map<std::string, nvec::Action> best;
    for (size_t i = 0; i < programs.size(); ++i) {
      sub.records.push_back(ds->manifest.record(programs[i].program_id));
      best[labels[i].program_id] = labels[i].best_action;
    }
    auto h = nvec::report_optimum_distribution(sub, best, space);
    json counts = json::array();
    for (size_t a = 0; a < space.size(); ++a) {
      auto act = space.decode(a);
      counts.push_back({{"vf", act.vf},
                        {"if", act.if_},
                        {"count", h.counts[a]},
                        {"percent", h.percent(static_cast<int>(a))}});
    }
    json mode = nullptr;
    if (h.total > 0) {
      auto act = space.decode(static_cast<size_t>(h.mode()));
      mode = {{"vf", act.vf}, {"if", act.if_}};
    }
    put(summary_json, json{{"total", h.total}, {"counts", counts}, {"mode", mode}}.dump());
  });
}

//===-- Models -------------------------------------------------------------===//

nvec_status nvec_model_init(const nvec_dataset *ds, const nvec_env *env,
                            const char *train_config_json, nvec_model **out) {
  return guard([&] {
    require(ds && env && out, "null argument");
    auto cfg = nvec::train_config_from_json(parse_json(train_config_json, "train config"));
    auto programs = nvec::load_programs(ds->manifest, ds->manifest.train_ids);
    auto m = std::make_unique<nvec_model>();
    m->ckpt = nvec::init_checkpoint(programs, env->cfg.space, cfg);
    *out = m.release();
  });
}

nvec_status nvec_model_load(const char *path, nvec_model **out) {
  return guard([&] {
    require(path && out, "null argument");
    auto m = std::make_unique<nvec_model>();
    m->ckpt = nvec::load_checkpoint(path);
    *out = m.release();
  });
}

nvec_status nvec_model_save(const nvec_model *model, const char *path) {
  return guard([&] {
    require(model && path, "null argument");
    nvec::save_checkpoint(model->ckpt, path);
  });
}

void nvec_model_free(nvec_model *model) { delete model; }

nvec_status nvec_train(nvec_model *model, nvec_env *env, const nvec_dataset *ds,
                       const char *train_config_json, nvec_batch_fn on_batch, void *user,
                       char **log_csv, char **summary_json) {
  return guard([&] {
    require(model && env && ds, "null argument");
    check_space(model, env);
    auto cfg = nvec::train_config_from_json(parse_json(train_config_json, "train config"));
    auto programs = nvec::load_programs(ds->manifest, ds->manifest.train_ids);
    std::function<void(const nvec::BatchLog &)> cb;
    if (on_batch)
      cb = [&](const nvec::BatchLog &b) {
        json j = {{"batch", b.batch},
                  {"steps", b.steps},
                  {"reward_mean", b.reward_mean},
                  {"policy_loss", b.stats.policy_loss},
                  {"value_loss", b.stats.value_loss},
                  {"entropy", b.stats.entropy},
                  {"clip_frac", b.stats.clip_frac}};
        on_batch(j.dump().c_str(), user);
      };
    auto r = nvec::train(model->ckpt, programs, *env->backend, env->cfg.timeout,
                         env->cache.get(), cfg, cb);
    model->ckpt.config = nvec::to_json(cfg);
    put(log_csv, nvec::training_log_csv(r));
    json final_mean = r.rewards.empty() ? json(nullptr) : json(r.tail_reward_mean());
    put(summary_json, json{{"steps", r.rewards.size()},
                           {"batches", r.batches.size()},
                           {"final_reward_mean", final_mean}}
                          .dump());
  });
}

nvec_status nvec_predict(const nvec_model *model, const nvec_source *src, size_t nest, int *vf,
                         int *if_) {
  return guard([&] {
    require(model && vf && if_, "null argument");
    auto a = nvec::predict(model->ckpt, nest_at(src, nest));
    *vf = a.vf;
    *if_ = a.if_;
  });
}

nvec_status nvec_code_vector_json(const nvec_model *model, const nvec_source *src,
                                  size_t nest, char **out) {
  return guard([&] {
    require(model && out, "null argument");
    auto v = nvec::code_vector(model->ckpt, nest_at(src, nest));
    put(out, json(std::vector<double>(v.data(), v.data() + v.size())).dump());
  });
}

//===-- Benchmarks ---------------------------------------------------------===//

nvec_status nvec_bench(nvec_env *env, const nvec_dataset *ds, const nvec_model *model,
                       const char *labels_path, const char *bench_config_json,
                       char **report_json, char **baselines_json) {
  return guard([&] {
    require(env && ds && report_json, "null argument");
    check_space(model, env);
    json cfg = parse_json(bench_config_json, "bench config");
    nvec::BenchOptions opt;
    opt.methods = cfg.value("methods", nvec::bench_methods());
    opt.random_trials = cfg.value("random_trials", opt.random_trials);
    opt.best_of = cfg.value("best_of", opt.best_of);
    opt.seed = cfg.value("seed", opt.seed);
    opt.workers = env->cfg.workers;
    require(opt.random_trials >= 1 && opt.best_of >= 1,
            "random_trials and best_of must be positive");
    auto wants = [&](const char *m) {
      return std::find(opt.methods.begin(), opt.methods.end(), m) != opt.methods.end();
    };

    std::map<std::string, nvec::OracleLabel> labels;
    if (labels_path)
      labels = load_label_map(labels_path, env->cfg.space);

    nvec::BenchModels models;
    models.space = env->cfg.space;
    models.rl = model ? &model->ckpt : nullptr;
    std::optional<nvec::FittedBaselines> fitted;
    if (wants("nns") || wants("tree") || wants("supervised")) {
      if (!model)
        throw nvec::Error(nvec::ErrorCode::MissingModel,
                          "nns, tree and supervised need a checkpoint for code vectors");
      if (!labels_path)
        throw nvec::Error(nvec::ErrorCode::MissingModel,
                          "nns, tree and supervised need oracle labels");
      auto train_set = nvec::load_programs(ds->manifest, ds->manifest.train_ids);
      fitted = nvec::fit_baselines(
          model->ckpt, train_set, labels, cfg.value("k", 5),
          tree_config_from_json(cfg.value("tree", json::object())),
          supervised_config_from_json(cfg.value("supervised", json::object())));
      models.baselines = &*fitted;
    }
    if (labels_path)
      models.labels = &labels;

    auto test = nvec::load_programs(ds->manifest, ds->manifest.test_ids);
    auto report =
        nvec::bench(test, models, opt, *env->backend, env->cfg.timeout, env->cache.get());
    put(report_json, nvec::to_json(report).dump());
    if (baselines_json)
      *baselines_json = fitted ? dup_string(nvec::to_json(*fitted).dump()) : nullptr;
  });
}

nvec_status nvec_efficiency(nvec_env *env, const nvec_dataset *ds, const char *config_json,
                            const char *report_json_in, char **report_json) {
  return guard([&] {
    require(env && ds && report_json, "null argument");
    json cfg = parse_json(config_json, "efficiency config");
    nvec::EfficiencyConfig ec;
    ec.budgets = cfg.value("budgets", ec.budgets);
    if (cfg.contains("train"))
      ec.train = nvec::train_config_from_json(cfg.at("train"));
    if (cfg.contains("supervised"))
      ec.supervised = supervised_config_from_json(cfg.at("supervised"));
    ec.workers = env->cfg.workers;

    nvec::BenchReport report;
    if (report_json_in)
      report = nvec::bench_report_from_json(parse_json(report_json_in, "report"));
    auto train_set = nvec::load_programs(ds->manifest, ds->manifest.train_ids);
    auto test = nvec::load_programs(ds->manifest, ds->manifest.test_ids);
    auto points = nvec::efficiency_curve(train_set, test, env->cfg.space, ec, *env->backend,
                                         env->cfg.timeout, env->cache.get());
    report.efficiency.insert(report.efficiency.end(), points.begin(), points.end());
    put(report_json, nvec::to_json(report).dump());
  });
}

nvec_status nvec_report_render(const char *report_json, char **text) {
  return guard([&] {
    require(report_json && text, "null argument");
    put(text, nvec::render_report(nvec::bench_report_from_json(parse_json(report_json, "report"))));
  });
}

nvec_status nvec_report_csv(const char *report_json, char **bench_csv, char **efficiency_csv) {
  return guard([&] {
    require(report_json != nullptr, "null argument");
    auto r = nvec::bench_report_from_json(parse_json(report_json, "report"));
    put(bench_csv, nvec::bench_csv(r));
    put(efficiency_csv, nvec::efficiency_csv(r));
  });
}

} // extern "C"
