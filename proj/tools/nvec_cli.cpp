//===- nvec_cli.cpp - Command-line front end over the C API ---------------===//
#include "nvec/nvec.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliError : std::runtime_error {
  int status;
  CliError(int status, const std::string &msg) : std::runtime_error(msg), status(status) {}
};

void check(nvec_status s) {
  if (s != NVEC_OK)
    throw CliError(s, std::string(nvec_status_name(s)) + ": " + nvec_last_error());
}

/// Owns a string returned by the library.
struct CStr {
  char *p = nullptr;
  ~CStr() { nvec_string_free(p); }
  char **out() { return &p; }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

template <class T, void (*Free)(T *)> struct Handle {
  T *p = nullptr;
  ~Handle() { Free(p); }
  T **out() { return &p; }
};
using Source = Handle<nvec_source, nvec_source_free>;
using Env = Handle<nvec_env, nvec_env_free>;
using Dataset = Handle<nvec_dataset, nvec_dataset_free>;
using Model = Handle<nvec_model, nvec_model_free>;

std::string read_text(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw CliError(NVEC_E_IO, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path &path, const std::string &text) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out)
    throw CliError(NVEC_E_IO, "cannot write " + path.string());
}

struct Globals {
  std::string config_path;
  long long seed = -1; // < 0: not given
  std::string backend;
  int workers = 0; // 0: not given
  std::string cache;
  json config = json::object();

  json section(const char *name) const {
    return config.contains(name) ? config.at(name) : json::object();
  }
  json env() const {
    json e = section("env");
    if (!backend.empty())
      e["backend"] = backend;
    if (workers > 0)
      e["workers"] = workers;
    return e;
  }
  json train() const {
    json t = section("train");
    if (seed >= 0)
      t["seed"] = seed;
    return t;
  }
  const char *cache_path() const { return cache.empty() ? nullptr : cache.c_str(); }
};

void open_env(const Globals &g, Env &env) {
  check(nvec_env_create(g.env().dump().c_str(), g.cache_path(), env.out()));
}

/// run.json: what ran, with which effective configuration, and what it wrote.
void write_run(const fs::path &dir, const std::string &command, const json &config,
               const std::vector<std::string> &outputs, const json &summary) {
  json run = {{"command", command},
              {"version", nvec_version()},
              {"config", config},
              {"outputs", outputs},
              {"summary", summary}};
  write_text(dir / "run.json", run.dump(2) + "\n");
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Learned loop vectorization: extract, label, train, predict and benchmark"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON config with env/train/bench/efficiency sections")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for dataset generation, training and benchmarking");
  app.add_option("--backend", g.backend, "Measurement backend")
      ->check(CLI::IsMember({"sim", "clang"}));
  app.add_option("--workers", g.workers, "Parallel evaluation workers")
      ->check(CLI::PositiveNumber);
  app.add_option("--cache", g.cache, "Persistent measurement cache (JSON lines)");

  // extract
  auto *extract = app.add_subcommand("extract", "List the loop nests of C files as JSON");
  std::vector<std::string> extract_files;
  std::string extract_out;
  extract->add_option("files", extract_files, "C sources")->required()->check(CLI::ExistingFile);
  extract->add_option("--out", extract_out, "Run directory (stdout when omitted)");

  // dataset gen
  auto *dataset = app.add_subcommand("dataset", "Synthetic program corpus");
  dataset->require_subcommand(1);
  auto *gen = dataset->add_subcommand("gen", "Generate programs and a manifest");
  int gen_count = 1000;
  double gen_fraction = 0.8;
  std::string gen_out;
  gen->add_option("--count", gen_count, "Number of programs")->check(CLI::PositiveNumber);
  gen->add_option("--train-fraction", gen_fraction, "Fraction of programs in the train split");
  gen->add_option("--out", gen_out, "Dataset directory")->required();

  // inject
  auto *inject = app.add_subcommand("inject", "Insert or remove a vectorization pragma");
  std::string inject_file, inject_out;
  int inject_vf = 1, inject_if = 1;
  size_t inject_nest = 0;
  bool inject_remove = false;
  inject->add_option("file", inject_file, "C source")->required()->check(CLI::ExistingFile);
  inject->add_option("--vf", inject_vf, "Vectorization factor");
  inject->add_option("--if", inject_if, "Interleave factor");
  inject->add_option("--nest", inject_nest, "Nest index in source order");
  inject->add_flag("--remove", inject_remove, "Remove the pragma placed by inject");
  inject->add_option("-o,--output", inject_out, "Output file (stdout when omitted)");

  // bruteforce
  auto *brute = app.add_subcommand("bruteforce", "Label programs by exhaustive grid search");
  std::string brute_dataset, brute_split = "all", brute_out;
  brute->add_option("--dataset", brute_dataset, "manifest.json")->required();
  brute->add_option("--split", brute_split, "train, test or all")
      ->check(CLI::IsMember({"train", "test", "all"}));
  brute->add_option("--out", brute_out, "Run directory")->required();

  // train
  auto *train = app.add_subcommand("train", "Train the embedding and policy with PPO");
  std::string train_dataset, train_out, train_init;
  long train_steps = -1;
  bool train_freeze = false;
  train->add_option("--dataset", train_dataset, "manifest.json")->required();
  train->add_option("--steps", train_steps, "Environment steps");
  train->add_option("--init", train_init, "Continue from this checkpoint");
  train->add_flag("--freeze-embedding", train_freeze, "Keep the embedding fixed");
  train->add_option("--out", train_out, "Run directory")->required();

  // predict
  auto *pred = app.add_subcommand("predict", "Greedy (VF, IF) for each nest of a file");
  std::string pred_model, pred_file;
  std::vector<size_t> pred_nests;
  pred->add_option("--model", pred_model, "checkpoint.json")->required()->check(CLI::ExistingFile);
  pred->add_option("file", pred_file, "C source")->required()->check(CLI::ExistingFile);
  pred->add_option("--nest", pred_nests, "Nest indices (all when omitted)");

  // bench
  auto *bench = app.add_subcommand("bench", "Compare methods on the test split");
  std::string bench_dataset, bench_model, bench_labels, bench_out, bench_budgets;
  std::vector<std::string> bench_methods;
  int best_of = 0, random_trials = 0;
  bool bench_eff = false;
  bench->add_option("--dataset", bench_dataset, "manifest.json")->required();
  bench->add_option("--model", bench_model, "RL checkpoint.json");
  bench->add_option("--labels", bench_labels, "Oracle labels from bruteforce");
  bench->add_option("--methods", bench_methods,
                    "Subset of rl,nns,tree,supervised,random,bruteforce")
      ->delimiter(',');
  bench->add_option("--best-of", best_of, "RL keeps the best of N inferences")
      ->check(CLI::PositiveNumber);
  bench->add_option("--random-trials", random_trials, "Cells sampled by random search")
      ->check(CLI::PositiveNumber);
  bench->add_flag("--efficiency", bench_eff, "Also compute the sample-efficiency curve");
  bench->add_option("--budgets", bench_budgets, "Comma-separated compilation budgets");
  bench->add_option("--out", bench_out, "Run directory")->required();

  // report
  auto *report = app.add_subcommand("report", "Render a bench report");
  std::string report_in, report_out;
  report->add_option("input", report_in, "bench.json or a bench run directory")->required();
  report->add_option("--out", report_out, "Write CSVs and report.txt here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!g.config_path.empty())
      g.config = json::parse(read_text(g.config_path));
    if (!g.config.is_object())
      throw CliError(NVEC_E_SCHEMA, "--config must hold a JSON object");

    if (*extract) {
      json all = json::array(), warnings = json::array();
      for (const auto &f : extract_files) {
        Source src;
        check(nvec_source_open(f.c_str(), src.out()));
        CStr js;
        check(nvec_source_nests_json(src.p, js.out()));
        json j = json::parse(js.str());
        for (auto &n : j["nests"])
          all.push_back(n);
        for (auto &w : j["warnings"]) {
          std::cerr << "warning: " << w.get<std::string>() << "\n";
          warnings.push_back(w);
        }
      }
      if (extract_out.empty()) {
        std::cout << all.dump(2) << "\n";
      } else {
        write_text(fs::path(extract_out) / "nests.json", all.dump(2) + "\n");
        write_run(extract_out, "extract", json::object(), {"nests.json"},
                  {{"files", extract_files.size()}, {"nests", all.size()}, {"warnings", warnings}});
      }
    } else if (*gen) {
      uint64_t seed = g.seed >= 0 ? static_cast<uint64_t>(g.seed) : 0;
      Dataset ds;
      check(nvec_dataset_generate(gen_out.c_str(), gen_count, seed, gen_fraction, ds.out()));
      CStr summary;
      check(nvec_dataset_summary_json(ds.p, summary.out()));
      json s = json::parse(summary.str());
      write_run(gen_out, "dataset gen",
                {{"count", gen_count}, {"seed", seed}, {"train_fraction", gen_fraction}},
                {"manifest.json"}, s);
      std::cout << s.dump(2) << "\n";
    } else if (*inject) {
      Source src;
      check(nvec_source_open(inject_file.c_str(), src.out()));
      CStr text;
      if (inject_remove)
        check(nvec_remove_pragma(src.p, inject_nest, text.out()));
      else
        check(nvec_inject(src.p, inject_nest, inject_vf, inject_if, text.out()));
      if (inject_out.empty())
        std::cout << text.str();
      else
        write_text(inject_out, text.str());
    } else if (*brute) {
      Env env;
      open_env(g, env);
      Dataset ds;
      check(nvec_dataset_load(brute_dataset.c_str(), ds.out()));
      fs::create_directories(brute_out);
      std::string labels = (fs::path(brute_out) / "labels.jsonl").string();
      CStr summary;
      check(nvec_bruteforce(env.p, ds.p, brute_split.c_str(), labels.c_str(), summary.out()));
      json h = json::parse(summary.str());
      write_text(fs::path(brute_out) / "optimum_histogram.json", h.dump(2) + "\n");
      write_run(brute_out, "bruteforce",
                {{"env", g.env()}, {"dataset", brute_dataset}, {"split", brute_split}},
                {"labels.jsonl", "optimum_histogram.json"}, h);
      std::cout << "labelled " << h["total"] << " programs\n";
      for (const auto &c : h["counts"])
        if (c["count"].get<int>() > 0)
          std::printf("  VF=%-3d IF=%-2d %5d  %6.2f%%\n", c["vf"].get<int>(), c["if"].get<int>(),
                      c["count"].get<int>(), c["percent"].get<double>());
    } else if (*train) {
      json cfg = g.train();
      if (train_steps >= 0)
        cfg["steps"] = train_steps;
      if (train_freeze)
        cfg["joint"] = false;
      Env env;
      open_env(g, env);
      Dataset ds;
      check(nvec_dataset_load(train_dataset.c_str(), ds.out()));
      Model model;
      if (train_init.empty())
        check(nvec_model_init(ds.p, env.p, cfg.dump().c_str(), model.out()));
      else
        check(nvec_model_load(train_init.c_str(), model.out()));
      auto progress = [](const char *batch, void *) {
        json b = json::parse(batch);
        std::fprintf(stderr, "batch %4d  steps %7ld  reward %+.4f  entropy %.3f\n",
                     b["batch"].get<int>(), b["steps"].get<long>(),
                     b["reward_mean"].get<double>(), b["entropy"].get<double>());
      };
      CStr log, summary;
      check(nvec_train(model.p, env.p, ds.p, cfg.dump().c_str(), progress, nullptr, log.out(),
                       summary.out()));
      fs::path out = train_out;
      fs::create_directories(out);
      check(nvec_model_save(model.p, (out / "checkpoint.json").string().c_str()));
      write_text(out / "train_log.csv", log.str());
      json s = json::parse(summary.str());
      write_run(out, "train", {{"env", g.env()}, {"train", cfg}, {"dataset", train_dataset}},
                {"checkpoint.json", "train_log.csv"}, s);
      std::cout << s.dump(2) << "\n";
    } else if (*pred) {
      Model model;
      check(nvec_model_load(pred_model.c_str(), model.out()));
      Source src;
      check(nvec_source_open(pred_file.c_str(), src.out()));
      size_t n = 0;
      check(nvec_source_nest_count(src.p, &n));
      if (pred_nests.empty())
        for (size_t i = 0; i < n; ++i)
          pred_nests.push_back(i);
      CStr js;
      check(nvec_source_nests_json(src.p, js.out()));
      json nests = json::parse(js.str())["nests"];
      json out = json::array();
      for (size_t k : pred_nests) {
        int vf = 0, if_ = 0;
        check(nvec_predict(model.p, src.p, k, &vf, &if_));
        out.push_back({{"nest_id", nests.at(k)["nest_id"]}, {"vf", vf}, {"if", if_}});
      }
      std::cout << out.dump(2) << "\n";
    } else if (*bench) {
      json cfg = g.section("bench");
      if (g.seed >= 0)
        cfg["seed"] = g.seed;
      if (!bench_methods.empty())
        cfg["methods"] = bench_methods;
      if (best_of > 0)
        cfg["best_of"] = best_of;
      if (random_trials > 0)
        cfg["random_trials"] = random_trials;
      Env env;
      open_env(g, env);
      Dataset ds;
      check(nvec_dataset_load(bench_dataset.c_str(), ds.out()));
      Model model;
      if (!bench_model.empty())
        check(nvec_model_load(bench_model.c_str(), model.out()));
      CStr report_js, baselines_js;
      check(nvec_bench(env.p, ds.p, model.p, bench_labels.empty() ? nullptr : bench_labels.c_str(),
                       cfg.dump().c_str(), report_js.out(), baselines_js.out()));
      std::string report_text = report_js.str();
      json eff_cfg = g.section("efficiency");
      if (bench_eff) {
        if (!bench_budgets.empty()) {
          json budgets = json::array();
          std::stringstream ss(bench_budgets);
          for (std::string tok; std::getline(ss, tok, ',');)
            budgets.push_back(std::stol(tok));
          eff_cfg["budgets"] = budgets;
        }
        if (!eff_cfg.contains("train"))
          eff_cfg["train"] = g.train();
        else if (g.seed >= 0)
          eff_cfg["train"]["seed"] = g.seed;
        CStr merged;
        check(nvec_efficiency(env.p, ds.p, eff_cfg.dump().c_str(), report_text.c_str(),
                              merged.out()));
        report_text = merged.str();
      }
      fs::path out = bench_out;
      fs::create_directories(out);
      CStr bcsv, ecsv, text;
      check(nvec_report_csv(report_text.c_str(), bcsv.out(), ecsv.out()));
      check(nvec_report_render(report_text.c_str(), text.out()));
      json report_j = json::parse(report_text);
      std::vector<std::string> outputs = {"bench.json", "bench.csv", "report.txt"};
      write_text(out / "bench.json", report_j.dump(2) + "\n");
      write_text(out / "bench.csv", bcsv.str());
      write_text(out / "report.txt", text.str());
      if (bench_eff) {
        write_text(out / "efficiency.csv", ecsv.str());
        outputs.push_back("efficiency.csv");
      }
      if (baselines_js.p) {
        write_text(out / "baselines.json", baselines_js.str());
        outputs.push_back("baselines.json");
      }
      json run_cfg = {{"env", g.env()}, {"bench", cfg}, {"dataset", bench_dataset},
                      {"model", bench_model}, {"labels", bench_labels}};
      if (bench_eff)
        run_cfg["efficiency"] = eff_cfg;
      write_run(out, "bench", run_cfg, outputs, {{"geomean", report_j["geomean"]}});
      std::cout << text.str();
    } else if (*report) {
      fs::path in = report_in;
      if (fs::is_directory(in))
        in /= "bench.json";
      std::string text_in = read_text(in.string());
      CStr text, bcsv, ecsv;
      check(nvec_report_render(text_in.c_str(), text.out()));
      if (!report_out.empty()) {
        check(nvec_report_csv(text_in.c_str(), bcsv.out(), ecsv.out()));
        fs::path out = report_out;
        write_text(out / "report.txt", text.str());
        write_text(out / "bench.csv", bcsv.str());
        write_text(out / "efficiency.csv", ecsv.str());
        write_run(out, "report", {{"input", in.string()}},
                  {"report.txt", "bench.csv", "efficiency.csv"}, json::object());
      }
      std::cout << text.str();
    }
  } catch (const CliError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.status == NVEC_E_INTERNAL ? 70 : 1;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
