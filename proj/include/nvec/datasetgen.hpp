//===- datasetgen.hpp - Synthetic loop corpus from template families ------===//
#pragma once

#include "nvec/agent.hpp"
#include "nvec/env.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace nvec {

/// One instantiated template: the kernel nest plus the declarations and
/// initialization the harness needs around it.
struct TemplateInstance {
  struct Array {
    std::string name;
    std::string type;
    std::vector<long long> dims;
    bool output = false;
    /// Fill expression in terms of the flat element index "nv_q"; empty uses
    /// a small positive pattern.
    std::string fill;
  };
  std::vector<Array> arrays;
  std::vector<std::string> scalars;  // global scalar declarations
  std::vector<std::string> outputs;  // scalars folded into the checksum
  std::vector<std::string> locals;   // kernel-local declarations
  std::string nest;                  // loop nest, first line unindented
  std::vector<std::string> epilogue; // kernel statements after the nest
  /// Features the template expects the static extractor to report.
  SimLoopFeatures features;
};

struct LoopTemplate {
  std::string id;
  std::string description;
  std::function<TemplateInstance(Rng &)> instantiate;
};

/// The twelve default families: assign, reduction, strided, predicate, cast,
/// init2d, matmul, complex, bitwise, minmax, gather, mixed.
const std::vector<LoopTemplate> &default_templates();

/// Wraps an instance in a standalone harness: globals, a noinline `kernel`
/// holding the nest (always the first nest of the file) and a timed `main`.
std::string render_program(const TemplateInstance &inst);

struct ProgramRecord {
  std::string program_id;
  std::string template_id;
  std::string path; // relative to the manifest directory
  int kernel_nest = 0;
  SimLoopFeatures features;
  std::string snippet_digest; // of the identifier-normalized nest
  std::string duplicate_of;   // first program with the same digest, if any
};

struct DatasetManifest {
  uint64_t seed = 0;
  int count = 0;
  double train_fraction = 0.8;
  std::vector<ProgramRecord> records;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::string root; // directory holding manifest.json; not serialized

  const ProgramRecord &record(const std::string &program_id) const;
};

nlohmann::json to_json(const DatasetManifest &m);
DatasetManifest manifest_from_json(const nlohmann::json &j);
DatasetManifest load_manifest(const std::string &path);
void save_manifest(const DatasetManifest &m, const std::string &path);

/// Writes `count` programs and manifest.json under out_dir. Byte-identical
/// for identical inputs. Throws TemplateInstantiationFailed when an
/// instance does not parse, has no nest, or its static features disagree
/// with the template's own.
DatasetManifest generate(const std::vector<LoopTemplate> &templates, int count, uint64_t seed,
                         const std::string &out_dir, double train_fraction = 0.8);

/// Deterministic split: shuffled by seed, then repaired so the test split
/// holds at least one program of every family present.
void assign_splits(DatasetManifest &m);

/// A program loaded for evaluation.
struct Program {
  std::string program_id;
  std::string template_id;
  SourceFile src;
  LoopNest nest;
};
Program load_program(const DatasetManifest &m, const ProgramRecord &r);
std::vector<Program> load_programs(const DatasetManifest &m,
                                   const std::vector<std::string> &ids);

struct OptimumHistogram {
  ActionSpace space;
  std::vector<int> counts; // indexed by action index
  int total = 0;
  double percent(int index) const;
  int mode() const; // lowest index among the most frequent cells
};

/// Histogram of the oracle's best action over all manifest programs.
/// Throws MissingOracleResult when a program has no label.
OptimumHistogram report_optimum_distribution(const DatasetManifest &m,
                                             const std::map<std::string, Action> &best,
                                             const ActionSpace &space);

} // namespace nvec
