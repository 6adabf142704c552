//===- embedding.hpp - Path-context code embedding with attention --------===//
//
// A loop snippet is decomposed into (start terminal, AST path, end terminal)
// triples. Each triple is embedded, combined through a tanh layer, and the
// per-context vectors are pooled with softmax attention into one code vector.
//
//===----------------------------------------------------------------------===//
#pragma once

#include "nvec/nn.hpp"

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nvec {

struct EmbeddingConfig {
  size_t d_tok = 64;
  size_t d_path = 64;
  size_t dim = 340;
  size_t max_path_len = 8; // edges between the two terminals
  size_t max_width = 2;    // child-index distance at the common ancestor
  size_t max_contexts = 200;
  size_t path_buckets = 50021;
  uint64_t seed = 0;
};

nlohmann::json to_json(const EmbeddingConfig &c);
EmbeddingConfig embedding_config_from_json(const nlohmann::json &j);

struct PathContext {
  std::string start;
  std::string path_text; // e.g. "Ident^Index^Assign{=}_Index_Ident"
  uint64_t path_id = 0;  // bucket in the path table
  std::string end;

  friend bool operator==(const PathContext &, const PathContext &) = default;
};

struct PathContextBag {
  std::vector<PathContext> contexts;
  uint64_t snippet_hash = 0;

  friend bool operator==(const PathContextBag &, const PathContextBag &) = default;
};

/// Enumerates terminal pairs of `snippet` (one statement) within the path
/// length and width limits. Larger bags are subsampled with a seed derived
/// from cfg.seed and the snippet hash.
PathContextBag extract_contexts(std::string_view snippet, const EmbeddingConfig &cfg);

/// Normalizes identifiers, then extracts contexts: the observation pipeline
/// for a loop nest's embed_snippet.
PathContextBag observe_snippet(std::string_view snippet, const EmbeddingConfig &cfg);

/// Token vocabulary; id 0 is reserved for unknown tokens.
class TokenVocab {
public:
  TokenVocab() = default;
  explicit TokenVocab(std::vector<std::string> tokens);

  /// Sorted, de-duplicated vocabulary over all start/end tokens of `bags`.
  static TokenVocab build(const std::vector<PathContextBag> &bags);

  uint32_t id(const std::string &token) const;
  size_t size() const { return tokens_.size() + 1; }
  const std::vector<std::string> &tokens() const { return tokens_; }

private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, uint32_t> index_;
};

struct EmbeddingNet {
  EmbeddingConfig config;
  TokenVocab vocab;
  uint64_t init_seed = 0;
  nn::Tensor2 token_table; // vocab.size() x d_tok
  nn::Tensor2 path_table;  // path_buckets x d_path
  nn::Tensor2 combine_w;   // dim x (2 d_tok + d_path)
  nn::Vector combine_b;    // dim
  nn::Vector attention;    // dim

  static EmbeddingNet create(const EmbeddingConfig &cfg, TokenVocab vocab, uint64_t seed);
  size_t in_width() const { return 2 * config.d_tok + config.d_path; }
};

/// A bag with tokens resolved against a vocabulary.
struct ResolvedBag {
  std::vector<uint32_t> start;
  std::vector<uint32_t> path;
  std::vector<uint32_t> end;

  size_t size() const { return start.size(); }
};

ResolvedBag resolve(const PathContextBag &bag, const EmbeddingNet &net);

struct EmbedCache {
  ResolvedBag ids;
  nn::Tensor2 contexts; // n x dim, post-tanh
  nn::Vector alpha;     // attention weights
};

/// Attention-pooled code vector; the zero vector for an empty bag.
nn::Vector embed(const ResolvedBag &bag, const EmbeddingNet &net, EmbedCache *cache = nullptr);
nn::Vector embed(const PathContextBag &bag, const EmbeddingNet &net);

/// Gradient buffers. Table gradients are dense but only the rows listed in
/// token_rows/path_rows are non-zero.
struct EmbeddingGrads {
  nn::Tensor2 token_table;
  nn::Tensor2 path_table;
  nn::Tensor2 combine_w;
  nn::Vector combine_b;
  nn::Vector attention;
  std::vector<size_t> token_rows;
  std::vector<size_t> path_rows;

  static EmbeddingGrads zeros_like(const EmbeddingNet &net);
  /// Zeros the touched rows and dense blocks.
  void clear();
  /// Sorts the touched-row lists (for deterministic optimizer order).
  void finalize_rows();

private:
  std::vector<char> token_mark_;
  std::vector<char> path_mark_;
  friend void embed_backward(const EmbeddingNet &, const EmbedCache &, const nn::Vector &,
                             EmbeddingGrads &);
};

/// Accumulates parameter gradients of <upstream, embed(bag)>.
void embed_backward(const EmbeddingNet &net, const EmbedCache &cache, const nn::Vector &upstream,
                    EmbeddingGrads &grads);

/// Optimizer slots; the tables are row-sparse over the touched rows.
void append_slots(EmbeddingNet &net, EmbeddingGrads &grads, std::vector<nn::ParamSlot> &out);

/// Path-table rows that differ from their seeded initial value are stored
/// explicitly; the rest are regenerated from init_seed on load.
nlohmann::json to_json(const EmbeddingNet &net);
EmbeddingNet embedding_from_json(const nlohmann::json &j);

} // namespace nvec
