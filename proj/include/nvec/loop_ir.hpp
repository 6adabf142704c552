//===- loop_ir.hpp - Restricted-C front end and loop-nest extraction -----===//
//
// Parses the C subset used by the synthetic corpus and by the vectorizer
// tests: functions, declarations, for/while loops, if, assignments, array
// indexing, arithmetic/bitwise/comparison/ternary operators, casts, literals
// and calls. Preprocessor lines, comments and __attribute__((...)) are trivia.
//
//===----------------------------------------------------------------------===//
#pragma once

#include "nvec/common.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nvec {

struct SourceSpan {
  size_t byte_start = 0;
  size_t byte_end = 0;
  int line = 1;

  bool contains(const SourceSpan &o) const {
    return byte_start <= o.byte_start && o.byte_end <= byte_end;
  }
  friend bool operator==(const SourceSpan &, const SourceSpan &) = default;
};

enum class NodeKind {
  TranslationUnit,
  FunctionDef,
  ForLoop,
  WhileLoop,
  CompoundStmt,
  If,
  ExprStmt,
  BinaryOp,
  UnaryOp,
  Assign,
  Call,
  Index,
  Ident,
  IntLit,
  FloatLit,
  StringLit,
  Cast,
  Decl,
  Return,
};

std::string_view kind_name(NodeKind kind);

/// Syntax tree node. Terminals (Ident, IntLit, FloatLit, StringLit) carry
/// token_text and no children. `op` holds the operator spelling for
/// BinaryOp/UnaryOp/Assign ("?:" for the conditional, "post++" for postfix),
/// the pointer stars of a Cast, and the declarator form of a Decl.
struct AstNode {
  NodeKind kind = NodeKind::TranslationUnit;
  std::vector<AstNode> children;
  SourceSpan span;
  std::string token_text;
  std::string op;

  bool is_terminal() const {
    return kind == NodeKind::Ident || kind == NodeKind::IntLit ||
           kind == NodeKind::FloatLit || kind == NodeKind::StringLit;
  }
  bool is_loop() const {
    return kind == NodeKind::ForLoop || kind == NodeKind::WhileLoop;
  }
};

enum class TokenKind { Ident, TypeWord, Keyword, IntLit, FloatLit, StringLit, Punct, End };

struct Token {
  TokenKind kind = TokenKind::End;
  std::string text;
  size_t offset = 0;
  int line = 1;
  int column = 1;
};

/// Lexes `source`, dropping whitespace, comments, `#` lines and
/// __attribute__((...)) groups.
std::vector<Token> tokenize(std::string_view source);

/// Parses a whole translation unit.
AstNode parse(std::string_view source);

/// Parses a single statement (a loop snippet). Spans are relative to
/// `snippet`.
AstNode parse_statement(std::string_view snippet);

/// Canonical single-line rendering. Re-parsing the output yields the same
/// tree shape, so printing is idempotent.
std::string print_node(const AstNode &node);

/// Structural equality ignoring spans.
bool same_shape(const AstNode &a, const AstNode &b);

/// Terminal texts in source order.
std::vector<std::string> terminal_texts(const AstNode &node);

/// Maximum loop-nesting depth below and including `node`.
int loop_depth(const AstNode &node);

struct SourceFile {
  std::string path;
  std::string text;
  AstNode tu;
  uint64_t digest = 0;
};

SourceFile make_source(std::string path, std::string text);
SourceFile load_source(const std::string &path);

struct LoopNest {
  std::string nest_id; // "<file>:<outer line>"
  std::string file;
  int line = 0;
  int depth = 1;
  std::vector<size_t> outer_path;   // child indices from the TU root
  std::vector<size_t> innermost_path;
  SourceSpan outer_span;
  SourceSpan innermost_span;
  SourceSpan pragma_anchor; // starts at the innermost loop statement
  std::string embed_snippet;
  uint64_t source_digest = 0;
};

const AstNode &node_at(const AstNode &root, const std::vector<size_t> &path);

/// One nest per maximal outermost loop, in source order. While loops without
/// an affine countable form are skipped and reported through `warnings`.
std::vector<LoopNest> extract_loop_nests(const SourceFile &src,
                                         std::vector<std::string> *warnings = nullptr);

struct NormalizedSnippet {
  std::string text;
  /// Original name -> canonical name, in first-occurrence order.
  std::vector<std::pair<std::string, std::string>> renames;
};

/// Renames identifiers to arr0, arr1, ... (indexed bases) and var0, var1, ...
/// (everything else) in first-occurrence order and prints canonically.
/// Type words and callee names are kept.
NormalizedSnippet normalize_identifiers(std::string_view snippet);

bool is_type_word(std::string_view word);
/// Storage width in bits of a scalar type spelling; 0 if unknown.
int type_width_bits(std::string_view type_spelling);

} // namespace nvec
