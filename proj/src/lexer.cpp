#include "nvec/loop_ir.hpp"

#include <array>
#include <cctype>
#include <cstring>
#include <unordered_set>

namespace nvec {
namespace {

const std::unordered_set<std::string_view> kTypeWords = {
    "void",     "char",      "short",      "int",       "long",     "float",
    "double",   "signed",    "unsigned",   "const",     "volatile", "static",
    "extern",   "inline",    "restrict",   "register",  "_Bool",    "__restrict",
    "__restrict__", "size_t", "ssize_t",   "ptrdiff_t", "clock_t",  "int8_t",
    "int16_t",  "int32_t",   "int64_t",    "uint8_t",   "uint16_t", "uint32_t",
    "uint64_t",
};

const std::unordered_set<std::string_view> kKeywords = {
    "for", "while", "if", "else", "return", "break", "continue", "do", "sizeof",
    "struct", "union", "switch", "case", "goto", "typedef", "enum",
};

// Longest first.
constexpr std::array<std::string_view, 27> kPuncts = {
    "<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&",
    "||",  "+=",  "-=",  "*=", "/=", "%=", "&=", "^=", "|=", "?",  ":",  ";",  ",",
    ".",
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

class Lexer {
public:
  explicit Lexer(std::string_view s) : src_(s) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_trivia();
      if (pos_ >= src_.size())
        break;
      Token t = lex_one();
      if (t.kind == TokenKind::Ident && t.text == "__attribute__") {
        skip_attribute();
        continue;
      }
      out.push_back(std::move(t));
    }
    Token end;
    end.kind = TokenKind::End;
    end.offset = src_.size();
    end.line = line_;
    end.column = column();
    out.push_back(end);
    return out;
  }

private:
  std::string_view src_;
  size_t pos_ = 0;
  int line_ = 1;
  size_t line_start_ = 0;
  bool at_line_start_ = true;

  int column() const { return static_cast<int>(pos_ - line_start_) + 1; }

  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      line_start_ = pos_ + 1;
      at_line_start_ = true;
    }
    ++pos_;
  }

  void skip_trivia() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '\n' || std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else if (c == '#' && at_line_start_) {
        while (pos_ < src_.size() && src_[pos_] != '\n') {
          if (src_[pos_] == '\\' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '\n')
            advance();
          advance();
        }
      } else if (src_.substr(pos_, 2) == "//") {
        while (pos_ < src_.size() && src_[pos_] != '\n')
          advance();
      } else if (src_.substr(pos_, 2) == "/*") {
        size_t close = src_.find("*/", pos_ + 2);
        size_t stop = close == std::string_view::npos ? src_.size() : close + 2;
        bool keep = at_line_start_;
        while (pos_ < stop)
          advance();
        at_line_start_ = keep && at_line_start_;
      } else {
        return;
      }
    }
  }

  Token make(TokenKind kind, size_t start, int line, int col) {
    Token t;
    t.kind = kind;
    t.text = std::string(src_.substr(start, pos_ - start));
    t.offset = start;
    t.line = line;
    t.column = col;
    return t;
  }

  Token lex_one() {
    at_line_start_ = false;
    size_t start = pos_;
    int line = line_, col = column();
    char c = src_[pos_];
    if (ident_start(c)) {
      while (pos_ < src_.size() && ident_char(src_[pos_]))
        ++pos_;
      std::string_view word = src_.substr(start, pos_ - start);
      TokenKind kind = kTypeWords.count(word)  ? TokenKind::TypeWord
                       : kKeywords.count(word) ? TokenKind::Keyword
                                               : TokenKind::Ident;
      return make(kind, start, line, col);
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && pos_ + 1 < src_.size() &&
         std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
      bool is_float = false;
      if (c == '0' && pos_ + 1 < src_.size() && (src_[pos_ + 1] == 'x' || src_[pos_ + 1] == 'X')) {
        pos_ += 2;
        while (pos_ < src_.size() && std::isxdigit(static_cast<unsigned char>(src_[pos_])))
          ++pos_;
      } else {
        while (pos_ < src_.size()) {
          char d = src_[pos_];
          if (std::isdigit(static_cast<unsigned char>(d))) {
            ++pos_;
          } else if (d == '.') {
            is_float = true;
            ++pos_;
          } else if ((d == 'e' || d == 'E')) {
            is_float = true;
            ++pos_;
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-'))
              ++pos_;
          } else {
            break;
          }
        }
      }
      while (pos_ < src_.size() && std::strchr("uUlLfF", src_[pos_]) != nullptr) {
        if (src_[pos_] == 'f' || src_[pos_] == 'F')
          is_float = true;
        ++pos_;
      }
      return make(is_float ? TokenKind::FloatLit : TokenKind::IntLit, start, line, col);
    }
    if (c == '"' || c == '\'') {
      char quote = c;
      ++pos_;
      while (pos_ < src_.size() && src_[pos_] != quote && src_[pos_] != '\n') {
        if (src_[pos_] == '\\' && pos_ + 1 < src_.size())
          ++pos_;
        ++pos_;
      }
      if (pos_ >= src_.size() || src_[pos_] != quote)
        throw SyntaxError(line, col, {std::string(1, quote)}, "end of line");
      ++pos_;
      return make(quote == '"' ? TokenKind::StringLit : TokenKind::IntLit, start, line, col);
    }
    for (std::string_view p : kPuncts) {
      if (src_.substr(pos_, p.size()) == p) {
        pos_ += p.size();
        return make(TokenKind::Punct, start, line, col);
      }
    }
    if (std::strchr("+-*/%<>=!&|^~()[]{}", c) != nullptr) {
      ++pos_;
      return make(TokenKind::Punct, start, line, col);
    }
    throw SyntaxError(line, col, {"token"}, std::string(1, c));
  }

  void skip_attribute() {
    skip_trivia();
    if (pos_ >= src_.size() || src_[pos_] != '(')
      return;
    int depth = 0;
    do {
      if (src_[pos_] == '(')
        ++depth;
      else if (src_[pos_] == ')')
        --depth;
      advance();
    } while (pos_ < src_.size() && depth > 0);
  }
};

} // namespace

bool is_type_word(std::string_view word) { return kTypeWords.count(word) != 0; }

int type_width_bits(std::string_view spelling) {
  auto has = [&](std::string_view w) {
    size_t p = 0;
    while ((p = spelling.find(w, p)) != std::string_view::npos) {
      bool left = p == 0 || !ident_char(spelling[p - 1]);
      bool right = p + w.size() >= spelling.size() || !ident_char(spelling[p + w.size()]);
      if (left && right)
        return true;
      p += w.size();
    }
    return false;
  };
  if (has("double") || has("int64_t") || has("uint64_t") || has("size_t") ||
      has("ssize_t") || has("ptrdiff_t") || has("long"))
    return 64;
  if (has("char") || has("int8_t") || has("uint8_t") || has("_Bool"))
    return 8;
  if (has("short") || has("int16_t") || has("uint16_t"))
    return 16;
  if (has("float") || has("int") || has("int32_t") || has("uint32_t") ||
      has("unsigned") || has("signed"))
    return 32;
  return 0;
}

std::vector<Token> tokenize(std::string_view source) { return Lexer(source).run(); }

} // namespace nvec
