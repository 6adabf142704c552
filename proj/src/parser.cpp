#include "nvec/loop_ir.hpp"

#include <unordered_map>

namespace nvec {
namespace {

const std::unordered_map<std::string_view, int> kBinaryPrecedence = {
    {"||", 1}, {"&&", 2}, {"|", 3},  {"^", 4},  {"&", 5},  {"==", 6}, {"!=", 6},
    {"<", 7},  {">", 7},  {"<=", 7}, {">=", 7}, {"<<", 8}, {">>", 8}, {"+", 9},
    {"-", 9},  {"*", 10}, {"/", 10}, {"%", 10},
};

bool is_assign_op(std::string_view t) {
  return t == "=" || t == "+=" || t == "-=" || t == "*=" || t == "/=" || t == "%=" ||
         t == "<<=" || t == ">>=" || t == "&=" || t == "^=" || t == "|=";
}

std::string describe(const Token &t) {
  return t.kind == TokenKind::End ? std::string("end of input") : t.text;
}

class Parser {
public:
  explicit Parser(std::string_view src) : src_(src), toks_(tokenize(src)) {}

  AstNode translation_unit() {
    AstNode tu;
    tu.kind = NodeKind::TranslationUnit;
    tu.span = {0, src_.size(), 1};
    while (!at_end())
      tu.children.push_back(external());
    return tu;
  }

  AstNode single_statement() {
    AstNode s = statement();
    if (!at_end())
      fail({"end of input"});
    return s;
  }

private:
  std::string_view src_;
  std::vector<Token> toks_;
  size_t pos_ = 0;

  const Token &peek(size_t k = 0) const {
    return toks_[std::min(pos_ + k, toks_.size() - 1)];
  }
  bool at_end() const { return peek().kind == TokenKind::End; }
  bool is(std::string_view text, size_t k = 0) const {
    const Token &t = peek(k);
    return (t.kind == TokenKind::Punct || t.kind == TokenKind::Keyword) && t.text == text;
  }
  bool is_type_start(size_t k = 0) const { return peek(k).kind == TokenKind::TypeWord; }

  const Token &take() {
    const Token &t = toks_[pos_];
    if (t.kind != TokenKind::End)
      ++pos_;
    return t;
  }
  bool accept(std::string_view text) {
    if (is(text)) {
      take();
      return true;
    }
    return false;
  }
  [[noreturn]] void fail(std::vector<std::string> expected) const {
    const Token &t = peek();
    throw SyntaxError(t.line, t.column, std::move(expected), describe(t));
  }
  const Token &expect(std::string_view text) {
    if (!is(text))
      fail({std::string(text)});
    return take();
  }

  size_t token_end(size_t i) const { return toks_[i].offset + toks_[i].text.size(); }

  // Spans cover the tokens [first, pos_).
  AstNode node(NodeKind kind, size_t first) const {
    AstNode n;
    n.kind = kind;
    n.span.byte_start = toks_[first].offset;
    n.span.byte_end = pos_ > first ? token_end(pos_ - 1) : toks_[first].offset + 1;
    n.span.line = toks_[first].line;
    return n;
  }

  AstNode terminal(NodeKind kind) {
    size_t first = pos_;
    const Token &t = take();
    AstNode n = node(kind, first);
    n.token_text = t.text;
    return n;
  }

  // An empty placeholder (missing for-clause) spanning the delimiter token.
  AstNode empty_stmt() const {
    AstNode n;
    n.kind = NodeKind::ExprStmt;
    n.span = {peek().offset, peek().offset + std::max<size_t>(1, peek().text.size()),
              peek().line};
    return n;
  }

  AstNode type_spec() {
    if (!is_type_start())
      fail({"type"});
    size_t first = pos_;
    std::string spelling;
    while (is_type_start()) {
      if (!spelling.empty())
        spelling += ' ';
      spelling += take().text;
    }
    AstNode n = node(NodeKind::Ident, first);
    n.token_text = spelling;
    n.op = "type";
    return n;
  }

  // Declarator node: op = pointer stars, then "[#]" / "[]" per dimension,
  // then "=" when initialized. Children: name, non-empty dims, initializer.
  AstNode declarator(bool allow_init) {
    size_t first = pos_;
    std::string form;
    while (accept("*")) {
      form += '*';
      while (peek().kind == TokenKind::TypeWord) // const/restrict after '*'
        take();
    }
    if (peek().kind != TokenKind::Ident)
      fail({"identifier"});
    std::vector<AstNode> kids;
    kids.push_back(terminal(NodeKind::Ident));
    while (accept("[")) {
      if (accept("]")) {
        form += "[]";
        continue;
      }
      kids.push_back(expression());
      expect("]");
      form += "[#]";
    }
    if (allow_init && accept("=")) {
      kids.push_back(assignment());
      form += '=';
    }
    AstNode n = node(NodeKind::Decl, first);
    n.op = form.empty() ? "var" : form;
    n.children = std::move(kids);
    return n;
  }

  AstNode declaration(std::string_view role) {
    size_t first = pos_;
    std::vector<AstNode> kids;
    kids.push_back(type_spec());
    do {
      kids.push_back(declarator(true));
    } while (accept(","));
    expect(";");
    AstNode n = node(NodeKind::Decl, first);
    n.op = std::string(role);
    n.children = std::move(kids);
    return n;
  }

  AstNode external() {
    if (!is_type_start())
      fail({"type"});
    // Look ahead for a function: type words, stars, name, '('.
    size_t k = 0;
    while (peek(k).kind == TokenKind::TypeWord)
      ++k;
    while (is("*", k))
      ++k;
    if (peek(k).kind == TokenKind::Ident && is("(", k + 1))
      return function();
    return declaration("decl");
  }

  AstNode function() {
    size_t first = pos_;
    AstNode fn;
    std::vector<AstNode> kids;
    kids.push_back(type_spec());
    while (accept("*"))
      kids.front().op = "type*";
    kids.push_back(terminal(NodeKind::Ident));
    expect("(");
    if (is_type_start() && peek().text == "void" && is(")", 1)) {
      kids.push_back(type_spec());
    } else if (!is(")")) {
      do {
        size_t pfirst = pos_;
        std::vector<AstNode> p;
        p.push_back(type_spec());
        p.push_back(declarator(false));
        AstNode param = node(NodeKind::Decl, pfirst);
        param.op = "param";
        param.children = std::move(p);
        kids.push_back(std::move(param));
      } while (accept(","));
    }
    expect(")");
    if (!accept(";"))
      kids.push_back(compound());
    fn = node(NodeKind::FunctionDef, first);
    fn.children = std::move(kids);
    return fn;
  }

  AstNode compound() {
    size_t first = pos_;
    expect("{");
    std::vector<AstNode> kids;
    while (!is("}")) {
      if (at_end())
        fail({"}"});
      kids.push_back(statement());
    }
    expect("}");
    AstNode n = node(NodeKind::CompoundStmt, first);
    n.children = std::move(kids);
    return n;
  }

  AstNode statement() {
    size_t first = pos_;
    if (is("{"))
      return compound();
    if (is("for")) {
      take();
      expect("(");
      std::vector<AstNode> kids;
      if (is(";")) {
        kids.push_back(empty_stmt());
        take();
      } else if (is_type_start()) {
        kids.push_back(declaration("decl"));
      } else {
        size_t s = pos_;
        AstNode e = expression();
        expect(";");
        AstNode es = node(NodeKind::ExprStmt, s);
        es.children.push_back(std::move(e));
        kids.push_back(std::move(es));
      }
      if (is(";"))
        kids.push_back(empty_stmt());
      else
        kids.push_back(expression());
      expect(";");
      if (is(")"))
        kids.push_back(empty_stmt());
      else
        kids.push_back(expression());
      expect(")");
      kids.push_back(statement());
      AstNode n = node(NodeKind::ForLoop, first);
      n.children = std::move(kids);
      return n;
    }
    if (is("while")) {
      take();
      expect("(");
      AstNode cond = expression();
      expect(")");
      AstNode body = statement();
      AstNode n = node(NodeKind::WhileLoop, first);
      n.children.push_back(std::move(cond));
      n.children.push_back(std::move(body));
      return n;
    }
    if (is("if")) {
      take();
      expect("(");
      AstNode cond = expression();
      expect(")");
      AstNode then_s = statement();
      std::vector<AstNode> kids;
      kids.push_back(std::move(cond));
      kids.push_back(std::move(then_s));
      if (accept("else"))
        kids.push_back(statement());
      AstNode n = node(NodeKind::If, first);
      n.children = std::move(kids);
      return n;
    }
    if (is("return")) {
      take();
      std::vector<AstNode> kids;
      if (!is(";"))
        kids.push_back(expression());
      expect(";");
      AstNode n = node(NodeKind::Return, first);
      n.children = std::move(kids);
      return n;
    }
    if (is("break") || is("continue")) {
      std::string word = take().text;
      expect(";");
      AstNode n = node(NodeKind::ExprStmt, first);
      n.op = word;
      return n;
    }
    if (is_type_start())
      return declaration("decl");
    if (is(";")) {
      take();
      return node(NodeKind::ExprStmt, first);
    }
    AstNode e = expression();
    expect(";");
    AstNode n = node(NodeKind::ExprStmt, first);
    n.children.push_back(std::move(e));
    return n;
  }

  AstNode expression() {
    size_t first = pos_;
    AstNode lhs = assignment();
    while (is(",")) {
      take();
      AstNode rhs = assignment();
      AstNode n = node(NodeKind::BinaryOp, first);
      n.op = ",";
      n.children.push_back(std::move(lhs));
      n.children.push_back(std::move(rhs));
      lhs = std::move(n);
    }
    return lhs;
  }

  AstNode assignment() {
    size_t first = pos_;
    AstNode lhs = conditional();
    if (peek().kind == TokenKind::Punct && is_assign_op(peek().text)) {
      std::string op = take().text;
      AstNode rhs = assignment();
      AstNode n = node(NodeKind::Assign, first);
      n.op = op;
      n.children.push_back(std::move(lhs));
      n.children.push_back(std::move(rhs));
      return n;
    }
    return lhs;
  }

  AstNode conditional() {
    size_t first = pos_;
    AstNode c = binary(1);
    if (!is("?"))
      return c;
    take();
    AstNode a = expression();
    expect(":");
    AstNode b = conditional();
    AstNode n = node(NodeKind::BinaryOp, first);
    n.op = "?:";
    n.children.push_back(std::move(c));
    n.children.push_back(std::move(a));
    n.children.push_back(std::move(b));
    return n;
  }

  int binary_prec() const {
    if (peek().kind != TokenKind::Punct)
      return 0;
    auto it = kBinaryPrecedence.find(peek().text);
    return it == kBinaryPrecedence.end() ? 0 : it->second;
  }

  AstNode binary(int min_prec) {
    size_t first = pos_;
    AstNode lhs = unary();
    for (;;) {
      int prec = binary_prec();
      if (prec < min_prec || prec == 0)
        return lhs;
      std::string op = take().text;
      AstNode rhs = binary(prec + 1);
      AstNode n = node(NodeKind::BinaryOp, first);
      n.op = op;
      n.children.push_back(std::move(lhs));
      n.children.push_back(std::move(rhs));
      lhs = std::move(n);
    }
  }

  AstNode unary() {
    size_t first = pos_;
    if (peek().kind == TokenKind::Punct) {
      const std::string &t = peek().text;
      if (t == "-" || t == "+" || t == "!" || t == "~" || t == "*" || t == "&" ||
          t == "++" || t == "--") {
        std::string op = take().text;
        AstNode operand = unary();
        AstNode n = node(NodeKind::UnaryOp, first);
        n.op = op;
        n.children.push_back(std::move(operand));
        return n;
      }
      if (t == "(" && is_type_start(1)) {
        take();
        AstNode type = type_spec();
        std::string stars;
        while (accept("*"))
          stars += '*';
        expect(")");
        AstNode operand = unary();
        AstNode n = node(NodeKind::Cast, first);
        n.op = stars;
        n.children.push_back(std::move(type));
        n.children.push_back(std::move(operand));
        return n;
      }
    }
    return postfix();
  }

  AstNode postfix() {
    size_t first = pos_;
    AstNode e = primary();
    for (;;) {
      if (is("[")) {
        take();
        AstNode idx = expression();
        expect("]");
        AstNode n = node(NodeKind::Index, first);
        n.children.push_back(std::move(e));
        n.children.push_back(std::move(idx));
        e = std::move(n);
      } else if (is("(")) {
        take();
        std::vector<AstNode> kids;
        kids.push_back(std::move(e));
        if (!is(")")) {
          do {
            kids.push_back(assignment());
          } while (accept(","));
        }
        expect(")");
        AstNode n = node(NodeKind::Call, first);
        n.children = std::move(kids);
        e = std::move(n);
      } else if (is("++") || is("--")) {
        std::string op = "post" + take().text;
        AstNode n = node(NodeKind::UnaryOp, first);
        n.op = op;
        n.children.push_back(std::move(e));
        e = std::move(n);
      } else {
        return e;
      }
    }
  }

  AstNode primary() {
    switch (peek().kind) {
    case TokenKind::Ident:
      return terminal(NodeKind::Ident);
    case TokenKind::IntLit:
      return terminal(NodeKind::IntLit);
    case TokenKind::FloatLit:
      return terminal(NodeKind::FloatLit);
    case TokenKind::StringLit:
      return terminal(NodeKind::StringLit);
    default:
      break;
    }
    if (accept("(")) {
      AstNode e = expression();
      expect(")");
      return e;
    }
    fail({"identifier", "literal", "("});
  }
};

} // namespace

std::string_view kind_name(NodeKind kind) {
  switch (kind) {
  case NodeKind::TranslationUnit: return "TranslationUnit";
  case NodeKind::FunctionDef: return "FunctionDef";
  case NodeKind::ForLoop: return "ForLoop";
  case NodeKind::WhileLoop: return "WhileLoop";
  case NodeKind::CompoundStmt: return "CompoundStmt";
  case NodeKind::If: return "If";
  case NodeKind::ExprStmt: return "ExprStmt";
  case NodeKind::BinaryOp: return "BinaryOp";
  case NodeKind::UnaryOp: return "UnaryOp";
  case NodeKind::Assign: return "Assign";
  case NodeKind::Call: return "Call";
  case NodeKind::Index: return "Index";
  case NodeKind::Ident: return "Ident";
  case NodeKind::IntLit: return "IntLit";
  case NodeKind::FloatLit: return "FloatLit";
  case NodeKind::StringLit: return "StringLit";
  case NodeKind::Cast: return "Cast";
  case NodeKind::Decl: return "Decl";
  case NodeKind::Return: return "Return";
  }
  return "?";
}

AstNode parse(std::string_view source) { return Parser(source).translation_unit(); }

AstNode parse_statement(std::string_view snippet) {
  return Parser(snippet).single_statement();
}

} // namespace nvec
