#include "nvec/loop_ir.hpp"

#include <algorithm>
#include <unordered_map>

namespace nvec {
namespace {

bool is_empty_placeholder(const AstNode &n) {
  return n.kind == NodeKind::ExprStmt && n.children.empty() && n.op.empty();
}

bool needs_no_parens(const AstNode &n) {
  switch (n.kind) {
  case NodeKind::Ident:
  case NodeKind::IntLit:
  case NodeKind::FloatLit:
  case NodeKind::StringLit:
  case NodeKind::Call:
  case NodeKind::Index:
    return true;
  case NodeKind::UnaryOp:
    return n.op.rfind("post", 0) == 0;
  default:
    return false;
  }
}

void print_into(const AstNode &n, std::string &out);

void print_operand(const AstNode &n, std::string &out) {
  if (needs_no_parens(n)) {
    print_into(n, out);
  } else {
    out += '(';
    print_into(n, out);
    out += ')';
  }
}

void print_type(const AstNode &t, std::string &out) {
  out += t.token_text;
  if (t.op == "type*")
    out += " *";
}

void print_declarator(const AstNode &d, std::string &out) {
  size_t i = 0;
  while (i < d.op.size() && d.op[i] == '*') {
    out += '*';
    ++i;
  }
  size_t child = 0;
  print_into(d.children[child++], out);
  std::string_view form(d.op);
  form.remove_prefix(i);
  if (form == "var")
    return;
  while (!form.empty()) {
    if (form.substr(0, 3) == "[#]") {
      out += '[';
      print_into(d.children[child++], out);
      out += ']';
      form.remove_prefix(3);
    } else if (form.substr(0, 2) == "[]") {
      out += "[]";
      form.remove_prefix(2);
    } else if (form.front() == '=') {
      out += " = ";
      print_into(d.children[child++], out);
      form.remove_prefix(1);
    } else {
      form.remove_prefix(1);
    }
  }
}

void print_into(const AstNode &n, std::string &out) {
  switch (n.kind) {
  case NodeKind::TranslationUnit:
    for (size_t i = 0; i < n.children.size(); ++i) {
      if (i)
        out += '\n';
      print_into(n.children[i], out);
    }
    return;
  case NodeKind::FunctionDef: {
    print_type(n.children[0], out);
    out += ' ';
    print_into(n.children[1], out);
    out += '(';
    bool has_body = n.children.back().kind == NodeKind::CompoundStmt;
    size_t end = has_body ? n.children.size() - 1 : n.children.size();
    for (size_t i = 2; i < end; ++i) {
      if (i > 2)
        out += ", ";
      print_into(n.children[i], out);
    }
    out += ')';
    if (has_body) {
      out += ' ';
      print_into(n.children.back(), out);
    } else {
      out += ';';
    }
    return;
  }
  case NodeKind::Decl:
    if (n.op == "decl" || n.op == "param") {
      print_type(n.children[0], out);
      out += ' ';
      for (size_t i = 1; i < n.children.size(); ++i) {
        if (i > 1)
          out += ", ";
        print_into(n.children[i], out);
      }
      if (n.op == "decl")
        out += ';';
    } else {
      print_declarator(n, out);
    }
    return;
  case NodeKind::ForLoop: {
    out += "for (";
    const AstNode &init = n.children[0];
    if (init.kind == NodeKind::Decl)
      print_into(init, out);
    else
      print_into(init, out); // ExprStmt prints its ';'
    if (!is_empty_placeholder(n.children[1])) {
      out += ' ';
      print_into(n.children[1], out);
    }
    out += ';';
    if (!is_empty_placeholder(n.children[2])) {
      out += ' ';
      print_into(n.children[2], out);
    }
    out += ") ";
    print_into(n.children[3], out);
    return;
  }
  case NodeKind::WhileLoop:
    out += "while (";
    print_into(n.children[0], out);
    out += ") ";
    print_into(n.children[1], out);
    return;
  case NodeKind::CompoundStmt:
    out += '{';
    for (const auto &c : n.children) {
      out += ' ';
      print_into(c, out);
    }
    out += n.children.empty() ? "}" : " }";
    return;
  case NodeKind::If:
    out += "if (";
    print_into(n.children[0], out);
    out += ") ";
    print_into(n.children[1], out);
    if (n.children.size() > 2) {
      out += " else ";
      print_into(n.children[2], out);
    }
    return;
  case NodeKind::ExprStmt:
    if (!n.op.empty())
      out += n.op;
    else if (!n.children.empty())
      print_into(n.children[0], out);
    out += ';';
    return;
  case NodeKind::Return:
    out += "return";
    if (!n.children.empty()) {
      out += ' ';
      print_into(n.children[0], out);
    }
    out += ';';
    return;
  case NodeKind::BinaryOp:
    if (n.op == "?:") {
      print_operand(n.children[0], out);
      out += " ? ";
      print_operand(n.children[1], out);
      out += " : ";
      print_operand(n.children[2], out);
    } else if (n.op == ",") {
      print_operand(n.children[0], out);
      out += ", ";
      print_operand(n.children[1], out);
    } else {
      print_operand(n.children[0], out);
      out += ' ';
      out += n.op;
      out += ' ';
      print_operand(n.children[1], out);
    }
    return;
  case NodeKind::UnaryOp:
    if (n.op.rfind("post", 0) == 0) {
      print_operand(n.children[0], out);
      out += n.op.substr(4);
    } else {
      out += n.op;
      print_operand(n.children[0], out);
    }
    return;
  case NodeKind::Assign:
    print_operand(n.children[0], out);
    out += ' ';
    out += n.op;
    out += ' ';
    if (n.children[1].kind == NodeKind::BinaryOp && n.children[1].op == ",")
      print_operand(n.children[1], out);
    else
      print_into(n.children[1], out);
    return;
  case NodeKind::Call:
    print_operand(n.children[0], out);
    out += '(';
    for (size_t i = 1; i < n.children.size(); ++i) {
      if (i > 1)
        out += ", ";
      const AstNode &arg = n.children[i];
      if (arg.kind == NodeKind::BinaryOp && arg.op == ",")
        print_operand(arg, out);
      else
        print_into(arg, out);
    }
    out += ')';
    return;
  case NodeKind::Index:
    print_operand(n.children[0], out);
    out += '[';
    print_into(n.children[1], out);
    out += ']';
    return;
  case NodeKind::Cast:
    out += '(';
    out += n.children[0].token_text;
    if (!n.op.empty()) {
      out += ' ';
      out += n.op;
    }
    out += ") ";
    print_operand(n.children[1], out);
    return;
  case NodeKind::Ident:
  case NodeKind::IntLit:
  case NodeKind::FloatLit:
  case NodeKind::StringLit:
    out += n.token_text;
    return;
  }
}

void collect_terminals(const AstNode &n, std::vector<std::string> &out) {
  if (n.is_terminal())
    out.push_back(n.token_text);
  for (const auto &c : n.children)
    collect_terminals(c, out);
}

/// Affine-countable while: `while (v REL bound)` with a single constant step of
/// `v` among the body's top-level statements.
bool countable_while(const AstNode &loop) {
  const AstNode &cond = loop.children[0];
  static const std::vector<std::string> rels = {"<", "<=", ">", ">=", "!="};
  if (cond.kind != NodeKind::BinaryOp ||
      std::find(rels.begin(), rels.end(), cond.op) == rels.end())
    return false;
  std::string var;
  if (cond.children[0].kind == NodeKind::Ident)
    var = cond.children[0].token_text;
  else if (cond.children[1].kind == NodeKind::Ident)
    var = cond.children[1].token_text;
  if (var.empty())
    return false;
  auto is_var = [&](const AstNode &n) {
    return n.kind == NodeKind::Ident && n.token_text == var;
  };
  auto is_step = [&](const AstNode &s) {
    if (s.kind != NodeKind::ExprStmt || s.children.empty())
      return false;
    const AstNode &e = s.children[0];
    if (e.kind == NodeKind::UnaryOp &&
        (e.op == "++" || e.op == "--" || e.op == "post++" || e.op == "post--"))
      return is_var(e.children[0]);
    if (e.kind == NodeKind::Assign && (e.op == "+=" || e.op == "-="))
      return is_var(e.children[0]) && e.children[1].kind == NodeKind::IntLit;
    if (e.kind == NodeKind::Assign && e.op == "=" && is_var(e.children[0])) {
      const AstNode &r = e.children[1];
      return r.kind == NodeKind::BinaryOp && (r.op == "+" || r.op == "-") &&
             is_var(r.children[0]) && r.children[1].kind == NodeKind::IntLit;
    }
    return false;
  };
  const AstNode &body = loop.children[1];
  int steps = 0;
  if (body.kind == NodeKind::CompoundStmt) {
    for (const auto &s : body.children)
      steps += is_step(s) ? 1 : 0;
  } else {
    steps = is_step(body) ? 1 : 0;
  }
  return steps == 1;
}

bool is_candidate_loop(const AstNode &n) {
  return n.kind == NodeKind::ForLoop || (n.kind == NodeKind::WhileLoop && countable_while(n));
}

struct DeepestLoop {
  int depth = 0;
  std::vector<size_t> path; // relative to the queried node
};

// Candidate-loop depth of `n` (counting n itself if it is a loop) and the
// path to the first loop reaching that depth.
DeepestLoop deepest(const AstNode &n) {
  DeepestLoop best;
  for (size_t i = 0; i < n.children.size(); ++i) {
    DeepestLoop sub = deepest(n.children[i]);
    if (sub.depth > best.depth) {
      best.depth = sub.depth;
      best.path.clear();
      best.path.push_back(i);
      best.path.insert(best.path.end(), sub.path.begin(), sub.path.end());
    }
  }
  if (is_candidate_loop(n)) {
    if (best.depth == 0)
      best.path.clear();
    best.depth += 1;
  }
  return best;
}

void find_nests(const SourceFile &src, const AstNode &n, std::vector<size_t> &path,
                std::vector<LoopNest> &out, std::vector<std::string> *warnings) {
  if (n.kind == NodeKind::WhileLoop && !countable_while(n) && warnings) {
    warnings->push_back(src.path + ":" + std::to_string(n.span.line) +
                        ": skipping while loop without an affine countable form");
  }
  if (is_candidate_loop(n)) {
    DeepestLoop d = deepest(n);
    LoopNest nest;
    nest.file = src.path;
    nest.line = n.span.line;
    nest.nest_id = src.path + ":" + std::to_string(n.span.line);
    nest.depth = d.depth;
    nest.outer_path = path;
    nest.innermost_path = path;
    nest.innermost_path.insert(nest.innermost_path.end(), d.path.begin(), d.path.end());
    nest.outer_span = n.span;
    nest.innermost_span = node_at(src.tu, nest.innermost_path).span;
    nest.pragma_anchor = nest.innermost_span;
    nest.embed_snippet =
        src.text.substr(n.span.byte_start, n.span.byte_end - n.span.byte_start);
    nest.source_digest = src.digest;
    out.push_back(std::move(nest));
    return;
  }
  for (size_t i = 0; i < n.children.size(); ++i) {
    path.push_back(i);
    find_nests(src, n.children[i], path, out, warnings);
    path.pop_back();
  }
}

struct Renamer {
  std::unordered_map<std::string, std::string> names;
  std::vector<std::pair<std::string, std::string>> order;
  std::unordered_map<std::string, bool> is_array;
  int arrays = 0, scalars = 0;

  void mark_arrays(const AstNode &n) {
    if (n.kind == NodeKind::Index) {
      const AstNode *base = &n.children[0];
      while (base->kind == NodeKind::Index)
        base = &base->children[0];
      if (base->kind == NodeKind::Ident)
        is_array[base->token_text] = true;
    }
    if (n.kind == NodeKind::Decl && n.op.find('[') != std::string::npos &&
        !n.children.empty() && n.children[0].kind == NodeKind::Ident)
      is_array[n.children[0].token_text] = true;
    for (const auto &c : n.children)
      mark_arrays(c);
  }

  void rename(AstNode &n) {
    if (n.kind == NodeKind::Ident && n.op.rfind("type", 0) != 0) {
      auto it = names.find(n.token_text);
      if (it == names.end()) {
        std::string canon = is_array.count(n.token_text)
                                ? "arr" + std::to_string(arrays++)
                                : "var" + std::to_string(scalars++);
        order.emplace_back(n.token_text, canon);
        it = names.emplace(n.token_text, canon).first;
      }
      n.token_text = it->second;
      return;
    }
    size_t first = 0;
    if (n.kind == NodeKind::Call && !n.children.empty() &&
        n.children[0].kind == NodeKind::Ident)
      first = 1; // keep callee names (library calls carry meaning)
    for (size_t i = first; i < n.children.size(); ++i)
      rename(n.children[i]);
  }
};

} // namespace

std::string print_node(const AstNode &node) {
  std::string out;
  print_into(node, out);
  return out;
}

bool same_shape(const AstNode &a, const AstNode &b) {
  if (a.kind != b.kind || a.token_text != b.token_text || a.op != b.op ||
      a.children.size() != b.children.size())
    return false;
  for (size_t i = 0; i < a.children.size(); ++i)
    if (!same_shape(a.children[i], b.children[i]))
      return false;
  return true;
}

std::vector<std::string> terminal_texts(const AstNode &node) {
  std::vector<std::string> out;
  collect_terminals(node, out);
  return out;
}

int loop_depth(const AstNode &node) { return deepest(node).depth; }

SourceFile make_source(std::string path, std::string text) {
  SourceFile f;
  f.path = std::move(path);
  f.text = std::move(text);
  f.tu = parse(f.text);
  f.digest = fnv1a64(f.text);
  return f;
}

SourceFile load_source(const std::string &path) { return make_source(path, read_file(path)); }

const AstNode &node_at(const AstNode &root, const std::vector<size_t> &path) {
  const AstNode *n = &root;
  for (size_t i : path) {
    if (i >= n->children.size())
      throw Error(ErrorCode::InvalidArgument, "AST path out of range");
    n = &n->children[i];
  }
  return *n;
}

std::vector<LoopNest> extract_loop_nests(const SourceFile &src,
                                         std::vector<std::string> *warnings) {
  std::vector<LoopNest> out;
  std::vector<size_t> path;
  find_nests(src, src.tu, path, out, warnings);
  return out;
}

NormalizedSnippet normalize_identifiers(std::string_view snippet) {
  AstNode tree = parse_statement(snippet);
  Renamer r;
  r.mark_arrays(tree);
  r.rename(tree);
  NormalizedSnippet out;
  out.text = print_node(tree);
  out.renames = std::move(r.order);
  return out;
}

} // namespace nvec
