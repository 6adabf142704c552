// Static extraction of the simulator's loop features from the AST.
#include "nvec/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <unordered_map>

namespace nvec {
namespace {

constexpr double kDefaultTrip = 1024;
constexpr long long kDefaultDim = 1024;
constexpr int kGatherStride = 8;

struct VarInfo {
  std::string type;
  std::vector<long long> dims; // 0 for unknown extents
  int pointer_depth = 0;
};

using Scope = std::unordered_map<std::string, VarInfo>;

std::optional<long long> parse_int(const std::string &text) {
  std::string t = text;
  while (!t.empty() && std::strchr("uUlL", t.back()))
    t.pop_back();
  if (t.empty())
    return std::nullopt;
  char *end = nullptr;
  long long v = std::strtoll(t.c_str(), &end, 0);
  if (end == nullptr || *end != '\0')
    return std::nullopt;
  return v;
}

std::optional<long long> fold(const AstNode &n) {
  switch (n.kind) {
  case NodeKind::IntLit:
    return parse_int(n.token_text);
  case NodeKind::Cast:
    return fold(n.children.back());
  case NodeKind::UnaryOp: {
    auto v = fold(n.children[0]);
    if (!v)
      return std::nullopt;
    if (n.op == "-")
      return -*v;
    if (n.op == "+")
      return *v;
    if (n.op == "~")
      return ~*v;
    return std::nullopt;
  }
  case NodeKind::BinaryOp: {
    if (n.children.size() != 2)
      return std::nullopt;
    auto a = fold(n.children[0]), b = fold(n.children[1]);
    if (!a || !b)
      return std::nullopt;
    const std::string &op = n.op;
    if (op == "+") return *a + *b;
    if (op == "-") return *a - *b;
    if (op == "*") return *a * *b;
    if (op == "/") return *b == 0 ? std::nullopt : std::optional<long long>(*a / *b);
    if (op == "%") return *b == 0 ? std::nullopt : std::optional<long long>(*a % *b);
    if (op == "<<") return *a << *b;
    if (op == ">>") return *a >> *b;
    if (op == "&") return *a & *b;
    if (op == "|") return *a | *b;
    if (op == "^") return *a ^ *b;
    return std::nullopt;
  }
  default:
    return std::nullopt;
  }
}

bool is_ident(const AstNode &n, const std::string &name) {
  return n.kind == NodeKind::Ident && n.op.empty() && n.token_text == name;
}

bool mentions(const AstNode &n, const std::string &name) {
  if (is_ident(n, name))
    return true;
  return std::any_of(n.children.begin(), n.children.end(),
                     [&](const AstNode &c) { return mentions(c, name); });
}

// Records every declaration below `n` into `scope`.
void collect_decls(const AstNode &n, Scope &scope) {
  if (n.kind == NodeKind::Decl && !n.children.empty() && n.children[0].op.starts_with("type")) {
    const std::string &type = n.children[0].token_text;
    for (size_t i = 1; i < n.children.size(); ++i) {
      const AstNode &d = n.children[i];
      if (d.kind != NodeKind::Decl || d.children.empty())
        continue;
      VarInfo info;
      info.type = type;
      const std::string &form = d.op;
      info.pointer_depth = static_cast<int>(std::count(form.begin(), form.end(), '*'));
      size_t child = 1;
      for (size_t p = 0; p < form.size(); ++p) {
        if (form.compare(p, 3, "[#]") == 0) {
          auto v = child < d.children.size() ? fold(d.children[child]) : std::nullopt;
          info.dims.push_back(v.value_or(0));
          ++child;
          p += 2;
        } else if (form.compare(p, 2, "[]") == 0) {
          info.dims.push_back(0);
          p += 1;
        }
      }
      scope[d.children[0].token_text] = info;
    }
    return;
  }
  for (const auto &c : n.children)
    collect_decls(c, scope);
}

struct LoopHeader {
  std::string var;
  std::optional<long long> start, bound;
  std::string rel;
  long long step = 0;
};

// Step of `var` in an update expression; 0 when not a constant step.
long long step_of(const AstNode &e, const std::string &var) {
  if (e.kind == NodeKind::UnaryOp && !e.children.empty() && is_ident(e.children[0], var)) {
    if (e.op == "++" || e.op == "post++")
      return 1;
    if (e.op == "--" || e.op == "post--")
      return -1;
  }
  if (e.kind == NodeKind::Assign && is_ident(e.children[0], var)) {
    if (e.op == "+=" || e.op == "-=") {
      auto k = fold(e.children[1]);
      return k ? (e.op == "+=" ? *k : -*k) : 0;
    }
    if (e.op == "=" && e.children[1].kind == NodeKind::BinaryOp &&
        (e.children[1].op == "+" || e.children[1].op == "-") &&
        is_ident(e.children[1].children[0], var)) {
      auto k = fold(e.children[1].children[1]);
      return k ? (e.children[1].op == "+" ? *k : -*k) : 0;
    }
  }
  return 0;
}

void read_condition(const AstNode &cond, LoopHeader &h) {
  static const std::vector<std::string> rels = {"<", "<=", ">", ">=", "!="};
  if (cond.kind != NodeKind::BinaryOp ||
      std::find(rels.begin(), rels.end(), cond.op) == rels.end())
    return;
  const AstNode &l = cond.children[0], &r = cond.children[1];
  if (l.kind == NodeKind::Ident && l.op.empty()) {
    h.var = l.token_text;
    h.rel = cond.op;
    h.bound = fold(r);
  } else if (r.kind == NodeKind::Ident && r.op.empty()) {
    h.var = r.token_text;
    h.bound = fold(l);
    h.rel = cond.op == "<" ? ">" : cond.op == "<=" ? ">=" : cond.op == ">" ? "<"
          : cond.op == ">=" ? "<=" : cond.op;
  }
}

LoopHeader analyze_loop(const AstNode &loop) {
  LoopHeader h;
  if (loop.kind == NodeKind::ForLoop) {
    read_condition(loop.children[1], h);
    const AstNode &init = loop.children[0];
    const AstNode &step = loop.children[2];
    if (h.var.empty()) {
      // No usable condition: still try to find the variable from the step.
      if (step.kind == NodeKind::UnaryOp && !step.children.empty())
        h.var = step.children[0].token_text;
      else if (step.kind == NodeKind::Assign)
        h.var = step.children[0].token_text;
    }
    h.step = step_of(step, h.var);
    if (init.kind == NodeKind::ExprStmt && !init.children.empty()) {
      const AstNode &a = init.children[0];
      if (a.kind == NodeKind::Assign && a.op == "=" && is_ident(a.children[0], h.var))
        h.start = fold(a.children[1]);
    } else if (init.kind == NodeKind::Decl) {
      for (size_t i = 1; i < init.children.size(); ++i) {
        const AstNode &d = init.children[i];
        if (!d.children.empty() && d.children[0].token_text == h.var && d.op.ends_with("="))
          h.start = fold(d.children.back());
      }
    }
  } else if (loop.kind == NodeKind::WhileLoop) {
    read_condition(loop.children[0], h);
    const AstNode &body = loop.children[1];
    auto scan = [&](const AstNode &s) {
      if (s.kind == NodeKind::ExprStmt && !s.children.empty() && h.step == 0)
        h.step = step_of(s.children[0], h.var);
    };
    if (body.kind == NodeKind::CompoundStmt)
      for (const auto &s : body.children)
        scan(s);
    else
      scan(body);
  }
  return h;
}

double trip_count(const LoopHeader &h) {
  if (!h.start || !h.bound || h.step == 0)
    return kDefaultTrip;
  long long a = *h.start, b = *h.bound, s = h.step;
  long long n = 0;
  if (h.rel == "<" && s > 0)
    n = b > a ? (b - a + s - 1) / s : 0;
  else if (h.rel == "<=" && s > 0)
    n = b >= a ? (b - a) / s + 1 : 0;
  else if (h.rel == ">" && s < 0)
    n = a > b ? (a - b + (-s) - 1) / (-s) : 0;
  else if (h.rel == ">=" && s < 0)
    n = a >= b ? (a - b) / (-s) + 1 : 0;
  else if (h.rel == "!=" && (b - a) % s == 0 && (b - a) / s >= 0)
    n = (b - a) / s;
  else
    return kDefaultTrip;
  return static_cast<double>(std::max<long long>(n, 1));
}

// Coefficient of `var` in an index expression; nullopt when not affine.
std::optional<long long> coefficient(const AstNode &e, const std::string &var) {
  switch (e.kind) {
  case NodeKind::Ident:
    return is_ident(e, var) ? 1 : 0;
  case NodeKind::IntLit:
  case NodeKind::FloatLit:
    return 0;
  case NodeKind::Cast:
    return coefficient(e.children.back(), var);
  case NodeKind::UnaryOp: {
    auto c = coefficient(e.children[0], var);
    if (!c)
      return std::nullopt;
    if (e.op == "-")
      return -*c;
    if (e.op == "+")
      return *c;
    return *c == 0 ? std::optional<long long>(0) : std::nullopt;
  }
  case NodeKind::BinaryOp: {
    if (e.children.size() != 2)
      return mentions(e, var) ? std::nullopt : std::optional<long long>(0);
    auto a = coefficient(e.children[0], var), b = coefficient(e.children[1], var);
    if (!a || !b)
      return std::nullopt;
    if (e.op == "+")
      return *a + *b;
    if (e.op == "-")
      return *a - *b;
    if (e.op == "*") {
      if (auto k = fold(e.children[0]))
        return *k * *b;
      if (auto k = fold(e.children[1]))
        return *a * *k;
      return (*a == 0 && *b == 0) ? std::optional<long long>(0) : std::nullopt;
    }
    if (e.op == "<<") {
      if (auto k = fold(e.children[1]); k && *k >= 0 && *k < 32)
        return *a * (1LL << *k);
    }
    return (*a == 0 && *b == 0) ? std::optional<long long>(0) : std::nullopt;
  }
  default:
    return mentions(e, var) ? std::nullopt : std::optional<long long>(0);
  }
}

struct Access {
  std::string base;
  std::vector<const AstNode *> subscripts; // outermost dimension first
};

Access flatten_index(const AstNode &n) {
  Access a;
  const AstNode *cur = &n;
  while (cur->kind == NodeKind::Index) {
    a.subscripts.push_back(&cur->children[1]);
    cur = &cur->children[0];
  }
  std::reverse(a.subscripts.begin(), a.subscripts.end());
  if (cur->kind == NodeKind::Ident)
    a.base = cur->token_text;
  return a;
}

// Linearized element stride of an access w.r.t. var; nullopt for gathers.
std::optional<long long> access_stride(const Access &a, const Scope &scope,
                                       const std::string &var) {
  auto it = scope.find(a.base);
  const std::vector<long long> *dims = it == scope.end() ? nullptr : &it->second.dims;
  long long total = 0;
  for (size_t k = 0; k < a.subscripts.size(); ++k) {
    auto c = coefficient(*a.subscripts[k], var);
    if (!c)
      return std::nullopt;
    long long scale = 1;
    for (size_t j = k + 1; j < a.subscripts.size(); ++j) {
      long long d = (dims && j < dims->size() && (*dims)[j] > 0) ? (*dims)[j] : kDefaultDim;
      scale *= d;
    }
    total += *c * scale;
  }
  return total;
}

struct BodyScan {
  const Scope &scope;
  const std::string &var;
  long long step;
  Scope locals;
  int ops = 0;
  long long stride = 0;
  bool gather = false;
  bool reduction = false;
  bool predicate = false;
  int width = 0;

  void note_type(const std::string &spelling) {
    width = std::max(width, type_width_bits(spelling));
  }

  const VarInfo *lookup(const std::string &name) const {
    if (auto it = locals.find(name); it != locals.end())
      return &it->second;
    if (auto it = scope.find(name); it != scope.end())
      return &it->second;
    return nullptr;
  }

  void visit(const AstNode &n) {
    switch (n.kind) {
    case NodeKind::BinaryOp:
      if (n.op == "?:")
        predicate = true;
      if (n.op != ",")
        ++ops;
      break;
    case NodeKind::UnaryOp:
    case NodeKind::Call:
      ++ops;
      break;
    case NodeKind::Cast:
      ++ops;
      if (n.op.empty())
        note_type(n.children[0].token_text);
      break;
    case NodeKind::If:
      predicate = true;
      break;
    case NodeKind::Decl:
      if (!n.children.empty() && n.children[0].op == "type")
        note_type(n.children[0].token_text);
      collect_decls(n, locals);
      break;
    case NodeKind::Assign:
      visit_assign(n);
      break;
    case NodeKind::Index: {
      Access a = flatten_index(n);
      if (const VarInfo *info = lookup(a.base))
        note_type(info->type);
      auto s = access_stride(a, scope, var);
      if (!s)
        gather = true;
      else
        stride = std::max(stride, std::llabs(*s * step));
      for (const AstNode *sub : a.subscripts)
        visit(*sub);
      return;
    }
    default:
      break;
    }
    for (const auto &c : n.children)
      visit(c);
  }

  void visit_assign(const AstNode &n) {
    const AstNode &lhs = n.children[0];
    bool compound = n.op != "=";
    if (compound)
      ++ops;
    bool self_update = compound;
    std::string target;
    bool invariant_target = false;
    if (lhs.kind == NodeKind::Ident) {
      target = lhs.token_text;
      invariant_target = !locals.count(target) && target != var;
      if (const VarInfo *info = lookup(target))
        note_type(info->type);
      if (!compound)
        self_update = mentions(n.children[1], target);
    } else if (lhs.kind == NodeKind::Index) {
      Access a = flatten_index(lhs);
      auto s = access_stride(a, scope, var);
      invariant_target = s && *s == 0;
      if (!compound && invariant_target)
        self_update = mentions(n.children[1], a.base);
    }
    if (self_update && invariant_target)
      reduction = true;
  }
};

int clamp_width(int w) {
  if (w <= 0)
    return 32;
  if (w <= 8)
    return 8;
  if (w <= 16)
    return 16;
  if (w <= 32)
    return 32;
  return 64;
}

} // namespace

SimLoopFeatures extract_sim_features(const SourceFile &src, const LoopNest &nest) {
  const AstNode &inner = node_at(src.tu, nest.innermost_path);
  if (!inner.is_loop())
    throw Error(ErrorCode::InvalidArgument, "nest does not point at a loop");

  Scope scope;
  for (const auto &top : src.tu.children)
    if (top.kind == NodeKind::Decl)
      collect_decls(top, scope);
  if (!nest.outer_path.empty()) {
    const AstNode &fn = src.tu.children[nest.outer_path.front()];
    if (fn.kind == NodeKind::FunctionDef)
      collect_decls(fn, scope);
  }

  SimLoopFeatures f;
  double trips = 1.0;
  for (size_t len = nest.outer_path.size(); len <= nest.innermost_path.size(); ++len) {
    std::vector<size_t> prefix(nest.innermost_path.begin(),
                               nest.innermost_path.begin() + static_cast<long>(len));
    const AstNode &n = node_at(src.tu, prefix);
    if (n.is_loop())
      trips *= trip_count(analyze_loop(n));
  }
  f.trip_count = std::max(1.0, trips);

  LoopHeader h = analyze_loop(inner);
  const AstNode &body = inner.children.back();
  BodyScan scan{scope, h.var, h.step == 0 ? 1 : h.step, {}};
  scan.visit(body);
  f.ops_per_iter = std::max(1, scan.ops);
  f.stride = scan.gather ? kGatherStride
                         : static_cast<int>(std::clamp<long long>(scan.stride, 1, 1 << 20));
  f.has_reduction = scan.reduction;
  f.has_predicate = scan.predicate;
  f.elem_bits = clamp_width(scan.width);
  return f;
}

} // namespace nvec
