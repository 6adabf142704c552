//===- datasetgen.cpp - Template families and corpus generation -----------===//

#include "nvec/datasetgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

namespace nvec {
namespace {

//===-- Expression builder ------------------------------------------------===//

// Text plus the number of operations the static extractor will count in it.
struct Expr {
  std::string text;
  int ops = 0;
  int prec = 100;
};

int precedence(const std::string &op) {
  if (op == "*" || op == "/" || op == "%")
    return 13;
  if (op == "+" || op == "-")
    return 12;
  if (op == "<<" || op == ">>")
    return 11;
  if (op == "<" || op == ">" || op == "<=" || op == ">=")
    return 10;
  if (op == "==" || op == "!=")
    return 9;
  if (op == "&")
    return 8;
  if (op == "^")
    return 7;
  if (op == "|")
    return 6;
  return 1;
}

Expr lit(long long v) { return {std::to_string(v), 0, 100}; }
Expr var(const std::string &name) { return {name, 0, 100}; }

Expr paren(const Expr &e) { return {"(" + e.text + ")", e.ops, 100}; }

Expr bin(Expr a, const std::string &op, Expr b) {
  int p = precedence(op);
  // Mixed bitwise and shift operands are always parenthesized for clarity.
  bool bitwise = p >= 6 && p <= 8;
  auto needs = [&](const Expr &e, bool right) {
    if (bitwise && e.prec != p && e.prec < 100)
      return true;
    return right ? e.prec <= p : e.prec < p;
  };
  if (needs(a, false))
    a = paren(a);
  if (needs(b, true))
    b = paren(b);
  return {a.text + " " + op + " " + b.text, a.ops + b.ops + 1, p};
}

Expr index(const std::string &base, const std::vector<Expr> &subs) {
  Expr e{base, 0, 100};
  for (const auto &s : subs) {
    e.text += "[" + s.text + "]";
    e.ops += s.ops;
  }
  return e;
}

Expr cast(const std::string &type, Expr e) {
  if (e.prec < 100)
    e = paren(e);
  return {"(" + type + ") " + e.text, e.ops + 1, 14};
}

Expr ternary(const Expr &c, const Expr &a, const Expr &b) {
  return {"(" + c.text + " ? " + a.text + " : " + b.text + ")", c.ops + a.ops + b.ops + 1, 100};
}

// Statements of a loop body and their operation count.
struct Body {
  std::vector<std::string> lines;
  int ops = 0;

  void decl(const std::string &type, const std::string &name, const Expr &init) {
    lines.push_back(type + " " + name + " = " + init.text + ";");
    ops += init.ops;
  }
  void assign(const Expr &lhs, const std::string &op, const Expr &rhs) {
    lines.push_back(lhs.text + " " + op + " " + rhs.text + ";");
    ops += lhs.ops + rhs.ops + (op == "=" ? 0 : 1);
  }
};

std::vector<std::string> indent(const std::vector<std::string> &lines) {
  std::vector<std::string> out;
  for (const auto &l : lines)
    out.push_back("  " + l);
  return out;
}

struct LoopShape {
  std::string var;
  long long trip = 1;
  int step = 1;
  bool inclusive = false; // "<=" bound
};

std::vector<std::string> loop(const LoopShape &s, const std::vector<std::string> &body) {
  long long bound = s.trip * s.step;
  std::string head = "for (" + s.var + " = 0; " + s.var +
                     (s.inclusive ? " <= " + std::to_string(bound - 1) : " < " + std::to_string(bound)) +
                     "; " + (s.step == 1 ? s.var + "++" : s.var + " += " + std::to_string(s.step)) +
                     ") {";
  std::vector<std::string> out = {head};
  for (const auto &l : indent(body))
    out.push_back(l);
  out.push_back("}");
  return out;
}

std::string join_lines(const std::vector<std::string> &lines) {
  std::string out;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (i)
      out += '\n';
    out += lines[i];
  }
  return out;
}

//===-- Random choices ----------------------------------------------------===//

const std::vector<long long> kTrips = {64, 128, 256, 512, 1024, 4096};
const std::vector<int> kStrides = {1, 2, 4};
const std::vector<int> kWidths = {8, 16, 32, 64};

std::string int_type(int w) {
  switch (w) {
  case 8: return "char";
  case 16: return "short";
  case 32: return "int";
  default: return "long";
  }
}

std::string any_type(Rng &rng, int w) {
  if (w == 32)
    return rng.below(2) ? "float" : "int";
  if (w == 64)
    return rng.below(2) ? "double" : "long";
  return int_type(w);
}

int width(const std::string &type) { return type_width_bits(type); }

// Distinct identifiers per program.
class Names {
public:
  explicit Names(Rng &rng) : rng_(rng) {}
  std::string loop_var() { return draw({"i", "j", "k", "ii", "jj", "kk", "l", "n", "t", "col", "row"}); }
  std::string array() {
    return draw({"a", "b", "c", "d", "e", "f", "g", "h", "x", "y", "z", "u", "w", "src", "dst",
                 "in", "out", "buf", "vec", "arr", "data", "lhs", "rhs", "A", "B", "C", "D", "G",
                 "img", "mat", "sig", "coef", "pts"});
  }
  std::string scalar() {
    return draw({"acc", "sum", "val", "res", "cur", "best", "mx", "mn", "total", "tmp", "v",
                 "s", "p", "q", "r", "m", "elem", "item", "cell"});
  }

private:
  Rng &rng_;
  std::set<std::string> used_;

  std::string draw(const std::vector<std::string> &pool) {
    for (;;) {
      std::string name = rng_.pick(pool);
      if (rng_.below(10) < 3)
        name += std::to_string(rng_.below(10));
      if (used_.insert(name).second)
        return name;
    }
  }
};

// Unit-coefficient access with an effective stride of s, expressed either
// through the loop step or through a multiplied index.
struct StridedIndex {
  Expr sub;
  int step = 1;
};

StridedIndex strided(Rng &rng, const std::string &v, int s) {
  if (s == 1)
    return {var(v), 1};
  if (rng.below(2))
    return {var(v), s};
  return {bin(lit(s), "*", var(v)), 1};
}

LoopShape shape(Rng &rng, const std::string &v, long long trip, int step) {
  return {v, trip, step, rng.below(10) == 0};
}

SimLoopFeatures feats(double n, int c, int s, bool red, bool pred, int w) {
  SimLoopFeatures f;
  f.trip_count = n;
  f.ops_per_iter = std::max(1, c);
  f.stride = s;
  f.has_reduction = red;
  f.has_predicate = pred;
  f.elem_bits = w;
  return f;
}

// Optional outer row loop: accesses gain a leading [row] subscript.
struct Rows {
  bool on = false;
  std::string var;
  long long count = 1;

  std::vector<Expr> subs(const Expr &inner) const {
    if (on)
      return {Expr{var, 0, 100}, inner};
    return {inner};
  }
  std::vector<long long> dims(long long inner) const {
    if (on)
      return {count, inner};
    return {inner};
  }
  std::vector<std::string> wrap(Rng &rng, std::vector<std::string> lines) const {
    if (!on)
      return lines;
    return loop(shape(rng, var, count, 1), lines);
  }
};

Rows maybe_rows(Rng &rng, Names &nm, long long &trip) {
  Rows r;
  if (rng.below(10) >= 3)
    return r;
  r.on = true;
  r.var = nm.loop_var();
  r.count = rng.pick(std::vector<long long>{4, 8, 16, 32});
  while (r.count * trip > 65536)
    trip /= 2;
  return r;
}

std::string loop_vars_decl(const std::vector<std::string> &vars) {
  std::string out = "int ";
  for (size_t i = 0; i < vars.size(); ++i)
    out += (i ? ", " : "") + vars[i];
  return out + ";";
}

//===-- Families ----------------------------------------------------------===//

TemplateInstance fam_assign(Rng &rng) {
  Names nm(rng);
  TemplateInstance t;
  int w = rng.pick(kWidths);
  std::string T = any_type(rng, w);
  long long n = rng.pick(kTrips);
  int s = rng.pick(kStrides);
  std::string i = nm.loop_var();
  Rows rows = maybe_rows(rng, nm, n);
  StridedIndex ix = strided(rng, i, s);
  long long size = n * s + 4;
  std::string a = nm.array(), b = nm.array(), v = nm.scalar();
  t.arrays.push_back({a, T, rows.dims(size), true, {}});
  t.arrays.push_back({b, T, rows.dims(size), false, {}});

  Body body;
  body.decl(T, v, index(b, rows.subs(ix.sub)));
  Expr rhs = var(v);
  int terms = 1 + static_cast<int>(rng.below(3));
  for (int k = 0; k < terms; ++k) {
    Expr term = lit(1 + static_cast<long long>(rng.below(9)));
    if (rng.below(3) == 0) {
      std::string c = nm.array();
      t.arrays.push_back({c, T, rows.dims(size), false, {}});
      term = index(c, rows.subs(ix.sub));
    }
    rhs = bin(rhs, rng.pick(std::vector<std::string>{"+", "-", "*"}), term);
  }
  body.assign(index(a, rows.subs(ix.sub)), "=", rhs);

  std::vector<std::string> vars = {i};
  if (rows.on)
    vars.insert(vars.begin(), rows.var);
  t.locals = {loop_vars_decl(vars)};
  t.nest = join_lines(rows.wrap(rng, loop(shape(rng, i, n, ix.step), body.lines)));
  t.features = feats(static_cast<double>(n * rows.count), body.ops, s, false, false, w);
  return t;
}

TemplateInstance fam_reduction(Rng &rng) {
  Names nm(rng);
  TemplateInstance t;
  int w = rng.pick(kWidths);
  std::string T = any_type(rng, w);
  long long n = rng.pick(kTrips);
  int s = rng.pick(kStrides);
  std::string i = nm.loop_var();
  Rows rows = maybe_rows(rng, nm, n);
  StridedIndex ix = strided(rng, i, s);
  long long size = n * s + 4;
  std::string a = nm.array(), b = nm.array(), acc = nm.scalar(), v = nm.scalar(),
              res = nm.scalar();
  t.arrays.push_back({a, T, rows.dims(size), false, {}});

  Body body;
  body.decl(T, v, index(a, rows.subs(ix.sub)));
  Expr term = var(v);
  if (rng.below(3)) {
    t.arrays.push_back({b, T, rows.dims(size), false, {}});
    term = bin(term, "*", index(b, rows.subs(ix.sub)));
  }
  if (rng.below(2))
    body.assign(var(acc), "+=", term);
  else
    body.assign(var(acc), "=", bin(var(acc), "+", term));

  std::vector<std::string> inner = loop(shape(rng, i, n, ix.step), body.lines);
  std::vector<std::string> vars = {i};
  if (rows.on) {
    vars.insert(vars.begin(), rows.var);
    t.arrays.push_back({res, T, {rows.count}, true, {}});
    inner.insert(inner.begin(), T + " " + acc + " = 0;");
    inner.push_back(res + "[" + rows.var + "] = " + acc + ";");
    t.locals = {loop_vars_decl(vars)};
  } else {
    t.scalars.push_back(T + " " + res + ";");
    t.outputs.push_back(res);
    t.locals = {loop_vars_decl(vars), T + " " + acc + " = 0;"};
    t.epilogue.push_back(res + " = " + acc + ";");
  }
  t.nest = join_lines(rows.wrap(rng, inner));
  t.features = feats(static_cast<double>(n * rows.count), body.ops, s, true, false, w);
  return t;
}

TemplateInstance fam_strided(Rng &rng) {
  Names nm(rng);
  TemplateInstance t;
  int w = rng.pick(kWidths);
  std::string T = any_type(rng, w);
  long long n = rng.pick(kTrips);
  int s = rng.pick(std::vector<int>{2, 4});
  std::string i = nm.loop_var();
  std::string a = nm.array(), b = nm.array(), c = nm.array(), v = nm.scalar();
  bool strided_out = rng.below(3) == 0;
  Expr si = bin(lit(s), "*", var(i));
  t.arrays.push_back({a, T, {strided_out ? n * s + 4 : n + 4}, true, {}});
  t.arrays.push_back({b, T, {n * s + 4}, false, {}});
  t.arrays.push_back({c, T, {n * s + 4}, false, {}});

  Body body;
  body.decl(T, v,
            bin(index(b, {si}), rng.pick(std::vector<std::string>{"+", "-", "*"}),
                index(c, {bin(si, "+", lit(1 + static_cast<long long>(rng.below(s - 1))))})));
  Expr rhs = var(v);
  if (rng.below(2))
    rhs = bin(rhs, "*", lit(2 + static_cast<long long>(rng.below(5))));
  body.assign(index(a, {strided_out ? si : var(i)}), "=", rhs);

  t.locals = {loop_vars_decl({i})};
  t.nest = join_lines(loop(shape(rng, i, n, 1), body.lines));
  t.features = feats(static_cast<double>(n), body.ops, s, false, false, w);
  return t;
}

TemplateInstance fam_predicate(Rng &rng) {
  Names nm(rng);
  TemplateInstance t;
  int w = rng.pick(kWidths);
  std::string T = any_type(rng, w);
  long long n = rng.pick(kTrips);
  int s = rng.pick(kStrides);
  std::string i = nm.loop_var();
  Rows rows = maybe_rows(rng, nm, n);
  StridedIndex ix = strided(rng, i, s);
  long long size = n * s + 4;
  std::string a = nm.array(), b = nm.array(), v = nm.scalar();
  t.arrays.push_back({a, T, rows.dims(size), false, {}});
  t.arrays.push_back({b, T, rows.dims(size), true, {}});
  Expr limit = lit(2 + static_cast<long long>(rng.below(10)));
  std::string cmp = rng.pick(std::vector<std::string>{">", "<", ">=", "<="});
  Expr cond = bin(var(v), cmp, limit);
  Expr out = index(b, rows.subs(ix.sub));

  Body body;
  body.decl(T, v, index(a, rows.subs(ix.sub)));
  if (rng.below(2)) {
    body.assign(out, "=", ternary(cond, limit, var(v)));
  } else {
    Expr shifted = bin(var(v), "-", limit);
    body.lines.push_back("if (" + cond.text + ") {");
    body.lines.push_back("  " + out.text + " = " + shifted.text + ";");
    body.lines.push_back("} else {");
    body.lines.push_back("  " + out.text + " = " + v + ";");
    body.lines.push_back("}");
    body.ops += cond.ops + 2 * out.ops + shifted.ops;
  }

  std::vector<std::string> vars = {i};
  if (rows.on)
    vars.insert(vars.begin(), rows.var);
  t.locals = {loop_vars_decl(vars)};
  t.nest = join_lines(rows.wrap(rng, loop(shape(rng, i, n, ix.step), body.lines)));
  t.features = feats(static_cast<double>(n * rows.count), body.ops, s, false, true, w);
  return t;
}

TemplateInstance fam_cast(Rng &rng) {
  Names nm(rng);
  TemplateInstance t;
  int wn = rng.pick(std::vector<int>{8, 16, 32});
  int ww = rng.pick(std::vector<int>{16, 32, 64});
  if (ww < wn)
    std::swap(ww, wn);
  std::string Tn = int_type(wn), Tw = any_type(rng, ww);
  long long n = rng.pick(kTrips);
  std::string i = nm.loop_var();
  int pairs = 1 + static_cast<int>(rng.below(3));
  bool unrolled = rng.below(2);
  int s = unrolled ? 2 : rng.pick(kStrides);
  StridedIndex ix = unrolled ? StridedIndex{var(i), 2} : strided(rng, i, s);
  long long size = n * s + 4;

  Body body;
  for (int p = 0; p < pairs; ++p) {
    std::string dst = nm.array(), src = nm.array();
    t.arrays.push_back({dst, Tw, {size}, true, {}});
    t.arrays.push_back({src, Tn, {size}, false, {}});
    body.assign(index(dst, {ix.sub}), "=", cast(Tw, index(src, {ix.sub})));
    if (unrolled) {
      Expr next = bin(var(i), "+", lit(1));
      body.assign(index(dst, {next}), "=", cast(Tw, index(src, {next})));
    }
  }
  t.locals = {loop_vars_decl({i})};
  t.nest = join_lines(loop(shape(rng, i, n, ix.step), body.lines));
  t.features = feats(static_cast<double>(n), body.ops, s, false, false, std::max(wn, ww));
  return t;
}

TemplateInstance fam_init2d(Rng &rng) {
  Names nm(rng);
  TemplateInstance t;
  int w = rng.pick(kWidths);
  std::string T = any_type(rng, w);
  const std::vector<long long> sides = {16, 32, 64, 128, 256};
  long long rows = rng.pick(sides), cols = rng.pick(sides);
  std::string i = nm.loop_var(), j = nm.loop_var();
  std::string g = nm.array();
  bool transposed = rng.below(3) == 0;
  // Inner loop runs over j; transposed layouts walk the leading dimension.
  std::vector<long long> dims = transposed ? std::vector<long long>{cols, rows}
                                           : std::vector<long long>{rows, cols};
  std::vector<Expr> subs = transposed ? std::vector<Expr>{var(j), var(i)}
                                      : std::vector<Expr>{var(i), var(j)};
  t.arrays.push_back({g, T, dims, true, {}});

  Body body;
  if (rng.below(2)) {
    Expr k = lit(1 + static_cast<long long>(rng.below(7)));
    Expr value = rng.below(2) ? bin(var(i), "+", bin(var(j), "*", k))
                              : bin(bin(var(i), "*", k), "+", var(j));
    body.assign(index(g, subs), "=", cast(T, value));
  } else {
    std::string h = nm.array(), v = nm.scalar();
    t.arrays.push_back({h, T, dims, false, {}});
    body.decl(T, v, index(h, subs));
    body.assign(index(g, subs), "=",
                bin(var(v), rng.pick(std::vector<std::string>{"*", "+"}),
                    lit(2 + static_cast<long long>(rng.below(5)))));
  }
  t.locals = {loop_vars_decl({i, j})};
  t.nest = join_lines(loop(shape(rng, i, rows, 1), loop(shape(rng, j, cols, 1), body.lines)));
  t.features = feats(static_cast<double>(rows * cols), body.ops, transposed ? static_cast<int>(rows) : 1,
                     false, false, w);
  return t;
}

TemplateInstance fam_matmul(Rng &rng) {
  Names nm(rng);
  TemplateInstance t;
  int w = rng.pick(std::vector<int>{16, 32, 64});
  std::string T = any_type(rng, w);
  const std::vector<long long> sides = {16, 32, 64, 128};
  long long m = rng.pick(sides), p = rng.pick(sides), q = rng.pick(sides);
  while (m * p * q > (1 << 19))
    m /= 2;
  std::string i = nm.loop_var(), j = nm.loop_var(), k = nm.loop_var();
  std::string A = nm.array(), B = nm.array(), C = nm.array();
  t.arrays.push_back({A, T, {m, q}, false, {}});
  t.arrays.push_back({B, T, {q, p}, false, {}});
  t.arrays.push_back({C, T, {m, p}, true, {}});
  t.locals = {loop_vars_decl({i, j, k})};

  Body body;
  if (rng.below(2)) {
    // i-j-k: dot product down a column of B.
    std::string sum = nm.scalar();
    Expr prod = bin(index(A, {var(i), var(k)}), "*", index(B, {var(k), var(j)}));
    if (rng.below(3) == 0) {
      std::string alpha = nm.scalar();
      t.scalars.push_back(T + " " + alpha + " = 3;");
      prod = bin(bin(var(alpha), "*", index(A, {var(i), var(k)})), "*", index(B, {var(k), var(j)}));
    }
    body.assign(var(sum), "+=", prod);
    std::vector<std::string> mid = {T + " " + sum + " = 0;"};
    for (const auto &l : loop(shape(rng, k, q, 1), body.lines))
      mid.push_back(l);
    mid.push_back(C + "[" + i + "][" + j + "] = " + sum + ";");
    t.nest = join_lines(loop(shape(rng, i, m, 1), loop(shape(rng, j, p, 1), mid)));
    t.features = feats(static_cast<double>(m * p * q), body.ops, static_cast<int>(p), true, false, w);
  } else {
    // i-k-j: row update with a hoisted scalar.
    std::string r = nm.scalar();
    body.assign(index(C, {var(i), var(j)}), "+=", bin(var(r), "*", index(B, {var(k), var(j)})));
    std::vector<std::string> mid = {T + " " + r + " = " + A + "[" + i + "][" + k + "];"};
    for (const auto &l : loop(shape(rng, j, p, 1), body.lines))
      mid.push_back(l);
    t.nest = join_lines(loop(shape(rng, i, m, 1), loop(shape(rng, k, q, 1), mid)));
    t.features = feats(static_cast<double>(m * p * q), body.ops, 1, false, false, w);
  }
  return t;
}

TemplateInstance fam_complex(Rng &rng) {
  Names nm(rng);
  TemplateInstance t;
  int w = rng.pick(std::vector<int>{16, 32, 64});
  std::string T = any_type(rng, w);
  long long n = rng.pick(kTrips);
  std::string i = nm.loop_var();
  std::string b = nm.array(), c = nm.array(), br = nm.scalar(), bi = nm.scalar();
  t.arrays.push_back({b, T, {2 * n + 4}, false, {}});
  t.arrays.push_back({c, T, {2 * n + 4}, false, {}});
  Expr even = bin(lit(2), "*", var(i));
  Expr odd = bin(even, "+", lit(1));

  Body body;
  body.decl(T, br, index(b, {even}));
  body.decl(T, bi, index(b, {odd}));
  Expr re = bin(bin(var(br), "*", index(c, {even})), "-", bin(var(bi), "*", index(c, {odd})));
  Expr im = bin(bin(var(br), "*", index(c, {odd})), "+", bin(var(bi), "*", index(c, {even})));
  if (rng.below(2)) {
    std::string ore = nm.array(), oim = nm.array();
    t.arrays.push_back({ore, T, {n + 4}, true, {}});
    t.arrays.push_back({oim, T, {n + 4}, true, {}});
    body.assign(index(ore, {var(i)}), "=", re);
    body.assign(index(oim, {var(i)}), "=", im);
  } else {
    std::string out = nm.array();
    t.arrays.push_back({out, T, {2 * n + 4}, true, {}});
    body.assign(index(out, {even}), "=", re);
    body.assign(index(out, {odd}), "=", im);
  }
  t.locals = {loop_vars_decl({i})};
  t.nest = join_lines(loop(shape(rng, i, n, 1), body.lines));
  t.features = feats(static_cast<double>(n), body.ops, 2, false, false, w);
  return t;
}

TemplateInstance fam_bitwise(Rng &rng) {
  Names nm(rng);
  TemplateInstance t;
  int w = rng.pick(kWidths);
  std::string T = int_type(w);
  long long n = rng.pick(kTrips);
  int s = rng.pick(kStrides);
  std::string i = nm.loop_var();
  Rows rows = maybe_rows(rng, nm, n);
  StridedIndex ix = strided(rng, i, s);
  long long size = n * s + 4;
  std::string a = nm.array(), b = nm.array(), v = nm.scalar();
  t.arrays.push_back({a, T, rows.dims(size), true, {}});
  t.arrays.push_back({b, T, rows.dims(size), false, {}});

  Body body;
  body.decl(T, v, index(b, rows.subs(ix.sub)));
  Expr rhs = var(v);
  int terms = 1 + static_cast<int>(rng.below(3));
  for (int k = 0; k < terms; ++k) {
    std::string op = rng.pick(std::vector<std::string>{"&", "|", "^", "<<", ">>"});
    Expr term;
    if (op == "<<" || op == ">>") {
      term = lit(1 + static_cast<long long>(rng.below(3)));
    } else if (rng.below(3) == 0) {
      std::string c = nm.array();
      t.arrays.push_back({c, T, rows.dims(size), false, {}});
      term = index(c, rows.subs(ix.sub));
    } else {
      term = lit(rng.pick(std::vector<long long>{3, 7, 15, 31, 63}));
    }
    rhs = bin(rhs, op, term);
  }
  body.assign(index(a, rows.subs(ix.sub)), "=", rhs);

  std::vector<std::string> vars = {i};
  if (rows.on)
    vars.insert(vars.begin(), rows.var);
  t.locals = {loop_vars_decl(vars)};
  t.nest = join_lines(rows.wrap(rng, loop(shape(rng, i, n, ix.step), body.lines)));
  t.features = feats(static_cast<double>(n * rows.count), body.ops, s, false, false, w);
  return t;
}

TemplateInstance fam_minmax(Rng &rng) {
  Names nm(rng);
  TemplateInstance t;
  int w = rng.pick(kWidths);
  std::string T = any_type(rng, w);
  long long n = rng.pick(kTrips);
  int s = rng.pick(kStrides);
  std::string i = nm.loop_var();
  StridedIndex ix = strided(rng, i, s);
  std::string a = nm.array(), v = nm.scalar();
  t.arrays.push_back({a, T, {n * s + 4}, false, {}});
  t.locals = {loop_vars_decl({i})};

  Body body;
  body.decl(T, v, index(a, {ix.sub}));
  bool both = rng.below(3) == 0;
  bool max_first = rng.below(2);
  for (int k = 0; k < (both ? 2 : 1); ++k) {
    bool is_max = (k == 0) == max_first;
    std::string m = nm.scalar(), res = nm.scalar();
    t.locals.push_back(T + " " + m + " = " + a + "[0];");
    t.scalars.push_back(T + " " + res + ";");
    t.outputs.push_back(res);
    t.epilogue.push_back(res + " = " + m + ";");
    body.assign(var(m), "=", ternary(bin(var(v), is_max ? ">" : "<", var(m)), var(v), var(m)));
  }
  t.nest = join_lines(loop(shape(rng, i, n, ix.step), body.lines));
  t.features = feats(static_cast<double>(n), body.ops, s, true, true, w);
  return t;
}

TemplateInstance fam_gather(Rng &rng) {
  Names nm(rng);
  TemplateInstance t;
  int w = rng.pick(kWidths);
  std::string T = any_type(rng, w);
  long long n = rng.pick(kTrips);
  int s = rng.pick(kStrides);
  std::string i = nm.loop_var();
  StridedIndex ix = strided(rng, i, s);
  long long size = n * s + 4;
  long long table = rng.pick(std::vector<long long>{257, 1031, 4099});
  std::string a = nm.array(), b = nm.array(), idx = nm.array(), v = nm.scalar();
  t.arrays.push_back({a, T, {size}, true, {}});
  t.arrays.push_back({b, T, {table}, false, {}});
  t.arrays.push_back({idx, "int", {size}, false,
                      "(int) ((nv_q * " + std::to_string(rng.pick(std::vector<int>{7, 13, 31})) +
                          ") % " + std::to_string(table) + ")"});

  Body body;
  body.decl(T, v, index(b, {index(idx, {ix.sub})}));
  body.assign(index(a, {ix.sub}), "=",
              bin(var(v), rng.pick(std::vector<std::string>{"*", "+"}),
                  lit(2 + static_cast<long long>(rng.below(5)))));
  t.locals = {loop_vars_decl({i})};
  t.nest = join_lines(loop(shape(rng, i, n, ix.step), body.lines));
  t.features = feats(static_cast<double>(n), body.ops, 8, false, false, std::max(w, 32));
  return t;
}

TemplateInstance fam_mixed(Rng &rng) {
  Names nm(rng);
  TemplateInstance t;
  static const std::vector<std::pair<std::string, std::string>> kPairs = {
      {"char", "short"}, {"char", "int"},    {"short", "int"},  {"short", "long"},
      {"int", "long"},   {"float", "double"}, {"int", "double"}, {"short", "float"}};
  auto [Tn, Tw] = rng.pick(kPairs);
  long long n = rng.pick(kTrips);
  int s = rng.pick(kStrides);
  std::string i = nm.loop_var();
  StridedIndex ix = strided(rng, i, s);
  long long size = n * s + 4;
  std::string a = nm.array(), b = nm.array(), x = nm.scalar();
  t.arrays.push_back({a, Tn, {size}, false, {}});
  t.arrays.push_back({b, Tn, {size}, false, {}});

  Body body;
  body.decl(Tw, x,
            bin(cast(Tw, index(a, {ix.sub})), rng.pick(std::vector<std::string>{"*", "+"}),
                cast(Tw, index(b, {ix.sub}))));
  int shape_kind = static_cast<int>(rng.below(3));
  if (shape_kind != 1) {
    std::string c = nm.array(), d = nm.array();
    t.arrays.push_back({c, Tw, {size}, true, {}});
    t.arrays.push_back({d, Tn, {size}, false, {}});
    body.assign(index(c, {ix.sub}), "=", bin(var(x), "+", cast(Tw, index(d, {ix.sub}))));
  }
  if (shape_kind != 0) {
    std::string o = nm.array();
    t.arrays.push_back({o, Tn, {size}, true, {}});
    body.assign(index(o, {ix.sub}), "=",
                cast(Tn, bin(var(x), "+", lit(1 + static_cast<long long>(rng.below(9))))));
  }
  t.locals = {loop_vars_decl({i})};
  t.nest = join_lines(loop(shape(rng, i, n, ix.step), body.lines));
  t.features = feats(static_cast<double>(n), body.ops, s, false, false,
                     std::max(width(Tn), width(Tw)));
  return t;
}

//===-- Harness -----------------------------------------------------------===//

std::string dims_text(const std::vector<long long> &dims) {
  std::string out;
  for (long long d : dims)
    out += "[" + std::to_string(d) + "]";
  return out;
}

// Loops over every element of `a` with indices nv_q (and nv_q2).
std::vector<std::string> for_each_element(const TemplateInstance::Array &a,
                                          const std::string &stmt_of_ref) {
  std::string ref = a.name + (a.dims.size() == 2 ? "[nv_q][nv_q2]" : "[nv_q]");
  std::string stmt = stmt_of_ref;
  for (size_t p; (p = stmt.find("@")) != std::string::npos;)
    stmt.replace(p, 1, ref);
  std::vector<std::string> inner = {stmt};
  if (a.dims.size() == 2)
    inner = {"for (nv_q2 = 0; nv_q2 < " + std::to_string(a.dims[1]) + "; nv_q2++) {",
             "  " + stmt, "}"};
  std::vector<std::string> out = {"for (nv_q = 0; nv_q < " + std::to_string(a.dims[0]) +
                                  "; nv_q++) {"};
  for (const auto &l : inner)
    out.push_back("  " + l);
  out.push_back("}");
  return out;
}

long long repetitions(const SimLoopFeatures &f) {
  double work = f.trip_count * f.ops_per_iter;
  return std::clamp<long long>(std::llround(2e7 / work), 1, 100000);
}

void check_instance(const TemplateInstance &inst, const std::string &id) {
  if (inst.nest.empty() || inst.arrays.empty())
    throw Error(ErrorCode::TemplateInstantiationFailed, "template " + id + " produced no nest");
}

} // namespace

std::string render_program(const TemplateInstance &inst) {
  std::ostringstream o;
  o << "#include <stdio.h>\n#include <time.h>\n\n";
  for (const auto &a : inst.arrays)
    o << a.type << " " << a.name << dims_text(a.dims) << ";\n";
  for (const auto &s : inst.scalars)
    o << s << "\n";
  o << "\n__attribute__((noinline))\nvoid kernel(void) {\n";
  for (const auto &l : inst.locals)
    o << "  " << l << "\n";
  std::istringstream nest(inst.nest);
  for (std::string line; std::getline(nest, line);)
    o << "  " << line << "\n";
  for (const auto &l : inst.epilogue)
    o << "  " << l << "\n";
  o << "}\n\nint main(void) {\n";
  bool two_d = std::any_of(inst.arrays.begin(), inst.arrays.end(),
                           [](const auto &a) { return a.dims.size() == 2; });
  o << "  long nv_q" << (two_d ? ", nv_q2" : "") << ";\n";
  o << "  long nv_r;\n  double nv_chk = 0;\n";
  for (const auto &a : inst.arrays) {
    std::string fill = a.fill;
    if (fill.empty())
      fill = "(" + a.type + ") (" + (a.dims.size() == 2 ? std::string("(nv_q + nv_q2)") : "nv_q") +
             " % 13 + 1)";
    for (const auto &l : for_each_element(a, "@ = " + fill + ";"))
      o << "  " << l << "\n";
  }
  long long reps = repetitions(inst.features);
  o << "  clock_t nv_t0 = clock();\n";
  o << "  for (nv_r = 0; nv_r < " << reps << "; nv_r++) {\n    kernel();\n  }\n";
  o << "  clock_t nv_t1 = clock();\n";
  for (const auto &a : inst.arrays)
    if (a.output)
      for (const auto &l : for_each_element(a, "nv_chk += @;"))
        o << "  " << l << "\n";
  for (const auto &s : inst.outputs)
    o << "  nv_chk += " << s << ";\n";
  o << "  printf(\"nvec_time_ns=%.1f\\n\", (double) (nv_t1 - nv_t0) * 1e9 / CLOCKS_PER_SEC / "
    << reps << ");\n";
  o << "  printf(\"checksum=%.6g\\n\", nv_chk);\n";
  o << "  return 0;\n}\n";
  return o.str();
}

const std::vector<LoopTemplate> &default_templates() {
  static const std::vector<LoopTemplate> kTemplates = {
      {"assign", "elementwise arithmetic over one or more inputs", fam_assign},
      {"reduction", "accumulation into a loop-invariant scalar", fam_reduction},
      {"strided", "reads at a constant stride of 2 or 4", fam_strided},
      {"predicate", "clipping via ternary or if/else", fam_predicate},
      {"cast", "widening conversions, optionally unrolled by two", fam_cast},
      {"init2d", "two-level initialization, row or column major", fam_init2d},
      {"matmul", "three-level matrix multiply in ijk or ikj order", fam_matmul},
      {"complex", "interleaved real/imaginary products", fam_complex},
      {"bitwise", "masks and shifts on integer data", fam_bitwise},
      {"minmax", "running maximum or minimum", fam_minmax},
      {"gather", "indirect loads through an index array", fam_gather},
      {"mixed", "arithmetic across two element widths", fam_mixed},
  };
  return kTemplates;
}

//===-- Manifest ----------------------------------------------------------===//

const ProgramRecord &DatasetManifest::record(const std::string &program_id) const {
  for (const auto &r : records)
    if (r.program_id == program_id)
      return r;
  throw Error(ErrorCode::InvalidArgument, "unknown program '" + program_id + "'");
}

nlohmann::json to_json(const DatasetManifest &m) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto &r : m.records) {
    nlohmann::json j = {{"program_id", r.program_id},
                        {"template_id", r.template_id},
                        {"path", r.path},
                        {"kernel_nest", r.kernel_nest},
                        {"features", to_json(r.features)},
                        {"snippet_digest", r.snippet_digest}};
    if (!r.duplicate_of.empty())
      j["duplicate_of"] = r.duplicate_of;
    recs.push_back(std::move(j));
  }
  return {{"seed", m.seed},
          {"count", m.count},
          {"train_fraction", m.train_fraction},
          {"train", m.train_ids},
          {"test", m.test_ids},
          {"records", std::move(recs)}};
}

DatasetManifest manifest_from_json(const nlohmann::json &j) {
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<uint64_t>();
    m.count = j.at("count").get<int>();
    m.train_fraction = j.at("train_fraction").get<double>();
    m.train_ids = j.at("train").get<std::vector<std::string>>();
    m.test_ids = j.at("test").get<std::vector<std::string>>();
    for (const auto &r : j.at("records")) {
      ProgramRecord p;
      p.program_id = r.at("program_id").get<std::string>();
      p.template_id = r.at("template_id").get<std::string>();
      p.path = r.at("path").get<std::string>();
      p.kernel_nest = r.at("kernel_nest").get<int>();
      p.features = sim_features_from_json(r.at("features"));
      p.snippet_digest = r.at("snippet_digest").get<std::string>();
      p.duplicate_of = r.value("duplicate_of", std::string());
      m.records.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::Schema, std::string("manifest: ") + e.what());
  }
  if (static_cast<int>(m.records.size()) != m.count)
    throw Error(ErrorCode::Schema, "manifest: record count does not match 'count'");
  return m;
}

DatasetManifest load_manifest(const std::string &path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded())
    throw Error(ErrorCode::Schema, path + ": not valid JSON");
  DatasetManifest m = manifest_from_json(j);
  m.root = std::filesystem::path(path).parent_path().string();
  return m;
}

void save_manifest(const DatasetManifest &m, const std::string &path) {
  write_file(path, to_json(m).dump(1) + "\n");
}

void assign_splits(DatasetManifest &m) {
  std::vector<size_t> order(m.records.size());
  for (size_t i = 0; i < order.size(); ++i)
    order[i] = i;
  Rng rng(mix_seed(m.seed, 0x5117));
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<size_t>(rng.below(i))]);
  size_t n_train = static_cast<size_t>(std::llround(m.train_fraction * static_cast<double>(order.size())));
  n_train = std::min(n_train, order.size());
  std::vector<size_t> train(order.begin(), order.begin() + static_cast<long>(n_train));
  std::vector<size_t> test(order.begin() + static_cast<long>(n_train), order.end());

  // Move one program of each family missing from test over from train,
  // swapping out a test program whose family is represented twice or more.
  std::map<std::string, int> in_test;
  for (size_t t : test)
    ++in_test[m.records[t].template_id];
  for (size_t ti = 0; ti < train.size(); ++ti) {
    const std::string &fam = m.records[train[ti]].template_id;
    if (in_test[fam] > 0)
      continue;
    for (size_t k = test.size(); k-- > 0;) {
      const std::string &other = m.records[test[k]].template_id;
      if (in_test[other] >= 2) {
        --in_test[other];
        ++in_test[fam];
        std::swap(train[ti], test[k]);
        break;
      }
    }
  }
  auto ids = [&](std::vector<size_t> idx) {
    std::sort(idx.begin(), idx.end());
    std::vector<std::string> out;
    for (size_t i : idx)
      out.push_back(m.records[i].program_id);
    return out;
  };
  m.train_ids = ids(train);
  m.test_ids = ids(test);
}

DatasetManifest generate(const std::vector<LoopTemplate> &templates, int count, uint64_t seed,
                         const std::string &out_dir, double train_fraction) {
  if (count < 1)
    throw Error(ErrorCode::InvalidArgument, "count must be >= 1");
  if (templates.empty())
    throw Error(ErrorCode::InvalidArgument, "no templates");
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "train fraction must lie in [0, 1]");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "programs");

  DatasetManifest m;
  m.seed = seed;
  m.count = count;
  m.train_fraction = train_fraction;
  m.root = out_dir;
  int digits = std::max(5, static_cast<int>(std::to_string(count - 1).size()));
  std::map<std::string, std::string> first_by_digest;
  for (int p = 0; p < count; ++p) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(p)));
    const LoopTemplate &tpl = templates[static_cast<size_t>(rng.below(templates.size()))];
    TemplateInstance inst = tpl.instantiate(rng);
    check_instance(inst, tpl.id);
    std::string num = std::to_string(p);
    ProgramRecord r;
    r.program_id = "p" + std::string(static_cast<size_t>(digits) - num.size(), '0') + num;
    r.template_id = tpl.id;
    r.path = "programs/" + r.program_id + ".c";
    std::string text = render_program(inst);

    SourceFile src;
    std::vector<LoopNest> nests;
    try {
      src = make_source(r.path, text);
      nests = extract_loop_nests(src);
    } catch (const Error &e) {
      throw Error(ErrorCode::TemplateInstantiationFailed,
                  "template " + tpl.id + " produced unparsable code: " + e.what());
    }
    if (nests.empty())
      throw Error(ErrorCode::TemplateInstantiationFailed, "template " + tpl.id + " has no loop");
    r.features = extract_sim_features(src, nests[0]);
    if (!(r.features == inst.features))
      throw Error(ErrorCode::TemplateInstantiationFailed,
                  "template " + tpl.id + " features " + to_json(inst.features).dump() +
                      " but extractor reports " + to_json(r.features).dump() + " for " +
                      r.program_id);
    r.snippet_digest = hex64(fnv1a64(normalize_identifiers(nests[0].embed_snippet).text));
    auto [it, fresh] = first_by_digest.emplace(r.snippet_digest, r.program_id);
    if (!fresh)
      r.duplicate_of = it->second;
    write_file((fs::path(out_dir) / r.path).string(), text);
    m.records.push_back(std::move(r));
  }
  assign_splits(m);
  save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  return m;
}

Program load_program(const DatasetManifest &m, const ProgramRecord &r) {
  namespace fs = std::filesystem;
  Program p;
  p.program_id = r.program_id;
  p.template_id = r.template_id;
  p.src = make_source(r.path, read_file((fs::path(m.root) / r.path).string()));
  auto nests = extract_loop_nests(p.src);
  if (r.kernel_nest < 0 || static_cast<size_t>(r.kernel_nest) >= nests.size())
    throw Error(ErrorCode::Schema, r.program_id + ": kernel nest out of range");
  p.nest = nests[static_cast<size_t>(r.kernel_nest)];
  return p;
}

std::vector<Program> load_programs(const DatasetManifest &m,
                                   const std::vector<std::string> &ids) {
  std::map<std::string, const ProgramRecord *> by_id;
  for (const auto &r : m.records)
    by_id[r.program_id] = &r;
  std::vector<Program> out;
  out.reserve(ids.size());
  for (const auto &id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw Error(ErrorCode::InvalidArgument, "unknown program '" + id + "'");
    out.push_back(load_program(m, *it->second));
  }
  return out;
}

double OptimumHistogram::percent(int index) const {
  return total == 0 ? 0.0 : 100.0 * counts.at(static_cast<size_t>(index)) / total;
}

int OptimumHistogram::mode() const {
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

OptimumHistogram report_optimum_distribution(const DatasetManifest &m,
                                             const std::map<std::string, Action> &best,
                                             const ActionSpace &space) {
  OptimumHistogram h{space, std::vector<int>(static_cast<size_t>(space.size()), 0), 0};
  for (const auto &r : m.records) {
    auto it = best.find(r.program_id);
    if (it == best.end())
      throw Error(ErrorCode::MissingOracleResult, "no oracle label for " + r.program_id);
    auto cell = space.index_of(it->second.vf, it->second.if_);
    if (!cell)
      throw Error(ErrorCode::InvalidArgument, "label of " + r.program_id + " is off the grid");
    ++h.counts[*cell];
    ++h.total;
  }
  return h;
}

} // namespace nvec
