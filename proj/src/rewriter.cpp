#include "nvec/rewriter.hpp"

#include "nvec/agent.hpp"

namespace nvec {
namespace {

size_t line_start(std::string_view text, size_t pos) {
  pos = std::min(pos, text.size());
  while (pos > 0 && text[pos - 1] != '\n')
    --pos;
  return pos;
}

size_t line_end(std::string_view text, size_t pos) {
  size_t e = text.find('\n', pos);
  return e == std::string_view::npos ? text.size() : e;
}

bool is_blank(char c) { return c == ' ' || c == '\t'; }

std::string_view leading_ws(std::string_view text, size_t ls) {
  size_t e = ls;
  while (e < text.size() && is_blank(text[e]))
    ++e;
  return text.substr(ls, e - ls);
}

/// True when [ls, line end) is whitespace + "#pragma clang loop ..." carrying
/// the framework marker.
bool is_framework_line(std::string_view text, size_t ls) {
  size_t le = line_end(text, ls);
  std::string_view line = text.substr(ls, le - ls);
  size_t p = 0;
  while (p < line.size() && is_blank(line[p]))
    ++p;
  line.remove_prefix(p);
  return line.starts_with("#pragma clang loop ") &&
         line.ends_with(std::string(" ") + std::string(kPragmaMarker));
}

} // namespace

std::string PragmaDirective::render() const {
  return "#pragma clang loop vectorize_width(" + std::to_string(vf) + ") interleave_count(" +
         std::to_string(if_) + ")";
}

std::string inject(std::string_view text, const LoopNest &nest, const PragmaDirective &d) {
  if (!is_pow2(d.vf) || !is_pow2(d.if_))
    throw Error(ErrorCode::InvalidArgument, "pragma factors must be powers of two");
  const size_t anchor = nest.pragma_anchor.byte_start;
  if (anchor < text.size()) {
    size_t ls = line_start(text, anchor);
    bool here = is_framework_line(text, ls) ||
                (text[anchor] == '\n' && is_framework_line(text, anchor + 1));
    bool above = ls > 0 && is_framework_line(text, line_start(text, ls - 1));
    if (here || above)
      throw Error(ErrorCode::AlreadyInjected, "a framework pragma is already present at " +
                                                  nest.nest_id);
  }
  if (fnv1a64(text) != nest.source_digest || anchor >= text.size())
    throw Error(ErrorCode::StaleNest, "source changed since nest " + nest.nest_id +
                                          " was extracted");

  size_t ls = line_start(text, anchor);
  std::string_view ind = leading_ws(text, ls);
  std::string pragma = d.render() + " " + std::string(kPragmaMarker);
  std::string out;
  out.reserve(text.size() + pragma.size() + 2 * ind.size() + 2);
  if (ls + ind.size() == anchor) {
    // The loop starts its line: add a line above it.
    out.append(text.substr(0, ls));
    out.append(ind).append(pragma).append("\n");
    out.append(text.substr(ls));
  } else {
    // Something precedes the loop on its line: break the line around the
    // pragma.
    out.append(text.substr(0, anchor));
    out.append("\n").append(ind).append(pragma).append("\n").append(ind);
    out.append(text.substr(anchor));
  }
  return out;
}

std::string remove_pragma(std::string_view text, const LoopNest &nest) {
  const size_t anchor = nest.pragma_anchor.byte_start;
  if (anchor < text.size()) {
    size_t ls = line_start(text, anchor);
    if (text[anchor] == '#' && is_framework_line(text, ls)) {
      size_t le = line_end(text, ls);
      return std::string(text.substr(0, ls)) +
             std::string(text.substr(std::min(le + 1, text.size())));
    }
    if (text[anchor] == '\n' && is_framework_line(text, anchor + 1)) {
      std::string_view ind = leading_ws(text, ls);
      size_t le = line_end(text, anchor + 1);
      size_t resume = le + 1 + ind.size();
      if (le < text.size() && resume <= text.size() && text.substr(le + 1, ind.size()) == ind)
        return std::string(text.substr(0, anchor)) + std::string(text.substr(resume));
    }
    if (ls > 0) {
      size_t prev = line_start(text, ls - 1);
      if (is_framework_line(text, prev))
        return std::string(text.substr(0, prev)) + std::string(text.substr(ls));
    }
  }
  throw Error(ErrorCode::NoPragmaFound, "no framework pragma at " + nest.nest_id);
}

} // namespace nvec
