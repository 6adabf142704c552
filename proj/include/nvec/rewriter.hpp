//===- rewriter.hpp - Pragma injection at the innermost loop -------------===//
#pragma once

#include "nvec/loop_ir.hpp"

#include <string>
#include <string_view>

namespace nvec {

struct PragmaDirective {
  int vf = 1;
  int if_ = 1;

  /// "#pragma clang loop vectorize_width(VF) interleave_count(IF)"
  std::string render() const;
};

/// Marker that tags framework-written pragmas.
inline constexpr std::string_view kPragmaMarker = "/*nv*/";

/// Inserts a tagged pragma line directly above the innermost loop of `nest`.
/// `text` must be the exact source the nest was extracted from.
std::string inject(std::string_view text, const LoopNest &nest, const PragmaDirective &d);

/// Removes the framework pragma that inject() placed for `nest`. Also accepts
/// a nest extracted from the injected text itself.
std::string remove_pragma(std::string_view text, const LoopNest &nest);

} // namespace nvec
