// Child-process execution with a wall-clock limit.
#pragma once

#include <optional>
#include <string>
#include <vector>

namespace nvec {

struct ProcessResult {
  int exit_code = -1;
  bool timed_out = false;
  double wall_seconds = 0.0;
  std::string out; // captured stdout (truncated to 64 KiB)
  std::string err; // captured stderr (truncated to 64 KiB)
};

/// Runs argv[0] (searched on PATH) with the given arguments. The child is
/// killed once `timeout_seconds` elapses. Throws Error(Io) if it cannot be
/// started.
ProcessResult run_process(const std::vector<std::string> &argv, double timeout_seconds);

/// Resolves an executable name against PATH; absolute/relative paths are
/// checked directly.
std::optional<std::string> find_executable(const std::string &name);

} // namespace nvec
