//===- common.hpp - Errors, hashing and RNG shared by all modules --------===//
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nvec {

enum class ErrorCode : int {
  InvalidArgument = 1,
  Syntax,
  DimMismatch,
  EmptyBatch,
  Schema,
  StaleNest,
  AlreadyInjected,
  NoPragmaFound,
  NonPositiveTime,
  BackendUnavailable,
  BaselineCompileFailed,
  CompilerNotFound,
  CompileError,
  RunTimeout,
  TemplateInstantiationFailed,
  MissingOracleResult,
  EmptyModel,
  MissingModel,
  Io,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &message)
      : std::runtime_error(message), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

class SyntaxError : public Error {
public:
  SyntaxError(int line, int column, std::vector<std::string> expected,
              const std::string &found);
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }
  const std::vector<std::string> &expected() const noexcept { return expected_; }

private:
  int line_;
  int column_;
  std::vector<std::string> expected_;
};

/// 64-bit FNV-1a. Stable across platforms, used for digests and path ids.
constexpr uint64_t fnv1a64(std::string_view s,
                           uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t v);

/// Seeded generator with platform-independent derived distributions
/// (std:: distributions are implementation-defined).
class Rng {
public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n == 0 ? 0 : engine_() % n; }
  template <class T> const T &pick(const std::vector<T> &v) {
    return v[static_cast<size_t>(below(v.size()))];
  }

private:
  std::mt19937_64 engine_;
};

/// Mixes a base seed with a stream tag so independent consumers do not share
/// random sequences.
constexpr uint64_t mix_seed(uint64_t seed, uint64_t stream) noexcept {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string read_file(const std::string &path);
void write_file(const std::string &path, std::string_view contents);

} // namespace nvec
