#include "nvec/common.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace nvec {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
  case ErrorCode::InvalidArgument: return "InvalidArgument";
  case ErrorCode::Syntax: return "SyntaxError";
  case ErrorCode::DimMismatch: return "DimMismatch";
  case ErrorCode::EmptyBatch: return "EmptyBatch";
  case ErrorCode::Schema: return "SchemaError";
  case ErrorCode::StaleNest: return "StaleNest";
  case ErrorCode::AlreadyInjected: return "AlreadyInjected";
  case ErrorCode::NoPragmaFound: return "NoPragmaFound";
  case ErrorCode::NonPositiveTime: return "NonPositiveTime";
  case ErrorCode::BackendUnavailable: return "BackendUnavailable";
  case ErrorCode::BaselineCompileFailed: return "BaselineCompileFailed";
  case ErrorCode::CompilerNotFound: return "CompilerNotFound";
  case ErrorCode::CompileError: return "CompileError";
  case ErrorCode::RunTimeout: return "RunTimeout";
  case ErrorCode::TemplateInstantiationFailed: return "TemplateInstantiationFailed";
  case ErrorCode::MissingOracleResult: return "MissingOracleResult";
  case ErrorCode::EmptyModel: return "EmptyModel";
  case ErrorCode::MissingModel: return "MissingModel";
  case ErrorCode::Io: return "IoError";
  }
  return "Unknown";
}

static std::string syntax_message(int line, int column,
                                  const std::vector<std::string> &expected,
                                  const std::string &found) {
  std::ostringstream os;
  os << line << ":" << column << ": expected ";
  for (size_t i = 0; i < expected.size(); ++i) {
    if (i)
      os << (i + 1 == expected.size() ? " or " : ", ");
    os << "'" << expected[i] << "'";
  }
  os << " but found '" << found << "'";
  return os.str();
}

SyntaxError::SyntaxError(int line, int column, std::vector<std::string> expected,
                         const std::string &found)
    : Error(ErrorCode::Syntax, syntax_message(line, column, expected, found)),
      line_(line), column_(column), expected_(std::move(expected)) {}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string &path, std::string_view contents) {
  auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty())
    std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

} // namespace nvec
