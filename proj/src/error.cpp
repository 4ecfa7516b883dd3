#include "msub/error.hpp"

#include <atomic>
#include <fstream>
#include <iostream>

#include "msub/binary_io.hpp"

namespace msub {

namespace {
std::atomic<bool> g_warnings{true};
}

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_input: return "invalid-input";
    case ErrorCode::degenerate_input: return "degenerate-input";
    case ErrorCode::training_diverged: return "training-diverged";
    case ErrorCode::numerical: return "numerical";
    case ErrorCode::io: return "io";
    case ErrorCode::checksum: return "checksum";
    case ErrorCode::unsupported_version: return "unsupported-version";
    case ErrorCode::not_a_bundle: return "not-a-bundle";
    case ErrorCode::missing_stage: return "missing-stage";
    case ErrorCode::not_found: return "not-found";
    case ErrorCode::not_ready: return "not-ready";
    case ErrorCode::outside: return "outside";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

void warn(const std::string& message) {
  if (g_warnings.load()) std::cerr << "warning: " << message << '\n';
}

void set_warnings_enabled(bool enabled) { g_warnings.store(enabled); }

namespace binio {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io, "write failed: " + path.string());
}

void write_file(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::vector<unsigned char>(text.begin(), text.end()));
}

}  // namespace binio
}  // namespace msub
