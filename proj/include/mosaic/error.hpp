#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mosaic {

enum class ErrorKind {
  kDimension,
  kIndex,
  kContract,
  kDegenerate,
  kIo,
  kFormat,
  kVocabulary,
  kConfiguration,
  kGeneration,
  kDivergence,
  kData,
  kVisualization,
  kEpisode,
};

inline std::string_view kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kIndex: return "index";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kDegenerate: return "degenerate";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kVocabulary: return "vocabulary";
    case ErrorKind::kConfiguration: return "configuration";
    case ErrorKind::kGeneration: return "generation";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kData: return "data";
    case ErrorKind::kVisualization: return "visualization";
    case ErrorKind::kEpisode: return "episode";
  }
  return "unknown";
}

// Every failure the engine reports carries a kind so callers (and the CLI's
// single-line error output) can dispatch on it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace mosaic
