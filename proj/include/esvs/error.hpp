#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace esvs {

/// Broad failure classes. The CLI maps these onto its exit codes.
enum class ErrorClass { Input, Numerical };

/// Base of every error raised by the library. `kind()` is a stable
/// machine-readable tag, e.g. "CutLocusError".
class Error : public std::runtime_error {
 public:
  Error(std::string kind, ErrorClass cls, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)), class_(cls) {}

  const std::string& kind() const noexcept { return kind_; }
  ErrorClass error_class() const noexcept { return class_; }

 private:
  std::string kind_;
  ErrorClass class_;
};

#define ESVS_DEFINE_ERROR(Name, Cls)                                  \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what)                            \
        : Error(#Name, ErrorClass::Cls, what) {}                      \
  };

ESVS_DEFINE_ERROR(CutLocusError, Numerical)
ESVS_DEFINE_ERROR(DuplicateEdgeError, Input)
ESVS_DEFINE_ERROR(DanglingVertexError, Input)
ESVS_DEFINE_ERROR(NotInitializedError, Input)
ESVS_DEFINE_ERROR(EmptyGraphError, Input)
ESVS_DEFINE_ERROR(MismatchedGraphError, Input)
ESVS_DEFINE_ERROR(DimensionMismatchError, Input)
ESVS_DEFINE_ERROR(DivergenceError, Numerical)
ESVS_DEFINE_ERROR(InsufficientOverlapError, Numerical)
ESVS_DEFINE_ERROR(DegenerateFitError, Numerical)
ESVS_DEFINE_ERROR(EmptyValidSetError, Numerical)
ESVS_DEFINE_ERROR(BehindCameraError, Numerical)
ESVS_DEFINE_ERROR(DegeneratePointError, Numerical)
ESVS_DEFINE_ERROR(ZeroVarianceError, Numerical)
ESVS_DEFINE_ERROR(FormatError, Input)
ESVS_DEFINE_ERROR(ConfigError, Input)

#undef ESVS_DEFINE_ERROR

/// Malformed line in a text format; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("ParseError", ErrorClass::Input,
              "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Raised when a spanning structure is requested over a graph that falls
/// apart into several pieces. Each component lists its vertex ids.
class DisconnectedGraphError : public Error {
 public:
  explicit DisconnectedGraphError(std::vector<std::vector<int>> components)
      : Error("DisconnectedGraphError", ErrorClass::Input,
              describe(components)),
        components_(std::move(components)) {}

  const std::vector<std::vector<int>>& components() const noexcept {
    return components_;
  }

 private:
  static std::string describe(const std::vector<std::vector<int>>& comps) {
    std::string s = "graph has " + std::to_string(comps.size()) +
                    " connected components:";
    for (const auto& c : comps) {
      s += " {";
      for (std::size_t k = 0; k < c.size(); ++k) {
        if (k) s += ",";
        s += std::to_string(c[k]);
      }
      s += "}";
    }
    return s;
  }

  std::vector<std::vector<int>> components_;
};

}  // namespace esvs
