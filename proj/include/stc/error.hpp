#pragma once

#include <stdexcept>
#include <string>

namespace stc {

// Error taxonomy shared by all modules. Each type maps to one failure class
// so callers (and the CLI) can react without parsing messages.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : Error {
  using Error::Error;
};
struct UnsupportedError : Error {
  using Error::Error;
};
struct ArgumentError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct TrainingError : Error {
  using Error::Error;
};

namespace detail {
inline void require(bool cond, const std::string& what) {
  if (!cond) throw ArgumentError(what);
}
}  // namespace detail

}  // namespace stc
