#ifndef LFHN_ERROR_HPP
#define LFHN_ERROR_HPP

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace lfhn {

/// Base class for every error raised by the library.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or parameter extents that do not agree.
class shape_error : public error {
 public:
  using error::error;
};

/// Invalid configuration: bad hyperparameter, non-integral extent, unknown key.
class config_error : public error {
 public:
  using error::error;
};

/// Malformed file contents (checkpoint, image, manifest).
class format_error : public error {
 public:
  using error::error;
};

/// Problems with a dataset: naming convention, labels, I/O.
class data_error : public error {
 public:
  using error::error;
};

namespace detail {

template <typename... Args>
std::string concat_message(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

template <typename E, typename... Args>
[[noreturn]] void raise(Args&&... args) {
  throw E(concat_message(std::forward<Args>(args)...));
}

}  // namespace detail
}  // namespace lfhn

#endif  // LFHN_ERROR_HPP
