#ifndef OSR_COMMON_HPP
#define OSR_COMMON_HPP

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace osr {

/// Class ids are 1-based; the unknown class of a K-class problem is K + 1.
using ClassId = int;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for inputs that violate a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

using WarningHandler = std::function<void(std::string_view)>;

/// Routes a non-fatal diagnostic to the installed handler (stderr by default).
void warn(std::string_view message);

/// Installs `handler` and returns the previous one. An empty handler restores
/// the stderr default.
WarningHandler set_warning_handler(WarningHandler handler);

/// Collects warnings for the lifetime of the object.
class WarningCapture {
 public:
  WarningCapture();
  ~WarningCapture();
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }
  bool contains(std::string_view needle) const;

 private:
  std::vector<std::string> messages_;
  WarningHandler previous_;
};

/// Counter-based seed derivation (splitmix64 finalizer over the inputs).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

}  // namespace osr

#endif  // OSR_COMMON_HPP
