#ifndef OSR_SERIALIZE_HPP
#define OSR_SERIALIZE_HPP

// Token-oriented text IO shared by the checkpoint formats. Reals are written as
// hexfloats so save/load round trips are bit-exact.

#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace osr::io {

void write_real(std::ostream& os, double v);
double read_real(std::istream& is);

/// "rows cols" followed by the entries in row-major order.
void write_matrix(std::ostream& os, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix(std::istream& is);

void write_vector(std::ostream& os, const Eigen::VectorXd& v);
Eigen::VectorXd read_vector(std::istream& is);

/// Reads one whitespace-delimited token and throws ParseError unless it equals
/// `expected`.
void expect_token(std::istream& is, std::string_view expected);

[[noreturn]] void throw_parse_failure(std::string_view what);

template <typename T>
T read_value(std::istream& is, std::string_view what) {
  T v{};
  if (!(is >> v)) throw_parse_failure(what);
  return v;
}

}  // namespace osr::io

#endif  // OSR_SERIALIZE_HPP
