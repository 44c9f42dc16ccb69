#include "osr/serialize.hpp"

#include <cstdio>
#include <cstdlib>

#include "osr/common.hpp"

namespace osr::io {

void throw_parse_failure(std::string_view what) {
  throw ParseError("checkpoint: failed to read " + std::string(what));
}

void write_real(std::ostream& os, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  os << buf;
}

double read_real(std::istream& is) {
  std::string token;
  if (!(is >> token)) throw_parse_failure("real value");
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end != token.c_str() + token.size()) {
    throw ParseError("checkpoint: malformed real '" + token + "'");
  }
  return v;
}

void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  os << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) os << ' ';
      write_real(os, m(r, c));
    }
    os << '\n';
  }
}

Eigen::MatrixXd read_matrix(std::istream& is) {
  const auto rows = read_value<Eigen::Index>(is, "matrix rows");
  const auto cols = read_value<Eigen::Index>(is, "matrix cols");
  if (rows < 0 || cols < 0) throw ParseError("checkpoint: negative matrix shape");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = read_real(is);
  }
  return m;
}

void write_vector(std::ostream& os, const Eigen::VectorXd& v) {
  os << v.size() << '\n';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) os << ' ';
    write_real(os, v[i]);
  }
  os << '\n';
}

Eigen::VectorXd read_vector(std::istream& is) {
  const auto n = read_value<Eigen::Index>(is, "vector length");
  if (n < 0) throw ParseError("checkpoint: negative vector length");
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = read_real(is);
  return v;
}

void expect_token(std::istream& is, std::string_view expected) {
  std::string token;
  if (!(is >> token) || token != expected) {
    throw ParseError("checkpoint: expected '" + std::string(expected) + "' but found '" +
                     token + "'");
  }
}

}  // namespace osr::io
