#pragma once

#include <charconv>
#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace fiberflow {

using cd = std::complex<double>;

/// Largest chart or embedding dimension a model may use.
inline constexpr int kMaxCoords = 8;
/// Largest supported bundle rank.
inline constexpr int kMaxRank = 16;

using Coords = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxCoords, 1>;
using CMatrix = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxRank, kMaxRank>;
using CVector = Eigen::Matrix<cd, Eigen::Dynamic, 1, 0, kMaxRank, 1>;

/// Raised for invalid arguments, unsupported model/potential combinations and
/// numerical failures. The message names the offending quantity.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& message) {
  if (!ok) throw Error(message);
}

inline constexpr double kPi = 3.14159265358979323846;

/// Shortest decimal text that parses back to the same double.
inline std::string formatNumber(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

}  // namespace fiberflow
