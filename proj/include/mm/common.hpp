#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mm {

// Library-wide convention: data matrices are D x N with one observation per
// column.  Images are H x W matrices with values in [0, 1].
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

using std::size_t;
using u64 = std::uint64_t;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLn2 = 0.69314718055994530942;

}  // namespace mm
