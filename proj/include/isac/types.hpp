// types.hpp - shared scalar/vector types and physical constants
#pragma once

#include <complex>
#include <Eigen/Dense>

namespace isac {

using Complex = std::complex<double>;
using Vec3 = Eigen::Vector3d;

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

inline double db_from_linear(double x) { return 10.0 * std::log10(x); }
inline double linear_from_db(double x) { return std::pow(10.0, x / 10.0); }

}  // namespace isac
