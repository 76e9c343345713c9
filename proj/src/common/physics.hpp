#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <numbers>

namespace lev {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

namespace constants {
inline constexpr double pi = std::numbers::pi;
inline constexpr double boltzmann = 1.380649e-23;          // J/K
inline constexpr double speed_of_light = 299792458.0;      // m/s
inline constexpr double vacuum_permittivity = 8.8541878128e-12;  // F/m
inline constexpr double elementary_charge = 1.602176634e-19;     // C
inline constexpr double standard_gravity = 9.80665;              // m/s^2
}  // namespace constants

}  // namespace lev
