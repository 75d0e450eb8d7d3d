#pragma once

#include <array>
#include <cmath>

#include "loc3d/common.hpp"

namespace loc3d {

// 3x3 matrix, row-major. Just enough linear algebra for rotations/affines.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return Mat3{}; }

  static Mat3 diag(double a, double b, double c) {
    return Mat3{{a, 0, 0, 0, b, 0, 0, 0, c}};
  }

  static Mat3 rot_x(double rad) {
    const double c = std::cos(rad), s = std::sin(rad);
    return Mat3{{1, 0, 0, 0, c, -s, 0, s, c}};
  }
  static Mat3 rot_y(double rad) {
    const double c = std::cos(rad), s = std::sin(rad);
    return Mat3{{c, 0, s, 0, 1, 0, -s, 0, c}};
  }
  static Mat3 rot_z(double rad) {
    const double c = std::cos(rad), s = std::sin(rad);
    return Mat3{{c, -s, 0, s, c, 0, 0, 0, 1}};
  }

  // Euler rotation applied in x, then y, then z order: R = Rz * Ry * Rx.
  static Mat3 euler_xyz(double rx, double ry, double rz) {
    return rot_z(rz).mul(rot_y(ry)).mul(rot_x(rx));
  }

  Mat3 mul(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += m[std::size_t(3 * i + k)] * o.m[std::size_t(3 * k + j)];
        r.m[std::size_t(3 * i + j)] = acc;
      }
    return r;
  }

  Vec3 apply(const Vec3& v) const {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
  }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  Mat3 inverse() const {
    const double d = det();
    require(std::abs(d) > 1e-300, "Mat3::inverse: singular matrix");
    const double id = 1.0 / d;
    Mat3 r;
    r.m[0] = (m[4] * m[8] - m[5] * m[7]) * id;
    r.m[1] = (m[2] * m[7] - m[1] * m[8]) * id;
    r.m[2] = (m[1] * m[5] - m[2] * m[4]) * id;
    r.m[3] = (m[5] * m[6] - m[3] * m[8]) * id;
    r.m[4] = (m[0] * m[8] - m[2] * m[6]) * id;
    r.m[5] = (m[2] * m[3] - m[0] * m[5]) * id;
    r.m[6] = (m[3] * m[7] - m[4] * m[6]) * id;
    r.m[7] = (m[1] * m[6] - m[0] * m[7]) * id;
    r.m[8] = (m[0] * m[4] - m[1] * m[3]) * id;
    return r;
  }

  Mat3 transpose() const {
    return Mat3{{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}};
  }
};

inline double deg_to_rad(double d) { return d * M_PI / 180.0; }

}  // namespace loc3d
