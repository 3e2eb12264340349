#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace vps {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec3i = Eigen::Vector3i;

using Vec3f = Eigen::Vector3f;

inline Mat3 skew(const Vec3& a) {
    Mat3 s;
    s <<     0, -a.z(),  a.y(),
         a.z(),      0, -a.x(),
        -a.y(),  a.x(),      0;
    return s;
}

} // namespace vps
