#include "gtalk/scene/camera.hpp"

#include "gtalk/util/error.hpp"

#include <Eigen/Geometry>

namespace gtalk {

void Camera::validate() const {
    if (width <= 0 || height <= 0) throw DataError("camera resolution must be positive");
    if (!(fx > 0.0) || !(fy > 0.0)) throw DataError("camera focal lengths must be positive");
    const Eigen::Matrix3d r = rotation();
    const double err = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!(err < 1e-6)) throw DataError("camera extrinsic rotation is not orthonormal");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                       double fx, double fy, int width, int height) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Camera cam;
    Eigen::Matrix3d r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    cam.world_to_camera.setIdentity();
    cam.world_to_camera.topLeftCorner<3, 3>() = r;
    cam.world_to_camera.topRightCorner<3, 1>() = -r * eye;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.width = width;
    cam.height = height;
    return cam;
}

} // namespace gtalk
