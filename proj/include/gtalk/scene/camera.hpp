#pragma once

#include <Eigen/Core>

namespace gtalk {

// Pinhole camera. The extrinsic maps world to camera coordinates
// (x right, y down, z forward). Pixel (col, row) has its center at
// (col + 0.5, row + 0.5) in image coordinates.
struct Camera {
    Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;

    Eigen::Matrix3d rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Eigen::Vector3d translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    // Camera center in world coordinates.
    Eigen::Vector3d center() const { return -rotation().transpose() * translation(); }

    // Throws DataError unless the rotation block is orthonormal and the resolution positive.
    void validate() const;

    // Camera at `eye` looking at `target`; `up` is the approximate world up direction.
    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                          double fx, double fy, int width, int height);
};

} // namespace gtalk
