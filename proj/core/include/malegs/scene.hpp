#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace malegs {

// One anisotropic 3D Gaussian. Covariance is kept factored as
// (scale, rotation) so it is positive definite by construction:
// Sigma = R * diag(scale)^2 * R^T.
struct Gaussian3D {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    Eigen::Vector3d scale = Eigen::Vector3d::Ones();      // components > 0
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    double opacity = 1.0;                                 // in (0, 1]
    Eigen::Vector3d base_color = Eigen::Vector3d::Zero(); // flat color, degree-0 only
    int class_id = 0;
    // N slots x C compressed language features; slot N-1 is the
    // self-appearance slot, slots 0..N-2 the novel appearances.
    Eigen::MatrixXd lang_features;

    Eigen::Matrix3d covariance() const {
        const Eigen::Matrix3d r = rotation.normalized().toRotationMatrix();
        return r * scale.cwiseProduct(scale).asDiagonal() * r.transpose();
    }
};

// Pinhole camera with a world-to-camera rigid transform.
struct Camera {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity(); // world-to-camera
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    Eigen::Vector2d focal = Eigen::Vector2d(100.0, 100.0);  // pixels
    Eigen::Vector2d principal_point = Eigen::Vector2d::Zero();
    int height = 0;
    int width = 0;
    double near_plane = 0.1;

    Eigen::Vector3d to_camera(const Eigen::Vector3d& p_world) const {
        return rotation * p_world + translation;
    }

    // Camera at `eye` looking toward `target`, y-down image convention.
    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                          const Eigen::Vector3d& up, const Eigen::Vector2d& focal,
                          int height, int width, double near_plane = 0.1);
};

// Screen-space footprint of a projected Gaussian.
struct Splat2D {
    Eigen::Vector2d center_px = Eigen::Vector2d::Zero();
    Eigen::Matrix2d conic = Eigen::Matrix2d::Identity(); // inverse 2D covariance, SPD
    double depth = 0.0;                                  // camera-space z
    double opacity = 0.0;
    int source_index = 0;
};

struct Scene {
    std::vector<Gaussian3D> gaussians;
    int appearance_dim = 0;    // d_a
    int feature_dim_high = 0;  // D
    int feature_dim_low = 0;   // C
    int num_slots = 0;         // N
};

// Minimum composite weight; contributions below this count as zero.
inline constexpr double kWeightCutoff = 1.0 / 255.0;
// Isotropic screen-space dilation added to the 2D covariance (pixels^2).
inline constexpr double kConicDilation = 0.3;

// EWA-style projection with the local affine Jacobian of the pinhole map
// evaluated at the Gaussian mean. Returns nullopt when the mean lies in
// front of the near plane. Throws on non-finite inputs.
std::optional<Splat2D> project_gaussian(const Gaussian3D& g, const Camera& cam);

// Ascending depth, ties broken by ascending source_index.
void depth_sort(std::vector<Splat2D>& splats);

// opacity * exp(-0.5 d^T conic d); values below kWeightCutoff report as 0.
double gaussian_weight_at(const Splat2D& s, const Eigen::Vector2d& pixel);

// MGS1 scene file: 16-byte header (magic "MGS1", u32 count, u32 N, u32 C)
// then per Gaussian little-endian f32 fields in declared order:
// position(3) scale(3) rotation wxyz(4) opacity(1) base_color(3)
// class_id(1) lang_features(N*C, slot-major). Bit-exact round-trip.
void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

// Digest of everything except lang_features, over the exact f32 bytes the
// MGS1 format would store. Field training must leave this unchanged.
uint64_t geometry_digest(const Scene& scene);

}  // namespace malegs
