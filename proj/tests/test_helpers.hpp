#pragma once

#include <Eigen/Dense>
#include <functional>
#include <random>

#include "malegs/scene.hpp"

// Central-difference oracle: d f / d x_i ~ (f(x+h e_i) - f(x-h e_i)) / 2h.
// Lives test-side only, independent of any analytic gradient path.
inline double central_difference(const std::function<double(double)>& f_of_component,
                                 double x, double h) {
    return (f_of_component(x + h) - f_of_component(x - h)) / (2.0 * h);
}

inline double rel_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-12});
    return std::abs(a - b) / denom;
}

// Small random scene for rasterizer and field tests: Gaussians scattered in
// front of a head-on camera.
inline malegs::Scene random_test_scene(uint64_t seed, int count, int slots, int channels) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0, 1);
    std::uniform_real_distribution<double> u(0, 1);
    malegs::Scene scene;
    scene.num_slots = slots;
    scene.feature_dim_low = channels;
    for (int i = 0; i < count; ++i) {
        malegs::Gaussian3D g;
        g.position = Eigen::Vector3d(1.2 * n(rng), 1.2 * n(rng), 8.0 + 2.0 * u(rng));
        g.scale = Eigen::Vector3d(0.2 + 0.4 * u(rng), 0.2 + 0.4 * u(rng), 0.2 + 0.4 * u(rng));
        g.rotation = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized();
        g.opacity = 0.3 + 0.65 * u(rng);
        g.base_color = Eigen::Vector3d(u(rng), u(rng), u(rng));
        g.class_id = i % 3;
        g.lang_features = Eigen::MatrixXd::Random(slots, channels);
        scene.gaussians.push_back(g);
    }
    return scene;
}

inline malegs::Camera head_on_camera(int size) {
    malegs::Camera cam;
    cam.focal = Eigen::Vector2d(1.3 * size, 1.3 * size);
    cam.principal_point = Eigen::Vector2d(size / 2.0, size / 2.0);
    cam.height = cam.width = size;
    cam.translation = Eigen::Vector3d::Zero();
    return cam;
}
