#include "malegs/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "binio.hpp"
#include "malegs/fnv.hpp"

namespace malegs {

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                       const Eigen::Vector3d& up, const Eigen::Vector2d& focal,
                       int height, int width, double near_plane) {
    const Eigen::Vector3d fwd = (target - eye).normalized();
    const Eigen::Vector3d right = fwd.cross(up).normalized();
    const Eigen::Vector3d down = fwd.cross(right).normalized();

    Camera cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = fwd.transpose();
    cam.translation = -cam.rotation * eye;
    cam.focal = focal;
    cam.principal_point = Eigen::Vector2d(width / 2.0, height / 2.0);
    cam.height = height;
    cam.width = width;
    cam.near_plane = near_plane;
    return cam;
}

std::optional<Splat2D> project_gaussian(const Gaussian3D& g, const Camera& cam) {
    if (!g.position.allFinite() || !g.scale.allFinite() ||
        !g.rotation.coeffs().allFinite() || !std::isfinite(g.opacity))
        throw std::invalid_argument("project_gaussian: non-finite Gaussian");
    if (cam.focal.minCoeff() <= 0.0 || cam.near_plane <= 0.0)
        throw std::invalid_argument("project_gaussian: invalid camera");

    const Eigen::Vector3d p = cam.to_camera(g.position);
    if (p.z() < cam.near_plane) return std::nullopt;

    const double z = p.z();
    const double fx = cam.focal.x();
    const double fy = cam.focal.y();

    // Local affine Jacobian of (fx*x/z + cx, fy*y/z + cy) at the mean.
    Eigen::Matrix<double, 2, 3> jac;
    jac << fx / z, 0.0, -fx * p.x() / (z * z),
           0.0, fy / z, -fy * p.y() / (z * z);

    const Eigen::Matrix3d cov_cam = cam.rotation * g.covariance() * cam.rotation.transpose();
    Eigen::Matrix2d cov2d = jac * cov_cam * jac.transpose();
    cov2d(0, 0) += kConicDilation;
    cov2d(1, 1) += kConicDilation;

    Splat2D s;
    s.center_px = Eigen::Vector2d(fx * p.x() / z + cam.principal_point.x(),
                                  fy * p.y() / z + cam.principal_point.y());
    s.conic = cov2d.inverse();
    // Force exact symmetry so downstream quadratic forms are well behaved.
    s.conic = 0.5 * (s.conic + s.conic.transpose().eval());
    s.depth = z;
    s.opacity = g.opacity;
    return s;
}

void depth_sort(std::vector<Splat2D>& splats) {
    std::sort(splats.begin(), splats.end(), [](const Splat2D& a, const Splat2D& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.source_index < b.source_index;
    });
}

double gaussian_weight_at(const Splat2D& s, const Eigen::Vector2d& pixel) {
    const Eigen::Vector2d d = pixel - s.center_px;
    const double q = d.dot(s.conic * d);
    const double w = s.opacity * std::exp(-0.5 * q);
    return w < kWeightCutoff ? 0.0 : w;
}

namespace {

void write_vec3f(std::ostream& os, const Eigen::Vector3d& v) {
    binio::write_f32(os, static_cast<float>(v.x()));
    binio::write_f32(os, static_cast<float>(v.y()));
    binio::write_f32(os, static_cast<float>(v.z()));
}

Eigen::Vector3d read_vec3f(std::istream& is) {
    const double x = binio::read_f32(is);
    const double y = binio::read_f32(is);
    const double z = binio::read_f32(is);
    return {x, y, z};
}

}  // namespace

void save_scene(const Scene& scene, const std::string& path) {
    auto os = binio::open_out(path);
    os.write("MGS1", 4);
    binio::write_u32(os, static_cast<uint32_t>(scene.gaussians.size()));
    binio::write_u32(os, static_cast<uint32_t>(scene.num_slots));
    binio::write_u32(os, static_cast<uint32_t>(scene.feature_dim_low));
    for (const auto& g : scene.gaussians) {
        write_vec3f(os, g.position);
        write_vec3f(os, g.scale);
        binio::write_f32(os, static_cast<float>(g.rotation.w()));
        binio::write_f32(os, static_cast<float>(g.rotation.x()));
        binio::write_f32(os, static_cast<float>(g.rotation.y()));
        binio::write_f32(os, static_cast<float>(g.rotation.z()));
        binio::write_f32(os, static_cast<float>(g.opacity));
        write_vec3f(os, g.base_color);
        binio::write_f32(os, static_cast<float>(g.class_id));
        for (int n = 0; n < scene.num_slots; ++n)
            for (int c = 0; c < scene.feature_dim_low; ++c)
                binio::write_f32(os, static_cast<float>(g.lang_features(n, c)));
    }
    if (!os) throw std::runtime_error("short write: " + path);
}

Scene load_scene(const std::string& path) {
    auto is = binio::open_in(path);
    binio::expect_magic(is, "MGS1", path);
    const uint32_t count = binio::read_u32(is);
    const uint32_t n_slots = binio::read_u32(is);
    const uint32_t c_dim = binio::read_u32(is);

    Scene scene;
    scene.num_slots = static_cast<int>(n_slots);
    scene.feature_dim_low = static_cast<int>(c_dim);
    scene.gaussians.resize(count);
    for (auto& g : scene.gaussians) {
        g.position = read_vec3f(is);
        g.scale = read_vec3f(is);
        const double qw = binio::read_f32(is);
        const double qx = binio::read_f32(is);
        const double qy = binio::read_f32(is);
        const double qz = binio::read_f32(is);
        g.rotation = Eigen::Quaterniond(qw, qx, qy, qz);
        g.opacity = binio::read_f32(is);
        g.base_color = read_vec3f(is);
        g.class_id = static_cast<int>(binio::read_f32(is));
        g.lang_features.resize(n_slots, c_dim);
        for (uint32_t n = 0; n < n_slots; ++n)
            for (uint32_t c = 0; c < c_dim; ++c)
                g.lang_features(n, c) = binio::read_f32(is);
    }
    if (!is) throw std::runtime_error("truncated scene: " + path);
    return scene;
}

uint64_t geometry_digest(const Scene& scene) {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](double v) {
        const float f = static_cast<float>(v);
        h = fnv1a64(&f, sizeof(f), h);
    };
    for (const auto& g : scene.gaussians) {
        for (int i = 0; i < 3; ++i) mix(g.position[i]);
        for (int i = 0; i < 3; ++i) mix(g.scale[i]);
        mix(g.rotation.w());
        mix(g.rotation.x());
        mix(g.rotation.y());
        mix(g.rotation.z());
        mix(g.opacity);
        for (int i = 0; i < 3; ++i) mix(g.base_color[i]);
        mix(g.class_id);
    }
    return h;
}

}  // namespace malegs
