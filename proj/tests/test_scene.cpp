#include <doctest.h>

#include <Eigen/Geometry>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "malegs/scene.hpp"

using namespace malegs;

namespace {

Gaussian3D unit_gaussian() {
    Gaussian3D g;
    g.scale = Eigen::Vector3d::Ones();
    g.rotation = Eigen::Quaterniond::Identity();
    g.opacity = 1.0;
    g.lang_features = Eigen::MatrixXd::Zero(1, 1);
    return g;
}

}  // namespace

TEST_CASE("identity factorization gives identity covariance") {
    Gaussian3D g = unit_gaussian();
    CHECK((g.covariance() - Eigen::Matrix3d::Identity()).norm() == doctest::Approx(0.0));
}

TEST_CASE("projection of isotropic gaussian at depth 10 with focal 100") {
    Gaussian3D g = unit_gaussian();
    g.position = Eigen::Vector3d(0, 0, 10);

    Camera cam;
    cam.focal = Eigen::Vector2d(100, 100);
    cam.principal_point = Eigen::Vector2d(32, 32);
    cam.height = cam.width = 64;

    auto splat = project_gaussian(g, cam);
    REQUIRE(splat.has_value());
    // J ~ diag(10, 10) so the 2D covariance is diag(100, 100) plus dilation.
    const Eigen::Matrix2d cov = splat->conic.inverse();
    CHECK(cov(0, 0) == doctest::Approx(100.0 + kConicDilation).epsilon(1e-9));
    CHECK(cov(1, 1) == doctest::Approx(100.0 + kConicDilation).epsilon(1e-9));
    CHECK(std::abs(cov(0, 1)) < 1e-9);
    CHECK(splat->depth == doctest::Approx(10.0));
    CHECK(splat->center_px.x() == doctest::Approx(32.0));
}

TEST_CASE("gaussian behind the near plane is culled") {
    Gaussian3D g = unit_gaussian();
    g.position = Eigen::Vector3d(0, 0, 0.01);
    Camera cam;
    cam.near_plane = 0.1;
    cam.height = cam.width = 8;
    CHECK(!project_gaussian(g, cam).has_value());
}

TEST_CASE("non-finite inputs are rejected") {
    Gaussian3D g = unit_gaussian();
    g.position.x() = std::numeric_limits<double>::quiet_NaN();
    Camera cam;
    cam.height = cam.width = 8;
    CHECK_THROWS_AS(project_gaussian(g, cam), std::invalid_argument);
}

TEST_CASE("depth sort is ascending with index tie-break") {
    auto splat_at = [](double depth, int idx) {
        Splat2D s;
        s.depth = depth;
        s.source_index = idx;
        return s;
    };
    SUBCASE("plain sort") {
        std::vector<Splat2D> splats{splat_at(3, 0), splat_at(1, 1), splat_at(2, 2)};
        depth_sort(splats);
        CHECK(splats[0].source_index == 1);
        CHECK(splats[1].source_index == 2);
        CHECK(splats[2].source_index == 0);
    }
    SUBCASE("ties break by source index") {
        std::vector<Splat2D> splats{splat_at(1, 5), splat_at(1, 2)};
        depth_sort(splats);
        CHECK(splats[0].source_index == 2);
        CHECK(splats[1].source_index == 5);
    }
    SUBCASE("empty list") {
        std::vector<Splat2D> splats;
        depth_sort(splats);
        CHECK(splats.empty());
    }
}

TEST_CASE("gaussian weight at the center equals the opacity") {
    Splat2D s;
    s.center_px = Eigen::Vector2d(4, 4);
    s.opacity = 0.8;
    CHECK(gaussian_weight_at(s, Eigen::Vector2d(4, 4)) == doctest::Approx(0.8));
}

TEST_CASE("gaussian weight follows exp(-d^2/2) for identity conic") {
    Splat2D s;
    s.opacity = 1.0;
    const double w = gaussian_weight_at(s, Eigen::Vector2d(2, 0));
    CHECK(w == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
}

TEST_CASE("weights below the cutoff report as zero") {
    Splat2D s;
    s.opacity = 1.0;
    // |d| = 4 gives exp(-8) ~ 3.4e-4 < 1/255.
    CHECK(gaussian_weight_at(s, Eigen::Vector2d(4, 0)) == 0.0);
}

TEST_CASE("weight decreases monotonically along rays until the cutoff") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.2, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        Splat2D s;
        Eigen::Matrix2d m;
        m << u(rng), 0.3 * u(rng), 0, u(rng);
        s.conic = m * m.transpose() + 0.05 * Eigen::Matrix2d::Identity();
        s.opacity = 0.5 + 0.25 * u(rng);
        const Eigen::Vector2d dir = Eigen::Vector2d(u(rng), u(rng)).normalized();
        double prev = gaussian_weight_at(s, s.center_px);
        for (double t = 0.1; t < 6.0; t += 0.1) {
            const double w = gaussian_weight_at(s, s.center_px + t * dir);
            if (w == 0.0) break;
            CHECK(w < prev);
            prev = w;
        }
    }
}

TEST_CASE("conic eigenvalues survive a joint world/camera rotation") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
        Gaussian3D g;
        g.position = Eigen::Vector3d(n(rng), n(rng), 8 + std::abs(n(rng)));
        g.scale = Eigen::Vector3d(0.3 + std::abs(n(rng)), 0.3 + std::abs(n(rng)),
                                  0.3 + std::abs(n(rng)));
        g.rotation = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized();
        g.opacity = 0.9;

        Camera cam;
        cam.focal = Eigen::Vector2d(90, 90);
        cam.principal_point = Eigen::Vector2d(32, 32);
        cam.height = cam.width = 64;

        const Eigen::Quaterniond q0 =
            Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized();
        const Eigen::Matrix3d r0 = q0.toRotationMatrix();

        Gaussian3D g2 = g;
        g2.position = r0 * g.position;
        g2.rotation = q0 * g.rotation;
        Camera cam2 = cam;
        cam2.rotation = cam.rotation * r0.transpose();

        auto a = project_gaussian(g, cam);
        auto b = project_gaussian(g2, cam2);
        REQUIRE(a.has_value());
        REQUIRE(b.has_value());
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> ea(a->conic), eb(b->conic);
        CHECK(ea.eigenvalues()[0] == doctest::Approx(eb.eigenvalues()[0]).epsilon(1e-6));
        CHECK(ea.eigenvalues()[1] == doctest::Approx(eb.eigenvalues()[1]).epsilon(1e-6));
    }
}

TEST_CASE("uniform world scaling at fixed focal leaves the conic unchanged") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
        Gaussian3D g;
        g.position = Eigen::Vector3d(n(rng), n(rng), 9 + std::abs(n(rng)));
        g.scale = Eigen::Vector3d(0.2 + std::abs(n(rng)) * 0.3, 0.2 + std::abs(n(rng)) * 0.3,
                                  0.2 + std::abs(n(rng)) * 0.3);
        g.rotation = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized();

        Camera cam;
        cam.translation = Eigen::Vector3d(n(rng), n(rng), n(rng));
        cam.focal = Eigen::Vector2d(85, 85);
        cam.height = cam.width = 64;

        const double s = 2.7;
        Gaussian3D gs = g;
        gs.position *= s;
        gs.scale *= s;
        Camera cams = cam;
        cams.translation *= s;

        auto a = project_gaussian(g, cam);
        auto b = project_gaussian(gs, cams);
        REQUIRE(a.has_value());
        REQUIRE(b.has_value());
        CHECK((a->conic - b->conic).norm() < 1e-6 * a->conic.norm());
        CHECK(a->center_px.isApprox(b->center_px, 1e-9));
    }
}

TEST_CASE("scene serialization round-trips bit-exactly") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> n(0, 1);
    Scene scene;
    scene.num_slots = 2;
    scene.feature_dim_low = 3;
    for (int i = 0; i < 17; ++i) {
        Gaussian3D g;
        g.position = Eigen::Vector3d(n(rng), n(rng), n(rng));
        g.scale = Eigen::Vector3d::Ones() * (0.1 + std::abs(n(rng)));
        g.rotation = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized();
        g.opacity = 0.5;
        g.base_color = Eigen::Vector3d(0.2, 0.4, 0.6);
        g.class_id = i % 3;
        g.lang_features = Eigen::MatrixXd::Random(2, 3);
        scene.gaussians.push_back(g);
    }

    const std::string p1 = (std::filesystem::temp_directory_path() / "malegs_rt1.mgs1").string();
    const std::string p2 = (std::filesystem::temp_directory_path() / "malegs_rt2.mgs1").string();
    save_scene(scene, p1);
    Scene loaded = load_scene(p1);
    REQUIRE(loaded.gaussians.size() == scene.gaussians.size());
    CHECK(loaded.num_slots == 2);
    CHECK(loaded.feature_dim_low == 3);
    save_scene(loaded, p2);

    std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    const std::string bb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
    CHECK(!ba.empty());
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}
