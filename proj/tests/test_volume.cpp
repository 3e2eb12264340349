#include <doctest.h>

#include <random>

#include "helpers.h"
#include "vps/volume.h"

using namespace vps;

TEST_SUITE_BEGIN("volume");

TEST_CASE("surface_point mapping") {
    VoxelRecord rec;
    rec.weight = 1.0;
    rec.psi = 0.0;
    rec.grad = Vec3(0, 0, 1);
    CHECK((surface_point(rec, Vec3(1, 2, 3), 0.1).value() - Vec3(1, 2, 3)).norm() == 0.0);

    rec.psi = 0.5;
    rec.grad = Vec3(1, 0, 0);
    CHECK((surface_point(rec, Vec3::Zero(), 1.0).value() - Vec3(-0.5, 0, 0)).norm() ==
          0.0);

    VoxelRecord untouched;
    CHECK_FALSE(surface_point(untouched, Vec3::Zero(), 0.1).has_value());
}

TEST_CASE("surface_point of analytic sphere grid lies on the sphere") {
    const VoxelGrid grid = test::sphere_grid(0.02, 4.0);
    double worst = 0.0;
    int n = 0;
    for (const Vec3i& idx : grid.surface_voxels(0.02 * 3.9)) {
        const auto x = surface_point(*grid.find(idx), grid.center(idx), grid.truncation());
        REQUIRE(x.has_value());
        worst = std::max(worst, std::abs(x->norm() - 1.0));
        ++n;
    }
    CHECK(n > 1000);
    CHECK(worst < 1e-9);
}

TEST_CASE("extrapolated_distance: voxel center, plane, sphere") {
    SUBCASE("exactly at a populated center") {
        VoxelGrid grid(0.02, Vec3::Zero(), 0.1);
        VoxelRecord rec;
        rec.psi = 0.042;
        rec.grad = Vec3(0, 0, 1);
        rec.weight = 1.0;
        grid.at_or_insert(Vec3i(3, -2, 5)) = rec;
        const auto d = extrapolated_distance(grid, grid.center(Vec3i(3, -2, 5)));
        REQUIRE(d.has_value());
        CHECK(d->d == doctest::Approx(0.042));
    }
    SUBCASE("planar field is extrapolated exactly") {
        const VoxelGrid grid = test::plane_grid(0.02, 5.0);
        const auto d = extrapolated_distance(grid, Vec3(0.003, 0.004, 0.017));
        REQUIRE(d.has_value());
        CHECK(d->d == doctest::Approx(0.017).epsilon(1e-9));
    }
    SUBCASE("sphere within first-order error bound") {
        const VoxelGrid grid = test::sphere_grid(0.02, 5.0);
        std::mt19937_64 rng(3);
        std::normal_distribution<double> N(0, 1);
        std::uniform_real_distribution<double> U(-0.06, 0.06);
        int checked = 0;
        for (int i = 0; i < 1000; ++i) {
            const Vec3 dir = Vec3(N(rng), N(rng), N(rng)).normalized();
            const Vec3 x = dir * (1.0 + U(rng));
            const auto d = extrapolated_distance(grid, x);
            REQUIRE(d.has_value());
            CHECK(std::abs(d->d - (x.norm() - 1.0)) < 0.01); // vs/2
            ++checked;
        }
        CHECK(checked == 1000);
    }
    SUBCASE("outside populated region") {
        const VoxelGrid grid = test::sphere_grid(0.02, 5.0);
        CHECK_FALSE(extrapolated_distance(grid, Vec3(3, 3, 3)).has_value());
    }
}

TEST_CASE("finite_diff_gradient on linear and constant fields") {
    VoxelGrid grid(0.02, Vec3::Zero(), 0.5);
    for (int x = -2; x <= 2; ++x)
        for (int y = -2; y <= 2; ++y)
            for (int z = -2; z <= 2; ++z) {
                VoxelRecord rec;
                rec.weight = 1.0;
                rec.psi = grid.center(Vec3i(x, y, z)).x();
                rec.grad = Vec3(1, 0, 0);
                grid.at_or_insert(Vec3i(x, y, z)) = rec;
            }
    const auto fd = finite_diff_gradient(grid, Vec3i(0, 0, 0));
    REQUIRE(fd.has_value());
    CHECK((fd->grad - Vec3(1, 0, 0)).norm() < 1e-12);

    for (auto& kv : grid.map()) kv.second.psi = 0.25;
    const auto fd0 = finite_diff_gradient(grid, Vec3i(0, 0, 0));
    REQUIRE(fd0.has_value());
    CHECK(fd0->grad.norm() < 1e-12);
    CHECK_FALSE(normal_from_gradient(grid, Vec3i(0, 0, 0)).has_value());

    CHECK_FALSE(finite_diff_gradient(grid, Vec3i(5, 5, 5)).has_value());
}

TEST_CASE("finite_diff_gradient forward fallback when backward neighbor missing") {
    VoxelGrid grid(0.1, Vec3::Zero(), 0.5);
    auto put = [&](const Vec3i& idx, double psi) {
        VoxelRecord rec;
        rec.weight = 1.0;
        rec.psi = psi;
        grid.at_or_insert(idx) = rec;
    };
    // center plus +x, -y, -z neighbors only
    put(Vec3i(0, 0, 0), 0.0);
    put(Vec3i(1, 0, 0), 0.1);
    put(Vec3i(0, -1, 0), -0.2);
    put(Vec3i(0, 0, -1), 0.05);
    const auto fd = finite_diff_gradient(grid, Vec3i(0, 0, 0));
    REQUIRE(fd.has_value());
    CHECK(fd->grad.x() == doctest::Approx(1.0));   // forward: (0.1-0)/0.1
    CHECK(fd->sign.x() == -1);
    CHECK(fd->grad.y() == doctest::Approx(2.0));   // backward: (0-(-0.2))/0.1
    CHECK(fd->sign.y() == 1);
    CHECK(fd->grad.z() == doctest::Approx(-0.5));  // backward: (0-0.05)/0.1
}

TEST_CASE("normals of sphere grid within 2 degrees of analytic") {
    const VoxelGrid grid = test::sphere_grid(0.02, 5.0);
    double worst = 0.0;
    for (const Vec3i& idx : grid.surface_voxels(0.02)) {
        const auto n = normal_from_gradient(grid, idx);
        REQUIRE(n.has_value());
        const Vec3 truth = grid.center(idx).normalized();
        worst = std::max(worst, std::acos(std::clamp(n->dot(truth), -1.0, 1.0)));
    }
    CHECK(worst < 2.0 * M_PI / 180.0);
}

TEST_CASE("subdivide: direct formula, plane exactness, sphere convergence order") {
    SUBCASE("single parent formula") {
        VoxelGrid grid(0.02, Vec3::Zero(), 0.1);
        VoxelRecord rec;
        rec.psi = 0.0;
        rec.grad = Vec3(0, 0, 1);
        rec.weight = 2.0;
        rec.albedo = Vec3(0.1, 0.2, 0.3);
        grid.at_or_insert(Vec3i(0, 0, 0)) = rec;
        const VoxelGrid fine = subdivide(grid);
        CHECK(fine.size() == 8);
        CHECK(fine.voxel_size() == doctest::Approx(0.01));
        // child s=(1,1,1) lives at fine index (1,1,1)
        const VoxelRecord* child = fine.find(Vec3i(1, 1, 1));
        REQUIRE(child != nullptr);
        CHECK(child->psi == doctest::Approx(0.005));
        CHECK((child->grad - rec.grad).norm() == 0.0);
        CHECK((child->albedo - rec.albedo).norm() == 0.0);
        CHECK(child->weight == doctest::Approx(2.0));
        CHECK(child->obs_count == 0);
        CHECK(child->intensity_sum.norm() == 0.0);
        // child centers sit at parent +- vs/4
        CHECK((fine.center(Vec3i(1, 1, 1)) - Vec3(0.015, 0.015, 0.015)).norm() < 1e-15);
        CHECK((fine.center(Vec3i(0, 0, 0)) - Vec3(0.005, 0.005, 0.005)).norm() < 1e-15);
    }
    SUBCASE("plane SDF children exact and on-plane") {
        const VoxelGrid grid = test::plane_grid(0.02, 5.0);
        const VoxelGrid fine = subdivide(grid);
        const AnalyticScene plane = test::plane_scene();
        double worst = 0.0, worst_surface = 0.0;
        for (const auto& kv : fine.map()) {
            const Vec3 c = fine.center(kv.first);
            worst = std::max(worst, std::abs(kv.second.psi - plane.sdf(c)));
            const auto x = surface_point(kv.second, c, fine.truncation());
            if (x) worst_surface = std::max(worst_surface, std::abs(x->z()));
        }
        CHECK(worst < 1e-9);
        CHECK(worst_surface < 1e-9);
    }
    SUBCASE("sphere: halving voxel size quarters the max child error") {
        auto max_child_error = [](double vs) {
            const VoxelGrid grid = test::grid_from_scene(test::unit_sphere_scene(), vs,
                                                         3.0 * vs, Vec3(-1.3, -1.3, -1.3),
                                                         Vec3(1.3, 1.3, 1.3));
            const VoxelGrid fine = subdivide(grid);
            double worst = 0.0;
            for (const auto& kv : fine.map())
                worst = std::max(worst,
                                 std::abs(kv.second.psi -
                                          (fine.center(kv.first).norm() - 1.0)));
            return worst;
        };
        const double e1 = max_child_error(0.04);
        const double e2 = max_child_error(0.02);
        CHECK(e1 / e2 >= 3.5);
    }
}

TEST_CASE("eikonal residual of children stays within O(vs) of parents") {
    const double vs = 0.02;
    const VoxelGrid grid = test::sphere_grid(vs, 4.0);
    auto max_resid = [](const VoxelGrid& g, double band) {
        double worst = 0.0;
        for (const Vec3i& idx : g.surface_voxels(band)) {
            const auto fd = finite_diff_gradient(g, idx);
            if (fd) worst = std::max(worst, std::abs(fd->grad.norm() - 1.0));
        }
        return worst;
    };
    const double parent = max_resid(grid, 2.0 * vs);
    const VoxelGrid fine = subdivide(grid, 3.0 * vs);
    const double child = max_resid(fine, 2.0 * fine.voxel_size());
    CHECK(child <= parent + 4.0 * vs);
}

TEST_CASE("surface_voxels: empty grid, plane layers, sphere count estimate") {
    CHECK(VoxelGrid(0.02, Vec3::Zero(), 0.1).surface_voxels(0.02).empty());

    const double vs = 0.02;
    const VoxelGrid plane = test::plane_grid(vs, 5.0);
    // plane z=0 sits between voxel-center layers at z = +-vs/2
    for (const Vec3i& idx : plane.surface_voxels(vs))
        CHECK((idx.z() == 0 || idx.z() == -1));

    const VoxelGrid sphere = test::sphere_grid(vs, 5.0);
    const double count = double(sphere.surface_voxels(vs).size());
    const double estimate = 4.0 * M_PI / (vs * vs); // area / vs^2
    CHECK(count > estimate / 4.0);
    CHECK(count < estimate * 4.0);
}

TEST_CASE("surface_voxels order is deterministic lexicographic") {
    const VoxelGrid grid = test::sphere_grid(0.04, 3.0);
    const auto a = grid.surface_voxels(0.04);
    for (size_t i = 1; i < a.size(); ++i) CHECK(lex_less(a[i - 1], a[i]));
}

TEST_CASE("GSDF1 checkpoint round trip") {
    const VoxelGrid grid = test::sphere_grid(0.04, 3.0);
    const std::string path = "/tmp/vps_test_grid.gsdf";
    save_grid(grid, path);
    const VoxelGrid back = load_grid(path);
    REQUIRE(back.size() == grid.size());
    CHECK(back.voxel_size() == doctest::Approx(grid.voxel_size()));
    CHECK(back.truncation() == doctest::Approx(grid.truncation()));
    for (const Vec3i& idx : grid.sorted_indices()) {
        const VoxelRecord* a = grid.find(idx);
        const VoxelRecord* b = back.find(idx);
        REQUIRE(b != nullptr);
        CHECK(std::abs(a->psi - b->psi) < 1e-6);              // f32 rounding
        CHECK((a->grad - b->grad).norm() < 1e-6);
        CHECK((a->albedo - b->albedo).norm() < 1e-6);
    }
    CHECK_THROWS_AS(load_grid("/tmp/does_not_exist.gsdf"), IoError);
}

TEST_CASE("nearest_index rounding, ties toward lower index") {
    VoxelGrid grid(1.0, Vec3::Zero(), 1.0);
    // center of voxel 0 is (0.5,0.5,0.5); x=1.0 is equidistant to voxels 0 and 1
    CHECK(grid.nearest_index(Vec3(1.0, 1.0, 1.0)) == Vec3i(0, 0, 0));
    CHECK(grid.nearest_index(Vec3(1.01, 1.01, 1.01)) == Vec3i(1, 1, 1));
    CHECK(grid.nearest_index(Vec3(0.99, 0.2, 0.2)) == Vec3i(0, 0, 0));
}

TEST_SUITE_END();
