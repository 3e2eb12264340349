#include "vps/shading.h"

namespace vps {

Vec3 render_sh(const Vec3& albedo, const Vec3& n_world, const Pose& pose, const Vec4& l) {
    const Vec3 n_cam = pose.R.transpose() * n_world;
    const double s = l.dot(sh_basis(n_cam));
    return albedo * s;
}

double pls_geometry(const Vec3& n_cam, const Vec3& x_cam) {
    const double d = x_cam.norm();
    if (d <= 1e-6)
        throw Error("render_pls: surface point at camera center");
    const double c = n_cam.dot(-x_cam);
    return c > 0.0 ? c / (d * d * d) : 0.0;
}

Vec3 render_pls(const Vec3& albedo, const Vec3& n_cam, const Vec3& x_cam, double psi) {
    return psi * pls_geometry(n_cam, x_cam) * albedo;
}

Vec3 shading_residual(LightModel model, const Vec3& I_sample, const Vec3& albedo,
                      const Vec3& n_world, const Vec3& x_world, const Pose& pose,
                      const LightState& light) {
    if (model == LightModel::SH) {
        const Vec3 n_cam = pose.R.transpose() * n_world;
        const Vec4 b = sh_basis(n_cam);
        Vec3 r;
        for (int c = 0; c < 3; ++c)
            r[c] = I_sample[c] - albedo[c] * light.sh.col(c).dot(b);
        return r;
    }
    const Vec3 x_cam = pose.world_to_cam(x_world);
    const Vec3 n_cam = pose.R.transpose() * n_world;
    return I_sample - render_pls(albedo, n_cam, x_cam, light.pls);
}

} // namespace vps
