#pragma once

#include "vps/errors.h"
#include "vps/geometry.h"
#include "vps/types.h"

namespace vps {

enum class LightModel { SH, PLS };

// Per-frame illumination state. For SH each column of sh is the 4-vector of
// one color channel; in shared mode all three columns are equal (the default,
// chromatic lighting is absorbed into albedo). For PLS a single scalar
// intensity per frame.
struct LightState {
    Eigen::Matrix<double, 4, 3> sh = Eigen::Matrix<double, 4, 3>::Zero();
    double pls = 1.0;

    static LightState ambient_sh(double a = 1.0) {
        LightState l;
        l.sh.row(0).setConstant(a);
        return l;
    }
    static LightState shared_sh(const Vec4& v) {
        LightState l;
        l.sh.col(0) = v;
        l.sh.col(1) = v;
        l.sh.col(2) = v;
        return l;
    }
    static LightState point_light(double psi) {
        LightState l;
        l.pls = psi;
        return l;
    }
    Vec4 sh_shared() const { return sh.col(0); }
};

// First-order SH basis (1, nx, ny, nz); normalization constants live in l.
inline Vec4 sh_basis(const Vec3& n) { return Vec4(1.0, n.x(), n.y(), n.z()); }

// rho * <l, SH(R^T n)> per channel, shared l across channels. Negative
// shading is deliberate: first-order SH is signed and clamping would kill
// gradients; images clamp at synthesis only.
Vec3 render_sh(const Vec3& albedo, const Vec3& n_world, const Pose& pose, const Vec4& l);

// Collocated point light: Psi * rho * max(<n_cam, -x_cam>, 0) / |x_cam|^3.
// Takes the camera-frame normal (n_cam = R^T n_world).
Vec3 render_pls(const Vec3& albedo, const Vec3& n_cam, const Vec3& x_cam, double psi);

// Geometric PLS factor max(<n_cam,-x_cam>,0)/|x_cam|^3 without Psi or rho.
double pls_geometry(const Vec3& n_cam, const Vec3& x_cam);

// r = I_sample - rho * M(x, X_i), per channel.
Vec3 shading_residual(LightModel model, const Vec3& I_sample, const Vec3& albedo,
                      const Vec3& n_world, const Vec3& x_world, const Pose& pose,
                      const LightState& light);

} // namespace vps
