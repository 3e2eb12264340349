#include "vps/refine.h"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>

#include "vps/parallel.h"

namespace vps {

namespace {

// Everything the residual of one voxel needs, frozen at the sweep state.
struct VoxelCtx {
    Vec3i idx;
    Vec3 center = Vec3::Zero();
    double psi = 0.0;
    Vec3 g = Vec3::Zero();      // unit gradient: surface normal + mapping direction
    Vec3 x = Vec3::Zero();      // evaluation point (Eq.-(9) surface point or center)
    Vec3 albedo = Vec3::Zero();
    bool fd_ok = false;
    Vec3 u = Vec3::Zero();          // finite-difference gradient (per meter)
    Vec3 du_dpsi = Vec3::Zero();    // d u / d psi_j = signs / voxel_size
    Vec3 dg_dpsi = Vec3::Zero();    // d normalize(u) / d psi_j
    Vec3 dx_dpsi = Vec3::Zero();
    double r_eik = 0.0;
    double J_eik = 0.0;
};

VoxelCtx make_ctx(const VoxelGrid& grid, const Vec3i& idx, const VoxelRecord& rec,
                  EvalAt eval_at) {
    VoxelCtx c;
    c.idx = idx;
    c.center = grid.center(idx);
    c.psi = rec.psi;
    c.g = rec.grad;
    c.albedo = rec.albedo;
    c.x = (eval_at == EvalAt::SurfacePoint) ? Vec3(c.center - c.psi * c.g) : c.center;
    if (auto fd = finite_diff_gradient(grid, idx)) {
        const double un = fd->grad.norm();
        if (un > 1e-6) {
            c.fd_ok = true;
            c.u = fd->grad;
            c.du_dpsi = fd->sign.cast<double>() / grid.voxel_size();
            const Vec3 gn = c.u / un;
            c.dg_dpsi = (Mat3::Identity() - gn * gn.transpose()) * c.du_dpsi / un;
            c.dx_dpsi = (eval_at == EvalAt::SurfacePoint)
                            ? Vec3(-c.g - c.psi * c.dg_dpsi)
                            : Vec3::Zero();
            c.r_eik = c.u.squaredNorm() - 1.0;
            c.J_eik = 2.0 * c.u.dot(c.du_dpsi);
        }
    }
    return c;
}

struct PairData {
    bool valid = false;
    Vec2 px = Vec2::Zero();
    Vec3 q = Vec3::Zero(); // camera-frame evaluation point
    Vec3 I = Vec3::Zero();
    Eigen::Matrix<double, 2, 3> img_grad = Eigen::Matrix<double, 2, 3>::Zero();
    Eigen::Matrix<double, 2, 3> dpi = Eigen::Matrix<double, 2, 3>::Zero();
    Vec3 M = Vec3::Zero(); // shading per channel
    Vec3 r = Vec3::Zero();
    double G = 0.0; // PLS geometric factor
    double A = 0.0; // attenuation |q|^3
    bool backfacing = false;
};

struct BilinearSampler {
    const ColorImage* img;
    std::optional<PixelSample> operator()(const Vec2& px) const {
        return sample_bilinear(*img, px);
    }
};

// frozen_A: when non-null, the PLS attenuation is held at this value (lagged
// attenuation); the shading value then matches what the lagged Jacobians
// differentiate. Production passes nullptr (attenuation evaluated in place).
template <class Sampler>
PairData eval_pair(const VoxelCtx& c, const Pose& pose, const LightState& light,
                   LightModel model, const Intrinsics& K, const Sampler& sampler,
                   double min_z, const double* frozen_A = nullptr) {
    PairData p;
    const Vec3 q = pose.world_to_cam(c.x);
    if (q.z() <= min_z) return p;
    const Vec2 px = project(K, q);
    const auto s = sampler(px);
    if (!s) return p;
    p.valid = true;
    p.q = q;
    p.px = px;
    p.I = s->value;
    p.img_grad = s->grad;
    p.dpi = project_jacobian(K, q);
    if (model == LightModel::SH) {
        const Vec4 B = sh_basis(c.g); // world normal against l_hat = R l
        for (int ch = 0; ch < 3; ++ch) p.M[ch] = light.sh.col(ch).dot(B);
    } else {
        const Vec3 m = pose.R.transpose() * c.g;
        const double d = q.norm();
        p.A = frozen_A ? *frozen_A : d * d * d;
        const double cosine = m.dot(-q);
        if (cosine <= 0.0) {
            p.backfacing = true;
            p.G = 0.0;
        } else {
            p.G = cosine / p.A;
        }
        p.M.setConstant(light.pls * p.G);
    }
    p.r = p.I - c.albedo.cwiseProduct(p.M);
    return p;
}

struct PairJacobian {
    Vec3 d_rho;                            // d r_ch / d rho_ch = -M_ch
    Eigen::Matrix<double, 3, 4> d_light;   // SH: d r_ch / d lhat_ch; PLS: col 0 = d r_ch / d Psi
    Vec3 d_psi;                            // diagonal term, lagged attenuation
    Eigen::Matrix<double, 3, 6> d_pose;    // [d/d omega | d/d t], right perturbation
};

// Analytic Jacobians of r = I(pi(q)) - rho*M at the state captured in c and p.
PairJacobian pair_jacobian(const VoxelCtx& c, const PairData& p, const Pose& pose,
                           const LightState& light, LightModel model) {
    PairJacobian J;
    J.d_rho = -p.M;

    const Mat3 Rt = pose.R.transpose();
    const Vec3 x_minus_t = c.x - pose.t;

    const Vec3 dq_dpsi = Rt * c.dx_dpsi;
    const Mat3 dq_domega = skew(p.q);
    const Mat3 dq_dt = -Rt;

    double dM_dpsi = 0.0;
    Eigen::Matrix<double, 1, 3> dM_dt = Eigen::Matrix<double, 1, 3>::Zero();
    if (model == LightModel::PLS && !p.backfacing) {
        const double psi_over_A = light.pls / p.A;
        if (c.fd_ok)
            dM_dpsi = psi_over_A * (-c.dg_dpsi.dot(x_minus_t) - c.g.dot(c.dx_dpsi));
        dM_dt = psi_over_A * c.g.transpose(); // lagged attenuation
    }

    for (int ch = 0; ch < 3; ++ch) {
        const Eigen::Matrix<double, 1, 3> img_row =
            p.img_grad.col(ch).transpose() * p.dpi; // 1x3, d I_ch / d q

        // light
        if (model == LightModel::SH) {
            J.d_light.row(ch) = -c.albedo[ch] * sh_basis(c.g).transpose();
        } else {
            J.d_light.row(ch).setZero();
            J.d_light(ch, 0) = p.backfacing ? 0.0 : -c.albedo[ch] * p.G;
        }

        // psi (diagonal)
        double dpsi = img_row.dot(dq_dpsi);
        if (model == LightModel::SH && c.fd_ok) {
            const double dM = light.sh.col(ch).tail<3>().dot(c.dg_dpsi);
            dpsi -= c.albedo[ch] * dM;
        } else if (model == LightModel::PLS) {
            dpsi -= c.albedo[ch] * dM_dpsi;
        }
        J.d_psi[ch] = dpsi;

        // pose: SH shading is pose-free under the l_hat parameterization; PLS
        // shading is rotation-invariant under right perturbation, only the
        // translation term survives (with lagged attenuation).
        J.d_pose.row(ch).head<3>() = img_row * dq_domega;
        J.d_pose.row(ch).tail<3>() = img_row * dq_dt;
        if (model == LightModel::PLS)
            J.d_pose.row(ch).tail<3>() -= c.albedo[ch] * dM_dt;
    }
    return J;
}

bool front_facing(const Vec3& g, const Vec3& x, const Pose& pose) {
    return g.dot(pose.camera_center() - x) > 0.0;
}

} // namespace

double Refiner::surface_band() const {
    return cfg_.surface_band > 0.0 ? cfg_.surface_band : grid_.voxel_size();
}

Refiner::Refiner(VoxelGrid& grid, std::vector<Frame>& keyframes, const Intrinsics& K,
                 const RefineConfig& cfg)
    : grid_(grid), frames_(keyframes), K_(K), cfg_(cfg) {
    surface_ = grid_.surface_voxels(surface_band());
    recompute_visibility();
    if (cfg_.model == LightModel::PLS) {
        // Seed Psi at the intensity/geometry ratio so the rho in [0,2] clamp
        // does not stall the first iterations.
        double num = 0.0, den = 0.0;
        for (const Vec3i& idx : surface_) {
            const VoxelRecord& rec = *grid_.find(idx);
            const VoxelCtx c = make_ctx(grid_, idx, rec, cfg_.eval_at);
            for (size_t i = 0; i < frames_.size(); ++i) {
                if (!rec.visibility.test(static_cast<int>(i))) continue;
                const PairData p = eval_pair(c, frames_[i].pose, LightState::point_light(1.0),
                                             LightModel::PLS, K_,
                                             BilinearSampler{&frames_[i].color}, cfg_.min_z);
                if (!p.valid || p.backfacing) continue;
                num += p.I.mean();
                den += c.albedo.mean() * p.G;
            }
        }
        if (den > 1e-12) {
            const double psi0 = std::max(num / den, 0.0);
            for (Frame& f : frames_) f.light.pls = psi0;
        }
    }
}

void Refiner::recompute_visibility(bool intersect_existing) {
    const int w = K_.width, h = K_.height;
    parallel_for(surface_.size(), [&](size_t k) {
        VoxelRecord& rec = *grid_.find(surface_[k]);
        const Vec3 x = (cfg_.eval_at == EvalAt::SurfacePoint)
                           ? Vec3(grid_.center(surface_[k]) - rec.psi * rec.grad)
                           : grid_.center(surface_[k]);
        const VisibilityBits old = rec.visibility;
        rec.visibility.reset();
        for (size_t i = 0; i < frames_.size(); ++i) {
            if (intersect_existing && !old.test(static_cast<int>(i))) continue;
            const Pose& P = frames_[i].pose;
            if (!front_facing(rec.grad, x, P)) continue;
            const Vec3 q = P.world_to_cam(x);
            if (q.z() <= cfg_.min_z) continue;
            const Vec2 px = project(K_, q);
            if (px.x() < 1 || px.x() > w - 2 || px.y() < 1 || px.y() > h - 2) continue;
            rec.visibility.set(static_cast<int>(i));
        }
    }, worker_threads());
}

void Refiner::sync_gradients() {
    parallel_for(surface_.size(), [&](size_t k) {
        VoxelRecord& rec = *grid_.find(surface_[k]);
        if (auto n = normal_from_gradient(grid_, surface_[k])) rec.grad = *n;
    }, worker_threads());
}

EnergyEntry Refiner::total_energy() {
    EnergyEntry e;
    ChunkedRange range{surface_.size(), 512};
    std::vector<double> data_part(range.chunk_count(), 0.0);
    std::vector<double> eik_part(range.chunk_count(), 0.0);
    range.run(
        [&](size_t begin, size_t end, size_t chunk) {
            for (size_t k = begin; k < end; ++k) {
                VoxelRecord& rec = *grid_.find(surface_[k]);
                const VoxelCtx c = make_ctx(grid_, surface_[k], rec, cfg_.eval_at);
                for (size_t i = 0; i < frames_.size(); ++i) {
                    if (!rec.visibility.test(static_cast<int>(i))) continue;
                    const PairData p =
                        eval_pair(c, frames_[i].pose, frames_[i].light, cfg_.model, K_,
                                  BilinearSampler{&frames_[i].color}, cfg_.min_z);
                    if (!p.valid) {
                        rec.visibility.clear(static_cast<int>(i));
                        continue;
                    }
                    if (cfg_.model == LightModel::PLS && p.backfacing) continue;
                    for (int ch = 0; ch < 3; ++ch)
                        data_part[chunk] += cauchy_loss(p.r[ch], cfg_.sigma_cauchy);
                }
                if (cfg_.eikonal && c.fd_ok) eik_part[chunk] += c.r_eik * c.r_eik;
            }
        },
        worker_threads());
    for (double d : data_part) e.data += d;
    for (double d : eik_part) e.eikonal += d;
    e.total = e.data + cfg_.eikonal_weight * e.eikonal;
    return e;
}

double Refiner::step_albedo() {
    std::vector<double> delta2(surface_.size(), 0.0);
    parallel_for(surface_.size(), [&](size_t k) {
        VoxelRecord& rec = *grid_.find(surface_[k]);
        const VoxelCtx c = make_ctx(grid_, surface_[k], rec, cfg_.eval_at);
        Vec3 num = Vec3::Zero(), den = Vec3::Zero();
        for (size_t i = 0; i < frames_.size(); ++i) {
            if (!rec.visibility.test(static_cast<int>(i))) continue;
            const PairData p = eval_pair(c, frames_[i].pose, frames_[i].light, cfg_.model,
                                         K_, BilinearSampler{&frames_[i].color}, cfg_.min_z);
            if (!p.valid) {
                rec.visibility.clear(static_cast<int>(i));
                continue;
            }
            if (cfg_.model == LightModel::PLS && p.backfacing) continue;
            for (int ch = 0; ch < 3; ++ch) {
                const double w = cauchy_weight(p.r[ch], cfg_.sigma_cauchy);
                num[ch] += w * p.M[ch] * p.I[ch];
                den[ch] += w * p.M[ch] * p.M[ch];
            }
        }
        Vec3 next = rec.albedo;
        for (int ch = 0; ch < 3; ++ch)
            if (den[ch] >= 1e-12) next[ch] = std::clamp(num[ch] / den[ch], 0.0, 2.0);
        delta2[k] = (next - rec.albedo).squaredNorm();
        rec.albedo = next;
    }, worker_threads());
    double sum = 0.0;
    for (double d : delta2) sum += d;
    return std::sqrt(sum);
}

double Refiner::step_light() {
    std::vector<double> delta2(frames_.size(), 0.0);
    std::vector<uint8_t> degenerate(frames_.size(), 0);
    // Contexts are shared across frames within the block.
    std::vector<VoxelCtx> ctx(surface_.size());
    parallel_for(surface_.size(), [&](size_t k) {
        ctx[k] = make_ctx(grid_, surface_[k], *grid_.find(surface_[k]), cfg_.eval_at);
    }, worker_threads());

    parallel_for(frames_.size(), [&](size_t i) {
        Frame& f = frames_[i];
        if (cfg_.model == LightModel::SH) {
            const int nsys = cfg_.per_channel_light ? 3 : 1;
            Eigen::Matrix4d A[3];
            Vec4 b[3];
            for (int sys = 0; sys < nsys; ++sys) {
                A[sys].setZero();
                b[sys].setZero();
            }
            for (size_t k = 0; k < surface_.size(); ++k) {
                VoxelRecord& rec = *grid_.find(surface_[k]);
                if (!rec.visibility.test(static_cast<int>(i))) continue;
                const PairData p = eval_pair(ctx[k], f.pose, f.light, cfg_.model, K_,
                                             BilinearSampler{&f.color}, cfg_.min_z);
                if (!p.valid) continue;
                const Vec4 B = sh_basis(ctx[k].g);
                for (int ch = 0; ch < 3; ++ch) {
                    const double w = cauchy_weight(p.r[ch], cfg_.sigma_cauchy);
                    const double rho = ctx[k].albedo[ch];
                    const int sys = cfg_.per_channel_light ? ch : 0;
                    A[sys] += w * rho * rho * B * B.transpose();
                    b[sys] += w * rho * p.I[ch] * B;
                }
            }
            Eigen::Matrix<double, 4, 3> next = f.light.sh;
            for (int sys = 0; sys < nsys; ++sys) {
                if (A[sys].isZero(0.0)) continue;
                Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(A[sys]);
                if (es.eigenvalues()(0) < 1e-6 * std::max(es.eigenvalues()(3), 1e-12)) {
                    A[sys].diagonal().array() += 1e-6;
                    degenerate[i] = 1;
                }
                const Vec4 l = A[sys].ldlt().solve(b[sys]);
                if (!l.allFinite()) continue;
                if (cfg_.per_channel_light) {
                    next.col(sys) = l;
                } else {
                    next.col(0) = l;
                    next.col(1) = l;
                    next.col(2) = l;
                }
            }
            delta2[i] = (next - f.light.sh).squaredNorm();
            f.light.sh = next;
        } else {
            double num = 0.0, den = 0.0;
            for (size_t k = 0; k < surface_.size(); ++k) {
                VoxelRecord& rec = *grid_.find(surface_[k]);
                if (!rec.visibility.test(static_cast<int>(i))) continue;
                const PairData p = eval_pair(ctx[k], f.pose, f.light, cfg_.model, K_,
                                             BilinearSampler{&f.color}, cfg_.min_z);
                if (!p.valid || p.backfacing) continue;
                for (int ch = 0; ch < 3; ++ch) {
                    const double w = cauchy_weight(p.r[ch], cfg_.sigma_cauchy);
                    const double a = ctx[k].albedo[ch] * p.G;
                    num += w * a * p.I[ch];
                    den += w * a * a;
                }
            }
            if (den >= 1e-12) {
                const double next = std::max(num / den, 0.0);
                delta2[i] = (next - f.light.pls) * (next - f.light.pls);
                f.light.pls = next;
            }
        }
    }, worker_threads());

    for (uint8_t d : degenerate) degenerate_light_warnings_ += d;
    double sum = 0.0;
    for (double d : delta2) sum += d;
    return std::sqrt(sum);
}

double Refiner::step_distance() {
    const size_t n = surface_.size();
    std::vector<double> H(n, 0.0), b(n, 0.0), psi_old(n), psi_new(n);
    std::vector<Vec3> grad_old(n);

    parallel_for(n, [&](size_t k) {
        VoxelRecord& rec = *grid_.find(surface_[k]);
        psi_old[k] = rec.psi;
        grad_old[k] = rec.grad;
        const VoxelCtx c = make_ctx(grid_, surface_[k], rec, cfg_.eval_at);
        if (!c.fd_ok) return; // degenerate gradient: voxel skipped this sweep
        double Hk = 0.0, bk = 0.0;
        for (size_t i = 0; i < frames_.size(); ++i) {
            if (!rec.visibility.test(static_cast<int>(i))) continue;
            const PairData p = eval_pair(c, frames_[i].pose, frames_[i].light, cfg_.model,
                                         K_, BilinearSampler{&frames_[i].color}, cfg_.min_z);
            if (!p.valid) {
                rec.visibility.clear(static_cast<int>(i));
                continue;
            }
            if (cfg_.model == LightModel::PLS && p.backfacing) continue;
            const PairJacobian J = pair_jacobian(c, p, frames_[i].pose, frames_[i].light,
                                                 cfg_.model);
            for (int ch = 0; ch < 3; ++ch) {
                const double w = cauchy_weight(p.r[ch], cfg_.sigma_cauchy);
                Hk += w * J.d_psi[ch] * J.d_psi[ch];
                bk += w * J.d_psi[ch] * p.r[ch];
            }
        }
        if (cfg_.eikonal) {
            Hk += cfg_.eikonal_weight * c.J_eik * c.J_eik;
            bk += cfg_.eikonal_weight * c.J_eik * c.r_eik;
        }
        H[k] = Hk;
        b[k] = bk;
    }, worker_threads());

    const double trust = 0.5 * grid_.voxel_size();
    const double T = grid_.truncation();
    const double e_before = total_energy().total;

    double damping = cfg_.gn_damping;
    double step_norm2 = 0.0;
    bool accepted = false;
    for (int attempt = 0; attempt < 8 && damping <= 1e6; ++attempt, damping *= 10.0) {
        step_norm2 = 0.0;
        for (size_t k = 0; k < n; ++k) {
            double d = 0.0;
            if (H[k] > 1e-18) d = -b[k] / (H[k] * (1.0 + damping));
            d = std::clamp(d, -trust, trust);
            psi_new[k] = std::clamp(psi_old[k] + d, -T, T);
            step_norm2 += (psi_new[k] - psi_old[k]) * (psi_new[k] - psi_old[k]);
        }
        // Jacobi apply: all voxels move from iteration-k values, then gradients
        // are recomputed from the new field.
        for (size_t k = 0; k < n; ++k) grid_.find(surface_[k])->psi = psi_new[k];
        sync_gradients();
        const double e_after = total_energy().total;
        if (std::isfinite(e_after) && e_after <= e_before) {
            accepted = true;
            break;
        }
        for (size_t k = 0; k < n; ++k) {
            VoxelRecord& rec = *grid_.find(surface_[k]);
            rec.psi = psi_old[k];
            rec.grad = grad_old[k];
        }
    }
    if (!accepted) return 0.0;
    return std::sqrt(step_norm2);
}

double Refiner::step_pose() {
    std::vector<VoxelCtx> ctx(surface_.size());
    parallel_for(surface_.size(), [&](size_t k) {
        ctx[k] = make_ctx(grid_, surface_[k], *grid_.find(surface_[k]), cfg_.eval_at);
    }, worker_threads());

    std::vector<double> delta2(frames_.size(), 0.0);
    std::vector<uint8_t> frozen(frames_.size(), 0);

    // Robust data energy of one frame at an arbitrary pose, over the
    // currently visible voxels of that frame.
    auto frame_energy = [&](size_t i, const Pose& pose) {
        double e = 0.0;
        const Frame& f = frames_[i];
        for (size_t k = 0; k < surface_.size(); ++k) {
            const VoxelRecord& rec = *grid_.find(surface_[k]);
            if (!rec.visibility.test(static_cast<int>(i))) continue;
            const PairData p = eval_pair(ctx[k], pose, f.light, cfg_.model, K_,
                                         BilinearSampler{&f.color}, cfg_.min_z);
            if (!p.valid) continue;
            if (cfg_.model == LightModel::PLS && p.backfacing) continue;
            for (int ch = 0; ch < 3; ++ch) e += cauchy_loss(p.r[ch], cfg_.sigma_cauchy);
        }
        return e;
    };

    parallel_for(frames_.size(), [&](size_t i) {
        Frame& f = frames_[i];
        Mat6 Hm = Mat6::Zero();
        Vec6 bv = Vec6::Zero();
        int visible = 0;
        for (size_t k = 0; k < surface_.size(); ++k) {
            const VoxelRecord& rec = *grid_.find(surface_[k]);
            if (!rec.visibility.test(static_cast<int>(i))) continue;
            const PairData p = eval_pair(ctx[k], f.pose, f.light, cfg_.model, K_,
                                         BilinearSampler{&f.color}, cfg_.min_z);
            if (!p.valid) continue;
            if (cfg_.model == LightModel::PLS && p.backfacing) continue;
            ++visible;
            const PairJacobian J = pair_jacobian(ctx[k], p, f.pose, f.light, cfg_.model);
            for (int ch = 0; ch < 3; ++ch) {
                const double w = cauchy_weight(p.r[ch], cfg_.sigma_cauchy);
                Hm += w * J.d_pose.row(ch).transpose() * J.d_pose.row(ch);
                bv += w * J.d_pose.row(ch).transpose() * p.r[ch];
            }
        }
        if (visible < cfg_.min_visible_voxels) {
            frozen[i] = 1;
            return;
        }
        const double e_before = frame_energy(i, f.pose);
        const Pose saved = f.pose;
        double damping = cfg_.gn_damping;
        while (damping <= 1e6) {
            Mat6 Hd = Hm;
            Hd.diagonal() += damping * Hm.diagonal();
            Hd.diagonal().array() += 1e-14;
            const Vec6 step = Hd.ldlt().solve(-bv);
            if (!step.allFinite()) break;
            Pose cand;
            cand.R = saved.R * so3_exp(step.head<3>());
            cand.t = saved.t + step.tail<3>();
            if (frame_energy(i, cand) <= e_before) {
                f.pose = cand;
                delta2[i] = step.squaredNorm();
                return;
            }
            damping *= 10.0;
        }
        f.pose = saved; // rejected after damping escalation
    }, worker_threads());

    for (uint8_t fz : frozen) frozen_pose_warnings_ += fz;
    double sum = 0.0;
    for (double d : delta2) sum += d;
    recompute_visibility(true);
    return std::sqrt(sum);
}

void Refiner::upsample() {
    const double band = cfg_.upsample_band > 0.0 ? cfg_.upsample_band
                                                 : 2.0 * grid_.voxel_size();
    grid_ = subdivide(grid_, band);
    surface_ = grid_.surface_voxels(surface_band());
    recompute_visibility();
}

EnergyReport Refiner::run() {
    EnergyReport report;
    auto record = [&](int iter, const EnergyEntry& e) {
        if (!std::isfinite(e.total))
            throw NumericalError("refine: non-finite energy at iteration " +
                                 std::to_string(iter));
        report.entries.push_back(e);
    };

    EnergyEntry e0 = total_energy();
    e0.iteration = 0;
    record(0, e0);
    double e_prev = e0.total;

    for (int k = 1; k <= cfg_.max_iters; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        EnergyEntry e;
        e.iteration = k;
        if (cfg_.upsample_at_iter > 0 && k == cfg_.upsample_at_iter) {
            upsample();
            e.upsampled = true;
            e_prev = total_energy().total; // re-baseline on the finer grid
        }
        e.step_albedo = step_albedo();
        if (!std::isfinite(e.step_albedo))
            throw NumericalError("refine: albedo step produced non-finite values");
        e.step_light = step_light();
        if (!std::isfinite(e.step_light))
            throw NumericalError("refine: light step produced non-finite values");
        e.step_distance = step_distance();
        if (!std::isfinite(e.step_distance))
            throw NumericalError("refine: distance step produced non-finite values");
        if (cfg_.refine_poses) {
            e.step_pose = step_pose();
            if (!std::isfinite(e.step_pose))
                throw NumericalError("refine: pose step produced non-finite values");
        }
        const EnergyEntry now = total_energy();
        e.data = now.data;
        e.eikonal = now.eikonal;
        e.total = now.total;
        e.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        record(k, e);
        const bool converged =
            std::abs(e.total - e_prev) / std::max(e_prev, 1e-12) < cfg_.convergence_tol;
        e_prev = e.total;
        if (converged) break;
    }
    report.degenerate_light_warnings = degenerate_light_warnings_;
    report.frozen_pose_warnings = frozen_pose_warnings_;
    return report;
}

double JacobianCheckResult::max() const {
    return std::max({rho, light, psi, omega, translation});
}

namespace {

// Smooth analytic image with bounded values and nonzero gradients a.e.
struct AnalyticSampler {
    Vec3 base, amp;
    Vec2 freq[3];
    Vec3 phase;

    std::optional<PixelSample> operator()(const Vec2& px) const {
        PixelSample s;
        for (int ch = 0; ch < 3; ++ch) {
            const double a = freq[ch].x() * px.x() + freq[ch].y() * px.y() + phase[ch];
            s.value[ch] = base[ch] + amp[ch] * std::sin(a);
            s.grad(0, ch) = amp[ch] * std::cos(a) * freq[ch].x();
            s.grad(1, ch) = amp[ch] * std::cos(a) * freq[ch].y();
        }
        return s;
    }
};

double rel_err(double analytic, double fd) {
    return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-3});
}

} // namespace

JacobianCheckResult jacobians_fd_check(LightModel model, int n_configs, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * U(rng); };

    Intrinsics K;
    K.fx = K.fy = 320;
    K.cx = 160;
    K.cy = 120;
    K.width = 320;
    K.height = 240;

    JacobianCheckResult worst;
    int done = 0;
    while (done < n_configs) {
        const double vs = uni(0.01, 0.04);
        VoxelGrid grid(vs, Vec3(uni(-0.1, 0.1), uni(-0.1, 0.1), uni(-0.1, 0.1)), 5 * vs);
        const Vec3i idx(int(uni(-4, 4)), int(uni(-4, 4)), int(uni(-4, 4)));
        // Populate the voxel and all 6 axis neighbors with a noisy near-unit
        // gradient field so the FD structure is generic but non-degenerate.
        const Vec3 dir = Vec3(uni(-1, 1), uni(-1, 1), uni(-1, 1)).normalized();
        auto fill = [&](const Vec3i& v) {
            VoxelRecord r;
            r.psi = dir.dot(grid.center(v)) + uni(-0.1, 0.1) * vs;
            r.weight = 1.0;
            r.albedo = Vec3(uni(0.2, 1.0), uni(0.2, 1.0), uni(0.2, 1.0));
            grid.at_or_insert(v) = r;
        };
        fill(idx);
        for (int a = 0; a < 3; ++a) {
            Vec3i nb = idx;
            nb[a] -= (U(rng) < 0.8) ? 1 : -1; // mostly backward, sometimes forward-only
            fill(nb);
        }

        auto sync = [&]() {
            auto n = normal_from_gradient(grid, idx);
            if (!n) return false;
            grid.find(idx)->grad = *n;
            return true;
        };
        if (!sync()) continue;

        // Camera in front of the voxel (along its normal) and looking at it,
        // with a random roll so nothing is axis-aligned.
        Pose pose;
        {
            const Vec3 x0 = grid.center(idx) - grid.find(idx)->psi * grid.find(idx)->grad;
            pose.t = x0 + grid.find(idx)->grad * uni(0.5, 1.5) +
                     Vec3(uni(-0.15, 0.15), uni(-0.15, 0.15), uni(-0.15, 0.15));
            const Vec3 fwd = (x0 - pose.t).normalized();
            Vec3 up = std::abs(fwd.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(0, 1, 0);
            const Vec3 right = up.cross(fwd).normalized();
            up = fwd.cross(right).normalized();
            pose.R.col(0) = right;
            pose.R.col(1) = up;
            pose.R.col(2) = fwd;
            pose.R = pose.R * so3_exp(Vec3(0, 0, uni(-3.0, 3.0))); // roll about view ray
        }

        LightState light;
        if (model == LightModel::SH) {
            light = LightState::shared_sh(
                Vec4(uni(0.3, 1.0), uni(-0.5, 0.5), uni(-0.5, 0.5), uni(-0.5, 0.5)));
        } else {
            light = LightState::point_light(uni(0.5, 4.0));
        }

        AnalyticSampler img;
        img.base = Vec3(uni(0.3, 0.6), uni(0.3, 0.6), uni(0.3, 0.6));
        img.amp = Vec3(uni(0.1, 0.3), uni(0.1, 0.3), uni(0.1, 0.3));
        for (int ch = 0; ch < 3; ++ch)
            img.freq[ch] = Vec2(uni(-0.15, 0.15), uni(-0.15, 0.15));
        img.phase = Vec3(uni(0, 6.28), uni(0, 6.28), uni(0, 6.28));

        const VoxelCtx c0 = make_ctx(grid, idx, *grid.find(idx), EvalAt::SurfacePoint);
        const PairData p0 =
            eval_pair(c0, pose, light, model, K, img, 0.05);
        if (!p0.valid || !c0.fd_ok) continue;
        if (model == LightModel::PLS && p0.backfacing) continue;
        const double A0 = p0.A;
        const PairJacobian J = pair_jacobian(c0, p0, pose, light, model);

        // rho: exact linearity.
        for (int ch = 0; ch < 3; ++ch)
            worst.rho = std::max(worst.rho, rel_err(J.d_rho[ch], -p0.M[ch]));

        // light: linear as well, FD with unit-scale step.
        {
            const double h = 1e-5;
            if (model == LightModel::SH) {
                for (int d = 0; d < 4; ++d) {
                    LightState lp = light, lm = light;
                    lp.sh.row(d).array() += h;
                    lm.sh.row(d).array() -= h;
                    const PairData pp = eval_pair(c0, pose, lp, model, K, img, 0.05);
                    const PairData pm = eval_pair(c0, pose, lm, model, K, img, 0.05);
                    for (int ch = 0; ch < 3; ++ch)
                        worst.light = std::max(
                            worst.light,
                            rel_err(J.d_light(ch, d), (pp.r[ch] - pm.r[ch]) / (2 * h)));
                }
            } else {
                LightState lp = light, lm = light;
                lp.pls += h;
                lm.pls -= h;
                const PairData pp = eval_pair(c0, pose, lp, model, K, img, 0.05, &A0);
                const PairData pm = eval_pair(c0, pose, lm, model, K, img, 0.05, &A0);
                for (int ch = 0; ch < 3; ++ch)
                    worst.light = std::max(
                        worst.light,
                        rel_err(J.d_light(ch, 0), (pp.r[ch] - pm.r[ch]) / (2 * h)));
            }
        }

        // psi: rebuild the context (gradient resync included) at psi +- h with
        // the attenuation frozen at A0.
        {
            const double h = 1e-5 * std::max(1.0, std::abs(c0.psi));
            const double psi0 = grid.find(idx)->psi;
            auto eval_at_psi = [&](double psi) {
                grid.find(idx)->psi = psi;
                sync();
                const VoxelCtx c = make_ctx(grid, idx, *grid.find(idx), EvalAt::SurfacePoint);
                const PairData p = eval_pair(c, pose, light, model, K, img, 0.05,
                                             model == LightModel::PLS ? &A0 : nullptr);
                return p;
            };
            const PairData pp = eval_at_psi(psi0 + h);
            const PairData pm = eval_at_psi(psi0 - h);
            grid.find(idx)->psi = psi0;
            sync();
            if (pp.valid && pm.valid)
                for (int ch = 0; ch < 3; ++ch)
                    worst.psi = std::max(
                        worst.psi, rel_err(J.d_psi[ch], (pp.r[ch] - pm.r[ch]) / (2 * h)));
        }

        // pose: right perturbation around the current pose, translation with
        // frozen attenuation.
        {
            const double h = 1e-6;
            for (int d = 0; d < 6; ++d) {
                auto perturbed = [&](double sgn) {
                    Vec6 eps = Vec6::Zero();
                    eps[d] = sgn * h;
                    Pose p;
                    p.R = pose.R * so3_exp(eps.head<3>());
                    p.t = pose.t + eps.tail<3>();
                    const bool freeze = model == LightModel::PLS && d >= 3;
                    return eval_pair(c0, p, light, model, K, img, 0.05,
                                     freeze ? &A0 : nullptr);
                };
                const PairData pp = perturbed(+1.0);
                const PairData pm = perturbed(-1.0);
                if (!pp.valid || !pm.valid) continue;
                for (int ch = 0; ch < 3; ++ch) {
                    const double fd = (pp.r[ch] - pm.r[ch]) / (2 * h);
                    double& slot = d < 3 ? worst.omega : worst.translation;
                    slot = std::max(slot, rel_err(J.d_pose(ch, d), fd));
                }
            }
        }
        ++done;
    }
    return worst;
}

void write_energy_csv(const EnergyReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("write_energy_csv: cannot open " + path);
    os << "iteration,data,eikonal,total,step_albedo,step_light,step_distance,"
          "step_pose,upsampled\n";
    os.precision(17);
    for (const EnergyEntry& e : report.entries) {
        os << e.iteration << ',' << e.data << ',' << e.eikonal << ',' << e.total << ','
           << e.step_albedo << ',' << e.step_light << ',' << e.step_distance << ','
           << e.step_pose << ',' << (e.upsampled ? 1 : 0) << '\n';
    }
}

void write_lights_csv(const std::vector<Frame>& frames, LightModel model,
                      const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("write_lights_csv: cannot open " + path);
    os << "frame_index,model,c0,c1,c2,c3\n";
    os.precision(17);
    for (size_t i = 0; i < frames.size(); ++i) {
        if (model == LightModel::SH) {
            const Vec4 l = frames[i].light.sh_shared();
            os << i << ",sh," << l[0] << ',' << l[1] << ',' << l[2] << ',' << l[3] << '\n';
        } else {
            os << i << ",pls," << frames[i].light.pls << ",,,\n";
        }
    }
}

} // namespace vps
