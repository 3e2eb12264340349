#include "vps/tracking.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "vps/fusion.h"
#include "vps/parallel.h"

namespace vps {

namespace {

struct Accum {
    Mat6 H = Mat6::Zero();
    Vec6 b = Vec6::Zero();
    double energy = 0.0;
    int count = 0;
};

// Residual r_k = d_S(R x_k + t) with weight w = clamp(1 + d/T, 0, 1).
// Right-perturbation R <- R exp([eps_w]x), t <- t + eps_t gives
// dr/deps_w = -g^T R [x]x and dr/deps_t = g^T.
Accum accumulate(const VoxelGrid& grid, const std::vector<Vec3>& points,
                 const Pose& pose, bool with_jacobian) {
    const double T = grid.truncation();
    ChunkedRange range{points.size()};
    std::vector<Accum> partial(range.chunk_count());
    range.run(
        [&](size_t begin, size_t end, size_t c) {
            Accum& acc = partial[c];
            for (size_t k = begin; k < end; ++k) {
                const Vec3 p = pose.apply(points[k]);
                const auto ex = extrapolated_distance(grid, p);
                if (!ex) continue;
                const double d = ex->d;
                // |d| >= T is the saturated region of the truncated field;
                // such points carry no alignment information.
                if (std::abs(d) >= T) continue;
                const double w = std::max(std::min(1.0 + d / T, 1.0), 0.0);
                if (w <= 0.0) continue;
                acc.energy += w * d * d;
                acc.count += 1;
                if (with_jacobian) {
                    Vec6 J;
                    J.head<3>() = -(ex->grad.transpose() * pose.R * skew(points[k])).transpose();
                    J.tail<3>() = ex->grad;
                    acc.H += w * J * J.transpose();
                    acc.b += w * d * J;
                }
            }
        },
        worker_threads());
    Accum total;
    for (const Accum& a : partial) {
        total.H += a.H;
        total.b += a.b;
        total.energy += a.energy;
        total.count += a.count;
    }
    return total;
}

} // namespace

TrackResult track_frame(const VoxelGrid& grid, const DepthImage& depth,
                        const Intrinsics& K, const Pose& init, const TrackConfig& cfg) {
    std::vector<Vec3> points;
    points.reserve(static_cast<size_t>(depth.width) * depth.height / (cfg.stride * cfg.stride));
    for (int y = 0; y < depth.height; y += cfg.stride)
        for (int x = 0; x < depth.width; x += cfg.stride) {
            const float z = depth.at(x, y);
            if (z > 0.f) points.push_back(backproject(K, Vec2(x, y), z));
        }

    TrackResult res;
    res.pose = init;
    double damping = cfg.damping_init;

    Accum cur = accumulate(grid, points, res.pose, true);
    if (cur.count < cfg.min_inliers)
        throw TrackingLost("track_frame: only " + std::to_string(cur.count) +
                           " points inside volume");
    res.inliers = cur.count;
    res.energies.push_back(cur.energy);

    for (int it = 0; it < cfg.max_iterations; ++it) {
        bool accepted = false;
        while (damping <= cfg.damping_max) {
            Mat6 H = cur.H;
            H.diagonal() += damping * cur.H.diagonal();
            H.diagonal().array() += 1e-12;
            const Vec6 step = H.ldlt().solve(-cur.b);
            if (!step.allFinite()) break;
            Pose cand;
            cand.R = res.pose.R * so3_exp(step.head<3>());
            cand.t = res.pose.t + step.tail<3>();
            const Accum next = accumulate(grid, points, cand, true);
            if (next.count >= cfg.min_inliers && next.energy < cur.energy) {
                res.pose = cand;
                res.inliers = next.count;
                res.energies.push_back(next.energy);
                cur = next;
                damping = std::max(damping * 0.1, 1e-12);
                accepted = true;
                if (step.norm() < cfg.step_tol) return res;
                break;
            }
            damping *= 10.0;
        }
        if (!accepted) break; // damping exhausted, keep last decreasing pose
    }
    return res;
}

SequenceResult track_sequence(VoxelGrid& grid, std::vector<Frame>& frames,
                              const Intrinsics& K, const TrackConfig& cfg,
                              int max_frames) {
    SequenceResult out;
    const int n = std::min<int>(frames.size(), max_frames);
    Pose current; // identity: first frame defines the world
    for (int i = 0; i < n; ++i) {
        bool ok = true;
        if (i > 0) {
            try {
                current = track_frame(grid, frames[i].depth, K, current, cfg).pose;
            } catch (const TrackingLost&) {
                ok = false; // skip frame, keep last pose
            }
        }
        frames[i].pose = current;
        frames[i].has_pose = ok;
        out.poses.push_back(current);
        out.tracked.push_back(ok ? 1 : 0);
        if (ok) integrate_frame(grid, frames[i], K, i);
    }
    return out;
}

} // namespace vps
