#include "vps/fusion.h"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace vps {

NormalMap depth_normals(const DepthImage& depth, const Intrinsics& K) {
    NormalMap nm;
    nm.width = depth.width;
    nm.height = depth.height;
    nm.normals.assign(static_cast<size_t>(depth.width) * depth.height, Vec3f::Zero());
    nm.valid_mask.assign(static_cast<size_t>(depth.width) * depth.height, 0);

    auto point = [&](int x, int y) {
        return backproject(K, Vec2(x, y), depth.at(x, y));
    };

    for (int y = 1; y < depth.height - 1; ++y) {
        for (int x = 1; x < depth.width - 1; ++x) {
            if (!depth.valid(x, y) || !depth.valid(x - 1, y) || !depth.valid(x + 1, y) ||
                !depth.valid(x, y - 1) || !depth.valid(x, y + 1))
                continue;
            const Vec3 dx = point(x + 1, y) - point(x - 1, y);
            const Vec3 dy = point(x, y + 1) - point(x, y - 1);
            Vec3 n = dx.cross(dy);
            const double len = n.norm();
            if (len < 1e-12) continue;
            n /= len;
            if (n.dot(-point(x, y)) < 0) n = -n;
            const size_t i = static_cast<size_t>(y) * depth.width + x;
            nm.normals[i] = n.cast<float>();
            nm.valid_mask[i] = 1;
        }
    }
    return nm;
}

namespace {

// Marks voxel indices along the ray segment [z-T, z+T] per valid pixel.
void mark_candidates(const VoxelGrid& grid, const Frame& frame, const Intrinsics& K,
                     std::unordered_set<Vec3i, Vec3iHash, Vec3iEq>& out) {
    const double T = grid.truncation();
    const double step = 0.5 * grid.voxel_size();
    for (int y = 0; y < frame.depth.height; ++y) {
        for (int x = 0; x < frame.depth.width; ++x) {
            const float z = frame.depth.at(x, y);
            if (z <= 0.f) continue;
            const Vec3 dir_cam = Vec3((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
            const double lo = std::max(0.05, z - T * dir_cam.norm());
            const double hi = z + T * dir_cam.norm();
            for (double s = lo; s <= hi; s += step) {
                const Vec3 p = frame.pose.apply(dir_cam * s);
                out.insert(grid.nearest_index(p));
            }
        }
    }
}

struct Observation {
    double d; // signed distance observation
    Vec2 px;
    int pix_x, pix_y;
};

// Projective distance observation of one voxel center: distance from the
// voxel to the tangent plane of the observed surface point at the associated
// pixel. Equals the plain z-difference for fronto-parallel geometry and
// removes the 1/cos slant bias elsewhere. Nullopt when the voxel does not
// project onto valid depth or the pixel has no valid normal.
std::optional<Observation> observe(const Vec3& center, const Frame& frame,
                                   const Intrinsics& K, const NormalMap& nm) {
    const Vec3 q = frame.pose.world_to_cam(center);
    if (q.z() <= 1e-6) return std::nullopt;
    const Vec2 px = project(K, q);
    const int xi = static_cast<int>(std::lround(px.x()));
    const int yi = static_cast<int>(std::lround(px.y()));
    if (xi < 0 || xi >= frame.depth.width || yi < 0 || yi >= frame.depth.height)
        return std::nullopt;
    const float z = frame.depth.at(xi, yi);
    if (z <= 0.f) return std::nullopt;
    if (!nm.valid(xi, yi)) return std::nullopt;
    const Vec3 s = backproject(K, Vec2(xi, yi), z); // observed surface point
    const Vec3 n = nm.at(xi, yi);                   // oriented toward camera
    Observation obs;
    obs.d = (q - s).dot(n);
    obs.px = px;
    obs.pix_x = xi;
    obs.pix_y = yi;
    return obs;
}

} // namespace

void integrate_frame(VoxelGrid& grid, const Frame& frame, const Intrinsics& K,
                     int frame_index) {
    const double T = grid.truncation();
    const NormalMap nm = depth_normals(frame.depth, K);

    auto update = [&](const Vec3i& idx, bool allow_alloc) {
        const Vec3 center = grid.center(idx);
        auto obs = observe(center, frame, K, nm);
        if (!obs) return;
        const double d_raw = obs->d;
        if (d_raw < -T) return;
        const double d = std::min(d_raw, T);
        const double w_obs = std::max(std::min(1.0 + d / T, 1.0), 0.0);
        if (w_obs <= 0.0) return;

        VoxelRecord* rec = grid.find(idx);
        if (rec == nullptr) {
            if (!allow_alloc || std::abs(d_raw) > T) return;
            rec = &grid.at_or_insert(idx);
        }

        const Vec3 n_world = frame.pose.R * nm.at(obs->pix_x, obs->pix_y);
        const double wsum = rec->weight + w_obs;
        rec->psi = (rec->weight * rec->psi + w_obs * d) / wsum;
        rec->psi = std::clamp(rec->psi, -T, T);
        Vec3 g = rec->weight * rec->grad + w_obs * n_world;
        if (g.norm() > 1e-12)
            rec->grad = g.normalized();
        rec->weight = wsum;

        if (std::abs(d_raw) < T) {
            // Color accumulates only when the bilinear footprint lies on the
            // surface; samples straddling a depth edge would mix background.
            const int x0 = std::min(std::max(int(std::floor(obs->px.x())), 0),
                                    frame.depth.width - 2);
            const int y0 = std::min(std::max(int(std::floor(obs->px.y())), 0),
                                    frame.depth.height - 2);
            const bool footprint_ok =
                frame.depth.valid(x0, y0) && frame.depth.valid(x0 + 1, y0) &&
                frame.depth.valid(x0, y0 + 1) && frame.depth.valid(x0 + 1, y0 + 1);
            if (footprint_ok) {
                if (auto c = sample_bilinear_value(frame.color, obs->px)) {
                    rec->intensity_sum += *c;
                    rec->obs_count += 1;
                }
            }
            rec->visibility.set(frame_index);
        }
    };

    std::unordered_set<Vec3i, Vec3iHash, Vec3iEq> candidates;
    mark_candidates(grid, frame, K, candidates);
    for (const Vec3i& idx : candidates) update(idx, true);

    // Free-space / behind-surface updates of voxels outside this frame's band.
    std::vector<Vec3i> existing;
    existing.reserve(grid.size());
    for (const auto& kv : grid.map())
        if (candidates.find(kv.first) == candidates.end()) existing.push_back(kv.first);
    for (const Vec3i& idx : existing) update(idx, false);
}

void init_albedo(VoxelGrid& grid) {
    for (auto& kv : grid.map()) {
        VoxelRecord& r = kv.second;
        if (r.obs_count <= 0) continue;
        Vec3 a = r.intensity_sum / r.obs_count;
        r.albedo = a.cwiseMax(0.0).cwiseMin(1.0);
    }
}

} // namespace vps
