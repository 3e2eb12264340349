#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vps/errors.h"
#include "vps/types.h"

namespace vps {

// Per-frame visibility bits (nu_i^j).
struct VisibilityBits {
    std::vector<uint64_t> words;

    void set(int i) {
        const size_t w = static_cast<size_t>(i) / 64;
        if (w >= words.size()) words.resize(w + 1, 0);
        words[w] |= uint64_t(1) << (i % 64);
    }
    void clear(int i) {
        const size_t w = static_cast<size_t>(i) / 64;
        if (w < words.size()) words[w] &= ~(uint64_t(1) << (i % 64));
    }
    bool test(int i) const {
        const size_t w = static_cast<size_t>(i) / 64;
        return w < words.size() && (words[w] >> (i % 64)) & 1;
    }
    void reset() { words.clear(); }
    int count() const {
        int n = 0;
        for (uint64_t w : words) n += __builtin_popcountll(w);
        return n;
    }
};

struct VoxelRecord {
    double psi = 0.0;            // signed distance, meters, |psi| <= T
    Vec3 grad = Vec3::Zero();    // unit distance gradient, world frame
    double weight = 0.0;         // fusion weight
    Vec3 albedo = Vec3::Constant(0.5);
    Vec3 intensity_sum = Vec3::Zero();
    int obs_count = 0;
    VisibilityBits visibility;
};

struct Vec3iHash {
    size_t operator()(const Vec3i& v) const {
        // FNV-style mix of the three coordinates.
        uint64_t h = 1469598103934665603ull;
        for (int i = 0; i < 3; ++i) {
            h ^= static_cast<uint64_t>(static_cast<uint32_t>(v[i]));
            h *= 1099511628211ull;
        }
        return static_cast<size_t>(h);
    }
};

struct Vec3iEq {
    bool operator()(const Vec3i& a, const Vec3i& b) const {
        return a.x() == b.x() && a.y() == b.y() && a.z() == b.z();
    }
};

inline bool lex_less(const Vec3i& a, const Vec3i& b) {
    if (a.x() != b.x()) return a.x() < b.x();
    if (a.y() != b.y()) return a.y() < b.y();
    return a.z() < b.z();
}

// Sparse gradient-SDF voxel grid. voxel_center(idx) = origin + (idx+0.5)*vs.
class VoxelGrid {
public:
    using Map = std::unordered_map<Vec3i, VoxelRecord, Vec3iHash, Vec3iEq>;

    VoxelGrid() = default;
    VoxelGrid(double voxel_size, const Vec3& origin, double truncation)
        : vs_(voxel_size), origin_(origin), trunc_(truncation) {}

    double voxel_size() const { return vs_; }
    const Vec3& origin() const { return origin_; }
    double truncation() const { return trunc_; }
    size_t size() const { return map_.size(); }
    bool empty() const { return map_.empty(); }

    Vec3 center(const Vec3i& idx) const {
        return origin_ + (idx.cast<double>() + Vec3::Constant(0.5)) * vs_;
    }
    // Voxel whose center is nearest to x; ties toward the lower index.
    Vec3i nearest_index(const Vec3& x) const {
        Vec3 u = (x - origin_) / vs_ - Vec3::Constant(0.5);
        return Vec3i(static_cast<int>(std::ceil(u.x() - 0.5)),
                     static_cast<int>(std::ceil(u.y() - 0.5)),
                     static_cast<int>(std::ceil(u.z() - 0.5)));
    }

    VoxelRecord* find(const Vec3i& idx) {
        auto it = map_.find(idx);
        return it == map_.end() ? nullptr : &it->second;
    }
    const VoxelRecord* find(const Vec3i& idx) const {
        auto it = map_.find(idx);
        return it == map_.end() ? nullptr : &it->second;
    }
    VoxelRecord& at_or_insert(const Vec3i& idx) { return map_[idx]; }

    Map& map() { return map_; }
    const Map& map() const { return map_; }

    // All populated indices in lexicographic order.
    std::vector<Vec3i> sorted_indices() const;

    std::vector<Vec3i> surface_voxels(double band) const;

private:
    double vs_ = 0.02;
    Vec3 origin_ = Vec3::Zero();
    double trunc_ = 0.1;
    Map map_;
};

// x = center - grad * psi (Eq.-(9)-style voxel-to-surface mapping).
std::optional<Vec3> surface_point(const VoxelRecord& rec, const Vec3& center,
                                  double truncation);

struct ExtrapolatedDistance {
    double d;
    Vec3 grad;
};

// First-order distance extrapolation from the nearest populated voxel:
// d = psi + (x - center)^T grad. Nullopt when no populated voxel lies within
// one voxel size of x.
std::optional<ExtrapolatedDistance> extrapolated_distance(const VoxelGrid& grid,
                                                          const Vec3& x);

struct FiniteDiffGradient {
    Vec3 grad;   // one-sided differences divided by voxel size
    Vec3i sign;  // +1: backward neighbor used, -1: forward fallback
};

// One-sided finite-difference gradient of psi at idx. Prefers the -e_a
// neighbor per axis, falls back to +e_a with flipped sign. Nullopt when some
// axis has no neighbor on either side.
std::optional<FiniteDiffGradient> finite_diff_gradient(const VoxelGrid& grid,
                                                       const Vec3i& idx);

// g = grad/|grad|; nullopt when |grad| <= 1e-6 (degenerate).
std::optional<Vec3> normal_from_gradient(const VoxelGrid& grid, const Vec3i& idx);

// Taylor up-sampling: every parent with weight > 0 and |psi| <= band spawns
// 8 children at half the voxel size; psi_child = psi + (vs/4) s^T g, gradient
// and albedo copied, intensity accumulators reset.
VoxelGrid subdivide(const VoxelGrid& grid,
                    double band = std::numeric_limits<double>::infinity());

// GSDF1 checkpoint, little-endian.
void save_grid(const VoxelGrid& grid, const std::string& path);
VoxelGrid load_grid(const std::string& path);

} // namespace vps
