#include "vps/volume.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace vps {

std::vector<Vec3i> VoxelGrid::sorted_indices() const {
    std::vector<Vec3i> idx;
    idx.reserve(map_.size());
    for (const auto& kv : map_) idx.push_back(kv.first);
    std::sort(idx.begin(), idx.end(), lex_less);
    return idx;
}

std::vector<Vec3i> VoxelGrid::surface_voxels(double band) const {
    std::vector<Vec3i> idx;
    for (const auto& kv : map_)
        if (kv.second.weight > 0.0 && std::abs(kv.second.psi) < band)
            idx.push_back(kv.first);
    std::sort(idx.begin(), idx.end(), lex_less);
    return idx;
}

std::optional<Vec3> surface_point(const VoxelRecord& rec, const Vec3& center,
                                  double truncation) {
    if (rec.weight <= 0.0 || std::abs(rec.psi) >= truncation) return std::nullopt;
    return center - rec.grad * rec.psi;
}

std::optional<ExtrapolatedDistance> extrapolated_distance(const VoxelGrid& grid,
                                                          const Vec3& x) {
    const Vec3i n = grid.nearest_index(x);
    const VoxelRecord* best = grid.find(n);
    Vec3i best_idx = n;
    if (best == nullptr || best->weight <= 0.0) {
        best = nullptr;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    const Vec3i c = n + Vec3i(dx, dy, dz);
                    const VoxelRecord* r = grid.find(c);
                    if (r == nullptr || r->weight <= 0.0) continue;
                    const double d2 = (x - grid.center(c)).squaredNorm();
                    if (d2 < best_d2) {
                        best_d2 = d2;
                        best = r;
                        best_idx = c;
                    }
                }
        if (best == nullptr || best_d2 > grid.voxel_size() * grid.voxel_size())
            return std::nullopt;
    }
    const Vec3 v = grid.center(best_idx);
    return ExtrapolatedDistance{best->psi + (x - v).dot(best->grad), best->grad};
}

std::optional<FiniteDiffGradient> finite_diff_gradient(const VoxelGrid& grid,
                                                       const Vec3i& idx) {
    const VoxelRecord* c = grid.find(idx);
    if (c == nullptr) return std::nullopt;
    FiniteDiffGradient out;
    for (int a = 0; a < 3; ++a) {
        Vec3i nb = idx;
        nb[a] -= 1;
        const VoxelRecord* r = grid.find(nb);
        if (r != nullptr && r->weight > 0.0) {
            out.grad[a] = (c->psi - r->psi) / grid.voxel_size();
            out.sign[a] = 1;
            continue;
        }
        nb[a] += 2;
        r = grid.find(nb);
        if (r != nullptr && r->weight > 0.0) {
            out.grad[a] = (r->psi - c->psi) / grid.voxel_size();
            out.sign[a] = -1;
            continue;
        }
        return std::nullopt;
    }
    return out;
}

std::optional<Vec3> normal_from_gradient(const VoxelGrid& grid, const Vec3i& idx) {
    auto fd = finite_diff_gradient(grid, idx);
    if (!fd) return std::nullopt;
    const double n = fd->grad.norm();
    if (n <= 1e-6) return std::nullopt;
    return fd->grad / n;
}

VoxelGrid subdivide(const VoxelGrid& grid, double band) {
    VoxelGrid fine(grid.voxel_size() * 0.5, grid.origin(), grid.truncation());
    const double q = grid.voxel_size() / 4.0;
    for (const auto& kv : grid.map()) {
        const VoxelRecord& p = kv.second;
        if (p.weight <= 0.0 || std::abs(p.psi) > band) continue;
        for (int b = 0; b < 8; ++b) {
            const Vec3i s((b & 1) ? 1 : -1, (b & 2) ? 1 : -1, (b & 4) ? 1 : -1);
            Vec3i child = 2 * kv.first;
            for (int a = 0; a < 3; ++a) child[a] += (s[a] + 1) / 2;
            VoxelRecord rec;
            rec.psi = p.psi + q * s.cast<double>().dot(p.grad);
            rec.grad = p.grad;
            rec.weight = p.weight;
            rec.albedo = p.albedo;
            rec.visibility = p.visibility;
            fine.at_or_insert(child) = std::move(rec);
        }
    }
    return fine;
}

namespace {

constexpr char kMagic[5] = {'G', 'S', 'D', 'F', '1'};

template <typename T>
void put(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

} // namespace

void save_grid(const VoxelGrid& grid, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_grid: cannot open " + path);
    os.write(kMagic, 5);
    put<float>(os, static_cast<float>(grid.voxel_size()));
    for (int i = 0; i < 3; ++i) put<float>(os, static_cast<float>(grid.origin()[i]));
    put<float>(os, static_cast<float>(grid.truncation()));
    put<uint64_t>(os, grid.size());
    for (const Vec3i& idx : grid.sorted_indices()) {
        const VoxelRecord& r = *grid.find(idx);
        for (int i = 0; i < 3; ++i) put<int32_t>(os, idx[i]);
        put<float>(os, static_cast<float>(r.psi));
        for (int i = 0; i < 3; ++i) put<float>(os, static_cast<float>(r.grad[i]));
        put<float>(os, static_cast<float>(r.weight));
        for (int i = 0; i < 3; ++i) put<float>(os, static_cast<float>(r.albedo[i]));
    }
    if (!os) throw IoError("save_grid: write failed on " + path);
}

VoxelGrid load_grid(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_grid: cannot open " + path);
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kMagic, 5) != 0)
        throw IoError("load_grid: bad magic in " + path);
    const float vs = get<float>(is);
    Vec3 origin;
    for (int i = 0; i < 3; ++i) origin[i] = get<float>(is);
    const float trunc = get<float>(is);
    const uint64_t count = get<uint64_t>(is);
    VoxelGrid grid(vs, origin, trunc);
    for (uint64_t k = 0; k < count; ++k) {
        Vec3i idx;
        for (int i = 0; i < 3; ++i) idx[i] = get<int32_t>(is);
        VoxelRecord r;
        r.psi = get<float>(is);
        for (int i = 0; i < 3; ++i) r.grad[i] = get<float>(is);
        r.weight = get<float>(is);
        for (int i = 0; i < 3; ++i) r.albedo[i] = get<float>(is);
        if (!is) throw IoError("load_grid: truncated file " + path);
        grid.at_or_insert(idx) = std::move(r);
    }
    return grid;
}

} // namespace vps
