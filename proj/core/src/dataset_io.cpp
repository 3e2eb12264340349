#include "vps/dataset_io.h"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace fs = std::filesystem;

namespace vps {

std::vector<std::pair<int, int>> associate_timestamps(const std::vector<double>& a,
                                                      const std::vector<double>& b,
                                                      double max_dt) {
    struct Cand {
        double dt;
        double ta, tb;
        int i, j;
    };
    std::vector<Cand> cands;
    // Both lists are time-sorted in TUM data; a linear sweep collects the
    // few candidates per entry.
    size_t lo = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        while (lo < b.size() && b[lo] < a[i] - max_dt) ++lo;
        for (size_t j = lo; j < b.size() && b[j] <= a[i] + max_dt; ++j)
            cands.push_back({std::abs(a[i] - b[j]), a[i], b[j], int(i), int(j)});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
        if (x.dt != y.dt) return x.dt < y.dt;
        if (x.ta != y.ta) return x.ta < y.ta;
        return x.tb < y.tb;
    });
    std::vector<uint8_t> used_a(a.size(), 0), used_b(b.size(), 0);
    std::vector<std::pair<int, int>> pairs;
    for (const Cand& c : cands) {
        if (used_a[c.i] || used_b[c.j]) continue;
        used_a[c.i] = used_b[c.j] = 1;
        pairs.emplace_back(c.i, c.j);
    }
    std::sort(pairs.begin(), pairs.end());
    return pairs;
}

namespace {

struct TimedFile {
    double t;
    std::string name;
};

std::vector<TimedFile> read_file_list(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DatasetError("missing dataset file: " + path.string());
    std::vector<TimedFile> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        TimedFile f;
        if (ss >> f.t >> f.name) out.push_back(f);
    }
    return out;
}

bool try_sidecar_intrinsics(const fs::path& dir, Intrinsics& K) {
    std::ifstream is(dir / "intrinsics.txt");
    if (!is) return false;
    Intrinsics k;
    if (is >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height >> k.depth_scale) {
        K = k;
        return true;
    }
    return false;
}

bool freiburg_defaults(const std::string& dir, Intrinsics& K) {
    auto has = [&](const char* s) { return dir.find(s) != std::string::npos; };
    K.width = 640;
    K.height = 480;
    K.depth_scale = 5000.0;
    if (has("freiburg1") || has("fr1")) {
        K.fx = 517.3; K.fy = 516.5; K.cx = 318.6; K.cy = 255.3;
        return true;
    }
    if (has("freiburg2") || has("fr2")) {
        K.fx = 520.9; K.fy = 521.0; K.cx = 325.1; K.cy = 249.7;
        return true;
    }
    if (has("freiburg3") || has("fr3")) {
        K.fx = 535.4; K.fy = 539.2; K.cx = 320.1; K.cy = 247.6;
        return true;
    }
    return false;
}

} // namespace

DatasetIndex load_tum_index(const std::string& dir, int max_frames,
                            const Intrinsics* K_override) {
    const fs::path root(dir);
    const auto rgb = read_file_list(root / "rgb.txt");
    const auto depth = read_file_list(root / "depth.txt");

    std::vector<double> t_rgb(rgb.size()), t_depth(depth.size());
    for (size_t i = 0; i < rgb.size(); ++i) t_rgb[i] = rgb[i].t;
    for (size_t i = 0; i < depth.size(); ++i) t_depth[i] = depth[i].t;
    const auto pairs = associate_timestamps(t_rgb, t_depth);
    if (pairs.empty()) throw DatasetError("no rgb/depth associations in " + dir);

    DatasetIndex index;
    index.dir = dir;
    for (const auto& [i, j] : pairs) {
        FrameEntry e;
        e.t_rgb = rgb[i].t;
        e.rgb_path = (root / rgb[i].name).string();
        e.t_depth = depth[j].t;
        e.depth_path = (root / depth[j].name).string();
        index.entries.push_back(std::move(e));
        if (max_frames > 0 && int(index.entries.size()) >= max_frames) break;
    }

    if (K_override != nullptr && K_override->valid()) {
        index.K = *K_override;
    } else if (!try_sidecar_intrinsics(root, index.K) &&
               !freiburg_defaults(dir, index.K)) {
        throw DatasetError("cannot resolve intrinsics for " + dir +
                           " (no intrinsics.txt, no fr1/fr2/fr3 hint, no config)");
    }
    return index;
}

ColorImage load_color_png(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw DatasetError("cannot read image " + path);
    ColorImage img(m.cols, m.rows);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            const cv::Vec3b bgr = m.at<cv::Vec3b>(y, x);
            float* p = img.px(x, y);
            p[0] = bgr[2] / 255.f;
            p[1] = bgr[1] / 255.f;
            p[2] = bgr[0] / 255.f;
        }
    return img;
}

DepthImage load_depth_png(const std::string& path, double depth_scale, double max_depth) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw DatasetError("cannot read depth image " + path);
    if (m.type() != CV_16UC1)
        throw DatasetError("depth image is not 16-bit single channel: " + path);
    DepthImage d(m.cols, m.rows);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            const uint16_t raw = m.at<uint16_t>(y, x);
            const double z = raw / depth_scale;
            d.at(x, y) = (raw == 0 || z > max_depth) ? 0.f : static_cast<float>(z);
        }
    return d;
}

void save_color_png(const ColorImage& img, const std::string& path) {
    cv::Mat m(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const float* p = img.px(x, y);
            auto to8 = [](float v) {
                return static_cast<uint8_t>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
            };
            m.at<cv::Vec3b>(y, x) = cv::Vec3b(to8(p[2]), to8(p[1]), to8(p[0]));
        }
    if (!cv::imwrite(path, m)) throw IoError("cannot write " + path);
}

void save_depth_png(const DepthImage& depth, const std::string& path, double depth_scale) {
    cv::Mat m(depth.height, depth.width, CV_16UC1);
    for (int y = 0; y < depth.height; ++y)
        for (int x = 0; x < depth.width; ++x) {
            const double v = depth.at(x, y) * depth_scale;
            m.at<uint16_t>(y, x) =
                static_cast<uint16_t>(std::clamp(std::lround(v), 0l, 65535l));
        }
    if (!cv::imwrite(path, m)) throw IoError("cannot write " + path);
}

std::vector<Frame> load_tum(const DatasetIndex& index) {
    std::vector<Frame> frames;
    frames.reserve(index.entries.size());
    for (const FrameEntry& e : index.entries) {
        Frame f;
        f.timestamp = e.t_rgb;
        f.color = load_color_png(e.rgb_path);
        f.depth = load_depth_png(e.depth_path, index.K.depth_scale, index.max_depth);
        frames.push_back(std::move(f));
    }
    return frames;
}

void write_tum_dataset(const std::string& dir, const std::vector<Frame>& frames,
                       const Intrinsics& K) {
    const fs::path root(dir);
    fs::create_directories(root / "rgb");
    fs::create_directories(root / "depth");
    std::ofstream rgb_list(root / "rgb.txt");
    std::ofstream depth_list(root / "depth.txt");
    if (!rgb_list || !depth_list) throw IoError("cannot write file lists in " + dir);
    rgb_list << "# timestamp filename\n";
    depth_list << "# timestamp filename\n";
    std::vector<TrajectoryEntry> traj;
    char name[64];
    for (const Frame& f : frames) {
        std::snprintf(name, sizeof(name), "%.6f.png", f.timestamp);
        save_color_png(f.color, (root / "rgb" / name).string());
        save_depth_png(f.depth, (root / "depth" / name).string(), K.depth_scale);
        char ts[32];
        std::snprintf(ts, sizeof(ts), "%.6f", f.timestamp);
        rgb_list << ts << " rgb/" << name << "\n";
        depth_list << ts << " depth/" << name << "\n";
        if (f.has_pose) traj.push_back({f.timestamp, f.pose});
    }
    if (!traj.empty()) save_trajectory_tum(traj, (root / "groundtruth.txt").string());
    std::ofstream intr(root / "intrinsics.txt");
    intr << K.fx << ' ' << K.fy << ' ' << K.cx << ' ' << K.cy << ' ' << K.width << ' '
         << K.height << ' ' << K.depth_scale << '\n';
}

void save_trajectory_tum(const std::vector<TrajectoryEntry>& traj,
                         const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write trajectory " + path);
    os << "# timestamp tx ty tz qx qy qz qw\n";
    os.precision(9);
    os << std::fixed;
    for (const TrajectoryEntry& e : traj) {
        Eigen::Quaterniond q(e.pose.R);
        q.normalize();
        if (q.w() < 0) q.coeffs() = -q.coeffs();
        os << e.timestamp << ' ' << e.pose.t.x() << ' ' << e.pose.t.y() << ' '
           << e.pose.t.z() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' '
           << q.w() << '\n';
    }
}

std::vector<TrajectoryEntry> load_trajectory_tum(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DatasetError("missing trajectory file: " + path);
    std::vector<TrajectoryEntry> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        double t, tx, ty, tz, qx, qy, qz, qw;
        if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) continue;
        TrajectoryEntry e;
        e.timestamp = t;
        e.pose.t = Vec3(tx, ty, tz);
        e.pose.R = Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix();
        out.push_back(e);
    }
    return out;
}

PointCloud export_surface_points(const VoxelGrid& grid, double band) {
    if (band <= 0.0) band = grid.voxel_size();
    PointCloud cloud;
    for (const Vec3i& idx : grid.surface_voxels(band)) {
        const VoxelRecord& rec = *grid.find(idx);
        const auto x = surface_point(rec, grid.center(idx), grid.truncation());
        if (!x) continue;
        cloud.points.push_back(x->cast<float>());
        const Vec3 a = rec.albedo.cwiseMax(0.0).cwiseMin(1.0) * 255.0;
        cloud.colors.push_back({static_cast<uint8_t>(std::lround(a[0])),
                                static_cast<uint8_t>(std::lround(a[1])),
                                static_cast<uint8_t>(std::lround(a[2]))});
    }
    return cloud;
}

namespace {

void write_ply_header(std::ofstream& os, bool binary, size_t n_vertices,
                      bool with_normals, size_t n_faces) {
    os << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
    os << "element vertex " << n_vertices << "\n";
    os << "property float x\nproperty float y\nproperty float z\n";
    if (with_normals)
        os << "property float nx\nproperty float ny\nproperty float nz\n";
    os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    if (n_faces > 0) {
        os << "element face " << n_faces << "\n";
        os << "property list uchar int vertex_indices\n";
    }
    os << "end_header\n";
}

void put_f32(std::ofstream& os, float v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

} // namespace

void save_ply(const PointCloud& cloud, const std::string& path, bool binary) {
    std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
    if (!os) throw IoError("cannot write " + path);
    write_ply_header(os, binary, cloud.points.size(), false, 0);
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        const Vec3f& p = cloud.points[i];
        const auto& c = cloud.colors[i];
        if (binary) {
            put_f32(os, p.x());
            put_f32(os, p.y());
            put_f32(os, p.z());
            os.write(reinterpret_cast<const char*>(c.data()), 3);
        } else {
            os << p.x() << ' ' << p.y() << ' ' << p.z() << ' ' << int(c[0]) << ' '
               << int(c[1]) << ' ' << int(c[2]) << '\n';
        }
    }
    if (!os) throw IoError("write failed on " + path);
}

void save_ply(const TriangleMesh& mesh, const std::string& path, bool binary) {
    std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
    if (!os) throw IoError("cannot write " + path);
    write_ply_header(os, binary, mesh.vertices.size(), true, mesh.faces.size());
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3f& p = mesh.vertices[i];
        const Vec3f& n = mesh.normals[i];
        const auto& c = mesh.colors[i];
        if (binary) {
            put_f32(os, p.x());
            put_f32(os, p.y());
            put_f32(os, p.z());
            put_f32(os, n.x());
            put_f32(os, n.y());
            put_f32(os, n.z());
            os.write(reinterpret_cast<const char*>(c.data()), 3);
        } else {
            os << p.x() << ' ' << p.y() << ' ' << p.z() << ' ' << n.x() << ' ' << n.y()
               << ' ' << n.z() << ' ' << int(c[0]) << ' ' << int(c[1]) << ' '
               << int(c[2]) << '\n';
        }
    }
    for (const auto& f : mesh.faces) {
        if (binary) {
            const uint8_t three = 3;
            os.write(reinterpret_cast<const char*>(&three), 1);
            os.write(reinterpret_cast<const char*>(f.data()), 12);
        } else {
            os << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
        }
    }
    if (!os) throw IoError("write failed on " + path);
}

PointCloud load_ply_points(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path);
    std::string line;
    if (!std::getline(is, line) || line.substr(0, 3) != "ply")
        throw IoError("not a PLY file: " + path);
    bool binary = false;
    size_t n_vertices = 0;
    struct Prop {
        std::string type, name;
    };
    std::vector<Prop> vprops;
    bool in_vertex = false;
    while (std::getline(is, line)) {
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "format") {
            std::string fmt;
            ss >> fmt;
            binary = fmt == "binary_little_endian";
        } else if (tok == "element") {
            std::string what;
            size_t n;
            ss >> what >> n;
            in_vertex = what == "vertex";
            if (in_vertex) n_vertices = n;
        } else if (tok == "property" && in_vertex) {
            Prop p;
            ss >> p.type >> p.name;
            if (p.type != "list") vprops.push_back(p);
        } else if (tok == "end_header") {
            break;
        }
    }
    PointCloud cloud;
    cloud.points.reserve(n_vertices);
    for (size_t i = 0; i < n_vertices; ++i) {
        Vec3f p = Vec3f::Zero();
        std::array<uint8_t, 3> col{255, 255, 255};
        if (binary) {
            for (const Prop& pr : vprops) {
                if (pr.type == "float") {
                    float v;
                    is.read(reinterpret_cast<char*>(&v), 4);
                    if (pr.name == "x") p.x() = v;
                    else if (pr.name == "y") p.y() = v;
                    else if (pr.name == "z") p.z() = v;
                } else if (pr.type == "uchar") {
                    uint8_t v;
                    is.read(reinterpret_cast<char*>(&v), 1);
                    if (pr.name == "red") col[0] = v;
                    else if (pr.name == "green") col[1] = v;
                    else if (pr.name == "blue") col[2] = v;
                }
            }
        } else {
            if (!std::getline(is, line)) break;
            std::istringstream ss(line);
            double val;
            for (const Prop& pr : vprops) {
                if (!(ss >> val)) break;
                if (pr.name == "x") p.x() = static_cast<float>(val);
                else if (pr.name == "y") p.y() = static_cast<float>(val);
                else if (pr.name == "z") p.z() = static_cast<float>(val);
                else if (pr.name == "red") col[0] = static_cast<uint8_t>(val);
                else if (pr.name == "green") col[1] = static_cast<uint8_t>(val);
                else if (pr.name == "blue") col[2] = static_cast<uint8_t>(val);
            }
        }
        if (!is) throw IoError("truncated PLY " + path);
        cloud.points.push_back(p);
        cloud.colors.push_back(col);
    }
    return cloud;
}

} // namespace vps
