#include "gtalk/scene/gaussian_set.hpp"

#include "gtalk/io/binary.hpp"
#include "gtalk/util/error.hpp"
#include "gtalk/util/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace gtalk {

using diff::Array;

GaussianSet GaussianSet::zeros(std::size_t n, int sh_degree) {
    GaussianSet s;
    s.sh_degree = sh_degree;
    s.positions = Array({n, 3});
    s.rotations = Array({n, 4});
    for (std::size_t i = 0; i < n; ++i) s.rotations.at(i, 0) = 1.0;
    s.log_scales = Array({n, 3});
    s.sh_coeffs = Array({n, 3 * sh_coeff_count(sh_degree)});
    s.opacity_logits = Array({n, 1});
    return s;
}

void GaussianSet::validate(std::size_t cap) const {
    if (sh_degree < 0 || sh_degree > 3) throw DataError("SH degree must be in [0,3]");
    const std::size_t n = size();
    if (n == 0) throw DataError("Gaussian set is empty");
    if (n > cap)
        throw DataError("Gaussian set has " + std::to_string(n) + " Gaussians, above the cap of " + std::to_string(cap));
    auto check = [n](const Array& a, std::size_t cols, const char* name) {
        if (a.rank() != 2 || a.dim(0) != n || a.dim(1) != cols)
            throw DataError(std::string("field ") + name + " has shape " + diff::shape_string(a.shape()));
        if (!a.all_finite()) throw DataError(std::string("field ") + name + " has non-finite values");
    };
    check(positions, 3, "positions");
    check(rotations, 4, "rotations");
    check(log_scales, 3, "log_scales");
    check(sh_coeffs, 3 * sh_coeff_count(sh_degree), "sh_coeffs");
    check(opacity_logits, 1, "opacity_logits");
    for (std::size_t i = 0; i < n; ++i) {
        double q = 0.0;
        for (std::size_t j = 0; j < 4; ++j) q += rotations.at(i, j) * rotations.at(i, j);
        if (!(q > 0.0)) throw DataError("Gaussian " + std::to_string(i) + " has a zero quaternion");
    }
}

Eigen::Matrix3d rotation_from_quaternion(const Eigen::Vector4d& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Eigen::Matrix3d covariance_from(const Eigen::Vector4d& quat, const Eigen::Vector3d& scale) {
    const double len = quat.norm();
    if (!(len > 0.0)) throw NumericError("covariance_from: zero quaternion");
    if (std::abs(len - 1.0) >= 1e-3) throw NumericError("covariance_from: quaternion is not normalized");
    const Eigen::Matrix3d m = rotation_from_quaternion(quat / len) * scale.asDiagonal();
    return m * m.transpose();
}

std::vector<Eigen::Vector3d> read_point_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open point file " + path.string());
    std::vector<Eigen::Vector3d> pts;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
        std::istringstream ls(line);
        Eigen::Vector3d p;
        if (!(ls >> p.x() >> p.y() >> p.z()))
            throw DataError("point file " + path.string() + ": malformed line " + std::to_string(line_no));
        pts.push_back(p);
    }
    if (pts.empty()) throw DataError("point file " + path.string() + " contains no vertices");
    return pts;
}

void write_point_file(const std::filesystem::path& path, const Array& positions) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write point file " + path.string());
    out.precision(17);
    for (std::size_t i = 0; i < positions.dim(0); ++i)
        out << positions.at(i, 0) << ' ' << positions.at(i, 1) << ' ' << positions.at(i, 2) << '\n';
}

Array init_positions(InitSource source, std::size_t count, std::uint64_t seed, const std::filesystem::path& point_file) {
    if (count == 0) throw DataError("init_positions: count must be positive");
    Array out({count, 3});
    Rng rng(seed);
    if (source == InitSource::sphere) {
        for (std::size_t i = 0; i < count; ++i) {
            Eigen::Vector3d v;
            do {
                v = {rng.normal(), rng.normal(), rng.normal()};
            } while (v.norm() < 1e-12);
            v *= 0.5 / v.norm();
            for (int c = 0; c < 3; ++c) out.at(i, c) = v[c];
        }
        return out;
    }
    const auto pts = read_point_file(point_file);
    std::vector<std::size_t> pick(count);
    if (count == pts.size()) {
        for (std::size_t i = 0; i < count; ++i) pick[i] = i;
    } else {
        // Seeded shuffle; beyond the vertex count, draw with replacement.
        std::vector<std::size_t> perm(pts.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
        for (std::size_t i = 0; i < count; ++i) pick[i] = i < perm.size() ? perm[i] : rng.index(pts.size());
    }
    for (std::size_t i = 0; i < count; ++i)
        for (int c = 0; c < 3; ++c) out.at(i, c) = pts[pick[i]][c];
    return out;
}

namespace {

constexpr char kSceneMagic[8] = {'G', 'T', 'S', 'C', 'E', 'N', 'E', '\0'};
constexpr std::uint32_t kSceneVersion = 1;

void write_block(std::ostream& os, const Array& a) {
    std::vector<float> buf(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) buf[i] = static_cast<float>(a[i]);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Array read_block(std::istream& is, std::size_t rows, std::size_t cols, const char* name) {
    std::vector<float> buf(rows * cols);
    io::read_into(is, buf.data(), buf.size(), name);
    Array a({rows, cols});
    for (std::size_t i = 0; i < buf.size(); ++i) a[i] = static_cast<double>(buf[i]);
    return a;
}

} // namespace

void save_scene(const GaussianSet& set, const std::filesystem::path& path) {
    set.validate(std::numeric_limits<std::size_t>::max());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write scene file " + path.string());
    out.write(kSceneMagic, sizeof(kSceneMagic));
    io::write_pod<std::uint32_t>(out, kSceneVersion);
    io::write_pod<std::uint64_t>(out, set.size());
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(set.sh_degree));
    write_block(out, set.positions);
    write_block(out, set.rotations);
    write_block(out, set.log_scales);
    write_block(out, set.sh_coeffs);
    write_block(out, set.opacity_logits);
    if (!out) throw DataError("failed writing scene file " + path.string());
}

GaussianSet load_scene(const std::filesystem::path& path, std::size_t cap) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open scene file " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic))) throw FormatError("scene file " + path.string() + " is truncated (no header)");
    if (std::memcmp(magic, kSceneMagic, sizeof(magic)) != 0) throw FormatError("scene file " + path.string() + ": bad magic");
    const auto version = io::read_pod<std::uint32_t>(in, "scene version");
    if (version != kSceneVersion)
        throw FormatError("scene file version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kSceneVersion) + ")");
    const auto n = io::read_pod<std::uint64_t>(in, "scene count");
    const auto degree = io::read_pod<std::uint32_t>(in, "scene SH degree");
    if (n == 0) throw FormatError("scene file holds zero Gaussians");
    if (n > cap)
        throw DataError("scene file holds " + std::to_string(n) + " Gaussians, above the cap of " + std::to_string(cap));
    if (degree > 3) throw FormatError("scene file SH degree " + std::to_string(degree) + " outside [0,3]");
    GaussianSet set;
    set.sh_degree = static_cast<int>(degree);
    set.positions = read_block(in, n, 3, "positions");
    set.rotations = read_block(in, n, 4, "rotations");
    set.log_scales = read_block(in, n, 3, "log_scales");
    set.sh_coeffs = read_block(in, n, 3 * sh_coeff_count(set.sh_degree), "sh_coeffs");
    set.opacity_logits = read_block(in, n, 1, "opacity_logits");
    set.validate(cap);
    return set;
}

} // namespace gtalk
