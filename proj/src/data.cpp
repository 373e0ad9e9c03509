#include "pcrec/data.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pcrec/rng.hpp"

namespace pcrec {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

Vec3 cross3(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 normalized3(const Vec3& v) {
    const double n = std::sqrt(dot3(v, v));
    return {v[0] / n, v[1] / n, v[2] / n};
}

void require_positive(double value, const char* what) {
    if (!(value > 0.0)) throw std::invalid_argument(std::string(what) + " must be positive");
}

void require_segments(std::size_t segments) {
    if (segments < 3) throw std::invalid_argument("tessellation needs at least 3 segments");
}

// Axis-aligned box with outward winding, appended to an existing mesh so
// composites can be built from several boxes.
void append_box(TriangleMesh& mesh, const Vec3& center, const Vec3& half) {
    const std::uint32_t base = static_cast<std::uint32_t>(mesh.vertices.size());
    for (int i = 0; i < 8; ++i) {
        mesh.vertices.push_back({center[0] + ((i & 1) ? half[0] : -half[0]),
                                 center[1] + ((i & 2) ? half[1] : -half[1]),
                                 center[2] + ((i & 4) ? half[2] : -half[2])});
    }
    static constexpr std::uint32_t kFaces[12][3] = {
        {0, 4, 6}, {0, 6, 2},  // -x
        {1, 3, 7}, {1, 7, 5},  // +x
        {0, 1, 5}, {0, 5, 4},  // -y
        {2, 6, 7}, {2, 7, 3},  // +y
        {0, 2, 3}, {0, 3, 1},  // -z
        {4, 5, 7}, {4, 7, 6},  // +z
    };
    for (const auto& f : kFaces)
        mesh.triangles.push_back({base + f[0], base + f[1], base + f[2]});
}

TriangleMesh make_box(double a, double b, double c) {
    require_positive(a, "box width");
    require_positive(b, "box depth");
    require_positive(c, "box height");
    TriangleMesh mesh;
    append_box(mesh, {0, 0, 0}, {a / 2, b / 2, c / 2});
    return mesh;
}

TriangleMesh make_cylinder(double radius, double height, std::size_t seg) {
    require_positive(radius, "cylinder radius");
    require_positive(height, "cylinder height");
    require_segments(seg);
    TriangleMesh mesh;
    const double hz = height / 2;
    for (std::size_t i = 0; i < seg; ++i) {
        const double th = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(seg);
        mesh.vertices.push_back({radius * std::cos(th), radius * std::sin(th), -hz});
    }
    for (std::size_t i = 0; i < seg; ++i) {
        const double th = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(seg);
        mesh.vertices.push_back({radius * std::cos(th), radius * std::sin(th), hz});
    }
    const std::uint32_t bc = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back({0, 0, -hz});
    const std::uint32_t tc = bc + 1;
    mesh.vertices.push_back({0, 0, hz});
    const auto s = static_cast<std::uint32_t>(seg);
    for (std::uint32_t i = 0; i < s; ++i) {
        const std::uint32_t j = (i + 1) % s;
        mesh.triangles.push_back({i, j, s + j});
        mesh.triangles.push_back({i, s + j, s + i});
        mesh.triangles.push_back({bc, j, i});
        mesh.triangles.push_back({tc, s + i, s + j});
    }
    return mesh;
}

TriangleMesh make_ellipsoid(double a, double b, double c, std::size_t seg) {
    require_positive(a, "ellipsoid radius");
    require_positive(b, "ellipsoid radius");
    require_positive(c, "ellipsoid radius");
    require_segments(seg);
    const std::size_t rings = std::max<std::size_t>(2, seg / 2);
    TriangleMesh mesh;
    mesh.vertices.push_back({0, 0, c});
    for (std::size_t m = 1; m < rings; ++m) {
        const double phi = M_PI * static_cast<double>(m) / static_cast<double>(rings);
        for (std::size_t i = 0; i < seg; ++i) {
            const double th = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(seg);
            mesh.vertices.push_back({a * std::sin(phi) * std::cos(th),
                                     b * std::sin(phi) * std::sin(th), c * std::cos(phi)});
        }
    }
    const std::uint32_t south = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back({0, 0, -c});
    const auto s = static_cast<std::uint32_t>(seg);
    auto ring = [s](std::uint32_t m, std::uint32_t i) { return 1 + (m - 1) * s + (i % s); };
    for (std::uint32_t i = 0; i < s; ++i)
        mesh.triangles.push_back({0, ring(1, i), ring(1, i + 1)});
    for (std::uint32_t m = 1; m + 1 < rings; ++m) {
        for (std::uint32_t i = 0; i < s; ++i) {
            const std::uint32_t ui = ring(m, i), uj = ring(m, i + 1);
            const std::uint32_t wi = ring(m + 1, i), wj = ring(m + 1, i + 1);
            mesh.triangles.push_back({wi, wj, uj});
            mesh.triangles.push_back({wi, uj, ui});
        }
    }
    const auto last = static_cast<std::uint32_t>(rings - 1);
    for (std::uint32_t i = 0; i < s; ++i)
        mesh.triangles.push_back({south, ring(last, i + 1), ring(last, i)});
    return mesh;
}

TriangleMesh make_torus(double ring_r, double tube_r, std::size_t seg) {
    require_positive(ring_r, "torus ring radius");
    require_positive(tube_r, "torus tube radius");
    if (!(tube_r < ring_r))
        throw std::invalid_argument("torus tube radius must be smaller than its ring radius");
    require_segments(seg);
    TriangleMesh mesh;
    for (std::size_t i = 0; i < seg; ++i) {
        const double th = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(seg);
        for (std::size_t j = 0; j < seg; ++j) {
            const double ph = 2.0 * M_PI * static_cast<double>(j) / static_cast<double>(seg);
            const double rad = ring_r + tube_r * std::cos(ph);
            mesh.vertices.push_back({rad * std::cos(th), rad * std::sin(th),
                                     tube_r * std::sin(ph)});
        }
    }
    const auto s = static_cast<std::uint32_t>(seg);
    auto at = [s](std::uint32_t i, std::uint32_t j) { return (i % s) * s + (j % s); };
    for (std::uint32_t i = 0; i < s; ++i) {
        for (std::uint32_t j = 0; j < s; ++j) {
            mesh.triangles.push_back({at(i, j), at(i + 1, j), at(i + 1, j + 1)});
            mesh.triangles.push_back({at(i, j), at(i + 1, j + 1), at(i, j + 1)});
        }
    }
    return mesh;
}

// L-shaped cross section extruded along z. The boundary runs counterclockwise
// with one extra vertex on the inner corner column so every edge is shared by
// exactly two triangles.
TriangleMesh make_l_bracket(double a, double b, double depth) {
    require_positive(a, "bracket leg length");
    require_positive(b, "bracket leg length");
    require_positive(depth, "bracket depth");
    const double t = 0.35 * std::min(a, b);
    const double poly[7][2] = {{0, 0}, {a, 0}, {a, t}, {t, t}, {t, b}, {0, b}, {0, t}};
    TriangleMesh mesh;
    const double hz = depth / 2;
    for (int side = 0; side < 2; ++side)
        for (const auto& p : poly)
            mesh.vertices.push_back({p[0] - a / 2, p[1] - b / 2, side ? hz : -hz});
    static constexpr std::uint32_t kFace[5][3] = {
        {0, 1, 2}, {0, 2, 3}, {0, 3, 6}, {6, 3, 4}, {6, 4, 5}};
    for (const auto& f : kFace) {
        mesh.triangles.push_back({7 + f[0], 7 + f[1], 7 + f[2]});  // front, z = +hz
        mesh.triangles.push_back({f[0], f[2], f[1]});              // back, reversed
    }
    for (std::uint32_t i = 0; i < 7; ++i) {
        const std::uint32_t j = (i + 1) % 7;
        mesh.triangles.push_back({i, j, 7 + j});
        mesh.triangles.push_back({i, 7 + j, 7 + i});
    }
    return mesh;
}

// Top slab on four corner legs. The leg tops are flush with the slab bottom,
// so each of the five boxes stays closed and the glue plane is never visible
// from outside.
TriangleMesh make_table(double a, double b, double c) {
    require_positive(a, "table width");
    require_positive(b, "table depth");
    require_positive(c, "table height");
    const double top_t = 0.12 * c;
    const double leg_h = c - top_t;
    const double leg_t = 0.12 * std::min(a, b);
    const double inset = 0.03 * std::min(a, b);
    TriangleMesh mesh;
    append_box(mesh, {0, 0, c - top_t / 2 - c / 2}, {a / 2, b / 2, top_t / 2});
    const double lx = a / 2 - leg_t / 2 - inset;
    const double ly = b / 2 - leg_t / 2 - inset;
    for (double sx : {-1.0, 1.0})
        for (double sy : {-1.0, 1.0})
            append_box(mesh, {sx * lx, sy * ly, leg_h / 2 - c / 2},
                       {leg_t / 2, leg_t / 2, leg_h / 2});
    return mesh;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (!in.good() && !in.eof()) throw std::runtime_error("failed reading " + path);
    return bytes;
}

// All dataset files are written to a sibling temp name and renamed into
// place, so readers never observe a half-written file.
void atomic_write(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out.good()) throw std::runtime_error("failed writing " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

void append_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::string checksum_hex(const std::string& bytes) {
    const std::uint64_t h = fnv1a(bytes.data(), bytes.size());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string view_name(std::size_t view_idx) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "view_%02zu.ppm", view_idx);
    return buf;
}

std::string sample_id(std::size_t idx) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "sample_%04zu", idx);
    return buf;
}

// Reads one dataset file and verifies it against the manifest checksum.
std::string read_verified(const DatasetManifest& manifest, const SampleRecord& rec,
                          const std::string& rel) {
    const auto it = rec.files.find(rel);
    if (it == rec.files.end())
        throw std::runtime_error("manifest record " + rec.id + " lists no file " + rel);
    const std::string path = manifest.root + "/" + rec.id + "/" + rel;
    if (!std::filesystem::exists(path)) throw std::runtime_error("missing file " + path);
    std::string bytes = read_file(path);
    if (checksum_hex(bytes) != it->second)
        throw std::runtime_error("checksum mismatch for " + path);
    return bytes;
}

PointCloud pcb_from_bytes(const std::string& bytes, const std::string& origin) {
    if (bytes.size() < 8 || bytes.compare(0, 4, "PCB1") != 0)
        throw std::runtime_error(origin + " is not a point cloud file");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t count = read_u32_le(p + 4);
    if (bytes.size() != 8 + 12 * static_cast<std::size_t>(count))
        throw std::runtime_error(origin + " is truncated");
    PointCloud pc;
    pc.pts.resize(count);
    for (std::uint32_t i = 0; i < count; ++i)
        for (int k = 0; k < 3; ++k)
            pc.pts[i][static_cast<std::size_t>(k)] =
                std::bit_cast<float>(read_u32_le(p + 8 + 12 * i + 4 * k));
    return pc;
}

std::string pcb_to_bytes(const PointCloud& pc) {
    std::string bytes = "PCB1";
    append_u32_le(bytes, static_cast<std::uint32_t>(pc.size()));
    for (const auto& p : pc.pts)
        for (double v : p)
            append_u32_le(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    return bytes;
}

std::string ppm_to_bytes(const Image& img) {
    std::string bytes = "P6\n" + std::to_string(img.size) + " " + std::to_string(img.size) +
                        "\n255\n";
    for (std::size_t y = 0; y < img.size; ++y)
        for (std::size_t x = 0; x < img.size; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(img.at(ch, y, x), 0.0, 1.0);
                bytes.push_back(static_cast<char>(std::lround(v * 255.0)));
            }
    return bytes;
}

Image ppm_from_bytes(const std::string& bytes, const std::string& origin) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return bytes.substr(start, pos - start);
    };
    if (token() != "P6") throw std::runtime_error(origin + " is not a binary PPM");
    const std::string w = token(), h = token(), maxv = token();
    if (w != h || maxv != "255")
        throw std::runtime_error(origin + " has an unsupported PPM layout");
    ++pos;  // single whitespace after the header
    const std::size_t size = std::stoul(w);
    if (bytes.size() - pos != 3 * size * size)
        throw std::runtime_error(origin + " is truncated");
    Image img(size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch)
                img.at(ch, y, x) =
                    static_cast<double>(static_cast<unsigned char>(bytes[pos++])) / 255.0;
    return img;
}

}  // namespace

std::string to_string(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::box: return "box";
        case ShapeKind::cylinder: return "cylinder";
        case ShapeKind::ellipsoid: return "ellipsoid";
        case ShapeKind::torus: return "torus";
        case ShapeKind::l_bracket: return "l-bracket";
        case ShapeKind::table: return "table";
    }
    throw std::invalid_argument("unknown shape kind");
}

ShapeKind shape_kind_from_string(const std::string& name) {
    for (ShapeKind k : all_shape_kinds())
        if (to_string(k) == name) return k;
    throw std::invalid_argument("unknown shape kind: " + name);
}

const std::vector<ShapeKind>& all_shape_kinds() {
    static const std::vector<ShapeKind> kinds = {ShapeKind::box,   ShapeKind::cylinder,
                                                 ShapeKind::ellipsoid, ShapeKind::torus,
                                                 ShapeKind::l_bracket, ShapeKind::table};
    return kinds;
}

TriangleMesh generate_shape(ShapeKind kind, const ShapeParams& params, std::uint64_t seed) {
    if (params.jitter < 0.0 || params.jitter >= 1.0)
        throw std::invalid_argument("shape jitter must lie in [0, 1)");
    Rng rng(seed);
    const double fa = rng.uniform(1.0 - params.jitter, 1.0 + params.jitter);
    const double fb = rng.uniform(1.0 - params.jitter, 1.0 + params.jitter);
    const double fc = rng.uniform(1.0 - params.jitter, 1.0 + params.jitter);
    const double a = params.a * fa, b = params.b * fb, c = params.c * fc;
    switch (kind) {
        case ShapeKind::box: return make_box(a, b, c);
        case ShapeKind::cylinder: return make_cylinder(a, b, params.segments);
        case ShapeKind::ellipsoid: return make_ellipsoid(a, b, c, params.segments);
        case ShapeKind::torus: return make_torus(a, b, params.segments);
        case ShapeKind::l_bracket: return make_l_bracket(a, b, c);
        case ShapeKind::table: return make_table(a, b, c);
    }
    throw std::invalid_argument("unknown shape kind");
}

Tensor Image::to_tensor() const { return Tensor({3, size, size}, rgb); }

std::vector<Image> render_views(const TriangleMesh& mesh, std::size_t count,
                                std::size_t image_size) {
    if (count < 1) throw std::invalid_argument("render_views needs at least one view");
    if (image_size < 1) throw std::invalid_argument("image size must be positive");
    if (mesh.vertices.empty() || mesh.triangles.empty())
        throw std::invalid_argument("cannot render an empty mesh");

    // Frame by the mesh's own bounding box so every shape fills the image the
    // same way regardless of its native scale.
    PointCloud verts{std::vector<Vec3>(mesh.vertices)};
    verts = normalize_unit_bbox(verts);

    constexpr double kElevation = 20.0 * M_PI / 180.0;
    constexpr double kHalfWindow = 0.9;  // covers the unit box's half diagonal
    const Vec3 light = normalized3({0.35, 0.45, 0.83});
    const double step = 2.0 * kHalfWindow / static_cast<double>(image_size);

    std::vector<Image> views;
    views.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const double az = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(count);
        const Vec3 eye = {std::cos(kElevation) * std::cos(az),
                          std::cos(kElevation) * std::sin(az), std::sin(kElevation)};
        const Vec3 right = {-std::sin(az), std::cos(az), 0.0};
        const Vec3 up = {-std::sin(kElevation) * std::cos(az),
                         -std::sin(kElevation) * std::sin(az), std::cos(kElevation)};

        Image img(image_size);
        std::vector<double> zbuf(image_size * image_size,
                                 -std::numeric_limits<double>::infinity());
        for (const auto& tri : mesh.triangles) {
            const Vec3& w0 = verts[tri[0]];
            const Vec3& w1 = verts[tri[1]];
            const Vec3& w2 = verts[tri[2]];
            const double su[3] = {dot3(w0, right), dot3(w1, right), dot3(w2, right)};
            const double sv[3] = {dot3(w0, up), dot3(w1, up), dot3(w2, up)};
            const double sd[3] = {dot3(w0, eye), dot3(w1, eye), dot3(w2, eye)};
            const double area = (su[1] - su[0]) * (sv[2] - sv[0]) -
                                (sv[1] - sv[0]) * (su[2] - su[0]);
            if (std::abs(area) < 1e-14) continue;

            const Vec3 n = cross3(sub3(mesh.vertices[tri[1]], mesh.vertices[tri[0]]),
                                  sub3(mesh.vertices[tri[2]], mesh.vertices[tri[0]]));
            const double nn = std::sqrt(dot3(n, n));
            if (nn == 0.0) continue;
            // Two-sided flat shading, never reaching pure white so shaded
            // pixels stay distinguishable from the background.
            const double shade = 0.12 + 0.85 * std::abs(dot3(n, light)) / nn;

            const double su_min = std::min({su[0], su[1], su[2]});
            const double su_max = std::max({su[0], su[1], su[2]});
            const double sv_min = std::min({sv[0], sv[1], sv[2]});
            const double sv_max = std::max({sv[0], sv[1], sv[2]});
            const auto last = static_cast<long>(image_size) - 1;
            const long x_lo = std::clamp(
                static_cast<long>(std::floor((su_min + kHalfWindow) / step - 0.5)), 0L, last);
            const long x_hi = std::clamp(
                static_cast<long>(std::ceil((su_max + kHalfWindow) / step)), 0L, last);
            const long y_lo = std::clamp(
                static_cast<long>(std::floor((kHalfWindow - sv_max) / step - 0.5)), 0L, last);
            const long y_hi = std::clamp(
                static_cast<long>(std::ceil((kHalfWindow - sv_min) / step)), 0L, last);
            for (long y = y_lo; y <= y_hi; ++y) {
                const double pv = kHalfWindow - (static_cast<double>(y) + 0.5) * step;
                for (long x = x_lo; x <= x_hi; ++x) {
                    const double pu = -kHalfWindow + (static_cast<double>(x) + 0.5) * step;
                    const double e0 = (su[2] - su[1]) * (pv - sv[1]) -
                                      (sv[2] - sv[1]) * (pu - su[1]);
                    const double e1 = (su[0] - su[2]) * (pv - sv[2]) -
                                      (sv[0] - sv[2]) * (pu - su[2]);
                    const double e2 = (su[1] - su[0]) * (pv - sv[0]) -
                                      (sv[1] - sv[0]) * (pu - su[0]);
                    const bool inside = area > 0 ? (e0 >= 0 && e1 >= 0 && e2 >= 0)
                                                 : (e0 <= 0 && e1 <= 0 && e2 <= 0);
                    if (!inside) continue;
                    const double depth = (e0 * sd[0] + e1 * sd[1] + e2 * sd[2]) / area;
                    const std::size_t pix =
                        static_cast<std::size_t>(y) * image_size + static_cast<std::size_t>(x);
                    if (depth <= zbuf[pix]) continue;
                    zbuf[pix] = depth;
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        img.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                            shade;
                }
            }
        }
        views.push_back(std::move(img));
    }
    return views;
}

GtLadder build_gt_ladder(const TriangleMesh& mesh, std::size_t base_n, std::uint64_t seed) {
    if (base_n < 4) throw std::invalid_argument("ladder base size must be at least 4");
    // One farthest-point pass over one pool; its pick order makes every
    // prefix a farthest-point sample itself, so the three rungs nest.
    PointCloud dense = sample_mesh_surface(mesh, 16 * base_n, seed);
    dense = normalize_unit_bbox(dense);
    GtLadder ladder;
    ladder.sparse.pts.assign(dense.pts.begin(), dense.pts.begin() + static_cast<long>(base_n));
    ladder.mid.pts.assign(dense.pts.begin(), dense.pts.begin() + static_cast<long>(4 * base_n));
    ladder.dense = std::move(dense);
    return ladder;
}

void write_pcb(const std::string& path, const PointCloud& pc) {
    atomic_write(path, pcb_to_bytes(pc));
}

PointCloud read_pcb(const std::string& path) { return pcb_from_bytes(read_file(path), path); }

void write_ppm(const std::string& path, const Image& img) {
    atomic_write(path, ppm_to_bytes(img));
}

Image read_ppm(const std::string& path) { return ppm_from_bytes(read_file(path), path); }

void write_ply(const std::string& path, const PointCloud& pc) {
    std::string text = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(pc.size()) +
                       "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
    char line[96];
    for (const auto& p : pc.pts) {
        std::snprintf(line, sizeof line, "%.9g %.9g %.9g\n", p[0], p[1], p[2]);
        text += line;
    }
    atomic_write(path, text);
}

std::string file_checksum(const std::string& path) { return checksum_hex(read_file(path)); }

std::string DatasetManifest::to_json() const {
    nlohmann::json j;
    j["base_n"] = base_n;
    j["image_size"] = image_size;
    j["views"] = views;
    j["seed"] = seed;
    j["samples"] = nlohmann::json::array();
    for (const auto& s : samples) {
        nlohmann::json rec;
        rec["id"] = s.id;
        rec["category"] = s.category;
        rec["split"] = s.split;
        rec["files"] = s.files;
        j["samples"].push_back(std::move(rec));
    }
    return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    DatasetManifest m;
    m.base_n = j.at("base_n").get<std::size_t>();
    m.image_size = j.at("image_size").get<std::size_t>();
    m.views = j.at("views").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& rec : j.at("samples")) {
        SampleRecord s;
        s.id = rec.at("id").get<std::string>();
        s.category = rec.at("category").get<std::string>();
        s.split = rec.at("split").get<std::string>();
        s.files = rec.at("files").get<std::map<std::string, std::string>>();
        m.samples.push_back(std::move(s));
    }
    return m;
}

namespace {

// Base proportions per family; the per-sample seed jitters them.
ShapeParams family_params(ShapeKind kind) {
    ShapeParams p;
    switch (kind) {
        case ShapeKind::box: p.a = 1.0; p.b = 0.8; p.c = 0.6; break;
        case ShapeKind::cylinder: p.a = 0.4; p.b = 1.2; break;
        case ShapeKind::ellipsoid: p.a = 0.6; p.b = 0.45; p.c = 0.35; break;
        case ShapeKind::torus: p.a = 0.7; p.b = 0.25; break;
        case ShapeKind::l_bracket: p.a = 1.0; p.b = 0.8; p.c = 0.4; break;
        case ShapeKind::table: p.a = 1.0; p.b = 0.7; p.c = 0.8; break;
    }
    return p;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t idx) {
    unsigned char bytes[16];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(dataset_seed >> (8 * i));
    const auto id64 = static_cast<std::uint64_t>(idx);
    for (int i = 0; i < 8; ++i) bytes[8 + i] = static_cast<unsigned char>(id64 >> (8 * i));
    return fnv1a(bytes, sizeof bytes);
}

}  // namespace

DatasetManifest generate_dataset(const DatagenConfig& cfg) {
    if (cfg.out.empty()) throw std::invalid_argument("dataset output directory is empty");
    if (cfg.num_shapes < 1) throw std::invalid_argument("dataset needs at least one shape");
    if (cfg.views < 1) throw std::invalid_argument("dataset needs at least one view");
    std::filesystem::create_directories(cfg.out);

    DatasetManifest manifest;
    manifest.root = cfg.out;
    manifest.base_n = cfg.base_n;
    manifest.image_size = cfg.image_size;
    manifest.views = cfg.views;
    manifest.seed = cfg.seed;

    for (std::size_t i = 0; i < cfg.num_shapes; ++i) {
        const ShapeKind kind = all_shape_kinds()[i % all_shape_kinds().size()];
        ShapeParams params = family_params(kind);
        params.jitter = 0.2;
        const std::uint64_t seed_i = sample_seed(cfg.seed, i);
        const TriangleMesh mesh = generate_shape(kind, params, seed_i);
        const std::vector<Image> views = render_views(mesh, cfg.views, cfg.image_size);
        const GtLadder ladder = build_gt_ladder(mesh, cfg.base_n, seed_i);

        SampleRecord rec;
        rec.id = sample_id(i);
        rec.category = to_string(kind);
        const std::string dir = cfg.out + "/" + rec.id;
        std::filesystem::create_directories(dir);
        for (std::size_t v = 0; v < views.size(); ++v) {
            const std::string name = view_name(v);
            write_ppm(dir + "/" + name, views[v]);
            rec.files[name] = file_checksum(dir + "/" + name);
        }
        const std::pair<const char*, const PointCloud*> clouds[3] = {
            {"gt_sparse.pcb", &ladder.sparse},
            {"gt_mid.pcb", &ladder.mid},
            {"gt_dense.pcb", &ladder.dense}};
        for (const auto& [name, pc] : clouds) {
            write_pcb(dir + "/" + name, *pc);
            rec.files[name] = file_checksum(dir + "/" + name);
        }
        manifest.samples.push_back(std::move(rec));
    }

    assign_splits(manifest.samples);
    write_manifest(manifest);
    return manifest;
}

void assign_splits(std::vector<SampleRecord>& samples) {
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<std::uint64_t> hashes(order.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        hashes[i] = fnv1a(samples[i].id.data(), samples[i].id.size());
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        if (hashes[x] != hashes[y]) return hashes[x] < hashes[y];
        return samples[x].id < samples[y].id;
    });
    const std::size_t n_train = (4 * samples.size() + 2) / 5;
    for (std::size_t r = 0; r < order.size(); ++r)
        samples[order[r]].split = r < n_train ? "train" : "test";
}

void write_manifest(const DatasetManifest& manifest) {
    if (manifest.root.empty()) throw std::invalid_argument("manifest has no root directory");
    atomic_write(manifest.root + "/manifest.json", manifest.to_json());
}

DatasetManifest load_manifest(const std::string& root) {
    DatasetManifest m = DatasetManifest::from_json(read_file(root + "/manifest.json"));
    m.root = root;
    return m;
}

DatasetSample load_sample(const DatasetManifest& manifest, std::size_t sample_idx,
                          std::size_t view_idx) {
    if (sample_idx >= manifest.samples.size())
        throw std::out_of_range("sample index " + std::to_string(sample_idx) +
                                " outside manifest of " +
                                std::to_string(manifest.samples.size()));
    if (view_idx >= manifest.views)
        throw std::out_of_range("view index " + std::to_string(view_idx) +
                                " outside manifest of " + std::to_string(manifest.views));
    const SampleRecord& rec = manifest.samples[sample_idx];
    const std::string view_rel = view_name(view_idx);
    const Image img = ppm_from_bytes(read_verified(manifest, rec, view_rel),
                                     manifest.root + "/" + rec.id + "/" + view_rel);

    DatasetSample sample;
    sample.image = img.to_tensor();
    sample.gt_sparse = pcb_from_bytes(read_verified(manifest, rec, "gt_sparse.pcb"),
                                      rec.id + "/gt_sparse.pcb");
    sample.gt_mid = pcb_from_bytes(read_verified(manifest, rec, "gt_mid.pcb"),
                                   rec.id + "/gt_mid.pcb");
    sample.gt_dense = pcb_from_bytes(read_verified(manifest, rec, "gt_dense.pcb"),
                                     rec.id + "/gt_dense.pcb");
    sample.category = rec.category;
    sample.azimuth_deg = 360.0 * static_cast<double>(view_idx) / static_cast<double>(manifest.views);
    return sample;
}

}  // namespace pcrec
