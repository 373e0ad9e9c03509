#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "pcrec/data.hpp"
#include "pcrec/pointset.hpp"
#include "pcrec/rng.hpp"

using pcrec::DatagenConfig;
using pcrec::DatasetManifest;
using pcrec::DatasetSample;
using pcrec::GtLadder;
using pcrec::Image;
using pcrec::PointCloud;
using pcrec::SampleRecord;
using pcrec::ShapeKind;
using pcrec::ShapeParams;
using pcrec::TriangleMesh;

namespace {

// Scratch directory freshly recreated per use; removed when the guard dies.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string str() const { return path.string(); }
};

double sq_dist(const std::array<double, 3>& p, const std::array<double, 3>& q) {
    const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
    return dx * dx + dy * dy + dz * dz;
}

// A closed, consistently wound mesh uses every directed edge exactly once,
// which makes every undirected edge shared by exactly two triangles.
void check_watertight(const TriangleMesh& mesh) {
    std::set<std::pair<std::uint32_t, std::uint32_t>> directed;
    for (const auto& t : mesh.triangles) {
        CHECK(t[0] < mesh.vertices.size());
        CHECK(t[1] < mesh.vertices.size());
        CHECK(t[2] < mesh.vertices.size());
        for (int e = 0; e < 3; ++e) {
            const auto edge = std::make_pair(t[e], t[(e + 1) % 3]);
            CHECK(edge.first != edge.second);
            CHECK(directed.insert(edge).second);  // no directed edge repeats
        }
    }
    for (const auto& [u, v] : directed) CHECK(directed.count({v, u}) == 1);
}

double mesh_area(const TriangleMesh& mesh) {
    double total = 0.0;
    for (const auto& t : mesh.triangles)
        total += pcrec::triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]],
                                      mesh.vertices[t[2]]);
    return total;
}

std::size_t foreground_pixels(const Image& img) {
    std::size_t n = 0;
    for (std::size_t y = 0; y < img.size; ++y)
        for (std::size_t x = 0; x < img.size; ++x)
            if (img.at(0, y, x) != 1.0) ++n;
    return n;
}

// Largest gap between a target cloud and its nearest kept point.
double coverage_radius(const PointCloud& kept, const PointCloud& target) {
    double worst = 0.0;
    for (const auto& q : target.pts) {
        double best = 1e300;
        for (const auto& p : kept.pts) best = std::min(best, sq_dist(p, q));
        worst = std::max(worst, best);
    }
    return std::sqrt(worst);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("shape kinds round trip through their names") {
    for (ShapeKind k : pcrec::all_shape_kinds())
        CHECK(pcrec::shape_kind_from_string(pcrec::to_string(k)) == k);
    CHECK(pcrec::all_shape_kinds().size() == 6);
    CHECK_THROWS_AS(pcrec::shape_kind_from_string("teapot"), std::invalid_argument);
}

TEST_CASE("unit box is eight vertices and twelve triangles") {
    const TriangleMesh box = pcrec::generate_shape(ShapeKind::box, ShapeParams{}, 0);
    CHECK(box.vertices.size() == 8);
    CHECK(box.triangles.size() == 12);
    CHECK(mesh_area(box) == doctest::Approx(6.0));
    for (const auto& v : box.vertices)
        for (double c : v) CHECK(std::abs(c) == doctest::Approx(0.5));
}

TEST_CASE("every shape family is closed and consistently wound") {
    for (ShapeKind kind : pcrec::all_shape_kinds()) {
        CAPTURE(pcrec::to_string(kind));
        ShapeParams params;
        params.a = 0.9;
        params.b = 0.7;
        params.c = 0.5;
        if (kind == ShapeKind::torus) params.b = 0.3;
        params.jitter = 0.25;
        const TriangleMesh mesh = pcrec::generate_shape(kind, params, 17);
        CHECK(mesh.triangles.size() >= 12);
        CHECK(mesh_area(mesh) > 0.0);
        check_watertight(mesh);
    }
}

TEST_CASE("sphere vertices all sit at the common radius") {
    ShapeParams params;
    params.a = params.b = params.c = 0.7;
    params.segments = 16;
    const TriangleMesh sphere = pcrec::generate_shape(ShapeKind::ellipsoid, params, 3);
    double max_norm = 0.0;
    for (const auto& v : sphere.vertices) {
        const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        CHECK(n == doctest::Approx(0.7).epsilon(1e-12));
        max_norm = std::max(max_norm, n);
    }
    CHECK(max_norm == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("shape generation is deterministic per seed and varies across seeds") {
    ShapeParams params;
    params.jitter = 0.3;
    const TriangleMesh m1 = pcrec::generate_shape(ShapeKind::cylinder, params, 5);
    const TriangleMesh m2 = pcrec::generate_shape(ShapeKind::cylinder, params, 5);
    REQUIRE(m1.vertices.size() == m2.vertices.size());
    for (std::size_t i = 0; i < m1.vertices.size(); ++i)
        for (int c = 0; c < 3; ++c) CHECK(m1.vertices[i][c] == m2.vertices[i][c]);
    const TriangleMesh m3 = pcrec::generate_shape(ShapeKind::cylinder, params, 6);
    bool any_different = false;
    for (std::size_t i = 0; i < m1.vertices.size() && !any_different; ++i)
        any_different = m1.vertices[i] != m3.vertices[i];
    CHECK(any_different);
}

TEST_CASE("invalid shape parameters are rejected") {
    ShapeParams params;
    params.a = 0.0;
    CHECK_THROWS_AS(pcrec::generate_shape(ShapeKind::cylinder, params, 0),
                    std::invalid_argument);
    params = ShapeParams{};
    params.b = 1.5;  // tube radius not below the ring radius
    CHECK_THROWS_AS(pcrec::generate_shape(ShapeKind::torus, params, 0), std::invalid_argument);
    params = ShapeParams{};
    params.segments = 2;
    CHECK_THROWS_AS(pcrec::generate_shape(ShapeKind::ellipsoid, params, 0),
                    std::invalid_argument);
    params = ShapeParams{};
    params.jitter = 1.0;
    CHECK_THROWS_AS(pcrec::generate_shape(ShapeKind::box, params, 0), std::invalid_argument);
}

TEST_CASE("sphere renders with equal silhouettes across all azimuths") {
    ShapeParams params;
    params.a = params.b = params.c = 0.6;
    params.segments = 48;
    const TriangleMesh sphere = pcrec::generate_shape(ShapeKind::ellipsoid, params, 1);
    const std::vector<Image> views = pcrec::render_views(sphere, 24, 96);
    REQUIRE(views.size() == 24);
    std::vector<double> counts;
    for (const auto& img : views)
        counts.push_back(static_cast<double>(foreground_pixels(img)));
    const double mean = std::accumulate(counts.begin(), counts.end(), 0.0) / counts.size();
    CHECK(mean > 500.0);  // the silhouette actually covers the frame center
    for (double c : counts) CHECK(std::abs(c - mean) <= 0.01 * mean);
}

TEST_CASE("background stays exactly white and pixels stay inside the unit range") {
    const TriangleMesh mesh = pcrec::generate_shape(ShapeKind::table, ShapeParams{}, 9);
    for (const Image& img : pcrec::render_views(mesh, 5, 24)) {
        for (double v : img.rgb) {
            CHECK(std::isfinite(v));
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        const std::size_t s = img.size;
        for (std::size_t ch = 0; ch < 3; ++ch) {
            CHECK(img.at(ch, 0, 0) == 1.0);
            CHECK(img.at(ch, 0, s - 1) == 1.0);
            CHECK(img.at(ch, s - 1, 0) == 1.0);
            CHECK(img.at(ch, s - 1, s - 1) == 1.0);
        }
    }
}

TEST_CASE("camera azimuth actually changes the view") {
    ShapeParams params;
    params.a = 1.0;
    params.b = 0.4;
    params.c = 0.4;
    const TriangleMesh slab = pcrec::generate_shape(ShapeKind::box, params, 0);
    const std::vector<Image> views = pcrec::render_views(slab, 4, 32);
    CHECK(foreground_pixels(views[0]) != foreground_pixels(views[1]));
}

TEST_CASE("rendering rejects empty input") {
    const TriangleMesh mesh = pcrec::generate_shape(ShapeKind::box, ShapeParams{}, 0);
    CHECK_THROWS_AS(pcrec::render_views(mesh, 0, 32), std::invalid_argument);
    CHECK_THROWS_AS(pcrec::render_views(TriangleMesh{}, 4, 32), std::invalid_argument);
}

TEST_CASE("ground truth ladder nests and shares one normalization") {
    const TriangleMesh mesh = pcrec::generate_shape(ShapeKind::l_bracket, ShapeParams{}, 21);
    const GtLadder ladder = pcrec::build_gt_ladder(mesh, 64, 7);
    CHECK(ladder.sparse.size() == 64);
    CHECK(ladder.mid.size() == 256);
    CHECK(ladder.dense.size() == 1024);
    for (std::size_t i = 0; i < ladder.sparse.size(); ++i)
        CHECK(ladder.sparse[i] == ladder.dense[i]);
    for (std::size_t i = 0; i < ladder.mid.size(); ++i)
        CHECK(ladder.mid[i] == ladder.dense[i]);

    double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
    for (const auto& p : ladder.dense.pts)
        for (int c = 0; c < 3; ++c) {
            lo[c] = std::min(lo[c], p[c]);
            hi[c] = std::max(hi[c], p[c]);
        }
    const double longest = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
    CHECK(longest == doctest::Approx(1.0).epsilon(1e-12));
    for (int c = 0; c < 3; ++c) CHECK(std::abs(hi[c] + lo[c]) < 1e-12);
}

TEST_CASE("sparser ladder rungs cover the surface more coarsely") {
    const TriangleMesh mesh = pcrec::generate_shape(ShapeKind::torus,
                                                    [] {
                                                        ShapeParams p;
                                                        p.a = 0.7;
                                                        p.b = 0.25;
                                                        return p;
                                                    }(),
                                                    2);
    const GtLadder ladder = pcrec::build_gt_ladder(mesh, 32, 11);
    const double r_sparse = coverage_radius(ladder.sparse, ladder.dense);
    const double r_mid = coverage_radius(ladder.mid, ladder.dense);
    CHECK(r_sparse >= r_mid);
    CHECK(r_mid > 0.0);
}

TEST_CASE("ladder is deterministic and validates its base size") {
    const TriangleMesh mesh = pcrec::generate_shape(ShapeKind::box, ShapeParams{}, 0);
    const GtLadder l1 = pcrec::build_gt_ladder(mesh, 8, 3);
    const GtLadder l2 = pcrec::build_gt_ladder(mesh, 8, 3);
    for (std::size_t i = 0; i < l1.dense.size(); ++i) CHECK(l1.dense[i] == l2.dense[i]);
    CHECK_THROWS_AS(pcrec::build_gt_ladder(mesh, 3, 0), std::invalid_argument);
}

TEST_CASE("point cloud files round trip and rewrite byte-identically") {
    TempDir dir("pcrec_test_pcb");
    pcrec::Rng rng(4);
    PointCloud pc;
    pc.pts.resize(50);
    for (auto& p : pc.pts)
        for (int c = 0; c < 3; ++c) p[c] = rng.uniform(-2.0, 2.0);

    const std::string path = dir.str() + "/cloud.pcb";
    pcrec::write_pcb(path, pc);
    const PointCloud back = pcrec::read_pcb(path);
    REQUIRE(back.size() == pc.size());
    for (std::size_t i = 0; i < pc.size(); ++i)
        for (int c = 0; c < 3; ++c)
            CHECK(back[i][c] == static_cast<double>(static_cast<float>(pc[i][c])));

    const std::string path2 = dir.str() + "/cloud2.pcb";
    pcrec::write_pcb(path2, back);
    CHECK(slurp(path) == slurp(path2));

    const std::string header = slurp(path).substr(0, 4);
    CHECK(header == "PCB1");
}

TEST_CASE("point cloud reader rejects damaged files") {
    TempDir dir("pcrec_test_pcb_bad");
    const std::string path = dir.str() + "/bad.pcb";
    CHECK_THROWS_WITH_AS(pcrec::read_pcb(path), doctest::Contains(path.c_str()),
                         std::runtime_error);
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE";
    }
    CHECK_THROWS_AS(pcrec::read_pcb(path), std::runtime_error);
    pcrec::write_pcb(path, PointCloud{{0.0, 0.0, 0.0}});
    std::filesystem::resize_file(path, 12);
    CHECK_THROWS_WITH_AS(pcrec::read_pcb(path), doctest::Contains("truncated"),
                         std::runtime_error);
}

TEST_CASE("images round trip through PPM at byte precision") {
    TempDir dir("pcrec_test_ppm");
    Image img(9);
    pcrec::Rng rng(8);
    for (double& v : img.rgb) v = rng.uniform(0.0, 1.0);

    const std::string path = dir.str() + "/img.ppm";
    pcrec::write_ppm(path, img);
    const Image back = pcrec::read_ppm(path);
    REQUIRE(back.size == img.size);
    for (std::size_t i = 0; i < img.rgb.size(); ++i)
        CHECK(std::abs(back.rgb[i] - img.rgb[i]) <= 0.5 / 255.0 + 1e-12);

    const std::string path2 = dir.str() + "/img2.ppm";
    pcrec::write_ppm(path2, back);
    CHECK(slurp(path) == slurp(path2));

    {
        std::ofstream out(path2, std::ios::binary);
        out << "P5\n9 9\n255\n";
    }
    CHECK_THROWS_AS(pcrec::read_ppm(path2), std::runtime_error);
}

TEST_CASE("image tensor layout is channel plane then row then column") {
    Image img(4);
    img.at(1, 2, 3) = 0.25;
    const pcrec::Tensor t = img.to_tensor();
    REQUIRE(t.shape() == std::vector<std::size_t>{3, 4, 4});
    CHECK(t[(1 * 4 + 2) * 4 + 3] == 0.25);
}

TEST_CASE("PLY export writes a well-formed ASCII header") {
    TempDir dir("pcrec_test_ply");
    const std::string path = dir.str() + "/cloud.ply";
    pcrec::write_ply(path, PointCloud{{1.0, -2.0, 0.5}, {0.0, 0.0, 0.0}});
    const std::string text = slurp(path);
    CHECK(text.find("ply\nformat ascii 1.0\n") == 0);
    CHECK(text.find("element vertex 2\n") != std::string::npos);
    CHECK(text.find("end_header\n1 -2 0.5\n") != std::string::npos);
}

TEST_CASE("file checksums react to single byte changes") {
    TempDir dir("pcrec_test_sum");
    const std::string path = dir.str() + "/blob";
    {
        std::ofstream out(path, std::ios::binary);
        out << "point clouds";
    }
    const std::string before = pcrec::file_checksum(path);
    CHECK(before.size() == 16);
    CHECK(before == pcrec::file_checksum(path));
    {
        std::ofstream out(path, std::ios::binary);
        out << "point cloudz";
    }
    CHECK(before != pcrec::file_checksum(path));
}

TEST_CASE("split assignment is 80/20 within one sample and order independent") {
    std::vector<SampleRecord> records(100);
    for (std::size_t i = 0; i < records.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "sample_%04zu", i);
        records[i].id = buf;
    }
    pcrec::assign_splits(records);
    std::map<std::string, std::string> by_id;
    std::size_t train = 0;
    for (const auto& r : records) {
        by_id[r.id] = r.split;
        train += r.split == "train";
    }
    CHECK(train == 80);

    std::reverse(records.begin(), records.end());
    pcrec::assign_splits(records);
    for (const auto& r : records) CHECK(r.split == by_id[r.id]);

    records.resize(7);
    pcrec::assign_splits(records);
    std::size_t small_train = 0;
    for (const auto& r : records) small_train += r.split == "train";
    CHECK(std::abs(static_cast<double>(small_train) - 0.8 * 7) <= 1.0);
}

TEST_CASE("dataset generation writes a loadable, checksummed directory") {
    TempDir dir("pcrec_test_dataset");
    DatagenConfig cfg;
    cfg.out = dir.str() + "/set";
    cfg.num_shapes = 6;
    cfg.base_n = 16;
    cfg.views = 3;
    cfg.image_size = 16;
    cfg.seed = 0;
    const DatasetManifest manifest = pcrec::generate_dataset(cfg);
    REQUIRE(manifest.samples.size() == 6);

    const DatasetManifest loaded = pcrec::load_manifest(cfg.out);
    CHECK(loaded.to_json() == manifest.to_json());
    CHECK(loaded.base_n == 16);
    CHECK(loaded.views == 3);

    std::size_t train = 0;
    for (const auto& rec : loaded.samples) {
        CHECK(rec.files.size() == 3 + 3);  // three views plus the ladder
        train += rec.split == "train";
        for (const auto& [rel, sum] : rec.files)
            CHECK(pcrec::file_checksum(cfg.out + "/" + rec.id + "/" + rel) == sum);
    }
    CHECK(train == 5);  // (4 * 6 + 2) / 5

    const DatasetSample sample = pcrec::load_sample(loaded, 1, 2);
    CHECK(sample.category == "cylinder");
    CHECK(sample.azimuth_deg == doctest::Approx(240.0));
    CHECK(sample.image.shape() == std::vector<std::size_t>{3, 16, 16});
    for (std::size_t i = 0; i < sample.image.size(); ++i) {
        CHECK(sample.image[i] >= 0.0);
        CHECK(sample.image[i] <= 1.0);
    }
    CHECK(sample.gt_sparse.size() == 16);
    CHECK(sample.gt_mid.size() == 64);
    CHECK(sample.gt_dense.size() == 256);

    CHECK_THROWS_AS(pcrec::load_sample(loaded, 6, 0), std::out_of_range);
    CHECK_THROWS_AS(pcrec::load_sample(loaded, 0, 3), std::out_of_range);
}

TEST_CASE("regenerating a dataset reproduces every byte") {
    TempDir dir("pcrec_test_dataset_repro");
    DatagenConfig cfg;
    cfg.num_shapes = 3;
    cfg.base_n = 8;
    cfg.views = 2;
    cfg.image_size = 12;
    cfg.seed = 42;

    cfg.out = dir.str() + "/a";
    pcrec::generate_dataset(cfg);
    cfg.out = dir.str() + "/b";
    pcrec::generate_dataset(cfg);

    std::size_t compared = 0;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir.str() + "/a")) {
        if (!entry.is_regular_file()) continue;
        const std::string rel =
            std::filesystem::relative(entry.path(), dir.str() + "/a").string();
        CHECK(slurp(entry.path().string()) == slurp(dir.str() + "/b/" + rel));
        ++compared;
    }
    CHECK(compared == 3 * (2 + 3) + 1);  // per-sample files plus the manifest
}

TEST_CASE("loading surfaces missing files and corruption by path") {
    TempDir dir("pcrec_test_dataset_bad");
    DatagenConfig cfg;
    cfg.out = dir.str() + "/set";
    cfg.num_shapes = 1;
    cfg.base_n = 8;
    cfg.views = 2;
    cfg.image_size = 12;
    const DatasetManifest manifest = pcrec::generate_dataset(cfg);

    const std::string victim = cfg.out + "/sample_0000/view_01.ppm";
    std::filesystem::remove(victim);
    CHECK_THROWS_WITH_AS(pcrec::load_sample(manifest, 0, 1), doctest::Contains("view_01.ppm"),
                         std::runtime_error);
    CHECK_NOTHROW(pcrec::load_sample(manifest, 0, 0));  // other view untouched

    const std::string cloud = cfg.out + "/sample_0000/gt_mid.pcb";
    std::string bytes = slurp(cloud);
    bytes[bytes.size() - 1] = static_cast<char>(bytes.back() ^ 0x01);
    {
        std::ofstream out(cloud, std::ios::binary | std::ios::trunc);
        out << bytes;
    }
    CHECK_THROWS_WITH_AS(pcrec::load_sample(manifest, 0, 0),
                         doctest::Contains("checksum mismatch"), std::runtime_error);
}

TEST_SUITE_END();
