#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pcrec/pointset.hpp"
#include "pcrec/tensor.hpp"

namespace pcrec {

// Procedural shape families. Each generator produces a closed triangle mesh
// whose proportions can be jittered per seed, so a handful of families yields
// an arbitrarily large set of distinct training shapes.
enum class ShapeKind { box, cylinder, ellipsoid, torus, l_bracket, table };

std::string to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(const std::string& name);
const std::vector<ShapeKind>& all_shape_kinds();

struct ShapeParams {
    // Principal dimensions. Meaning per kind: box extents (a,b,c); cylinder
    // radius a, height b; ellipsoid radii (a,b,c); torus ring radius a, tube
    // radius b; bracket leg lengths a,b and depth c; table width a, depth b,
    // height c.
    double a = 1.0;
    double b = 1.0;
    double c = 1.0;
    std::size_t segments = 24;  // tessellation density for curved shapes
    // Each dimension is scaled by an independent uniform factor in
    // [1 - jitter, 1 + jitter] drawn from the seed. Zero keeps the exact
    // parametric shape.
    double jitter = 0.0;
};

TriangleMesh generate_shape(ShapeKind kind, const ShapeParams& params, std::uint64_t seed);

// Square RGB raster, channel-major, values in [0, 1].
struct Image {
    std::size_t size = 0;
    std::vector<double> rgb;  // 3 * size * size, plane order r, g, b

    Image() = default;
    explicit Image(std::size_t s) : size(s), rgb(3 * s * s, 1.0) {}

    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return rgb[(c * size + y) * size + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return rgb[(c * size + y) * size + x];
    }
    Tensor to_tensor() const;  // shape [3, size, size]
};

// Renders the mesh from `count` azimuths evenly spaced over 360 degrees with
// an orthographic camera at fixed elevation, z-buffered flat Lambertian
// shading under one fixed directional light, on a pure white background. The
// mesh is framed by its own bounding box, so every view fits the image.
std::vector<Image> render_views(const TriangleMesh& mesh, std::size_t count,
                                std::size_t image_size);

// Ground truth at three resolutions: base_n, 4*base_n, and 16*base_n points.
// All three come from a single farthest-point pass over one surface sample
// pool, so sparse is a prefix of mid is a prefix of dense, and all share one
// normalizing transform.
struct GtLadder {
    PointCloud sparse;
    PointCloud mid;
    PointCloud dense;
};

GtLadder build_gt_ladder(const TriangleMesh& mesh, std::size_t base_n, std::uint64_t seed);

// Binary point cloud file: "PCB1", uint32 little-endian count, then
// count * 3 little-endian float32 coordinates.
void write_pcb(const std::string& path, const PointCloud& pc);
PointCloud read_pcb(const std::string& path);

// Binary PPM (P6), 8 bits per channel.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

// ASCII PLY export, for handing results to external viewers.
void write_ply(const std::string& path, const PointCloud& pc);

// fnv1a over the file's bytes, as a fixed-width hex string.
std::string file_checksum(const std::string& path);

struct SampleRecord {
    std::string id;
    std::string category;
    std::string split;  // "train" or "test"
    // Relative path -> fnv1a hex checksum for every file of the sample.
    std::map<std::string, std::string> files;
};

struct DatasetManifest {
    std::string root;  // directory holding manifest.json; not serialized
    std::size_t base_n = 0;
    std::size_t image_size = 0;
    std::size_t views = 0;
    std::uint64_t seed = 0;
    std::vector<SampleRecord> samples;

    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
};

// One training example: a single view plus the ground-truth ladder.
struct DatasetSample {
    Tensor image;  // [3, image_size, image_size]
    PointCloud gt_sparse;
    PointCloud gt_mid;
    PointCloud gt_dense;
    std::string category;
    double azimuth_deg = 0.0;
};

// Marks each record "train" or "test", 80/20. Records are ranked by id hash
// and the top four fifths of the ranking train, so the counts land within one
// sample of the exact fractions for any total and never depend on record
// order.
void assign_splits(std::vector<SampleRecord>& samples);

struct DatagenConfig {
    std::string out;
    std::size_t num_shapes = 8;
    std::size_t base_n = 64;
    std::size_t views = 24;
    std::size_t image_size = 32;
    std::uint64_t seed = 0;
};

// Generates the full dataset directory: per-sample subdirectories with view
// images and the ground-truth ladder, plus manifest.json at the root. Every
// file is written to a temporary name and renamed into place. The result is
// byte-identical for identical configs.
DatasetManifest generate_dataset(const DatagenConfig& cfg);

void write_manifest(const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& root);

// Loads one view of one sample, verifying checksums of every file read.
// Missing files and checksum mismatches raise errors naming the path.
DatasetSample load_sample(const DatasetManifest& manifest, std::size_t sample_idx,
                          std::size_t view_idx);

}  // namespace pcrec
