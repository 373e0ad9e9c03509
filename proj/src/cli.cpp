#include "pcrec/cli.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pcrec/data.hpp"
#include "pcrec/eval.hpp"
#include "pcrec/model.hpp"
#include "pcrec/pointset.hpp"
#include "pcrec/rng.hpp"
#include "pcrec/tensor.hpp"
#include "pcrec/train.hpp"

namespace pcrec {

namespace {

namespace fs = std::filesystem;

constexpr double kPi = 3.14159265358979323846;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Orthographic scatter render: the cloud framed by its own bounding box,
// dark dots on white, same camera convention as the dataset renderer.
Image scatter_render(const PointCloud& pc, std::size_t size, double azimuth_deg) {
    const PointCloud n = normalize_unit_bbox(pc);
    const double az = azimuth_deg * kPi / 180.0;
    const double el = 20.0 * kPi / 180.0;
    const std::array<double, 3> right = {-std::sin(az), std::cos(az), 0.0};
    const std::array<double, 3> up = {-std::sin(el) * std::cos(az), -std::sin(el) * std::sin(az),
                                      std::cos(el)};
    Image img(size);
    const double half = 0.9;
    for (const auto& p : n.pts) {
        const double u = p[0] * right[0] + p[1] * right[1] + p[2] * right[2];
        const double v = p[0] * up[0] + p[1] * up[1] + p[2] * up[2];
        const long px = std::lround((u + half) / (2.0 * half) * double(size - 1));
        const long py = std::lround((half - v) / (2.0 * half) * double(size - 1));
        for (long dy = 0; dy <= 1; ++dy)
            for (long dx = 0; dx <= 1; ++dx) {
                const long x = px + dx, y = py + dy;
                if (x < 0 || y < 0 || x >= long(size) || y >= long(size)) continue;
                img.at(0, y, x) = 0.15;
                img.at(1, y, x) = 0.15;
                img.at(2, y, x) = 0.35;
            }
    }
    return img;
}

void write_stage_outputs(const fs::path& out, const std::string& name, const PointCloud& pc,
                         bool ply) {
    write_pcb((out / (name + ".pcb")).string(), pc);
    if (ply) write_ply((out / (name + ".ply")).string(), pc);
    for (int k = 0; k < 3; ++k) {
        const double az = 120.0 * k;
        char file[64];
        std::snprintf(file, sizeof(file), "render_%s_%03d.ppm", name.c_str(), int(az));
        write_ppm((out / file).string(), scatter_render(pc, 128, az));
    }
}

ModelConfig preset_config(const std::string& preset) {
    if (preset == "paper") return ModelConfig::paper();
    return ModelConfig::desk();
}

// ---- datagen ----

struct DatagenOpts {
    std::string out;
    std::size_t num_shapes = 8;
    std::size_t base_n = 64;
    std::size_t views = 24;
    std::size_t image_size = 32;
    std::uint64_t seed = 0;
};

int cmd_datagen(const DatagenOpts& o) {
    DatagenConfig cfg;
    cfg.out = o.out;
    cfg.num_shapes = o.num_shapes;
    cfg.base_n = o.base_n;
    cfg.views = o.views;
    cfg.image_size = o.image_size;
    cfg.seed = o.seed;
    const DatasetManifest manifest = generate_dataset(cfg);
    std::size_t train = 0;
    for (const auto& s : manifest.samples) train += s.split == "train" ? 1 : 0;
    std::printf("wrote %zu samples (%zu train, %zu test), %zu views each, to %s\n",
                manifest.samples.size(), train, manifest.samples.size() - train, manifest.views,
                o.out.c_str());
    return 0;
}

// ---- train ----

struct TrainOpts {
    std::string preset = "desk";
    std::string data;
    std::string out;
    std::string stage = "all";
    std::string config_file;
    std::string init;
    std::uint64_t seed = 0;
    bool seed_given = false;
    double lr = 0.0;
    bool lr_given = false;
    std::size_t batch = 0;
    bool batch_given = false;
    std::size_t checkpoint_every = 500;
};

void run_phase(TrainState& state, Phase phase, const char* label, const TrainData& data,
               const TrainConfig& cfg, std::size_t steps, const fs::path& out,
               const ModelConfig& mcfg, std::ofstream& log, std::size_t checkpoint_every) {
    reset_optimizer(state);
    log << "# phase " << label << "\n";
    std::size_t written = 0;
    while (state.step < steps) {
        const std::size_t chunk = std::min(checkpoint_every, steps - state.step);
        train_more(state, phase, data, cfg, chunk);
        for (; written < state.log.size(); ++written) {
            const LossRow& r = state.log[written];
            char line[160];
            std::snprintf(line, sizeof(line), "%zu %.17g %.17g %.17g %.17g\n", r.step, r.total,
                          r.stage1, r.stage2, r.stage3);
            log << line;
        }
        log.flush();
        save_checkpoint((out / "checkpoint.bin").string(), state, mcfg, cfg);
        std::printf("%s step %zu/%zu loss %.6f\n", label, state.step, steps,
                    state.log.back().total);
        std::fflush(stdout);
    }
}

int cmd_train(const TrainOpts& o) {
    const DatasetManifest manifest = load_manifest(o.data);
    ModelConfig mcfg = preset_config(o.preset);
    if (manifest.image_size != mcfg.image_size)
        throw std::invalid_argument("dataset images are " + std::to_string(manifest.image_size) +
                                    "px but the " + o.preset + " preset expects " +
                                    std::to_string(mcfg.image_size) + "px");
    mcfg.base_n = manifest.base_n;
    mcfg.validate();

    TrainConfig cfg = o.preset == "paper" ? TrainConfig::paper() : TrainConfig::desk();
    if (!o.config_file.empty()) cfg = TrainConfig::from_json(slurp(o.config_file));
    cfg.preset = o.preset;
    if (o.seed_given) cfg.seed = o.seed;
    if (o.lr_given) cfg.learning_rate = o.lr;
    if (o.batch_given) cfg.batch_size = o.batch;
    cfg.validate();

    fs::create_directories(o.out);
    const fs::path out(o.out);

    TrainState state = make_train_state(mcfg, cfg.seed);
    if (!o.init.empty()) {
        Checkpoint ckpt = load_checkpoint(o.init);
        if (!(ckpt.model_cfg == mcfg))
            throw std::invalid_argument(o.init +
                                        " was trained with a different architecture than the "
                                        "requested preset and dataset");
        state = std::move(ckpt.state);
    }
    const TrainData data = TrainData::load(manifest, "train");

    std::ofstream log(out / "loss_log.txt", std::ios::binary);
    if (!log) throw std::runtime_error("cannot write " + (out / "loss_log.txt").string());
    log << "# step total stage1 stage2 stage3\n";

    try {
        if (o.stage == "1" || o.stage == "all")
            run_phase(state, Phase::stage1, "stage1", data, cfg, cfg.pretrain_steps[0], out, mcfg,
                      log, o.checkpoint_every);
        if (o.stage == "2" || o.stage == "all")
            run_phase(state, Phase::stage2, "stage2", data, cfg, cfg.pretrain_steps[1], out, mcfg,
                      log, o.checkpoint_every);
        if (o.stage == "3" || o.stage == "all")
            run_phase(state, Phase::stage3, "stage3", data, cfg, cfg.pretrain_steps[2], out, mcfg,
                      log, o.checkpoint_every);
        if (o.stage == "finetune" || o.stage == "all")
            run_phase(state, Phase::finetune, "finetune", data, cfg, cfg.finetune_steps, out, mcfg,
                      log, o.checkpoint_every);
    } catch (const std::runtime_error& e) {
        if (std::string(e.what()).find("diverged") == std::string::npos) throw;
        // The state still holds the last finite parameters; keep them.
        save_checkpoint((out / "checkpoint.bin").string(), state, mcfg, cfg);
        std::fprintf(stderr, "pcrec train: %s\n", e.what());
        return 3;
    }
    save_checkpoint((out / "checkpoint.bin").string(), state, mcfg, cfg);
    std::printf("finished; checkpoint at %s\n", (out / "checkpoint.bin").string().c_str());
    return 0;
}

// ---- eval ----

struct EvalOpts {
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    std::string out;
    std::string resolution = "dense";
    std::string format = "json";
};

int cmd_eval(const EvalOpts& o) {
    if (o.resolution != "dense")
        throw std::invalid_argument("only the dense resolution is evaluated");
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    const DatasetManifest manifest = load_manifest(o.data);
    const EvalReport report =
        evaluate_dataset(ckpt.state.model, manifest, o.split, ckpt.train_cfg.emd_eps);
    emit_report(report, o.format, o.out);
    std::fputs(format_report(report, "table").c_str(), stdout);
    std::printf("report written to %s\n", o.out.c_str());
    return 0;
}

// ---- infer ----

struct InferOpts {
    std::string image;
    std::string checkpoint;
    std::string out;
    bool ply = false;
};

int cmd_infer(const InferOpts& o) {
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    const Image img = read_ppm(o.image);
    if (img.size != ckpt.model_cfg.image_size)
        throw std::invalid_argument("image is " + std::to_string(img.size) +
                                    "px but the checkpoint expects " +
                                    std::to_string(ckpt.model_cfg.image_size) + "px");
    fs::create_directories(o.out);
    Tape tape;
    const Pyramid pyramid = ckpt.state.model.forward_pyramid(tape, img.to_tensor());
    const fs::path out(o.out);
    write_stage_outputs(out, "sparse", PointCloud::from_tensor(pyramid.pc1), o.ply);
    write_stage_outputs(out, "mid", PointCloud::from_tensor(pyramid.pc2), o.ply);
    write_stage_outputs(out, "dense", PointCloud::from_tensor(pyramid.pc3), o.ply);
    std::printf("wrote %zu/%zu/%zu points to %s\n", pyramid.pc1.rows(), pyramid.pc2.rows(),
                pyramid.pc3.rows(), o.out.c_str());
    return 0;
}

// ---- upsample ----

struct UpsampleOpts {
    std::string cloud;
    std::string checkpoint;
    int stage = 2;
    std::string out;
};

int cmd_upsample(const UpsampleOpts& o) {
    const Checkpoint ckpt = load_checkpoint(o.checkpoint);
    const PointCloud in = read_pcb(o.cloud);
    const std::size_t base = ckpt.model_cfg.base_n;
    const std::size_t expected = o.stage == 2 ? base : base * ckpt.model_cfg.upsample_factor;
    if (in.size() != expected)
        throw std::invalid_argument("stage " + std::to_string(o.stage) + " upsamples " +
                                    std::to_string(expected) + " points, got " +
                                    std::to_string(in.size()));
    fs::create_directories(o.out);
    Tape tape;
    const Tensor dense = ckpt.state.model.dense_reconstruct(tape, in.to_tensor(), o.stage);
    const PointCloud out_cloud = PointCloud::from_tensor(dense);
    const fs::path out(o.out);
    write_pcb((out / "upsampled.pcb").string(), out_cloud);
    write_ply((out / "upsampled.ply").string(), out_cloud);
    std::printf("wrote %zu points to %s\n", out_cloud.size(), o.out.c_str());
    return 0;
}

// ---- inspect ----

struct InspectOpts {
    std::string checkpoint;
    std::string cloud;
    std::string data;
};

int cmd_inspect(const InspectOpts& o) {
    if (!o.checkpoint.empty()) {
        const Checkpoint ckpt = load_checkpoint(o.checkpoint);
        const std::string joined = ckpt.model_cfg.to_json() + ckpt.train_cfg.to_json();
        const ModelConfig& m = ckpt.model_cfg;
        std::printf("checkpoint %s\n", o.checkpoint.c_str());
        std::printf("  config hash    %016" PRIx64 "\n",
                    fnv1a(joined.data(), joined.size()));
        std::printf("  preset         %s\n", ckpt.train_cfg.preset.c_str());
        std::printf("  optimizer step %zu\n", ckpt.state.step);
        std::printf("  image size     %zu\n", m.image_size);
        std::printf("  point ladder   %zu/%zu/%zu\n", m.base_n,
                    m.base_n * m.upsample_factor,
                    m.base_n * m.upsample_factor * m.upsample_factor);
        std::printf("  parameters     %zu\n", ckpt.state.model.count_params("total"));
        return 0;
    }
    if (!o.cloud.empty()) {
        const PointCloud pc = read_pcb(o.cloud);
        std::array<double, 3> lo = pc[0], hi = pc[0];
        for (const auto& p : pc.pts)
            for (int c = 0; c < 3; ++c) {
                lo[c] = std::min(lo[c], p[c]);
                hi[c] = std::max(hi[c], p[c]);
            }
        std::printf("cloud %s\n", o.cloud.c_str());
        std::printf("  points   %zu\n", pc.size());
        std::printf("  bbox lo  %.6f %.6f %.6f\n", lo[0], lo[1], lo[2]);
        std::printf("  bbox hi  %.6f %.6f %.6f\n", hi[0], hi[1], hi[2]);
        std::printf("  checksum %s\n", file_checksum(o.cloud).c_str());
        return 0;
    }
    const DatasetManifest manifest = load_manifest(o.data);
    std::size_t train = 0;
    for (const auto& s : manifest.samples) train += s.split == "train" ? 1 : 0;
    std::printf("dataset %s\n", o.data.c_str());
    std::printf("  samples    %zu (%zu train, %zu test)\n", manifest.samples.size(), train,
                manifest.samples.size() - train);
    std::printf("  views      %zu\n", manifest.views);
    std::printf("  ladder     %zu/%zu/%zu\n", manifest.base_n, 4 * manifest.base_n,
                16 * manifest.base_n);
    std::printf("  image size %zu\n", manifest.image_size);
    std::printf("  seed       %" PRIu64 "\n", manifest.seed);
    return 0;
}

// ---- selftest ----

bool report_suite(const char* name, bool ok, const std::string& detail = "") {
    if (ok)
        std::printf("PASS %s\n", name);
    else
        std::printf("FAIL %s%s%s\n", name, detail.empty() ? "" : ": ", detail.c_str());
    return ok;
}

bool suite_chamfer_brute_force() {
    Rng rng(101);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = 1 + rng.index(64), m = 1 + rng.index(64);
        PointCloud a, b;
        for (std::size_t i = 0; i < n; ++i)
            a.pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
        for (std::size_t j = 0; j < m; ++j)
            b.pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
        double brute = 0.0;
        for (const auto& p : a.pts) {
            double best = 1e300;
            for (const auto& q : b.pts) {
                const double d = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                 (p[2] - q[2]) * (p[2] - q[2]);
                best = std::min(best, d);
            }
            brute += best;
        }
        for (const auto& q : b.pts) {
            double best = 1e300;
            for (const auto& p : a.pts) {
                const double d = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                 (p[2] - q[2]) * (p[2] - q[2]);
                best = std::min(best, d);
            }
            brute += best;
        }
        const double got = chamfer(a, b);
        if (std::abs(got - brute) > 1e-12 * std::max(1.0, std::abs(brute))) return false;
    }
    return true;
}

bool suite_emd_enumeration() {
    Rng rng(102);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 2 + rng.index(5);
        PointCloud a, b;
        for (std::size_t i = 0; i < n; ++i) {
            a.pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
            b.pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
        }
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        double best = 1e300;
        do {
            double cost = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto &p = a[i], &q = b[perm[i]];
                cost += std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                  (p[2] - q[2]) * (p[2] - q[2]));
            }
            best = std::min(best, cost);
        } while (std::next_permutation(perm.begin(), perm.end()));
        if (std::abs(emd_exact(a, b).cost - best) > 1e-9) return false;
    }
    return true;
}

bool suite_emd_approx() {
    Rng rng(103);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 4 + rng.index(45);
        PointCloud a, b;
        for (std::size_t i = 0; i < n; ++i) {
            a.pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
            b.pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
        }
        const double exact = emd_exact(a, b).cost;
        const double approx = emd_approx(a, b, 0.01).cost;
        if (approx < exact - 1e-9 || approx > 1.01 * exact + 1e-9) return false;
    }
    return true;
}

bool suite_fps() {
    Rng rng(104);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 2 + rng.index(63);
        PointCloud pc;
        for (std::size_t i = 0; i < n; ++i)
            pc.pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
        const std::size_t k = 1 + rng.index(n);
        const auto got = farthest_point_sample(pc, k);

        std::vector<std::size_t> want = {0};
        std::vector<double> dist(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto &p = pc[i], &q = pc[0];
            dist[i] = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                      (p[2] - q[2]) * (p[2] - q[2]);
        }
        while (want.size() < k) {
            std::size_t pick = 0;
            for (std::size_t i = 1; i < n; ++i)
                if (dist[i] > dist[pick]) pick = i;
            want.push_back(pick);
            for (std::size_t i = 0; i < n; ++i) {
                const auto &p = pc[i], &q = pc[pick];
                const double d = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                                 (p[2] - q[2]) * (p[2] - q[2]);
                dist[i] = std::min(dist[i], d);
            }
        }
        if (got != want) return false;
    }
    return true;
}

bool suite_finite_differences() {
    Rng rng(105);
    Tensor x({4, 3});
    Tensor w({3, 5});
    Tensor b({5});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-1, 1);

    const auto f = [&] {
        Tape tape;
        return tape.sum(tape.relu(tape.affine(x, w, b))).item();
    };
    {
        Tape tape;
        tape.backward(tape.sum(tape.relu(tape.affine(x, w, b))));
    }
    const double h = 1e-6;
    for (Tensor* t : {&x, &w, &b}) {
        for (std::size_t i = 0; i < t->size(); i += 3) {
            const double keep = (*t)[i];
            (*t)[i] = keep + h;
            const double up = f();
            (*t)[i] = keep - h;
            const double down = f();
            (*t)[i] = keep;
            const double fd = (up - down) / (2.0 * h);
            const double ad = t->grad()[i];
            if (std::abs(fd - ad) > 1e-6 * std::max({1.0, std::abs(fd), std::abs(ad)}))
                return false;
        }
    }
    return true;
}

bool suite_shape_ladder() {
    const ModelConfig cfg = ModelConfig::paper();
    const PyramidModel model(cfg, 1);
    Tape tape;
    const Tensor img({3, cfg.image_size, cfg.image_size});
    const Pyramid pyramid = model.forward_pyramid(tape, img);
    if (pyramid.pc1.rows() != 1024 || pyramid.pc2.rows() != 4096 ||
        pyramid.pc3.rows() != 16384)
        return false;
    FeatureBundle trace;
    Tape tape2;
    model.dense_reconstruct(tape2, pyramid.pc1, 2, &trace);
    return trace.aggregated.cols() == 132;
}

bool suite_parameter_ratio() {
    const ModelConfig cfg = ModelConfig::paper();
    const PyramidModel model(cfg, 1);
    const std::size_t pyramidal = model.count_params("sparse_decoder") +
                                  model.count_params("dense_stage2") +
                                  model.count_params("dense_stage3");
    return pyramidal * 3 <= PyramidModel::direct_fc_decoder_params(cfg);
}

int cmd_selftest() {
    int failed = 0;
    failed += !report_suite("chamfer-brute-force", suite_chamfer_brute_force());
    failed += !report_suite("emd-exact-enumeration", suite_emd_enumeration());
    failed += !report_suite("emd-approx-vs-exact", suite_emd_approx());
    failed += !report_suite("fps-brute-force", suite_fps());
    failed += !report_suite("finite-differences", suite_finite_differences());
    failed += !report_suite("shape-ladder", suite_shape_ladder());
    failed += !report_suite("parameter-ratio", suite_parameter_ratio());
    if (failed) {
        std::printf("selftest: %d suite(s) failed\n", failed);
        return 3;
    }
    std::printf("selftest: all 7 suites passed\n");
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Desk-scale pyramidal point cloud reconstruction"};
    app.require_subcommand(1);

    DatagenOpts dg;
    CLI::App* datagen = app.add_subcommand("datagen", "Generate a synthetic dataset");
    datagen->add_option("--out", dg.out, "Output directory")->required();
    datagen->add_option("--num-shapes", dg.num_shapes, "Shapes to generate");
    datagen->add_option("--base-n", dg.base_n, "Sparse ladder resolution");
    datagen->add_option("--views", dg.views, "Rendered views per shape");
    datagen->add_option("--image-size", dg.image_size, "Rendered image size in pixels");
    datagen->add_option("--seed", dg.seed, "Random seed");

    TrainOpts tr;
    CLI::App* train = app.add_subcommand("train", "Train on a generated dataset");
    train->add_option("--preset", tr.preset, "Architecture preset")
        ->check(CLI::IsMember({"paper", "desk"}));
    train->add_option("--data", tr.data, "Dataset directory")->required();
    train->add_option("--out", tr.out, "Output directory for checkpoints and logs")->required();
    train->add_option("--stage", tr.stage, "Phase to run")
        ->check(CLI::IsMember({"1", "2", "3", "all", "finetune"}));
    train->add_option("--config", tr.config_file,
                      "JSON training config; explicit flags override its fields");
    train->add_option("--init", tr.init, "Checkpoint to continue from");
    auto* seed_opt = train->add_option("--seed", tr.seed, "Random seed");
    auto* lr_opt = train->add_option("--lr", tr.lr, "Learning rate");
    auto* batch_opt = train->add_option("--batch", tr.batch, "Batch size");
    train->add_option("--checkpoint-every", tr.checkpoint_every,
                      "Steps between checkpoint saves");

    EvalOpts ev;
    CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
    eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    eval->add_option("--data", ev.data, "Dataset directory")->required();
    eval->add_option("--split", ev.split, "Dataset split")
        ->check(CLI::IsMember({"train", "test"}));
    eval->add_option("--out", ev.out, "Report file")->required();
    eval->add_option("--resolution", ev.resolution, "Stage to evaluate");
    eval->add_option("--format", ev.format, "Report format")
        ->check(CLI::IsMember({"json", "csv", "table"}));

    InferOpts in;
    CLI::App* infer = app.add_subcommand("infer", "Reconstruct a point cloud from one image");
    infer->add_option("--image", in.image, "Input PPM image")->required();
    infer->add_option("--checkpoint", in.checkpoint, "Checkpoint file")->required();
    infer->add_option("--out", in.out, "Output directory")->required();
    infer->add_flag("--ply", in.ply, "Also write ASCII PLY files");

    UpsampleOpts up;
    CLI::App* upsample = app.add_subcommand("upsample", "Run one dense upsampling stage");
    upsample->add_option("--cloud", up.cloud, "Input cloud (.pcb)")->required();
    upsample->add_option("--checkpoint", up.checkpoint, "Checkpoint file")->required();
    upsample->add_option("--stage", up.stage, "Upsampling stage")->check(CLI::IsMember({2, 3}));
    upsample->add_option("--out", up.out, "Output directory")->required();

    InspectOpts insp;
    CLI::App* inspect = app.add_subcommand("inspect", "Describe a checkpoint, cloud, or dataset");
    auto* i_ckpt = inspect->add_option("--checkpoint", insp.checkpoint, "Checkpoint file");
    auto* i_cloud = inspect->add_option("--cloud", insp.cloud, "Cloud file (.pcb)");
    auto* i_data = inspect->add_option("--data", insp.data, "Dataset directory");
    i_ckpt->excludes(i_cloud, i_data);
    i_cloud->excludes(i_data);

    CLI::App* selftest = app.add_subcommand("selftest", "Run the built-in oracle suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (datagen->parsed()) return cmd_datagen(dg);
        if (train->parsed()) {
            tr.seed_given = seed_opt->count() > 0;
            tr.lr_given = lr_opt->count() > 0;
            tr.batch_given = batch_opt->count() > 0;
            return cmd_train(tr);
        }
        if (eval->parsed()) return cmd_eval(ev);
        if (infer->parsed()) return cmd_infer(in);
        if (upsample->parsed()) return cmd_upsample(up);
        if (inspect->parsed()) {
            if (i_ckpt->count() + i_cloud->count() + i_data->count() != 1)
                throw std::invalid_argument(
                    "inspect needs exactly one of --checkpoint, --cloud, --data");
            return cmd_inspect(insp);
        }
        if (selftest->parsed()) return cmd_selftest();
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "pcrec: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "pcrec: %s\n", e.what());
        return 2;
    }
    return 1;
}

}  // namespace pcrec
