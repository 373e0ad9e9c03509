#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include "pcrec/cli.hpp"
#include "pcrec/data.hpp"
#include "pcrec/eval.hpp"
#include "pcrec/model.hpp"
#include "pcrec/pointset.hpp"
#include "pcrec/train.hpp"

using pcrec::ModelConfig;
using pcrec::PointCloud;

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

int cli(std::initializer_list<std::string> args) {
    std::vector<std::string> strings = {"pcrec"};
    strings.insert(strings.end(), args);
    std::vector<const char*> argv;
    for (const std::string& s : strings) argv.push_back(s.c_str());
    return pcrec::run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

const char* kTinyConfig = R"({
  "preset": "desk",
  "learning_rate": 0.001,
  "batch_size": 2,
  "lambda1": 1.0,
  "lambda2": 1.0,
  "lambda3": 1.0,
  "pretrain_steps": [6, 4, 4],
  "finetune_steps": 3,
  "emd_eps": 0.01,
  "seed": 0
})";

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("usage errors exit 1 before any side effect") {
    const TempDir dir("pcrec_cli_usage");
    const std::string out = (dir.path / "never").string();
    CHECK(cli({"datagen", "--out", out, "--bogus"}) == 1);
    CHECK_FALSE(std::filesystem::exists(out));
    CHECK(cli({"nonsense"}) == 1);
    CHECK(cli({"train", "--data", "x"}) == 1);  // --out missing
    CHECK(cli({"eval", "--checkpoint", "a", "--data", "b", "--out", "c", "--split",
               "validation"}) == 1);
}

TEST_CASE("the command line drives the full pipeline") {
    const TempDir dir("pcrec_cli_pipeline");
    const auto p = [&](const char* rel) { return (dir.path / rel).string(); };

    // Dataset, then a few steps of every phase.
    REQUIRE(cli({"datagen", "--out", p("data"), "--num-shapes", "2", "--base-n", "8", "--views",
                 "1", "--image-size", "32", "--seed", "0"}) == 0);
    write_file(dir.path / "cfg.json", kTinyConfig);
    REQUIRE(cli({"train", "--preset", "desk", "--data", p("data"), "--out", p("run"), "--stage",
                 "all", "--config", p("cfg.json"), "--checkpoint-every", "100"}) == 0);
    CHECK(std::filesystem::exists(dir.path / "run" / "checkpoint.bin"));

    // The loss log is plain text: a header, one marker per phase, one row per
    // step with five columns.
    const std::string log = slurp(dir.path / "run" / "loss_log.txt");
    CHECK(log.starts_with("# step total stage1 stage2 stage3\n"));
    std::size_t rows = 0, markers = 0;
    for (std::size_t at = 0; at < log.size(); at = log.find('\n', at) + 1) {
        if (log[at] == '#')
            markers += log.compare(at, 8, "# phase ") == 0 ? 1 : 0;
        else
            ++rows;
    }
    CHECK(markers == 4);
    CHECK(rows == 6 + 4 + 4 + 3);

    // Evaluation writes a report that parses back.
    REQUIRE(cli({"eval", "--checkpoint", p("run/checkpoint.bin"), "--data", p("data"), "--split",
                 "train", "--out", p("report.json"), "--format", "json"}) == 0);
    const pcrec::EvalReport report =
        pcrec::EvalReport::from_json(slurp(dir.path / "report.json"));
    CHECK(report.count == 2);
    CHECK(report.resolution == 128);

    // Inference writes all three stages plus renders, and is deterministic.
    const std::string image = p("data/sample_0000/view_00.ppm");
    REQUIRE(cli({"infer", "--image", image, "--checkpoint", p("run/checkpoint.bin"), "--out",
                 p("inferred"), "--ply"}) == 0);
    CHECK(pcrec::read_pcb(p("inferred/sparse.pcb")).size() == 8);
    CHECK(pcrec::read_pcb(p("inferred/mid.pcb")).size() == 32);
    CHECK(pcrec::read_pcb(p("inferred/dense.pcb")).size() == 128);
    CHECK(std::filesystem::exists(dir.path / "inferred" / "render_dense_240.ppm"));
    const std::string ply = slurp(dir.path / "inferred" / "mid.ply");
    CHECK(ply.starts_with("ply\nformat ascii 1.0\n"));
    CHECK(ply.find("element vertex 32\n") != std::string::npos);

    REQUIRE(cli({"infer", "--image", image, "--checkpoint", p("run/checkpoint.bin"), "--out",
                 p("inferred2")}) == 0);
    CHECK(slurp(dir.path / "inferred" / "dense.pcb") ==
          slurp(dir.path / "inferred2" / "dense.pcb"));

    // Upsampling quadruples the count, and the result stays close to the
    // input: farthest-point downsampling the output back to 8 points lands
    // nearer the input than the input's own 2-point skeleton does.
    REQUIRE(cli({"upsample", "--cloud", p("inferred/sparse.pcb"), "--checkpoint",
                 p("run/checkpoint.bin"), "--stage", "2", "--out", p("up")}) == 0);
    const PointCloud sparse = pcrec::read_pcb(p("inferred/sparse.pcb"));
    const PointCloud up = pcrec::read_pcb(p("up/upsampled.pcb"));
    REQUIRE(up.size() == 32);
    PointCloud down, skeleton;
    for (const std::size_t i : pcrec::farthest_point_sample(up, 8)) down.pts.push_back(up[i]);
    for (const std::size_t i : pcrec::farthest_point_sample(sparse, 2))
        skeleton.pts.push_back(sparse[i]);
    CHECK(pcrec::chamfer(down, sparse) < pcrec::chamfer(skeleton, sparse));

    // Wrong input count for the stage is a usage error.
    CHECK(cli({"upsample", "--cloud", p("inferred/dense.pcb"), "--checkpoint",
               p("run/checkpoint.bin"), "--stage", "2", "--out", p("up_bad")}) == 1);

    // Size mismatch between image and checkpoint is a usage error.
    REQUIRE(cli({"datagen", "--out", p("data16"), "--num-shapes", "1", "--base-n", "8",
                 "--views", "1", "--image-size", "16", "--seed", "0"}) == 0);
    CHECK(cli({"infer", "--image", p("data16/sample_0000/view_00.ppm"), "--checkpoint",
               p("run/checkpoint.bin"), "--out", p("z")}) == 1);

    // Inspect works on all three artifact kinds; a damaged header is a
    // runtime failure.
    CHECK(cli({"inspect", "--checkpoint", p("run/checkpoint.bin")}) == 0);
    CHECK(cli({"inspect", "--cloud", p("inferred/sparse.pcb")}) == 0);
    CHECK(cli({"inspect", "--data", p("data")}) == 0);
    std::string bytes = slurp(dir.path / "run" / "checkpoint.bin");
    bytes[4] = char(0x7f);  // version field
    write_file(dir.path / "run" / "broken.bin", bytes);
    CHECK(cli({"inspect", "--checkpoint", p("run/broken.bin")}) == 2);
}

TEST_CASE("a zero-offset checkpoint repeats each parent four times") {
    const TempDir dir("pcrec_cli_zero_offset");
    ModelConfig mcfg = ModelConfig::desk();
    mcfg.base_n = 8;
    pcrec::TrainState state = pcrec::make_train_state(mcfg, 3);
    for (auto& [name, t] : state.model.params())
        if (name.find(".head.") != std::string::npos)
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
    pcrec::reset_optimizer(state);
    const std::string ckpt = (dir.path / "zero.bin").string();
    pcrec::save_checkpoint(ckpt, state, mcfg, pcrec::TrainConfig::desk());

    PointCloud in;
    for (int i = 0; i < 8; ++i) in.pts.push_back({0.1 * i, -0.05 * i, 0.02 * i});
    const std::string cloud = (dir.path / "in.pcb").string();
    pcrec::write_pcb(cloud, in);
    // Cloud files store 32-bit floats, so compare against what was stored.
    const PointCloud stored = pcrec::read_pcb(cloud);

    REQUIRE(cli({"upsample", "--cloud", cloud, "--checkpoint", ckpt, "--stage", "2", "--out",
                 dir.str()}) == 0);
    const PointCloud out = pcrec::read_pcb((dir.path / "upsampled.pcb").string());
    REQUIRE(out.size() == 32);
    for (std::size_t i = 0; i < stored.size(); ++i)
        for (std::size_t k = 0; k < 4; ++k) CHECK(out[4 * i + k] == stored[i]);
}

TEST_CASE("training divergence exits with the numerical failure code") {
    const TempDir dir("pcrec_cli_diverge");
    const auto p = [&](const char* rel) { return (dir.path / rel).string(); };
    REQUIRE(cli({"datagen", "--out", p("data"), "--num-shapes", "2", "--base-n", "8", "--views",
                 "1", "--image-size", "32", "--seed", "0"}) == 0);
    write_file(dir.path / "cfg.json", kTinyConfig);
    CHECK(cli({"train", "--data", p("data"), "--out", p("run"), "--stage", "finetune",
               "--config", p("cfg.json"), "--lr", "1e150"}) == 3);
    // The checkpoint still holds the pre-divergence parameters.
    const pcrec::Checkpoint kept = pcrec::load_checkpoint(p("run/checkpoint.bin"));
    for (const auto& [name, t] : kept.state.model.params())
        for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(std::isfinite(t[i]));
}

TEST_CASE("selftest passes on a fresh build") {
    CHECK(cli({"selftest"}) == 0);
}

TEST_SUITE_END();
