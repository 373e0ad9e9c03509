#include "pcrec/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "pcrec/pointset.hpp"
#include "pcrec/rng.hpp"

namespace pcrec {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

}  // namespace

TrainConfig TrainConfig::paper() {
    TrainConfig cfg;
    cfg.preset = "paper";
    cfg.learning_rate = 5e-5;
    cfg.batch_size = 32;
    cfg.pretrain_steps = {20000, 8000, 8000};
    cfg.finetune_steps = 10000;
    return cfg;
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

void TrainConfig::validate() const {
    if (preset != "paper" && preset != "desk")
        throw std::invalid_argument("unknown training preset: " + preset);
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
    // Zero weights are allowed so a schedule can silence a stage entirely.
    for (double l : {lambda1, lambda2, lambda3})
        if (!(l >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
    if (!(emd_eps > 0.0)) throw std::invalid_argument("assignment slack must be positive");
}

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["preset"] = preset;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["lambda1"] = lambda1;
    j["lambda2"] = lambda2;
    j["lambda3"] = lambda3;
    j["pretrain_steps"] = pretrain_steps;
    j["finetune_steps"] = finetune_steps;
    j["emd_eps"] = emd_eps;
    j["seed"] = seed;
    return j.dump(2) + "\n";
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    TrainConfig cfg;
    cfg.preset = j.at("preset").get<std::string>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.batch_size = j.at("batch_size").get<std::size_t>();
    cfg.lambda1 = j.at("lambda1").get<double>();
    cfg.lambda2 = j.at("lambda2").get<double>();
    cfg.lambda3 = j.at("lambda3").get<double>();
    const auto steps = j.at("pretrain_steps").get<std::vector<std::size_t>>();
    if (steps.size() != 3)
        throw std::invalid_argument("pretrain_steps must list exactly three phases");
    std::copy(steps.begin(), steps.end(), cfg.pretrain_steps.begin());
    cfg.finetune_steps = j.at("finetune_steps").get<std::size_t>();
    cfg.emd_eps = j.at("emd_eps").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

TrainState make_train_state(const ModelConfig& cfg, std::uint64_t seed) {
    TrainState state(PyramidModel(cfg, seed));
    reset_optimizer(state);
    return state;
}

void reset_optimizer(TrainState& state) {
    state.m1.clear();
    state.m2.clear();
    for (auto& [name, p] : state.model.params()) {
        state.m1.emplace(name, Tensor(p.shape()));
        state.m2.emplace(name, Tensor(p.shape()));
        p.zero_grad();
    }
    state.step = 0;
    state.log.clear();
}

TrainData TrainData::load(const DatasetManifest& manifest, const std::string& split) {
    TrainData data;
    for (std::size_t s = 0; s < manifest.samples.size(); ++s) {
        if (manifest.samples[s].split != split) continue;
        for (std::size_t v = 0; v < manifest.views; ++v) {
            const DatasetSample sample = load_sample(manifest, s, v);
            Item item;
            item.image = sample.image;
            item.gt1 = sample.gt_sparse.to_tensor();
            item.gt2 = sample.gt_mid.to_tensor();
            item.gt3 = sample.gt_dense.to_tensor();
            data.items.push_back(std::move(item));
        }
    }
    if (data.items.empty())
        throw std::runtime_error("dataset holds no '" + split + "' samples");
    return data;
}

Tensor loss_stage1(Tape& tape, const Tensor& pred, const Tensor& gt, double eps) {
    return emd_approx(tape, pred, gt, eps);
}

Tensor loss_dense(Tape& tape, const Tensor& pred, const Tensor& gt) {
    return chamfer(tape, pred, gt);
}

void adam_step(std::map<std::string, Tensor>& params, std::map<std::string, Tensor>& m1,
               std::map<std::string, Tensor>& m2, std::size_t t, double lr) {
    if (t < 1) throw std::invalid_argument("Adam step count starts at 1");
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    for (auto& [name, p] : params) {
        const auto it1 = m1.find(name);
        const auto it2 = m2.find(name);
        if (it1 == m1.end() || it2 == m2.end())
            throw std::invalid_argument("no moment buffers for parameter " + name);
        Tensor& m = it1->second;
        Tensor& v = it2->second;
        if (m.size() != p.size() || v.size() != p.size())
            throw std::invalid_argument("moment shape differs from parameter " + name);
        const bool live = p.has_grad();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = live ? p.grad()[i] : 0.0;
            if (!std::isfinite(g))
                throw std::runtime_error("non-finite gradient for parameter " + name);
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
            p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + kAdamEps);
        }
    }
}

namespace {

struct BatchLoss {
    double total = 0.0;
    double stage1 = 0.0;
    double stage2 = 0.0;
    double stage3 = 0.0;
};

struct Diverged : std::exception {};

// Predictions that feed an assignment solver or a neighborhood query must be
// finite, and far enough from the overflow edge that squared distances stay
// finite too. Anything past the bound is a blown-up run, not data.
void ensure_usable(const Tensor& pc) {
    for (std::size_t i = 0; i < pc.size(); ++i)
        if (!std::isfinite(pc[i]) || std::abs(pc[i]) > 1e150) throw Diverged{};
}

// Forward and backward for one sample; the 1/batch factor rides on the tape
// so leaf gradients accumulate to the batch mean.
BatchLoss sample_loss(TrainState& state, Phase phase, const TrainData::Item& item,
                      const TrainConfig& cfg, double inv_batch) {
    Tape tape;
    BatchLoss out;
    Tensor loss = Tensor::scalar(0.0);
    switch (phase) {
        case Phase::stage1: {
            const Tensor latent = state.model.encode_image(tape, item.image);
            const Tensor pc1 = state.model.decode_sparse(tape, latent);
            ensure_usable(pc1);
            loss = loss_stage1(tape, pc1, item.gt1, cfg.emd_eps);
            out.stage1 = loss.item();
            break;
        }
        case Phase::stage2: {
            const Tensor pred = state.model.dense_reconstruct(tape, item.gt1, 2);
            loss = loss_dense(tape, pred, item.gt2);
            out.stage2 = loss.item();
            break;
        }
        case Phase::stage3: {
            const Tensor pred = state.model.dense_reconstruct(tape, item.gt2, 3);
            loss = loss_dense(tape, pred, item.gt3);
            out.stage3 = loss.item();
            break;
        }
        case Phase::finetune: {
            // The pyramid is composed stage by stage so each prediction can
            // be vetted before the next stage queries its neighborhoods.
            const Tensor latent = state.model.encode_image(tape, item.image);
            const Tensor pc1 = state.model.decode_sparse(tape, latent);
            ensure_usable(pc1);
            const Tensor pc2 = state.model.dense_reconstruct(tape, pc1, 2);
            ensure_usable(pc2);
            const Tensor pc3 = state.model.dense_reconstruct(tape, pc2, 3);
            ensure_usable(pc3);
            // Zero-weight terms are skipped outright so silenced stages
            // receive exactly zero gradient.
            loss = Tensor::scalar(0.0);
            if (cfg.lambda1 > 0.0) {
                const Tensor l1 = loss_stage1(tape, pc1, item.gt1, cfg.emd_eps);
                out.stage1 = l1.item();
                loss = tape.add(loss, tape.scale(l1, cfg.lambda1));
            }
            if (cfg.lambda2 > 0.0) {
                const Tensor l2 = loss_dense(tape, pc2, item.gt2);
                out.stage2 = l2.item();
                loss = tape.add(loss, tape.scale(l2, cfg.lambda2));
            }
            if (cfg.lambda3 > 0.0) {
                const Tensor l3 = loss_dense(tape, pc3, item.gt3);
                out.stage3 = l3.item();
                loss = tape.add(loss, tape.scale(l3, cfg.lambda3));
            }
            break;
        }
    }
    out.total = loss.item();
    tape.backward(tape.scale(loss, inv_batch));
    return out;
}

}  // namespace

void train_more(TrainState& state, Phase phase, const TrainData& data, const TrainConfig& cfg,
                std::size_t steps) {
    cfg.validate();
    if (data.items.empty()) throw std::invalid_argument("training data is empty");
    auto params = state.model.params();
    for (auto& [name, p] : params) p.zero_grad();

    const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);
    for (std::size_t s = 0; s < steps; ++s) {
        BatchLoss mean;
        bool blew_up = false;
        try {
            for (std::size_t j = 0; j < cfg.batch_size; ++j) {
                const std::size_t pick = (state.step * cfg.batch_size + j) % data.items.size();
                const BatchLoss one = sample_loss(state, phase, data.items[pick], cfg, inv_batch);
                mean.total += one.total * inv_batch;
                mean.stage1 += one.stage1 * inv_batch;
                mean.stage2 += one.stage2 * inv_batch;
                mean.stage3 += one.stage3 * inv_batch;
            }
        } catch (const Diverged&) {
            blew_up = true;
        }
        if (blew_up || !std::isfinite(mean.total)) {
            for (auto& [name, p] : params) p.zero_grad();
            throw std::runtime_error("loss diverged at step " + std::to_string(state.step + 1) +
                                     "; state keeps the last finite parameters");
        }
        adam_step(params, state.m1, state.m2, state.step + 1, cfg.learning_rate);
        for (auto& [name, p] : params) p.zero_grad();
        ++state.step;
        state.log.push_back({state.step, mean.total, mean.stage1, mean.stage2, mean.stage3});
    }
}

void pretrain_stage(TrainState& state, int stage_id, const TrainData& data,
                    const TrainConfig& cfg) {
    if (stage_id < 1 || stage_id > 3)
        throw std::invalid_argument("pretraining stage must be 1, 2, or 3");
    reset_optimizer(state);
    const Phase phase = stage_id == 1   ? Phase::stage1
                        : stage_id == 2 ? Phase::stage2
                                        : Phase::stage3;
    train_more(state, phase, data, cfg,
               cfg.pretrain_steps[static_cast<std::size_t>(stage_id - 1)]);
}

void finetune_end_to_end(TrainState& state, const TrainData& data, const TrainConfig& cfg) {
    reset_optimizer(state);
    train_more(state, Phase::finetune, data, cfg, cfg.finetune_steps);
}

namespace {

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
    const std::string& bytes;
    std::size_t pos = 0;
    std::string origin;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw std::runtime_error(origin + " is truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
};

void append_tensor(std::string& out, const std::string& name, const Tensor& t) {
    append_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    append_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) append_u64(out, d);
    for (std::size_t i = 0; i < t.size(); ++i)
        append_u64(out, std::bit_cast<std::uint64_t>(t[i]));
}

std::uint64_t config_hash(const std::string& model_json, const std::string& train_json) {
    const std::string joined = model_json + train_json;
    return fnv1a(joined.data(), joined.size());
}

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state,
                     const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
    const std::string model_json = model_cfg.to_json();
    const std::string train_json = train_cfg.to_json();

    std::string bytes = "PCKP";
    append_u32(bytes, kCheckpointVersion);
    append_u64(bytes, config_hash(model_json, train_json));
    append_u64(bytes, state.step);
    append_u32(bytes, static_cast<std::uint32_t>(model_json.size()));
    bytes += model_json;
    append_u32(bytes, static_cast<std::uint32_t>(train_json.size()));
    bytes += train_json;

    const auto params = state.model.params();
    append_u32(bytes, static_cast<std::uint32_t>(3 * params.size()));
    for (const auto& [name, p] : params) append_tensor(bytes, "p/" + name, p);
    for (const auto& [name, m] : state.m1) append_tensor(bytes, "m/" + name, m);
    for (const auto& [name, v] : state.m2) append_tensor(bytes, "v/" + name, v);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out.good()) throw std::runtime_error("failed writing " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    const std::string bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    ByteReader r{bytes, 0, path};
    if (r.str(4) != "PCKP") throw std::runtime_error(path + " is not a checkpoint");
    if (r.u32() != kCheckpointVersion)
        throw std::runtime_error(path + " has an unsupported checkpoint version");
    const std::uint64_t stored_hash = r.u64();
    const std::uint64_t step = r.u64();
    const std::string model_json = r.str(r.u32());
    const std::string train_json = r.str(r.u32());
    if (config_hash(model_json, train_json) != stored_hash)
        throw std::runtime_error(path + " fails its config hash check");

    const ModelConfig model_cfg = ModelConfig::from_json(model_json);
    const TrainConfig train_cfg = TrainConfig::from_json(train_json);
    Checkpoint ckpt{make_train_state(model_cfg, 0), model_cfg, train_cfg};
    ckpt.state.step = step;

    auto params = ckpt.state.model.params();
    const std::uint32_t count = r.u32();
    std::size_t restored = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.str(r.u32());
        const std::uint32_t ndim = r.u32();
        std::vector<std::size_t> shape;
        std::size_t size = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            shape.push_back(static_cast<std::size_t>(r.u64()));
            size *= shape.back();
        }
        if (name.size() < 3 || name[1] != '/')
            throw std::runtime_error(path + " holds an unrecognized tensor " + name);
        const std::string key = name.substr(2);
        std::map<std::string, Tensor>* home = nullptr;
        switch (name[0]) {
            case 'p': home = &params; break;
            case 'm': home = &ckpt.state.m1; break;
            case 'v': home = &ckpt.state.m2; break;
            default: throw std::runtime_error(path + " holds an unrecognized tensor " + name);
        }
        const auto it = home->find(key);
        if (it == home->end())
            throw std::runtime_error(path + " names unknown parameter " + key);
        if (it->second.shape() != shape)
            throw std::runtime_error(path + " has a shape mismatch for " + key);
        for (std::size_t k = 0; k < size; ++k)
            it->second[k] = std::bit_cast<double>(r.u64());
        ++restored;
    }
    if (restored != 3 * params.size())
        throw std::runtime_error(path + " is missing tensors");
    return ckpt;
}

}  // namespace pcrec
