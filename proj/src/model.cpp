#include "pcrec/model.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "pcrec/pointset.hpp"
#include "pcrec/rng.hpp"

namespace pcrec {

namespace {

Tensor xavier(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / double(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-a, a);
    return t;
}

}  // namespace

ModelConfig ModelConfig::paper() {
    ModelConfig cfg;
    cfg.image_size = 128;
    cfg.encoder_convs = {{16, 1}, {16, 2},  {32, 1},  {32, 2},  {64, 1},  {64, 2},
                         {128, 1}, {128, 2}, {256, 1}, {256, 2}, {256, 1}, {256, 1},
                         {256, 1}, {256, 1}, {256, 1}, {256, 1}};
    cfg.base_n = 1024;
    return cfg;
}

ModelConfig ModelConfig::desk() {
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.encoder_convs = {{8, 1}, {16, 2}, {16, 1}, {32, 2}, {32, 1}, {64, 2}};
    cfg.base_n = 256;
    return cfg;
}

std::vector<double> ModelConfig::grid_codes() const {
    std::vector<double> codes(upsample_factor);
    if (upsample_factor == 1) {
        codes[0] = 0.0;
        return codes;
    }
    const double lo = -0.5 * grid_size;
    const double step = grid_size / double(upsample_factor - 1);
    for (std::size_t j = 0; j < upsample_factor; ++j) codes[j] = lo + step * double(j);
    return codes;
}

void ModelConfig::validate() const {
    if (image_size < 1) throw std::invalid_argument("ModelConfig: image_size must be >= 1");
    if (in_channels < 1) throw std::invalid_argument("ModelConfig: in_channels must be >= 1");
    if (encoder_convs.empty()) throw std::invalid_argument("ModelConfig: no encoder layers");
    for (const auto& c : encoder_convs)
        if (c.channels < 1 || c.stride < 1)
            throw std::invalid_argument("ModelConfig: conv channels and stride must be >= 1");
    if (latent_dim < 1) throw std::invalid_argument("ModelConfig: latent_dim must be >= 1");
    if (base_n < 1) throw std::invalid_argument("ModelConfig: base_n must be >= 1");
    if (upsample_factor < 2) throw std::invalid_argument("ModelConfig: upsample_factor must be >= 2");
    if (global_mlp.empty() || local_mlp.empty() || aggregation_mlp.empty() || decoder_hidden.empty())
        throw std::invalid_argument("ModelConfig: empty layer list");
    if (!(ball_radius_stage2 > 0.0) || !(ball_radius_stage3 > 0.0))
        throw std::invalid_argument("ModelConfig: ball radii must be positive");
    if (ball_cap < 1) throw std::invalid_argument("ModelConfig: ball_cap must be >= 1");
    if (!(grid_size > 0.0)) throw std::invalid_argument("ModelConfig: grid_size must be positive");
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["image_size"] = image_size;
    j["in_channels"] = in_channels;
    auto& convs = j["encoder_convs"] = nlohmann::json::array();
    for (const auto& c : encoder_convs) convs.push_back({c.channels, c.stride});
    j["latent_dim"] = latent_dim;
    j["decoder_hidden"] = decoder_hidden;
    j["base_n"] = base_n;
    j["upsample_factor"] = upsample_factor;
    j["global_mlp"] = global_mlp;
    j["local_mlp"] = local_mlp;
    j["aggregation_mlp"] = aggregation_mlp;
    j["ball_radius_stage2"] = ball_radius_stage2;
    j["ball_radius_stage3"] = ball_radius_stage3;
    j["ball_cap"] = ball_cap;
    j["grid_size"] = grid_size;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.image_size = j.at("image_size").get<std::size_t>();
    cfg.in_channels = j.at("in_channels").get<std::size_t>();
    cfg.encoder_convs.clear();
    for (const auto& c : j.at("encoder_convs"))
        cfg.encoder_convs.push_back({c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>()});
    cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
    cfg.decoder_hidden = j.at("decoder_hidden").get<std::vector<std::size_t>>();
    cfg.base_n = j.at("base_n").get<std::size_t>();
    cfg.upsample_factor = j.at("upsample_factor").get<std::size_t>();
    cfg.global_mlp = j.at("global_mlp").get<std::vector<std::size_t>>();
    cfg.local_mlp = j.at("local_mlp").get<std::vector<std::size_t>>();
    cfg.aggregation_mlp = j.at("aggregation_mlp").get<std::vector<std::size_t>>();
    cfg.ball_radius_stage2 = j.at("ball_radius_stage2").get<double>();
    cfg.ball_radius_stage3 = j.at("ball_radius_stage3").get<double>();
    cfg.ball_cap = j.at("ball_cap").get<std::size_t>();
    cfg.grid_size = j.at("grid_size").get<double>();
    cfg.validate();
    return cfg;
}

PyramidModel::PyramidModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();

    std::size_t spatial = cfg_.image_size;
    for (const auto& c : cfg_.encoder_convs) {
        spatial = (spatial + 2 - 3) / c.stride + 1;
        if (spatial < 1) throw std::invalid_argument("PyramidModel: encoder shrinks image away");
    }
    encoder_flat_ = cfg_.encoder_convs.back().channels * spatial * spatial;

    Rng rng(seed);
    auto add_affine = [&](const std::string& name, std::size_t in, std::size_t out) {
        params_[name + ".w"] = xavier(rng, {in, out}, in, out);
        params_[name + ".b"] = Tensor({out});
    };

    std::size_t c_in = cfg_.in_channels;
    for (std::size_t i = 0; i < cfg_.encoder_convs.size(); ++i) {
        const std::size_t c_out = cfg_.encoder_convs[i].channels;
        params_["encoder.conv" + std::to_string(i) + ".w"] =
            xavier(rng, {c_out, c_in, 3, 3}, c_in * 9, c_out * 9);
        params_["encoder.conv" + std::to_string(i) + ".b"] = Tensor({c_out});
        c_in = c_out;
    }
    add_affine("encoder.fc", encoder_flat_, cfg_.latent_dim);

    std::size_t prev = cfg_.latent_dim;
    for (std::size_t i = 0; i < cfg_.decoder_hidden.size(); ++i) {
        add_affine("decoder.fc" + std::to_string(i), prev, cfg_.decoder_hidden[i]);
        prev = cfg_.decoder_hidden[i];
    }
    add_affine("decoder.fc" + std::to_string(cfg_.decoder_hidden.size()), prev, cfg_.base_n * 3);

    for (int stage : {2, 3}) {
        const std::string s = "stage" + std::to_string(stage) + ".";
        prev = 3;
        for (std::size_t i = 0; i < cfg_.global_mlp.size(); ++i) {
            add_affine(s + "global" + std::to_string(i), prev, cfg_.global_mlp[i]);
            prev = cfg_.global_mlp[i];
        }
        prev = 3;
        for (std::size_t i = 0; i < cfg_.local_mlp.size(); ++i) {
            add_affine(s + "local" + std::to_string(i), prev, cfg_.local_mlp[i]);
            prev = cfg_.local_mlp[i];
        }
        prev = cfg_.aggregated_width();
        for (std::size_t i = 0; i < cfg_.aggregation_mlp.size(); ++i) {
            add_affine(s + "agg" + std::to_string(i), prev, cfg_.aggregation_mlp[i]);
            prev = cfg_.aggregation_mlp[i];
        }
        add_affine(s + "head", prev, 3);
    }
}

const Tensor& PyramidModel::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
        throw std::invalid_argument("PyramidModel: missing parameter " + name);
    return it->second;
}

double PyramidModel::stage_radius(int stage) const {
    if (stage == 2) return cfg_.ball_radius_stage2;
    if (stage == 3) return cfg_.ball_radius_stage3;
    throw std::invalid_argument("PyramidModel: stage must be 2 or 3");
}

Tensor PyramidModel::mlp_rows(Tape& tape, Tensor x, const std::string& prefix,
                              std::size_t layers) const {
    for (std::size_t i = 0; i < layers; ++i) {
        const std::string name = prefix + std::to_string(i);
        x = tape.relu(tape.affine(x, at(name + ".w"), at(name + ".b")));
    }
    return x;
}

Tensor PyramidModel::encode_image(Tape& tape, const Tensor& img) const {
    if (img.ndim() != 3 || img.shape()[0] != cfg_.in_channels ||
        img.shape()[1] != cfg_.image_size || img.shape()[2] != cfg_.image_size)
        throw std::invalid_argument("encode_image: image must be [" +
                                    std::to_string(cfg_.in_channels) + ", " +
                                    std::to_string(cfg_.image_size) + ", " +
                                    std::to_string(cfg_.image_size) + "]");
    Tensor x = img;
    for (std::size_t i = 0; i < cfg_.encoder_convs.size(); ++i) {
        const std::string name = "encoder.conv" + std::to_string(i);
        x = tape.relu(tape.conv2d(x, at(name + ".w"), at(name + ".b"),
                                  cfg_.encoder_convs[i].stride, 1));
    }
    x = tape.reshape(x, {1, encoder_flat_});
    x = tape.affine(x, at("encoder.fc.w"), at("encoder.fc.b"));
    return tape.reshape(x, {cfg_.latent_dim});
}

Tensor PyramidModel::decode_sparse(Tape& tape, const Tensor& latent) const {
    if (latent.size() != cfg_.latent_dim)
        throw std::invalid_argument("decode_sparse: latent size mismatch");
    Tensor x = tape.reshape(latent, {1, cfg_.latent_dim});
    for (std::size_t i = 0; i < cfg_.decoder_hidden.size(); ++i) {
        const std::string name = "decoder.fc" + std::to_string(i);
        x = tape.relu(tape.affine(x, at(name + ".w"), at(name + ".b")));
    }
    const std::string last = "decoder.fc" + std::to_string(cfg_.decoder_hidden.size());
    x = tape.affine(x, at(last + ".w"), at(last + ".b"));
    return tape.reshape(x, {cfg_.base_n, 3});
}

Tensor PyramidModel::global_features(Tape& tape, const Tensor& pc, int stage) const {
    stage_radius(stage);  // validates the stage number
    const std::string prefix = "stage" + std::to_string(stage) + ".global";
    Tensor h = mlp_rows(tape, pc, prefix, cfg_.global_mlp.size());
    MaxRows pooled = tape.max_over_rows(h);
    return tape.reshape(pooled.values, {1, cfg_.n_global()});
}

Tensor PyramidModel::local_features(Tape& tape, const Tensor& pc, int stage) const {
    const double radius = stage_radius(stage);
    const std::size_t n = pc.rows();
    const PointCloud view = PointCloud::from_tensor(pc);

    // neighborhood structure is part of the forward geometry: gradients flow
    // through the gathered coordinates, not through which indices were chosen
    std::vector<std::size_t> neighbors, centers, offsets;
    offsets.push_back(0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j : ball_query(view, i, radius, cfg_.ball_cap)) {
            neighbors.push_back(j);
            centers.push_back(i);
        }
        offsets.push_back(neighbors.size());
    }

    Tensor rel = tape.sub(tape.gather_rows(pc, neighbors), tape.gather_rows(pc, centers));
    const std::string prefix = "stage" + std::to_string(stage) + ".local";
    Tensor h = mlp_rows(tape, rel, prefix, cfg_.local_mlp.size());
    return tape.segment_max_rows(h, offsets);
}

Tensor PyramidModel::dense_reconstruct(Tape& tape, const Tensor& pc, int stage,
                                       FeatureBundle* trace) const {
    const std::size_t n = pc.rows();
    const std::size_t k = cfg_.upsample_factor;
    Tensor x_g = global_features(tape, pc, stage);
    Tensor x_l = local_features(tape, pc, stage);

    Tensor base = tape.concat_cols({pc, tape.tile_rows(x_g, n), x_l});
    Tensor up = tape.tile_rows(base, k);

    const std::vector<double> codes = cfg_.grid_codes();
    std::vector<double> column(n * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) column[i * k + j] = codes[j];
    Tensor grid_col({n * k, 1}, std::move(column));

    Tensor aggregated = tape.concat_cols({up, grid_col});
    if (trace) {
        trace->x_g = x_g;
        trace->x_l = x_l;
        trace->x_gc = Tensor({k, 1}, std::vector<double>(codes));
        trace->aggregated = aggregated;
    }

    const std::string s = "stage" + std::to_string(stage) + ".";
    Tensor h = mlp_rows(tape, aggregated, s + "agg", cfg_.aggregation_mlp.size());
    Tensor offsets = tape.affine(h, at(s + "head.w"), at(s + "head.b"));
    return tape.add(tape.tile_rows(pc, k), offsets);
}

Pyramid PyramidModel::forward_pyramid(Tape& tape, const Tensor& img) const {
    Pyramid out;
    out.pc1 = decode_sparse(tape, encode_image(tape, img));
    out.pc2 = dense_reconstruct(tape, out.pc1, 2);
    out.pc3 = dense_reconstruct(tape, out.pc2, 3);
    return out;
}

std::size_t PyramidModel::count_params(const std::string& scope) const {
    std::string prefix;
    if (scope == "encoder") prefix = "encoder.";
    else if (scope == "sparse_decoder") prefix = "decoder.";
    else if (scope == "dense_stage2") prefix = "stage2.";
    else if (scope == "dense_stage3") prefix = "stage3.";
    else if (scope != "total")
        throw std::invalid_argument("count_params: unknown scope " + scope);
    std::size_t total = 0;
    for (const auto& [name, t] : params_)
        if (prefix.empty() || name.rfind(prefix, 0) == 0) total += t.size();
    return total;
}

std::size_t PyramidModel::direct_fc_decoder_params(const ModelConfig& cfg) {
    const std::size_t dense_n = cfg.base_n * cfg.upsample_factor * cfg.upsample_factor;
    std::size_t total = 0, prev = cfg.latent_dim;
    for (std::size_t width : cfg.decoder_hidden) {
        total += prev * width + width;
        prev = width;
    }
    total += prev * dense_n * 3 + dense_n * 3;
    return total;
}

}  // namespace pcrec
