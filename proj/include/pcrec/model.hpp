#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pcrec/tensor.hpp"

namespace pcrec {

struct ConvSpec {
    std::size_t channels;
    std::size_t stride;
    bool operator==(const ConvSpec&) const = default;
};

// Architecture description. Two presets: paper() is the full-size network,
// desk() is a reduced configuration that trains in minutes on one core.
struct ModelConfig {
    std::size_t image_size = 128;
    std::size_t in_channels = 3;
    std::vector<ConvSpec> encoder_convs;  // 3x3 kernels, padding 1, relu after each
    std::size_t latent_dim = 512;
    std::vector<std::size_t> decoder_hidden = {256, 256};  // final layer is base_n*3
    std::size_t base_n = 1024;
    std::size_t upsample_factor = 4;
    std::vector<std::size_t> global_mlp = {32, 64, 64};
    std::vector<std::size_t> local_mlp = {32, 32, 64};
    std::vector<std::size_t> aggregation_mlp = {32, 64, 64};
    double ball_radius_stage2 = 0.1;
    double ball_radius_stage3 = 0.05;
    std::size_t ball_cap = 16;
    double grid_size = 0.2;

    static ModelConfig paper();
    static ModelConfig desk();

    // Evenly spaced scalars spanning [-grid_size/2, +grid_size/2], one per
    // child of the upsampling step.
    std::vector<double> grid_codes() const;

    std::size_t n_global() const { return global_mlp.back(); }
    std::size_t n_local() const { return local_mlp.back(); }
    // Width of the per-child aggregated feature row: coordinates + global +
    // local + grid code.
    std::size_t aggregated_width() const { return 3 + n_global() + n_local() + 1; }

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);

    bool operator==(const ModelConfig&) const = default;
};

// Intermediate tensors of one dense-reconstruction call, exposed so tests can
// look inside the upsampling step.
struct FeatureBundle {
    Tensor x_g;         // [1, n_g]
    Tensor x_l;         // [n, n_l]
    Tensor x_gc;        // [upsample_factor, 1]
    Tensor aggregated;  // [4n, 3 + n_g + n_l + 1]
};

struct Pyramid {
    Tensor pc1;  // [N, 3]
    Tensor pc2;  // [4N, 3]
    Tensor pc3;  // [16N, 3]
};

// Coarse-to-dense reconstruction network: a convolutional image encoder, a
// fully connected sparse decoder, and two independently parameterized dense
// upsampling stages. Parameters live in a flat name -> tensor map; forward
// methods are const and record onto a caller-provided tape.
class PyramidModel {
  public:
    PyramidModel(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    std::map<std::string, Tensor>& params() { return params_; }
    const std::map<std::string, Tensor>& params() const { return params_; }

    // img: [3, image_size, image_size] -> [latent_dim]
    Tensor encode_image(Tape& tape, const Tensor& img) const;
    // latent: [latent_dim] -> [base_n, 3]
    Tensor decode_sparse(Tape& tape, const Tensor& latent) const;
    // stage is 2 or 3 (the two dense stages); pc: [n, 3] -> [1, n_g]
    Tensor global_features(Tape& tape, const Tensor& pc, int stage) const;
    // pc: [n, 3] -> [n, n_l]; neighborhoods via ball query at the stage radius
    Tensor local_features(Tape& tape, const Tensor& pc, int stage) const;
    // pc: [n, 3] -> [4n, 3]; children of parent row i land at rows 4i..4i+3
    Tensor dense_reconstruct(Tape& tape, const Tensor& pc, int stage,
                             FeatureBundle* trace = nullptr) const;
    Pyramid forward_pyramid(Tape& tape, const Tensor& img) const;

    // scope: encoder | sparse_decoder | dense_stage2 | dense_stage3 | total
    std::size_t count_params(const std::string& scope) const;

    // Parameter count of a single fully connected decoder [256, 256, 16N*3]
    // predicting the dense resolution directly from the latent vector.
    static std::size_t direct_fc_decoder_params(const ModelConfig& cfg);

  private:
    Tensor mlp_rows(Tape& tape, Tensor x, const std::string& prefix, std::size_t layers) const;
    const Tensor& at(const std::string& name) const;
    double stage_radius(int stage) const;

    ModelConfig cfg_;
    std::map<std::string, Tensor> params_;
    std::size_t encoder_flat_ = 0;  // flattened size after the last conv
};

}  // namespace pcrec
