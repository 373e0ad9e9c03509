#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pcrec/data.hpp"
#include "pcrec/model.hpp"
#include "pcrec/tensor.hpp"

namespace pcrec {

struct TrainConfig {
    std::string preset = "desk";
    double learning_rate = 5e-4;
    std::size_t batch_size = 8;
    // Loss weights for the finetune objective, sparse to dense.
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda3 = 1.0;
    // Optimizer steps per phase: stage-1, stage-2, stage-3 pretraining.
    std::array<std::size_t, 3> pretrain_steps = {2000, 400, 400};
    std::size_t finetune_steps = 300;
    // Relative slack of the assignment solver inside the stage-1 loss.
    double emd_eps = 0.01;
    std::uint64_t seed = 0;

    static TrainConfig paper();
    static TrainConfig desk();
    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

// One optimizer step as logged: the weighted total plus the raw per-stage
// losses (zero for stages a phase does not touch).
struct LossRow {
    std::size_t step = 0;
    double total = 0.0;
    double stage1 = 0.0;
    double stage2 = 0.0;
    double stage3 = 0.0;
};

struct TrainState {
    PyramidModel model;
    std::map<std::string, Tensor> m1;  // Adam first moments, keyed like params
    std::map<std::string, Tensor> m2;  // Adam second moments
    std::size_t step = 0;              // optimizer steps taken in the current phase
    std::vector<LossRow> log;

    explicit TrainState(PyramidModel m) : model(std::move(m)) {}
};

TrainState make_train_state(const ModelConfig& cfg, std::uint64_t seed);

// Clears moments, the step counter, and the log. Each training phase is its
// own Adam run.
void reset_optimizer(TrainState& state);

// In-memory training set: one item per (sample, view) pair of the chosen
// split, in manifest order. Ground truth is kept as [n, 3] tensors.
struct TrainData {
    struct Item {
        Tensor image;
        Tensor gt1;
        Tensor gt2;
        Tensor gt3;
    };
    std::vector<Item> items;

    static TrainData load(const DatasetManifest& manifest, const std::string& split);
};

// Assignment loss for the sparse stage; the matching is frozen at forward
// time, so gradients pull matched pairs together.
Tensor loss_stage1(Tape& tape, const Tensor& pred, const Tensor& gt, double eps = 0.01);

// Nearest-neighbor loss for the upsampling stages.
Tensor loss_dense(Tape& tape, const Tensor& pred, const Tensor& gt);

// One Adam update (beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected) applied
// in place from the gradients stored on the parameters. t counts from 1.
// A non-finite gradient raises an error naming the parameter.
void adam_step(std::map<std::string, Tensor>& params, std::map<std::string, Tensor>& m1,
               std::map<std::string, Tensor>& m2, std::size_t t, double lr);

enum class Phase { stage1, stage2, stage3, finetune };

// Runs `steps` more optimizer steps of one phase, continuing from state.step.
// Batches cycle round-robin through data.items, so a reloaded checkpoint
// continues with exactly the batches an uninterrupted run would have seen.
// Stage-1 batches fit the encoder+decoder against gt1 under the assignment
// loss; stages 2/3 fit one upsampler fed the coarser ground truth; finetune
// optimizes lambda1 * stage1 + lambda2 * CD(pc2) + lambda3 * CD(pc3) through
// the whole pyramid. If a batch loss turns non-finite the state is left at
// the last finite step and an error says which step diverged.
void train_more(TrainState& state, Phase phase, const TrainData& data, const TrainConfig& cfg,
                std::size_t steps);

// The two-phase regime: each call resets the optimizer, then runs the
// configured number of steps for that phase.
void pretrain_stage(TrainState& state, int stage_id, const TrainData& data,
                    const TrainConfig& cfg);
void finetune_end_to_end(TrainState& state, const TrainData& data, const TrainConfig& cfg);

// Checkpoint: magic, version, config hash, step, both config JSON strings,
// then every parameter and moment tensor as raw little-endian doubles.
// Loading rebuilds the model from the stored config and reproduces the next
// update exactly.
void save_checkpoint(const std::string& path, const TrainState& state,
                     const ModelConfig& model_cfg, const TrainConfig& train_cfg);

struct Checkpoint {
    TrainState state;
    ModelConfig model_cfg;
    TrainConfig train_cfg;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace pcrec
