#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patchseg/atlas.hpp"
#include "patchseg/eval.hpp"
#include "patchseg/model.hpp"
#include "patchseg/nn/optim.hpp"
#include "patchseg/sampling.hpp"
#include "patchseg/spatial.hpp"
#include "patchseg/volume.hpp"

namespace patchseg {

// Full experiment description. Serialized as UTF-8 "key = value" lines with
// '#' comments; unknown keys are rejected.
struct TrainConfig {
    NetworkConfig net;

    std::size_t epochs = 10; // the schedule's max_iter; lr updates per epoch
    std::size_t batches_per_epoch = 20;
    std::size_t batch_size = 256;
    SamplingMode sampling = SamplingMode::natural;
    bool augment = false;
    bool weighted_loss = false; // inverse-frequency class weights in the loss
    std::uint64_t seed = 0;
    Plane plane = Plane::axial;

    double lr0 = 1e-3;
    double momentum = 0.9;
    double poly_power = 0.9;

    double atlas_epsilon = 1e-3;
    std::size_t val_samples = 20000; // per-epoch validation voxel subsample

    std::vector<std::string> train_images, train_labels, val_images, val_labels;
    std::string out_dir = ".";
};

std::string serialize_config(const TrainConfig& cfg);
TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config_file(const std::filesystem::path& path);

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

// On-disk model state: magic "PSCKPT01"; u32 LE config length + config text;
// u32 tensor count, then per tensor u16 name length + name, u8 rank,
// u32 LE dims, f32 LE payload; optimizer velocities in the same scheme;
// u32 epoch, f64 mean, f64 std; CRC32 trailer over all preceding bytes.
struct Checkpoint {
    TrainConfig config;
    std::vector<NamedTensor> params;
    std::vector<NamedTensor> velocities;
    std::uint32_t epoch = 0;
    NormStats norm;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rebuilds the float model described by the checkpoint and installs its
// parameter values; forward outputs reproduce the saved model bit-exactly.
Model<float> model_from_checkpoint(const Checkpoint& ckpt);

struct EpochRecord {
    std::size_t epoch;
    double lr;
    double train_loss; // global loss: main + weighted auxiliary losses
    double val_dice;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochRecord> log;
};

// In-memory training entry point: raw (unnormalized) volumes paired with
// label maps; all volumes must share one grid size. Writes nothing.
TrainResult train_on_data(const TrainConfig& cfg, const std::vector<Volume>& train_images,
                          const std::vector<LabelMap>& train_labels,
                          const std::vector<Volume>& val_images,
                          const std::vector<LabelMap>& val_labels);

// Loads the datasets named in the config, trains, and writes
// out_dir/checkpoint.ckpt plus out_dir/train_log.csv.
TrainResult train_model(const TrainConfig& cfg);

void write_train_log_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& log);

// Sliding-window inference. The raw volume is normalized with the
// checkpoint's statistics; masked mode classifies only voxels with nonzero
// raw intensity and labels the rest background. Ties resolve to the lowest
// class index.
LabelMap predict_with_model(Model<float>& model, const NormStats& norm, const Volume& raw,
                            const ProbAtlas* atlas, const LandmarkGrid* grid, Plane plane,
                            bool masked = true);

LabelMap predict_volume(const Checkpoint& ckpt, const Volume& raw, const ProbAtlas* atlas,
                        const LandmarkGrid* grid, bool masked = true);

} // namespace patchseg
