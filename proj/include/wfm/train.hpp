#pragma once

// Training configuration, the alternating discriminator/generator step,
// epoch loop and checkpoints.

#include "wfm/adversarial.hpp"
#include "wfm/data.hpp"
#include "wfm/eval_metrics.hpp"
#include "wfm/generator.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace wfm {

enum class DataKind { Toy, ToyDir, Structured3D };
const char* data_kind_name(DataKind kind);

struct TrainConfig {
    int64_t height = 256;
    int64_t width = 512;
    int64_t epochs = 40;
    int64_t batch = 6;
    int64_t max_steps = 0;  ///< stop after this many steps; 0 = run all epochs
    double lr_g = 1e-3;
    double lr_d = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double grad_clip = 0.0;  ///< global norm clip for both nets; 0 = off
    bool d_first = true;     ///< update the discriminator before the generator
    LossWeights loss;
    uint64_t seed = 0;

    GeneratorConfig generator;
    DiscriminatorConfig discriminator;
    PerceptualMode perceptual = PerceptualMode::HRF;
    std::string perceptual_weights;  ///< TorchScript backbone for HRF

    TrainingMaskPolicy masks;

    DataKind data = DataKind::Structured3D;
    std::string data_root;      ///< falls back to $WFM_DATA_ROOT
    std::string lighting = "raw";
    int64_t toy_scenes = 64;    ///< training pairs of the in-memory toy corpus
    int64_t val_scenes = 8;     ///< validation scenes per epoch (toy: held-out pairs)

    std::string output_dir = "runs/wfm";
    int64_t log_every = 50;
    int64_t checkpoint_every = 1;  ///< numbered epoch checkpoints; 0 = only latest.ckpt

    /// Throws ConfigError on any inconsistent value.
    void validate() const;
};

/// Parses "key = value" lines ('#' starts a comment) over `base`. Unknown
/// keys and malformed values raise ConfigError naming the line.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::string& path, TrainConfig base = {});
/// Every field, one "key = value" line each; parse_train_config inverts it.
std::string format_train_config(const TrainConfig& config);

/// Names of the ablation presets in table order.
std::vector<std::string> preset_names();
/// Overrides only the ablated axis (mixer variant or perceptual mode).
TrainConfig apply_preset(TrainConfig config, const std::string& name);
TrainConfig ablation_preset(const std::string& name);

struct StepScalars {
    double rec = 0, perc = 0, adv = 0, fm = 0, g_total = 0;  ///< generator terms
    double d = 0, gp = 0;                                    ///< discriminator terms

    /// Exactly the seven logged names and values.
    std::vector<std::pair<std::string, double>> named() const;
};

struct Batch {
    torch::Tensor images;  ///< N x 3 x H x W empty renders
    torch::Tensor masks;   ///< N x 1 x H x W
    std::vector<std::string> ids;
};

struct EpochLog {
    int64_t epoch = 0;
    double mean_g_total = 0;
    MetricsReport validation;
};

class Trainer {
public:
    explicit Trainer(TrainConfig config, LogFn log = nullptr);

    /// One D update then one G update (or the reverse when d_first is off).
    StepScalars train_step(const Batch& batch);

    /// Runs until config.epochs or config.max_steps; validates and
    /// checkpoints after every epoch and when max_steps is reached.
    std::vector<EpochLog> fit();

    /// Draws training masks with the trainer's mask stream.
    Batch make_batch(const SceneSource& source, const std::vector<size_t>& indices);

    /// Inference with the current weights.
    torch::Tensor inpaint(const torch::Tensor& image, const torch::Tensor& mask);

    void save(const std::string& path) const;
    /// Restores weights, optimizer moments, counters and RNG state.
    static std::unique_ptr<Trainer> load(const std::string& path, LogFn log = nullptr);

    /// Changes the run length of a (typically resumed) trainer; every other
    /// setting stays as checkpointed.
    void extend_run(int64_t epochs, int64_t max_steps);

    const TrainConfig& config() const { return config_; }
    Generator& generator() { return generator_; }
    PatchDiscriminator& discriminator() { return discriminator_; }
    int64_t step() const { return step_; }
    int64_t epoch() const { return epoch_; }
    const std::vector<StepScalars>& history() const { return history_; }

    /// Training and validation corpora, built on first use.
    const SceneSource& train_source();
    const SceneSource& val_source();

private:
    std::vector<torch::Tensor> generator_decay_params() const;
    void set_discriminator_trainable(bool on);
    void check_finite(const StepScalars& s, const Batch& batch) const;
    /// Dumps the batch next to the checkpoints and throws NumericError.
    [[noreturn]] void abort_nonfinite(const std::string& what, const Batch& batch) const;
    StepScalars discriminator_update(const Batch& batch, const torch::Tensor& fake);
    void generator_terms(const Batch& batch, const torch::Tensor& fake, StepScalars& s,
                         torch::Tensor& total);

    TrainConfig config_;
    LogFn log_;
    Generator generator_{nullptr};
    PatchDiscriminator discriminator_{nullptr};
    std::shared_ptr<FeatureExtractor> extractor_;
    std::unique_ptr<torch::optim::AdamW> opt_g_;
    std::unique_ptr<torch::optim::AdamW> opt_d_;
    Rng mask_rng_;
    int64_t step_ = 0;
    int64_t epoch_ = 0;
    int64_t batch_in_epoch_ = 0;  ///< batches of the current epoch already consumed
    std::vector<StepScalars> history_;
    std::unique_ptr<SceneSource> train_source_;
    std::unique_ptr<SceneSource> val_source_;
};

/// Generator-only view of a checkpoint for evaluation and inference.
struct LoadedGenerator {
    TrainConfig config;
    Generator generator{nullptr};
};
LoadedGenerator load_generator(const std::string& checkpoint_path);

/// Binary container: magic "WFMCKPT1", u64 header length, JSON header
/// (metadata plus a tensor table of name, dtype, shape, offset, bytes), then
/// the raw little-endian tensor payloads in table order.
struct CheckpointData {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, torch::Tensor>> tensors;
};
void write_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::string& path);

}  // namespace wfm
