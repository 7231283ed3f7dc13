#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pmf/data.hpp"
#include "pmf/fusion.hpp"

namespace pmf {

struct TrainConfig {
    int epochs = 40;
    int batch_size = 4;
    double lr0 = 1e-3;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double poly_power = 0.9;
    std::uint64_t seed = 0;
    int input_size = 256;
    bool augment = true;
    /// Batches prepared ahead of the optimizer by a loader thread; 0 loads
    /// synchronously.
    int prefetch = 2;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Throws ConfigError unless sizes and rates are in range. epochs may be 0.
void validate(const TrainConfig& config);

/// Replaces config.seed with the PMF_SEED environment variable when set.
/// Throws ConfigError if it is not an unsigned integer.
void apply_seed_override(TrainConfig& config);

/// lr0 * (1 - step / max_step)^poly_power, and 0 once step >= max_step.
double lr_schedule(long long step, long long max_step, const TrainConfig& config);

/// Sum over scales of the mean binary cross-entropy between each scale's
/// logits and gt (n,1,s,s). Throws NumericalError on non-finite logits.
template <typename Scalar>
Var<Scalar> deep_supervision_loss(const SaliencyOutput<Scalar>& output, const Tensor<Scalar>& gt);

/// SGD with momentum; weight decay is added to the gradient before the
/// momentum update: g += wd p, v = m v + g, p -= lr v.
template <typename Scalar>
class Sgd {
public:
    Sgd(const ParameterRegistry<Scalar>& registry, double momentum, double weight_decay);

    /// Applies one update from the current gradients. Parameters without a
    /// gradient are left untouched.
    void step(double lr);

    [[nodiscard]] const std::map<std::string, Tensor<Scalar>>& momentum_buffers() const { return buffers_; }
    void set_momentum_buffer(const std::string& name, Tensor<Scalar> value);

private:
    std::vector<NamedVar<Scalar>> params_;
    std::map<std::string, Tensor<Scalar>> buffers_;
    Scalar momentum_;
    Scalar weight_decay_;
};

/// Progress carried across epochs and through checkpoints.
struct TrainState {
    int epoch = 0; ///< completed epochs
    long long global_step = 0;
    double best_val = -1.0;
    int best_epoch = -1;
};

/// Loaded contents of a checkpoint file.
struct Checkpoint {
    ModelConfig model;
    TrainConfig train;
    TrainState state;
    nlohmann::json metadata;
};

/// Writes parameters, buffers, optional momentum buffers (`optimizer.momentum.<name>`)
/// and JSON metadata holding both configs and the train state.
void save_checkpoint(const std::filesystem::path& path, const PmfNet<float>& model, const Sgd<float>* optimizer,
                     const TrainConfig& train, const TrainState& state, const nlohmann::json& extra = {});

/// Reads only the metadata block.
Checkpoint read_checkpoint_info(const std::filesystem::path& path);

/// Builds a model from the checkpoint's configuration and loads its state.
PmfNet<float> load_model(const std::filesystem::path& path);

/// Restores parameters and buffers into model (and momentum into
/// optimizer when given). Throws DataError on missing or misshapen tensors.
Checkpoint load_checkpoint(const std::filesystem::path& path, PmfNet<float>& model, Sgd<float>* optimizer);

struct StepRecord {
    long long step = 0; ///< 1-based global step
    double lr = 0.0;
    double loss = 0.0;
    int epoch = 0; ///< 0-based epoch of this step
};

struct TrainOptions {
    std::filesystem::path out_dir;
    /// Checkpoint to continue from; its epoch count is taken as completed.
    std::filesystem::path resume;
    /// Write last.pmf every this many epochs; 0 writes it only when the run
    /// ends. The final epoch is always written.
    int checkpoint_every = 1;
    /// Also keep epoch_<k>.pmf for every checkpointed epoch.
    bool keep_epoch_checkpoints = false;
    /// Stop (after checkpointing) once this many epochs are complete,
    /// without changing the schedule horizon.
    std::optional<int> stop_after_epoch;
    /// Extra metadata stored in every checkpoint.
    nlohmann::json metadata = nlohmann::json::object();
    std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
    TrainState state;
    std::vector<StepRecord> trace;
    std::filesystem::path last_checkpoint;
    std::filesystem::path best_checkpoint;
};

/// Visiting order of one epoch: a Fisher-Yates shuffle seeded from
/// (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch);

/// Mean max-F of the model's final map over a labeled source, in eval mode.
double validation_max_f(const PmfNet<float>& model, const SampleSource& source);

/// Runs epochs x ceil(N / batch) SGD steps with deep supervision and a poly
/// schedule. Appends `{"step","lr","loss","epoch"}` lines to
/// out_dir/train_log.jsonl, writes out_dir/last.pmf after each epoch and
/// out_dir/best.pmf whenever validation max-F improves. A non-finite loss
/// throws NumericalError; the previous epoch's checkpoint stays intact.
TrainResult train(PmfNet<float>& model, const SampleSource& train_set, const SampleSource* val_set,
                  const TrainConfig& config, const TrainOptions& options);

} // namespace pmf
