#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pmf/fusion.hpp"
#include "pmf/training.hpp"

namespace pmf {

/// Every setting a subcommand may consume, resolved from a config file and
/// command-line overrides before any compute starts.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;

    // Training data: a scanned dataset root, a manifest file, or a list of
    // `name:root:ids_file` sources joined by ';'.
    std::filesystem::path train_root;
    std::filesystem::path train_manifest;
    std::string train_sources;
    // Validation data; when absent, val_fraction of the training set is held out.
    std::filesystem::path val_root;
    std::filesystem::path val_manifest;
    double val_fraction = 0.0;

    bool invert_depth = false;
    std::string dataset_name;
    std::filesystem::path input_dir;
    std::filesystem::path gt_dir;
    std::string ablation;
    int checkpoint_every = 1;
    bool keep_epoch_checkpoints = false;
};

/// Sets one `key = value` pair. Throws ConfigError naming the key when it
/// is unknown or its value does not parse.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Reads flat `key = value` lines; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> read_key_values(const std::filesystem::path& path);

RunConfig load_run_config(const std::filesystem::path& path);

/// All keys with their current values, in a stable order. Feeding the
/// result back through apply_setting reproduces the configuration.
std::vector<std::pair<std::string, std::string>> to_key_values(const RunConfig& config);

/// Writes to_key_values as a config file.
void write_run_config(const std::filesystem::path& path, const RunConfig& config);

/// Cross-field checks (model and training ranges, input sizes agree).
void validate(const RunConfig& config);

nlohmann::json to_json(const ModelConfig& config);
nlohmann::json to_json(const TrainConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Ablation variants: base, mgfa, aspp, mgrm, s3, s4, s5.
const std::vector<std::string>& ablation_keys();

/// Model toggles of one variant applied on top of base. Throws ConfigError
/// for an unknown key.
ModelConfig ablation_config(const std::string& key, const ModelConfig& base);

} // namespace pmf
