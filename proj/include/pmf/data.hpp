#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pmf/tensor.hpp"

namespace pmf {

enum class Split { train, test };

std::string to_string(Split split);
Split parse_split(const std::string& text);

/// One RGB-D sample. rgb is (1,3,h,w), depth and gt are (1,1,h,w); all
/// three share h and w. gt holds {0,1} and is absent for unlabeled input.
struct SamplePair {
    Tensor<float> rgb;
    Tensor<float> depth;
    std::optional<Tensor<float>> gt;
    std::string id;
    int original_height = 0;
    int original_width = 0;
};

/// Throws ContractError when shapes disagree, gt is not binary or a value
/// is non-finite.
void check_sample(const SamplePair& sample);

struct ManifestEntry {
    std::string id;
    std::filesystem::path rgb;
    std::filesystem::path depth;
    std::filesystem::path gt; ///< empty for unlabeled samples
};

struct DatasetManifest {
    std::string name;
    std::filesystem::path root;
    Split split = Split::test;
    std::vector<ManifestEntry> entries;
};

/// Documented sample count of a public evaluation set (NJUD, NLPR, LFSD,
/// DES / RGBD135, SIP), matched case-insensitively.
std::optional<std::size_t> known_dataset_size(const std::string& name);

/// Throws DataError if a listed file is missing or, for a known dataset
/// name, the entry count differs from the documented size.
void validate_manifest(const DatasetManifest& manifest);

/// Pairs files by stem across root/RGB, root/depth and root/GT (directory
/// names matched case-insensitively). With require_gt false the GT
/// directory is optional. Entries are sorted by id.
DatasetManifest scan_dataset(const std::string& name, const std::filesystem::path& root, Split split,
                             bool require_gt = true);

/// Tab-separated `rgb depth [gt]` per line, paths relative to the
/// manifest's directory. Blank lines and lines starting with '#' are skipped.
DatasetManifest read_manifest(const std::filesystem::path& path, const std::string& name, Split split);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Non-empty, whitespace-trimmed lines of an id list; '#' starts a comment.
std::vector<std::string> read_id_list(const std::filesystem::path& path);

/// One component of the composited training set: a dataset root laid
/// out as for scan_dataset plus a file listing the ids to take from it.
struct TrainingSource {
    std::string name;
    std::filesystem::path root;
    std::filesystem::path ids;
};

/// Documented training contribution of DUT-RGBD (800), NJUD (1485) and
/// NLPR (700).
std::optional<std::size_t> known_training_count(const std::string& name);

/// Concatenates the listed ids of every source in order. Throws DataError
/// naming every id without a complete RGB/depth/GT triple. Empty id lists
/// produce a warning and contribute nothing.
DatasetManifest build_training_manifest(const std::vector<TrainingSource>& sources);

struct LoadOptions {
    int size = 256;
    bool invert_depth = false;
};

/// Loads and resizes a triple to size x size: rgb and depth bilinearly,
/// gt nearest-neighbour then thresholded at 0.5. Depth is min-max
/// normalized per image (a constant map becomes zeros), after optional
/// inversion. Throws DataError naming an unreadable file.
SamplePair load_sample(const ManifestEntry& entry, const LoadOptions& options = {});

/// Per-image min-max normalization to [0,1]; all zeros when constant.
void normalize_min_max(Tensor<float>& map);

/// A draw of the paired geometric augmentation: an optional horizontal
/// flip followed by quarter_turns counter-clockwise 90-degree rotations.
struct AugmentDraw {
    bool flip = false;
    int quarter_turns = 0;

    friend bool operator==(const AugmentDraw&, const AugmentDraw&) = default;
};

/// flip with probability 0.5; quarter_turns uniform over {0,1,2,3}.
AugmentDraw draw_augmentation(std::mt19937_64& rng);

/// Single-tensor transforms on every (n, c) plane.
Tensor<float> flip_horizontal(const Tensor<float>& t);
Tensor<float> rotate_quarter_turns(const Tensor<float>& t, int quarter_turns);

SamplePair apply_augmentation(const SamplePair& sample, AugmentDraw draw);
SamplePair augment(const SamplePair& sample, std::mt19937_64& rng);

/// Seed for the per-sample RNG of one epoch, independent of visiting order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index);

/// Samples stacked along n. Every sample must be labeled and of equal size.
struct Batch {
    Tensor<float> rgb;
    Tensor<float> depth;
    Tensor<float> gt;
    std::vector<std::string> ids;
};

Batch collate(const std::vector<SamplePair>& samples);

/// Random-access sample provider.
class SampleSource {
public:
    virtual ~SampleSource() = default;
    [[nodiscard]] virtual std::size_t size() const = 0;
    [[nodiscard]] virtual SamplePair get(std::size_t index) const = 0;
};

class ManifestSource final : public SampleSource {
public:
    ManifestSource(DatasetManifest manifest, LoadOptions options)
        : manifest_(std::move(manifest)), options_(options)
    {
    }

    [[nodiscard]] std::size_t size() const override { return manifest_.entries.size(); }
    [[nodiscard]] SamplePair get(std::size_t index) const override
    {
        return load_sample(manifest_.entries.at(index), options_);
    }
    [[nodiscard]] const DatasetManifest& manifest() const { return manifest_; }

private:
    DatasetManifest manifest_;
    LoadOptions options_;
};

class MemorySource final : public SampleSource {
public:
    explicit MemorySource(std::vector<SamplePair> samples) : samples_(std::move(samples)) {}

    [[nodiscard]] std::size_t size() const override { return samples_.size(); }
    [[nodiscard]] SamplePair get(std::size_t index) const override { return samples_.at(index); }

private:
    std::vector<SamplePair> samples_;
};

} // namespace pmf
