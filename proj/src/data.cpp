#include "pmf/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "pmf/errors.hpp"
#include "pmf/image_io.hpp"
#include "pmf/ops.hpp"

namespace pmf {

namespace {

namespace fs = std::filesystem;

std::string lower(std::string text)
{
    std::transform(text.begin(), text.end(), text.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return text;
}

std::string trim(const std::string& text)
{
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = text.find_last_not_of(" \t\r\n");
    return text.substr(first, last - first + 1);
}

/// Subdirectory of root whose name equals `name` ignoring case.
std::optional<fs::path> find_subdir(const fs::path& root, const std::string& name)
{
    if (fs::is_directory(root / name)) {
        return root / name;
    }
    if (!fs::is_directory(root)) {
        return std::nullopt;
    }
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && lower(entry.path().filename().string()) == lower(name)) {
            return entry.path();
        }
    }
    return std::nullopt;
}

fs::path require_subdir(const fs::path& root, const std::string& name)
{
    auto dir = find_subdir(root, name);
    if (!dir) {
        throw DataError("missing " + name + "/ directory under " + root.string());
    }
    return *dir;
}

struct DatasetFiles {
    std::map<std::string, fs::path> rgb;
    std::map<std::string, fs::path> depth;
    std::map<std::string, fs::path> gt;
};

DatasetFiles index_dataset(const fs::path& root, bool require_gt)
{
    DatasetFiles files;
    files.rgb = io::images_by_stem(require_subdir(root, "RGB"));
    files.depth = io::images_by_stem(require_subdir(root, "depth"));
    if (require_gt) {
        files.gt = io::images_by_stem(require_subdir(root, "GT"));
    } else if (auto gt_dir = find_subdir(root, "GT")) {
        files.gt = io::images_by_stem(*gt_dir);
    }
    return files;
}

Tensor<float> transform_planes(const Tensor<float>& t, bool swap_axes,
                               const std::function<std::pair<int, int>(int, int)>& source)
{
    const Shape& s = t.shape();
    const Shape out_shape = swap_axes ? Shape{s.n, s.c, s.w, s.h} : s;
    Tensor<float> out(out_shape);
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < out_shape.h; ++y) {
                for (int x = 0; x < out_shape.w; ++x) {
                    const auto [sy, sx] = source(y, x);
                    out(n, c, y, x) = t(n, c, sy, sx);
                }
            }
        }
    }
    return out;
}

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

std::string to_string(Split split)
{
    return split == Split::train ? "train" : "test";
}

Split parse_split(const std::string& text)
{
    if (text == "train") {
        return Split::train;
    }
    if (text == "test") {
        return Split::test;
    }
    throw ConfigError("split must be 'train' or 'test', got '" + text + "'");
}

void check_sample(const SamplePair& sample)
{
    const Shape& rs = sample.rgb.shape();
    const Shape& ds = sample.depth.shape();
    if (rs.n != 1 || rs.c != 3 || ds.n != 1 || ds.c != 1 || !rs.same_spatial(ds)) {
        throw ContractError("sample " + sample.id + ": rgb " + to_string(rs) + " and depth " + to_string(ds) +
                            " do not form a pair");
    }
    if (!sample.rgb.all_finite() || !sample.depth.all_finite()) {
        throw ContractError("sample " + sample.id + " holds non-finite values");
    }
    if (sample.gt) {
        if (!(sample.gt->shape() == ds)) {
            throw ContractError("sample " + sample.id + ": gt shape " + to_string(sample.gt->shape()) +
                                " differs from depth " + to_string(ds));
        }
        const auto& g = sample.gt->array();
        if (!(g == 0.0f || g == 1.0f).all()) {
            throw ContractError("sample " + sample.id + ": gt is not binary");
        }
    }
}

std::optional<std::size_t> known_dataset_size(const std::string& name)
{
    static const std::map<std::string, std::size_t> sizes{
        {"njud", 1985}, {"nlpr", 1000}, {"lfsd", 100}, {"des", 135}, {"rgbd135", 135}, {"sip", 929},
    };
    const auto it = sizes.find(lower(name));
    if (it == sizes.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::optional<std::size_t> known_training_count(const std::string& name)
{
    static const std::map<std::string, std::size_t> counts{{"dut-rgbd", 800}, {"njud", 1485}, {"nlpr", 700}};
    const auto it = counts.find(lower(name));
    if (it == counts.end()) {
        return std::nullopt;
    }
    return it->second;
}

void validate_manifest(const DatasetManifest& manifest)
{
    std::vector<std::string> missing;
    for (const auto& e : manifest.entries) {
        for (const fs::path* p : {&e.rgb, &e.depth, &e.gt}) {
            if (!p->empty() && !fs::is_regular_file(*p)) {
                missing.push_back(p->string());
            }
        }
    }
    if (!missing.empty()) {
        std::string msg = "manifest " + manifest.name + " lists missing files:";
        for (const auto& m : missing) {
            msg += "\n  " + m;
        }
        throw DataError(msg);
    }
    if (const auto expected = known_dataset_size(manifest.name);
        expected && manifest.split == Split::test && manifest.entries.size() != *expected) {
        throw DataError("dataset " + manifest.name + " should hold " + std::to_string(*expected) +
                        " samples, found " + std::to_string(manifest.entries.size()));
    }
}

DatasetManifest scan_dataset(const std::string& name, const fs::path& root, Split split, bool require_gt)
{
    const DatasetFiles files = index_dataset(root, require_gt);
    DatasetManifest manifest{name, root, split, {}};
    std::vector<std::string> unmatched;
    for (const auto& [stem, rgb] : files.rgb) {
        const auto depth = files.depth.find(stem);
        const auto gt = files.gt.find(stem);
        if (depth == files.depth.end() || (require_gt && gt == files.gt.end())) {
            unmatched.push_back(stem);
            continue;
        }
        manifest.entries.push_back({stem, rgb, depth->second, gt == files.gt.end() ? fs::path{} : gt->second});
    }
    if (require_gt && !unmatched.empty()) {
        std::string msg = "incomplete RGB/depth/GT triples in " + root.string() + ":";
        for (const auto& u : unmatched) {
            msg += " " + u;
        }
        throw DataError(msg);
    }
    for (const auto& u : unmatched) {
        std::cerr << "warning: " << u << " has no depth map; skipped\n";
    }
    validate_manifest(manifest);
    return manifest;
}

DatasetManifest read_manifest(const fs::path& path, const std::string& name, Split split)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open manifest " + path.string());
    }
    const fs::path base = path.parent_path();
    DatasetManifest manifest{name, base, split, {}};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line.front() == '#') {
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream row(line);
        std::string field;
        while (std::getline(row, field, '\t')) {
            fields.push_back(trim(field));
        }
        if (fields.size() < 2 || fields.size() > 3) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 2 or 3 tab-separated paths");
        }
        ManifestEntry e;
        e.rgb = base / fields[0];
        e.depth = base / fields[1];
        if (fields.size() == 3) {
            e.gt = base / fields[2];
        }
        e.id = e.rgb.stem().string();
        manifest.entries.push_back(std::move(e));
    }
    validate_manifest(manifest);
    return manifest;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    const fs::path base = fs::absolute(path).parent_path();
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write manifest " + path.string());
    }
    const auto rel = [&](const fs::path& p) { return fs::absolute(p).lexically_relative(base).generic_string(); };
    for (const auto& e : manifest.entries) {
        out << rel(e.rgb) << '\t' << rel(e.depth);
        if (!e.gt.empty()) {
            out << '\t' << rel(e.gt);
        }
        out << '\n';
    }
}

std::vector<std::string> read_id_list(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open id list " + path.string());
    }
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (!line.empty()) {
            ids.push_back(fs::path(line).stem().string());
        }
    }
    return ids;
}

DatasetManifest build_training_manifest(const std::vector<TrainingSource>& sources)
{
    DatasetManifest manifest{"train", {}, Split::train, {}};
    std::vector<std::string> missing;
    for (const auto& src : sources) {
        const std::vector<std::string> ids = read_id_list(src.ids);
        if (ids.empty()) {
            std::cerr << "warning: id list " << src.ids.string() << " for " << src.name << " is empty\n";
            continue;
        }
        if (const auto expected = known_training_count(src.name); expected && ids.size() != *expected) {
            std::cerr << "warning: " << src.name << " contributes " << ids.size() << " ids; the standard split has "
                      << *expected << '\n';
        }
        const DatasetFiles files = index_dataset(src.root, true);
        for (const auto& id : ids) {
            const auto rgb = files.rgb.find(id);
            const auto depth = files.depth.find(id);
            const auto gt = files.gt.find(id);
            if (rgb == files.rgb.end() || depth == files.depth.end() || gt == files.gt.end()) {
                missing.push_back(src.name + "/" + id);
                continue;
            }
            manifest.entries.push_back({id, rgb->second, depth->second, gt->second});
        }
    }
    if (!missing.empty()) {
        std::string msg = std::to_string(missing.size()) + " training ids have no complete RGB/depth/GT triple:";
        for (const auto& m : missing) {
            msg += " " + m;
        }
        throw DataError(msg);
    }
    return manifest;
}

void normalize_min_max(Tensor<float>& map)
{
    auto& a = map.array();
    if (a.size() == 0) {
        return;
    }
    const float lo = a.minCoeff();
    const float hi = a.maxCoeff();
    if (!(hi > lo)) {
        a.setZero();
        return;
    }
    a = ((a - lo) / (hi - lo)).min(1.0f).max(0.0f);
}

SamplePair load_sample(const ManifestEntry& entry, const LoadOptions& options)
{
    if (options.size <= 0) {
        throw ConfigError("input size must be positive, got " + std::to_string(options.size));
    }
    const int s = options.size;
    SamplePair sample;
    sample.id = entry.id.empty() ? entry.rgb.stem().string() : entry.id;

    const Tensor<float> rgb = io::read_rgb(entry.rgb);
    sample.original_height = rgb.shape().h;
    sample.original_width = rgb.shape().w;
    sample.rgb = resize_bilinear(rgb, s, s);

    Eigen::ArrayXXd depth = io::read_gray(entry.depth);
    if (options.invert_depth) {
        depth = 1.0 - depth;
    }
    sample.depth = resize_bilinear(io::from_map<float>(depth), s, s);
    normalize_min_max(sample.depth);

    if (!entry.gt.empty()) {
        Tensor<float> gt = resize_nearest(io::from_map<float>(io::read_gray(entry.gt)), s, s);
        gt.array() = (gt.array() >= 0.5f).cast<float>();
        sample.gt = std::move(gt);
    }
    return sample;
}

AugmentDraw draw_augmentation(std::mt19937_64& rng)
{
    AugmentDraw draw;
    draw.flip = (rng() >> 63) != 0;
    draw.quarter_turns = static_cast<int>(rng() >> 62);
    return draw;
}

Tensor<float> flip_horizontal(const Tensor<float>& t)
{
    const int w = t.shape().w;
    return transform_planes(t, false, [w](int y, int x) { return std::pair{y, w - 1 - x}; });
}

Tensor<float> rotate_quarter_turns(const Tensor<float>& t, int quarter_turns)
{
    const int h = t.shape().h;
    const int w = t.shape().w;
    switch (((quarter_turns % 4) + 4) % 4) {
    case 1:
        // Output is w x h; source pixel of (y, x) is (x, w - 1 - y).
        return transform_planes(t, true, [w](int y, int x) { return std::pair{x, w - 1 - y}; });
    case 2:
        return transform_planes(t, false, [h, w](int y, int x) { return std::pair{h - 1 - y, w - 1 - x}; });
    case 3:
        return transform_planes(t, true, [h](int y, int x) { return std::pair{h - 1 - x, y}; });
    default:
        return t;
    }
}

SamplePair apply_augmentation(const SamplePair& sample, AugmentDraw draw)
{
    const auto transform = [&](const Tensor<float>& t) {
        return rotate_quarter_turns(draw.flip ? flip_horizontal(t) : t, draw.quarter_turns);
    };
    SamplePair out = sample;
    out.rgb = transform(sample.rgb);
    out.depth = transform(sample.depth);
    if (sample.gt) {
        out.gt = transform(*sample.gt);
    }
    return out;
}

SamplePair augment(const SamplePair& sample, std::mt19937_64& rng)
{
    return apply_augmentation(sample, draw_augmentation(rng));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index)
{
    return splitmix64(splitmix64(splitmix64(seed) ^ epoch) ^ index);
}

Batch collate(const std::vector<SamplePair>& samples)
{
    if (samples.empty()) {
        throw ContractError("collate: no samples");
    }
    const Shape& first = samples.front().depth.shape();
    const int n = static_cast<int>(samples.size());
    Batch batch;
    batch.rgb = Tensor<float>(Shape{n, 3, first.h, first.w});
    batch.depth = Tensor<float>(Shape{n, 1, first.h, first.w});
    batch.gt = Tensor<float>(Shape{n, 1, first.h, first.w});
    const std::ptrdiff_t plane = first.plane_size();
    for (int i = 0; i < n; ++i) {
        const SamplePair& s = samples[static_cast<std::size_t>(i)];
        check_sample(s);
        if (!s.depth.shape().same_spatial(first) || !s.gt) {
            throw ContractError("collate: sample " + s.id + " is unlabeled or differs in size");
        }
        batch.rgb.array().segment(i * 3 * plane, 3 * plane) = s.rgb.array();
        batch.depth.array().segment(i * plane, plane) = s.depth.array();
        batch.gt.array().segment(i * plane, plane) = s.gt->array();
        batch.ids.push_back(s.id);
    }
    return batch;
}

} // namespace pmf
