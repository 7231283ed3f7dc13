#include "pmf/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "pmf/config.hpp"
#include "pmf/errors.hpp"
#include "pmf/image_io.hpp"
#include "pmf/metrics.hpp"
#include "pmf/plot.hpp"
#include "pmf/training.hpp"

namespace pmf {

namespace {

namespace fs = std::filesystem;

/// Flags shared by the subcommands that resolve a RunConfig.
struct CommonFlags {
    std::string config;
    std::string out;
    std::string fusion_mode;
    std::optional<int> num_scales;
    bool invert_depth = false;
    std::optional<std::uint64_t> seed;
    std::string checkpoint;
    std::vector<std::string> settings;
};

void add_common(CLI::App& cmd, CommonFlags& flags)
{
    cmd.add_option("--config", flags.config, "Config file of key = value lines")->check(CLI::ExistingFile);
    cmd.add_option("--out", flags.out, "Output directory")->required();
    cmd.add_option("--fusion-mode", flags.fusion_mode, "Cross-modal fusion: mgfa or add");
    cmd.add_option("--num-scales", flags.num_scales, "Number of decoder scales (3-5)");
    cmd.add_flag("--invert-depth", flags.invert_depth, "Invert depth polarity before normalization");
    cmd.add_option("--seed", flags.seed, "Random seed (overrides PMF_SEED and the config file)");
    cmd.add_option("--checkpoint", flags.checkpoint, "Resume from this checkpoint")->check(CLI::ExistingFile);
    cmd.add_option("--set", flags.settings, "Extra key=value overrides");
}

/// Config file, then --set pairs, then PMF_SEED, then dedicated flags.
RunConfig resolve(const CommonFlags& flags)
{
    RunConfig config = flags.config.empty() ? RunConfig{} : load_run_config(flags.config);
    for (const auto& kv : flags.settings) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        }
        apply_setting(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    apply_seed_override(config.train);
    if (!flags.fusion_mode.empty()) {
        config.model.fusion_mode = parse_fusion_mode(flags.fusion_mode);
    }
    if (flags.num_scales) {
        config.model.num_scales = *flags.num_scales;
    }
    if (flags.invert_depth) {
        config.invert_depth = true;
    }
    if (flags.seed) {
        config.train.seed = *flags.seed;
    }
    return config;
}

std::vector<TrainingSource> parse_sources(const std::string& text)
{
    std::vector<TrainingSource> sources;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ';')) {
        if (item.empty()) {
            continue;
        }
        const auto a = item.find(':');
        const auto b = item.find(':', a == std::string::npos ? a : a + 1);
        if (a == std::string::npos || b == std::string::npos) {
            throw ConfigError("train_sources entries must be name:root:ids_file, got '" + item + "'");
        }
        sources.push_back({item.substr(0, a), item.substr(a + 1, b - a - 1), item.substr(b + 1)});
    }
    return sources;
}

DatasetManifest training_manifest(const RunConfig& config)
{
    if (!config.train_sources.empty()) {
        return build_training_manifest(parse_sources(config.train_sources));
    }
    const std::string name = config.dataset_name.empty() ? "train" : config.dataset_name;
    if (!config.train_manifest.empty()) {
        return read_manifest(config.train_manifest, name, Split::train);
    }
    if (!config.train_root.empty()) {
        return scan_dataset(name, config.train_root, Split::train);
    }
    throw ConfigError("no training data: set train_sources, train_manifest or train_root");
}

std::optional<DatasetManifest> validation_manifest(const RunConfig& config, DatasetManifest& train)
{
    if (!config.val_manifest.empty()) {
        return read_manifest(config.val_manifest, "val", Split::test);
    }
    if (!config.val_root.empty()) {
        return scan_dataset("val", config.val_root, Split::test);
    }
    if (config.val_fraction > 0.0) {
        const auto n = train.entries.size();
        const auto held = static_cast<std::size_t>(std::ceil(config.val_fraction * static_cast<double>(n)));
        if (held == 0 || held >= n) {
            throw ConfigError("val_fraction leaves no training or validation samples");
        }
        DatasetManifest val{"val", train.root, Split::test, {}};
        val.entries.assign(train.entries.end() - static_cast<std::ptrdiff_t>(held), train.entries.end());
        train.entries.resize(n - held);
        return val;
    }
    return std::nullopt;
}

void write_json(const fs::path& path, const nlohmann::json& j)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

int run_training(const RunConfig& config, const fs::path& out, const fs::path& resume)
{
    fs::create_directories(out);
    write_run_config(out / "resolved_config.txt", config);

    DatasetManifest train_manifest = training_manifest(config);
    const std::optional<DatasetManifest> val_manifest = validation_manifest(config, train_manifest);
    write_manifest(out / "train_manifest.tsv", train_manifest);
    const LoadOptions load{config.model.input_size, config.invert_depth};
    const ManifestSource train_set(train_manifest, load);
    std::optional<ManifestSource> val_set;
    if (val_manifest) {
        val_set.emplace(*val_manifest, load);
    }

    PmfNet<float> model(config.model, config.train.seed);
    std::cerr << "model: " << model.parameter_count() << " parameters, " << train_set.size()
              << " training samples\n";

    TrainOptions options;
    options.out_dir = out;
    options.resume = resume;
    options.checkpoint_every = config.checkpoint_every;
    options.keep_epoch_checkpoints = config.keep_epoch_checkpoints;
    options.metadata["ablation"] = config.ablation;
    options.metadata["dataset"] = config.dataset_name;
    options.on_step = [](const StepRecord& r) {
        if (r.step % 50 == 0) {
            std::cerr << "step " << r.step << " epoch " << r.epoch << " lr " << r.lr << " loss " << r.loss << '\n';
        }
    };
    const TrainResult result = train(model, train_set, val_set ? &*val_set : nullptr, config.train, options);
    std::cout << "trained " << result.state.global_step << " steps; checkpoint " << result.last_checkpoint.string()
              << '\n';
    return kExitOk;
}

int cmd_train(const CommonFlags& flags)
{
    RunConfig config = resolve(flags);
    validate(config);
    return run_training(config, flags.out, flags.checkpoint);
}

int cmd_ablate(const CommonFlags& flags, const std::string& which, bool dry_run)
{
    RunConfig config = resolve(flags);
    config.model = ablation_config(which, config.model);
    config.ablation = which;
    validate(config);
    if (dry_run) {
        fs::create_directories(flags.out);
        write_run_config(fs::path(flags.out) / "resolved_config.txt", config);
        const PmfNet<float> model(config.model, config.train.seed);
        std::cout << which << "  parameters " << model.parameter_count() << "  scales " << config.model.num_scales
                  << "  fusion " << to_string(config.model.fusion_mode) << "  depth "
                  << (config.model.use_depth ? "on" : "off") << "  aspp " << (config.model.use_aspp ? "on" : "off")
                  << "  mgrm " << (config.model.use_mgrm ? "on" : "off") << '\n';
        return kExitOk;
    }
    return run_training(config, flags.out, flags.checkpoint);
}

struct PredictFlags {
    std::string checkpoint;
    std::string input;
    std::string out;
    std::string config;
    bool invert_depth = false;
    std::string dump_masks;
};

void write_mask(const fs::path& path, const Var<float>& mask)
{
    io::write_gray_png(path, io::to_map(mask.value()));
}

int cmd_predict(const PredictFlags& flags)
{
    RunConfig run = flags.config.empty() ? RunConfig{} : load_run_config(flags.config);
    const fs::path input = flags.input.empty() ? run.input_dir : fs::path(flags.input);
    if (input.empty()) {
        throw ConfigError("predict needs --input or input_dir");
    }
    const bool invert = flags.invert_depth || run.invert_depth;
    const fs::path out = flags.out;

    const Checkpoint info = read_checkpoint_info(flags.checkpoint);
    write_json(out / "resolved_config.json", {{"command", "predict"},
                                              {"checkpoint", flags.checkpoint},
                                              {"input_dir", input.string()},
                                              {"out", out.string()},
                                              {"invert_depth", invert},
                                              {"dump_masks", flags.dump_masks},
                                              {"model", to_json(info.model)}});

    const PmfNet<float> model = load_model(flags.checkpoint);
    const DatasetManifest manifest = scan_dataset(input.filename().string(), input, Split::test, false);
    if (manifest.entries.empty()) {
        throw DataError("no RGB/depth pairs under " + input.string());
    }
    const LoadOptions load{model.config().input_size, invert};
    const NoGradGuard no_grad;
    std::size_t written = 0;
    for (const auto& entry : manifest.entries) {
        SamplePair sample;
        try {
            sample = load_sample({entry.id, entry.rgb, entry.depth, {}}, load);
        } catch (const DataError& e) {
            std::cerr << "warning: skipping " << entry.id << ": " << e.what() << '\n';
            continue;
        }
        const SaliencyOutput<float> result = model.forward(sample.rgb, sample.depth, Mode::eval);
        const Tensor<float> full =
            resize_bilinear(result.final.value(), sample.original_height, sample.original_width);
        io::write_gray_png(out / (entry.id + ".png"), io::to_map(full));
        if (!flags.dump_masks.empty()) {
            const fs::path masks = flags.dump_masks;
            for (const auto& scale : result.scales) {
                const std::string suffix = "_s" + std::to_string(scale.level) + ".png";
                if (scale.depth_mask.defined()) {
                    write_mask(masks / (entry.id + "_mgfa" + suffix), scale.depth_mask);
                }
                if (scale.rgb_mask.defined()) {
                    write_mask(masks / (entry.id + "_mgrm" + suffix), scale.rgb_mask);
                }
            }
        }
        ++written;
    }
    if (written == 0) {
        throw DataError("no sample could be predicted");
    }
    std::cout << "wrote " << written << " saliency maps to " << out.string() << '\n';
    return kExitOk;
}

struct EvalFlags {
    std::string pred;
    std::string gt;
    std::string out;
    std::string name;
    bool mean_e = false;
};

int cmd_eval(const EvalFlags& flags)
{
    const fs::path out = flags.out;
    const std::string name = flags.name.empty() ? fs::path(flags.gt).parent_path().filename().string() : flags.name;
    write_json(out / "resolved_config.json", {{"command", "eval"},
                                              {"pred_dir", flags.pred},
                                              {"gt_dir", flags.gt},
                                              {"name", name},
                                              {"mean_e", flags.mean_e}});
    metrics::MetricReport report = metrics::evaluate_dataset(flags.pred, flags.gt, name);
    if (flags.mean_e) {
        report.max_e = report.mean_e;
    }
    std::cout << "name  maxF  S  " << (flags.mean_e ? "meanE" : "maxE") << "  MAE\n"
              << metrics::format_row(report) << '\n';
    metrics::write_report_json(report, out / "report.json");
    metrics::write_pr_csv(report, out / "pr.csv");
    return kExitOk;
}

struct PlotFlags {
    std::vector<std::string> csvs;
    std::vector<std::string> labels;
    std::string out;
};

int cmd_plot(const PlotFlags& flags)
{
    const fs::path out = flags.out;
    fs::path sidecar = out;
    sidecar += ".json";
    nlohmann::json meta{{"command", "plot"}, {"inputs", flags.csvs}, {"out", out.string()}};
    write_json(sidecar, meta);

    if (!flags.labels.empty() && flags.labels.size() != flags.csvs.size()) {
        throw ConfigError("--labels must name every CSV");
    }
    std::vector<PlotSeries> series;
    for (std::size_t i = 0; i < flags.csvs.size(); ++i) {
        const fs::path csv = flags.csvs[i];
        std::string label = flags.labels.empty() ? csv.stem().string() : flags.labels[i];
        if (flags.labels.empty() && label == "pr" && csv.has_parent_path()) {
            label = csv.parent_path().filename().string();
        }
        series.push_back({label, metrics::read_pr_csv(csv)});
    }
    meta["figure"] = render_pr_plot(series, out);
    write_json(sidecar, meta);
    std::cout << "wrote " << out.string() << '\n';
    return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string>& args)
{
    CLI::App app{"Progressive multi-scale RGB-D saliency network", "pmfnet"};
    app.require_subcommand(1);

    CommonFlags train_flags;
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    add_common(*train_cmd, train_flags);

    CommonFlags ablate_flags;
    std::string which;
    bool dry_run = false;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train one ablation variant");
    add_common(*ablate_cmd, ablate_flags);
    ablate_cmd->add_option("which", which, "base, mgfa, aspp, mgrm, s3, s4 or s5")->required();
    ablate_cmd->add_flag("--dry-run", dry_run, "Resolve and report the variant without training");

    PredictFlags predict_flags;
    auto* predict_cmd = app.add_subcommand("predict", "Write saliency maps for a directory of RGB-D pairs");
    predict_cmd->add_option("--checkpoint", predict_flags.checkpoint, "Model checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    predict_cmd->add_option("--input", predict_flags.input, "Directory with RGB/ and depth/");
    predict_cmd->add_option("--out", predict_flags.out, "Output directory")->required();
    predict_cmd->add_option("--config", predict_flags.config, "Config file")->check(CLI::ExistingFile);
    predict_cmd->add_flag("--invert-depth", predict_flags.invert_depth, "Invert depth polarity");
    predict_cmd->add_option("--dump-masks", predict_flags.dump_masks, "Directory for per-scale gating masks");

    EvalFlags eval_flags;
    auto* eval_cmd = app.add_subcommand("eval", "Score saliency maps against ground truth");
    eval_cmd->add_option("--pred", eval_flags.pred, "Prediction directory")->required();
    eval_cmd->add_option("--gt", eval_flags.gt, "Ground-truth directory")->required();
    eval_cmd->add_option("--out", eval_flags.out, "Report directory")->required();
    eval_cmd->add_option("--name", eval_flags.name, "Dataset name for the table row");
    eval_cmd->add_flag("--mean-e", eval_flags.mean_e, "Report mean instead of max E-measure");

    PlotFlags plot_flags;
    auto* plot_cmd = app.add_subcommand("plot", "Draw PR curves from CSV files");
    plot_cmd->add_option("csv", plot_flags.csvs, "PR CSV files")->required()->check(CLI::ExistingFile);
    plot_cmd->add_option("--labels", plot_flags.labels, "Legend label per CSV");
    plot_cmd->add_option("--out", plot_flags.out, "Output image")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (train_cmd->parsed()) {
            return cmd_train(train_flags);
        }
        if (ablate_cmd->parsed()) {
            return cmd_ablate(ablate_flags, which, dry_run);
        }
        if (predict_cmd->parsed()) {
            return cmd_predict(predict_flags);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(eval_flags);
        }
        if (plot_cmd->parsed()) {
            return cmd_plot(plot_flags);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

} // namespace pmf
