#include "pmf/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pmf/errors.hpp"

namespace pmf {

namespace {

std::string trim(const std::string& text)
{
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = text.find_last_not_of(" \t\r\n");
    return text.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected)
{
    throw ConfigError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value)
{
    T out{};
    const char* first = value.data();
    const char* last = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last) {
        bad_value(key, value, "a number");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& value)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) {
            bad_value(key, value, "a number");
        }
        return v;
    } catch (const std::logic_error&) {
        bad_value(key, value, "a number");
    }
}

bool parse_bool(const std::string& key, const std::string& value)
{
    if (value == "true" || value == "1" || value == "yes" || value == "on") {
        return true;
    }
    if (value == "false" || value == "0" || value == "no" || value == "off") {
        return false;
    }
    bad_value(key, value, "true or false");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value)
{
    std::vector<int> out;
    std::stringstream in(value);
    std::string item;
    while (std::getline(in, item, ',')) {
        out.push_back(parse_number<int>(key, trim(item)));
    }
    if (out.empty()) {
        bad_value(key, value, "a comma-separated list of integers");
    }
    return out;
}

std::string format_bool(bool v)
{
    return v ? "true" : "false";
}

std::string format_double(double v)
{
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string format_int_list(const std::vector<int>& values)
{
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out += (i == 0 ? "" : ",") + std::to_string(values[i]);
    }
    return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters()
{
    static const std::map<std::string, Setter> table{
        {"num_scales", [](RunConfig& c, const auto& k, const auto& v) { c.model.num_scales = parse_number<int>(k, v); }},
        {"fusion_mode", [](RunConfig& c, const auto&, const auto& v) { c.model.fusion_mode = parse_fusion_mode(v); }},
        {"common_channels",
         [](RunConfig& c, const auto& k, const auto& v) { c.model.common_channels = parse_number<int>(k, v); }},
        {"input_size",
         [](RunConfig& c, const auto& k, const auto& v) {
             c.model.input_size = parse_number<int>(k, v);
             c.train.input_size = c.model.input_size;
         }},
        {"use_aspp", [](RunConfig& c, const auto& k, const auto& v) { c.model.use_aspp = parse_bool(k, v); }},
        {"use_mgrm", [](RunConfig& c, const auto& k, const auto& v) { c.model.use_mgrm = parse_bool(k, v); }},
        {"use_depth", [](RunConfig& c, const auto& k, const auto& v) { c.model.use_depth = parse_bool(k, v); }},
        {"aspp_rates", [](RunConfig& c, const auto& k, const auto& v) { c.model.aspp_rates = parse_int_list(k, v); }},
        {"dense_layers",
         [](RunConfig& c, const auto& k, const auto& v) { c.model.dense.layers = parse_number<int>(k, v); }},
        {"dense_growth",
         [](RunConfig& c, const auto& k, const auto& v) { c.model.dense.growth = parse_number<int>(k, v); }},
        {"pretrained", [](RunConfig& c, const auto&, const auto& v) { c.model.pretrained = v; }},
        {"epochs", [](RunConfig& c, const auto& k, const auto& v) { c.train.epochs = parse_number<int>(k, v); }},
        {"batch_size", [](RunConfig& c, const auto& k, const auto& v) { c.train.batch_size = parse_number<int>(k, v); }},
        {"lr0", [](RunConfig& c, const auto& k, const auto& v) { c.train.lr0 = parse_double(k, v); }},
        {"momentum", [](RunConfig& c, const auto& k, const auto& v) { c.train.momentum = parse_double(k, v); }},
        {"weight_decay", [](RunConfig& c, const auto& k, const auto& v) { c.train.weight_decay = parse_double(k, v); }},
        {"poly_power", [](RunConfig& c, const auto& k, const auto& v) { c.train.poly_power = parse_double(k, v); }},
        {"seed", [](RunConfig& c, const auto& k, const auto& v) { c.train.seed = parse_number<std::uint64_t>(k, v); }},
        {"augment", [](RunConfig& c, const auto& k, const auto& v) { c.train.augment = parse_bool(k, v); }},
        {"prefetch", [](RunConfig& c, const auto& k, const auto& v) { c.train.prefetch = parse_number<int>(k, v); }},
        {"train_root", [](RunConfig& c, const auto&, const auto& v) { c.train_root = v; }},
        {"train_manifest", [](RunConfig& c, const auto&, const auto& v) { c.train_manifest = v; }},
        {"train_sources", [](RunConfig& c, const auto&, const auto& v) { c.train_sources = v; }},
        {"val_root", [](RunConfig& c, const auto&, const auto& v) { c.val_root = v; }},
        {"val_manifest", [](RunConfig& c, const auto&, const auto& v) { c.val_manifest = v; }},
        {"val_fraction", [](RunConfig& c, const auto& k, const auto& v) { c.val_fraction = parse_double(k, v); }},
        {"invert_depth", [](RunConfig& c, const auto& k, const auto& v) { c.invert_depth = parse_bool(k, v); }},
        {"dataset_name", [](RunConfig& c, const auto&, const auto& v) { c.dataset_name = v; }},
        {"input_dir", [](RunConfig& c, const auto&, const auto& v) { c.input_dir = v; }},
        {"gt_dir", [](RunConfig& c, const auto&, const auto& v) { c.gt_dir = v; }},
        {"ablation", [](RunConfig& c, const auto&, const auto& v) { c.ablation = v; }},
        {"checkpoint_every",
         [](RunConfig& c, const auto& k, const auto& v) { c.checkpoint_every = parse_number<int>(k, v); }},
        {"keep_epoch_checkpoints",
         [](RunConfig& c, const auto& k, const auto& v) { c.keep_epoch_checkpoints = parse_bool(k, v); }},
    };
    return table;
}

} // namespace

void apply_setting(RunConfig& config, const std::string& key, const std::string& value)
{
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) {
        throw ConfigError("unknown config key '" + key + "'");
    }
    it->second(config, key, value);
}

std::vector<std::pair<std::string, std::string>> read_key_values(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    RunConfig config;
    for (const auto& [key, value] : read_key_values(path)) {
        apply_setting(config, key, value);
    }
    return config;
}

std::vector<std::pair<std::string, std::string>> to_key_values(const RunConfig& c)
{
    return {
        {"num_scales", std::to_string(c.model.num_scales)},
        {"fusion_mode", to_string(c.model.fusion_mode)},
        {"common_channels", std::to_string(c.model.common_channels)},
        {"input_size", std::to_string(c.model.input_size)},
        {"use_aspp", format_bool(c.model.use_aspp)},
        {"use_mgrm", format_bool(c.model.use_mgrm)},
        {"use_depth", format_bool(c.model.use_depth)},
        {"aspp_rates", format_int_list(c.model.aspp_rates)},
        {"dense_layers", std::to_string(c.model.dense.layers)},
        {"dense_growth", std::to_string(c.model.dense.growth)},
        {"pretrained", c.model.pretrained.string()},
        {"epochs", std::to_string(c.train.epochs)},
        {"batch_size", std::to_string(c.train.batch_size)},
        {"lr0", format_double(c.train.lr0)},
        {"momentum", format_double(c.train.momentum)},
        {"weight_decay", format_double(c.train.weight_decay)},
        {"poly_power", format_double(c.train.poly_power)},
        {"seed", std::to_string(c.train.seed)},
        {"augment", format_bool(c.train.augment)},
        {"prefetch", std::to_string(c.train.prefetch)},
        {"train_root", c.train_root.string()},
        {"train_manifest", c.train_manifest.string()},
        {"train_sources", c.train_sources},
        {"val_root", c.val_root.string()},
        {"val_manifest", c.val_manifest.string()},
        {"val_fraction", format_double(c.val_fraction)},
        {"invert_depth", format_bool(c.invert_depth)},
        {"dataset_name", c.dataset_name},
        {"input_dir", c.input_dir.string()},
        {"gt_dir", c.gt_dir.string()},
        {"ablation", c.ablation},
        {"checkpoint_every", std::to_string(c.checkpoint_every)},
        {"keep_epoch_checkpoints", format_bool(c.keep_epoch_checkpoints)},
    };
}

void write_run_config(const std::filesystem::path& path, const RunConfig& config)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write " + path.string());
    }
    out << "# resolved configuration\n";
    for (const auto& [key, value] : to_key_values(config)) {
        out << key << " = " << value << '\n';
    }
}

void validate(const RunConfig& config)
{
    validate(config.model);
    validate(config.train);
    if (config.train.input_size != config.model.input_size) {
        throw ConfigError("training and model input sizes differ");
    }
    if (config.checkpoint_every < 0) {
        throw ConfigError("checkpoint_every must be non-negative");
    }
    if (config.val_fraction < 0.0 || config.val_fraction >= 1.0) {
        throw ConfigError("val_fraction must lie in [0, 1)");
    }
}

nlohmann::json to_json(const ModelConfig& c)
{
    return {
        {"num_scales", c.num_scales},
        {"fusion_mode", to_string(c.fusion_mode)},
        {"common_channels", c.common_channels},
        {"input_size", c.input_size},
        {"use_aspp", c.use_aspp},
        {"use_mgrm", c.use_mgrm},
        {"use_depth", c.use_depth},
        {"aspp_rates", c.aspp_rates},
        {"dense_layers", c.dense.layers},
        {"dense_growth", c.dense.growth},
        {"pretrained", c.pretrained.string()},
    };
}

nlohmann::json to_json(const TrainConfig& c)
{
    return {
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"lr0", c.lr0},
        {"momentum", c.momentum},
        {"weight_decay", c.weight_decay},
        {"poly_power", c.poly_power},
        {"seed", c.seed},
        {"input_size", c.input_size},
        {"augment", c.augment},
        {"prefetch", c.prefetch},
    };
}

ModelConfig model_config_from_json(const nlohmann::json& j)
{
    try {
        ModelConfig c;
        c.num_scales = j.at("num_scales").get<int>();
        c.fusion_mode = parse_fusion_mode(j.at("fusion_mode").get<std::string>());
        c.common_channels = j.at("common_channels").get<int>();
        c.input_size = j.at("input_size").get<int>();
        c.use_aspp = j.at("use_aspp").get<bool>();
        c.use_mgrm = j.at("use_mgrm").get<bool>();
        c.use_depth = j.at("use_depth").get<bool>();
        c.aspp_rates = j.at("aspp_rates").get<std::vector<int>>();
        c.dense.layers = j.at("dense_layers").get<int>();
        c.dense.growth = j.at("dense_growth").get<int>();
        c.pretrained = j.value("pretrained", std::string{});
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed model configuration: ") + e.what());
    }
}

TrainConfig train_config_from_json(const nlohmann::json& j)
{
    try {
        TrainConfig c;
        c.epochs = j.at("epochs").get<int>();
        c.batch_size = j.at("batch_size").get<int>();
        c.lr0 = j.at("lr0").get<double>();
        c.momentum = j.at("momentum").get<double>();
        c.weight_decay = j.at("weight_decay").get<double>();
        c.poly_power = j.at("poly_power").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.input_size = j.at("input_size").get<int>();
        c.augment = j.at("augment").get<bool>();
        c.prefetch = j.value("prefetch", 2);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed training configuration: ") + e.what());
    }
}

const std::vector<std::string>& ablation_keys()
{
    static const std::vector<std::string> keys{"base", "mgfa", "aspp", "mgrm", "s3", "s4", "s5"};
    return keys;
}

ModelConfig ablation_config(const std::string& key, const ModelConfig& base)
{
    ModelConfig c = base;
    c.num_scales = 5;
    c.fusion_mode = FusionMode::mgfa;
    c.use_depth = true;
    c.use_aspp = true;
    c.use_mgrm = true;
    if (key == "base") {
        c.use_depth = false;
        c.fusion_mode = FusionMode::add;
        c.use_aspp = false;
        c.use_mgrm = false;
    } else if (key == "mgfa") {
        c.use_aspp = false;
        c.use_mgrm = false;
    } else if (key == "aspp") {
        c.use_mgrm = false;
    } else if (key == "mgrm" || key == "s5") {
        // full model
    } else if (key == "s3") {
        c.num_scales = 3;
    } else if (key == "s4") {
        c.num_scales = 4;
    } else {
        throw ConfigError("unknown ablation '" + key + "'; expected base, mgfa, aspp, mgrm, s3, s4 or s5");
    }
    validate(c);
    return c;
}

} // namespace pmf
