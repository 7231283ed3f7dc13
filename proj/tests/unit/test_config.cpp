#include <gtest/gtest.h>

#include <fstream>

#include "pmf/config.hpp"

using namespace pmf;
namespace fs = std::filesystem;

TEST(Config, UnknownKeyIsNamed)
{
    RunConfig c;
    try {
        apply_setting(c, "learning_rate", "0.1");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
    }
    EXPECT_THROW(apply_setting(c, "epochs", "ten"), ConfigError);
    EXPECT_THROW(apply_setting(c, "augment", "maybe"), ConfigError);
    EXPECT_THROW(apply_setting(c, "fusion_mode", "concat"), ConfigError);
}

TEST(Config, KeyValueRoundTrip)
{
    RunConfig c;
    apply_setting(c, "num_scales", "4");
    apply_setting(c, "fusion_mode", "add");
    apply_setting(c, "input_size", "64");
    apply_setting(c, "aspp_rates", "2, 4");
    apply_setting(c, "lr0", "0.00123");
    apply_setting(c, "seed", "18446744073709551615");
    apply_setting(c, "train_sources", "NLPR:/data/nlpr:/data/nlpr.txt");
    apply_setting(c, "checkpoint_every", "0");
    EXPECT_EQ(c.model.input_size, 64);
    EXPECT_EQ(c.train.input_size, 64);

    RunConfig back;
    for (const auto& [k, v] : to_key_values(c)) {
        apply_setting(back, k, v);
    }
    EXPECT_EQ(back.model, c.model);
    EXPECT_EQ(back.train, c.train);
    EXPECT_EQ(back.train_sources, c.train_sources);
    EXPECT_EQ(back.checkpoint_every, 0);

    const fs::path path = fs::temp_directory_path() / "pmf_config_roundtrip.txt";
    write_run_config(path, c);
    const RunConfig loaded = load_run_config(path);
    EXPECT_EQ(loaded.model, c.model);
    EXPECT_EQ(loaded.train, c.train);
    fs::remove(path);
}

TEST(Config, FileParsing)
{
    const fs::path path = fs::temp_directory_path() / "pmf_config_file.txt";
    {
        std::ofstream out(path);
        out << "# comment\n\n  epochs = 3   # trailing\nbatch_size=2\n";
    }
    const RunConfig c = load_run_config(path);
    EXPECT_EQ(c.train.epochs, 3);
    EXPECT_EQ(c.train.batch_size, 2);
    {
        std::ofstream out(path);
        out << "epochs 3\n";
    }
    EXPECT_THROW(load_run_config(path), ConfigError);
    fs::remove(path);
    EXPECT_THROW(load_run_config(path), ConfigError);
}

TEST(Config, CrossFieldValidation)
{
    RunConfig c;
    EXPECT_NO_THROW(validate(c));
    c.train.input_size = 128;
    EXPECT_THROW(validate(c), ConfigError);
    c = RunConfig{};
    c.val_fraction = 1.0;
    EXPECT_THROW(validate(c), ConfigError);
    c = RunConfig{};
    c.model.num_scales = 7;
    EXPECT_THROW(validate(c), ConfigError);
}

TEST(Config, JsonRoundTrip)
{
    ModelConfig m;
    m.num_scales = 3;
    m.fusion_mode = FusionMode::add;
    m.aspp_rates = {1, 3};
    EXPECT_EQ(model_config_from_json(to_json(m)), m);
    TrainConfig t;
    t.seed = 77;
    t.augment = false;
    EXPECT_EQ(train_config_from_json(to_json(t)), t);
    EXPECT_THROW(model_config_from_json(nlohmann::json{{"num_scales", 3}}), DataError);
}

TEST(Config, AblationVariants)
{
    EXPECT_EQ(ablation_keys(), (std::vector<std::string>{"base", "mgfa", "aspp", "mgrm", "s3", "s4", "s5"}));
    const ModelConfig full;
    const ModelConfig base = ablation_config("base", full);
    EXPECT_FALSE(base.use_depth);
    EXPECT_FALSE(base.use_aspp);
    EXPECT_FALSE(base.use_mgrm);
    EXPECT_EQ(base.fusion_mode, FusionMode::add);
    const ModelConfig mgfa = ablation_config("mgfa", full);
    EXPECT_TRUE(mgfa.use_depth);
    EXPECT_EQ(mgfa.fusion_mode, FusionMode::mgfa);
    EXPECT_FALSE(mgfa.use_aspp);
    const ModelConfig aspp = ablation_config("aspp", full);
    EXPECT_TRUE(aspp.use_aspp);
    EXPECT_FALSE(aspp.use_mgrm);
    EXPECT_EQ(ablation_config("mgrm", full), full);
    EXPECT_EQ(ablation_config("s3", full).num_scales, 3);
    EXPECT_EQ(ablation_config("s4", full).num_scales, 4);
    EXPECT_EQ(ablation_config("s5", full).num_scales, 5);
    EXPECT_THROW(ablation_config("s6", full), ConfigError);

    ModelConfig narrow;
    narrow.common_channels = 16;
    narrow.input_size = 64;
    EXPECT_EQ(ablation_config("base", narrow).common_channels, 16);
    EXPECT_EQ(ablation_config("s3", narrow).input_size, 64);
}
