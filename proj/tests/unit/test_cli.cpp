#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pmf/cli.hpp"
#include "pmf/config.hpp"
#include "pmf/image_io.hpp"
#include "synthetic.hpp"

using namespace pmf;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name)
{
    auto dir = fs::temp_directory_path() / ("pmf_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr)
{
    testing::internal::CaptureStdout();
    testing::internal::CaptureStderr();
    const int code = run_cli(args);
    const std::string o = testing::internal::GetCapturedStdout();
    const std::string e = testing::internal::GetCapturedStderr();
    if (out != nullptr) {
        *out = o;
    }
    if (err != nullptr) {
        *err = e;
    }
    return code;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string squeeze_spaces(const std::string& s)
{
    std::istringstream is(s);
    std::string word;
    std::string out;
    while (is >> word) {
        out += (out.empty() ? "" : " ") + word;
    }
    return out;
}

fs::path tiny_config(const fs::path& dir, const fs::path& train_root)
{
    const fs::path path = dir / "tiny.cfg";
    std::ofstream out(path);
    out << "# small enough for a unit test\n"
        << "common_channels = 4\ninput_size = 32\naspp_rates = 1,2\ndense_layers = 1\ndense_growth = 4\n"
        << "epochs = 1\nbatch_size = 2\nprefetch = 0\n"
        << "train_root = " << train_root.string() << "\n";
    return path;
}

/// A trained tiny checkpoint shared by the predict tests.
const fs::path& trained_checkpoint()
{
    static const fs::path path = [] {
        const fs::path dir = fresh_dir("shared_model");
        oracle::write_square_dataset(dir / "data", 2, 40, 48);
        const fs::path cfg = tiny_config(dir, dir / "data");
        std::string err;
        EXPECT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "run").string()}, nullptr, &err), 0)
            << err;
        return dir / "run" / "last.pmf";
    }();
    return path;
}

} // namespace

TEST(Cli, UsageErrorsExitTwo)
{
    EXPECT_EQ(run({}), kExitUsage);
    EXPECT_EQ(run({"train", "--bogus"}), kExitUsage);
    EXPECT_EQ(run({"frobnicate"}), kExitUsage);
    EXPECT_EQ(run({"eval", "--pred", "x"}), kExitUsage);
    EXPECT_EQ(run({"--help"}), kExitOk);
}

TEST(Cli, UnknownConfigKeyExitsTwoNamingKey)
{
    const auto dir = fresh_dir("badkey");
    std::ofstream(dir / "bad.cfg") << "epochs = 1\nwarmup_steps = 10\n";
    std::string err;
    EXPECT_EQ(run({"train", "--config", (dir / "bad.cfg").string(), "--out", (dir / "run").string()}, nullptr, &err),
              kExitUsage);
    EXPECT_NE(err.find("warmup_steps"), std::string::npos);
    EXPECT_EQ(run({"train", "--out", (dir / "run").string(), "--set", "nope=1"}), kExitUsage);
    EXPECT_EQ(run({"train", "--out", (dir / "run").string(), "--fusion-mode", "concat"}), kExitUsage);
}

TEST(Cli, MissingDatasetExitsThree)
{
    const auto dir = fresh_dir("nodata");
    const fs::path cfg = tiny_config(dir, dir / "does_not_exist");
    EXPECT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "run").string()}), kExitData);
    // The resolved configuration is written before any data is touched.
    EXPECT_TRUE(fs::exists(dir / "run" / "resolved_config.txt"));
}

TEST(Cli, TrainWritesCheckpointAndResolvedConfig)
{
    const auto dir = fresh_dir("train");
    oracle::write_square_dataset(dir / "data", 2, 32, 32);
    const fs::path cfg = tiny_config(dir, dir / "data");
    std::string err;
    ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "run").string(), "--fusion-mode", "add",
                   "--seed", "11", "--num-scales", "4"},
                  nullptr, &err),
              kExitOk)
        << err;
    EXPECT_TRUE(fs::exists(dir / "run" / "last.pmf"));
    EXPECT_TRUE(fs::exists(dir / "run" / "train_log.jsonl"));
    const RunConfig resolved = load_run_config(dir / "run" / "resolved_config.txt");
    EXPECT_EQ(resolved.model.fusion_mode, FusionMode::add);
    EXPECT_EQ(resolved.model.num_scales, 4);
    EXPECT_EQ(resolved.train.seed, 11U);
    const Checkpoint info = read_checkpoint_info(dir / "run" / "last.pmf");
    EXPECT_EQ(info.model.fusion_mode, FusionMode::add);
}

TEST(Cli, SeedPrecedence)
{
    const auto dir = fresh_dir("seed");
    ::setenv("PMF_SEED", "5", 1);
    EXPECT_EQ(run({"ablate", "s3", "--dry-run", "--out", (dir / "a").string(), "--set", "seed=3"}), kExitOk);
    EXPECT_EQ(load_run_config(dir / "a" / "resolved_config.txt").train.seed, 5U);
    EXPECT_EQ(run({"ablate", "s3", "--dry-run", "--out", (dir / "b").string(), "--seed", "8"}), kExitOk);
    EXPECT_EQ(load_run_config(dir / "b" / "resolved_config.txt").train.seed, 8U);
    ::unsetenv("PMF_SEED");
}

TEST(Cli, AblateResolvesVariants)
{
    const auto dir = fresh_dir("ablate");
    std::string out;
    ASSERT_EQ(run({"ablate", "base", "--dry-run", "--out", (dir / "base").string()}, &out), kExitOk);
    const RunConfig base = load_run_config(dir / "base" / "resolved_config.txt");
    EXPECT_FALSE(base.model.use_depth);
    EXPECT_FALSE(base.model.use_mgrm);
    EXPECT_EQ(base.ablation, "base");
    ASSERT_EQ(run({"ablate", "s3", "--dry-run", "--out", (dir / "s3").string()}), kExitOk);
    EXPECT_EQ(load_run_config(dir / "s3" / "resolved_config.txt").model.num_scales, 3);
    EXPECT_EQ(run({"ablate", "s9", "--dry-run", "--out", (dir / "bad").string()}), kExitUsage);
}

TEST(Cli, PredictWritesOneMapPerPairAtOriginalSize)
{
    const auto dir = fresh_dir("predict");
    oracle::write_square_dataset(dir / "input", 5, 40, 56);
    std::string err;
    ASSERT_EQ(run({"predict", "--checkpoint", trained_checkpoint().string(), "--input", (dir / "input").string(),
                   "--out", (dir / "out").string(), "--dump-masks", (dir / "masks").string()},
                  nullptr, &err),
              kExitOk)
        << err;
    for (int i = 0; i < 5; ++i) {
        const fs::path png = dir / "out" / ("s" + std::to_string(i) + ".png");
        ASSERT_TRUE(fs::exists(png));
        const auto map = io::read_gray8(png);
        EXPECT_EQ(map.rows(), 40);
        EXPECT_EQ(map.cols(), 56);
        EXPECT_GE(map.minCoeff(), 0.0);
        EXPECT_LE(map.maxCoeff(), 1.0);
    }
    EXPECT_TRUE(fs::exists(dir / "masks" / "s0_mgfa_s1.png"));
    EXPECT_TRUE(fs::exists(dir / "masks" / "s0_mgrm_s5.png"));
    EXPECT_EQ(io::read_gray8(dir / "masks" / "s0_mgfa_s3.png").rows(), 8);
    EXPECT_TRUE(fs::exists(dir / "out" / "resolved_config.json"));

    ASSERT_EQ(run({"predict", "--checkpoint", trained_checkpoint().string(), "--input", (dir / "input").string(),
                   "--out", (dir / "again").string()}),
              kExitOk);
    for (int i = 0; i < 5; ++i) {
        const std::string name = "s" + std::to_string(i) + ".png";
        EXPECT_EQ(slurp(dir / "out" / name), slurp(dir / "again" / name));
    }
}

TEST(Cli, PredictSkipsPairsWithoutDepth)
{
    const auto dir = fresh_dir("predict_skip");
    oracle::write_square_dataset(dir / "input", 3, 32, 32);
    fs::remove(dir / "input" / "depth" / "s1.png");
    fs::remove_all(dir / "input" / "GT");
    std::string err;
    EXPECT_EQ(run({"predict", "--checkpoint", trained_checkpoint().string(), "--input", (dir / "input").string(),
                   "--out", (dir / "out").string()},
                  nullptr, &err),
              kExitOk);
    EXPECT_NE(err.find("s1"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "out" / "s0.png"));
    EXPECT_FALSE(fs::exists(dir / "out" / "s1.png"));

    fs::create_directories(dir / "empty" / "RGB");
    fs::create_directories(dir / "empty" / "depth");
    EXPECT_EQ(run({"predict", "--checkpoint", trained_checkpoint().string(), "--input", (dir / "empty").string(),
                   "--out", (dir / "out2").string()}),
              kExitData);
}

TEST(Cli, PredictThenEvalRoundTrip)
{
    const auto dir = fresh_dir("roundtrip");
    oracle::write_square_dataset(dir / "test", 3, 32, 32);
    ASSERT_EQ(run({"predict", "--checkpoint", trained_checkpoint().string(), "--input", (dir / "test").string(),
                   "--out", (dir / "pred").string()}),
              kExitOk);
    std::string out;
    ASSERT_EQ(run({"eval", "--pred", (dir / "pred").string(), "--gt", (dir / "test" / "GT").string(), "--out",
                   (dir / "report").string(), "--name", "toy"},
                  &out),
              kExitOk);
    EXPECT_TRUE(fs::exists(dir / "report" / "report.json"));
    EXPECT_TRUE(fs::exists(dir / "report" / "pr.csv"));
    const auto report = nlohmann::json::parse(slurp(dir / "report" / "report.json"));
    EXPECT_EQ(report["images"], 3);
}

TEST(Cli, EvalPerfectPredictionsRow)
{
    const auto dir = fresh_dir("eval");
    oracle::write_square_dataset(dir / "set", 3, 24, 24);
    std::string out;
    ASSERT_EQ(run({"eval", "--pred", (dir / "set" / "GT").string(), "--gt", (dir / "set" / "GT").string(), "--out",
                   (dir / "report").string(), "--name", "same"},
                  &out),
              kExitOk);
    EXPECT_NE(squeeze_spaces(out).find("same 1.000 1.000 1.000 0.000"), std::string::npos) << out;

    fs::create_directories(dir / "empty");
    EXPECT_EQ(run({"eval", "--pred", (dir / "empty").string(), "--gt", (dir / "set" / "GT").string(), "--out",
                   (dir / "report2").string()}),
              kExitData);
}

TEST(Cli, PlotRendersCurvesAndMetadata)
{
    const auto dir = fresh_dir("plot");
    {
        std::ofstream csv(dir / "flat.csv");
        csv << "threshold,precision,recall\n";
        for (int t = 0; t < 256; ++t) {
            csv << t << ',' << (0.5 + t / 512.0) << ",0.7\n";
        }
    }
    {
        std::ofstream csv(dir / "one.csv");
        csv << "threshold,precision,recall\n0,0.2,1\n128,0.8,0.6\n255,1,0\n";
    }
    ASSERT_EQ(run({"plot", (dir / "one.csv").string(), "--out", (dir / "one.png").string()}), kExitOk);
    EXPECT_TRUE(fs::exists(dir / "one.png"));
    ASSERT_EQ(run({"plot", (dir / "flat.csv").string(), (dir / "one.csv").string(), "--labels", "flat", "one",
                   "--out", (dir / "two.png").string()}),
              kExitOk);
    const auto meta = nlohmann::json::parse(slurp(dir / "two.png.json"));
    const auto& fig = meta["figure"];
    EXPECT_EQ(fig["x_range"], nlohmann::json({0, 1}));
    EXPECT_EQ(fig["y_range"], nlohmann::json({0, 1}));
    EXPECT_EQ(fig["series"].size(), 2U);
    const auto img = io::read_gray8(dir / "two.png");
    EXPECT_EQ(img.cols(), 640);
    EXPECT_EQ(img.rows(), 480);
    EXPECT_EQ(run({"plot", (dir / "one.csv").string(), "--labels", "a", "b", "--out", (dir / "x.png").string()}),
              kExitUsage);
}
