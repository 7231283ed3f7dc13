// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "pmf/cli.hpp"
#include "pmf/config.hpp"
#include "pmf/metrics.hpp"
#include "pmf/training.hpp"
#include "random.hpp"
#include "synthetic.hpp"

using namespace pmf;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& id, bool pass, const std::string& detail)
{
    std::cout << id << ' ' << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
    if (!pass) {
        ++failures;
    }
}

/// Runs one criterion; an exception counts as a failure with its message.
void criterion(const std::string& id, const std::function<std::pair<bool, std::string>()>& body)
{
    try {
        const auto [pass, detail] = body();
        report(id, pass, detail);
    } catch (const std::exception& e) {
        report(id, false, std::string("exception: ") + e.what());
    }
}

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

metrics::Map random_map(std::mt19937_64& rng, int h, int w)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    metrics::Map m(h, w);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m(i) = u(rng);
    }
    return m;
}

metrics::Map random_mask(std::mt19937_64& rng, int h, int w, double p = 0.4)
{
    std::bernoulli_distribution b(p);
    metrics::Map m(h, w);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m(i) = b(rng) ? 1.0 : 0.0;
    }
    m(0, 0) = 1.0;
    return m;
}

fs::path fresh_dir(const std::string& name)
{
    auto dir = fs::temp_directory_path() / ("pmf_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

ModelConfig tiny_model()
{
    ModelConfig c;
    c.common_channels = 4;
    c.input_size = 32;
    c.aspp_rates = {1, 2};
    c.dense = {1, 4};
    return c;
}

std::pair<bool, std::string> ac1()
{
    const auto start = Clock::now();
    std::mt19937_64 rng(101);
    double worst_f = 0.0;
    double worst_mae = 0.0;
    double worst_e = 0.0;
    double worst_s = 0.0;
    bool pr_exact = true;
    for (int k = 0; k < 25; ++k) {
        const metrics::Map pred = random_map(rng, 8, 8);
        const metrics::Map gt = random_mask(rng, 8, 8);
        const auto curve = metrics::pr_curve(pred, gt);
        const auto [op, orr] = oracle::pr_curve(pred, gt);
        for (int t = 0; t < 256; ++t) {
            pr_exact = pr_exact && curve->precision[t] == op[t] && curve->recall[t] == orr[t];
            worst_f = std::max(worst_f, std::abs(metrics::f_beta(curve->precision[t], curve->recall[t]) -
                                                 oracle::f_beta(op[t], orr[t], 0.3)));
            const metrics::Map bin = (pred >= t / 255.0).cast<double>();
            worst_e = std::max(worst_e, std::abs(metrics::e_measure(bin, gt) - oracle::e_measure(bin, gt)));
        }
        worst_mae = std::max(worst_mae, std::abs(metrics::mae(pred, gt) - oracle::mae(pred, gt)));
        worst_s = std::max(worst_s, std::abs(metrics::s_measure(pred, gt) - oracle::s_measure(pred, gt)));
    }
    metrics::Map pred(3, 3);
    pred << 0.9, 0.1, 0.1, 0.8, 0.8, 0.1, 0.1, 0.1, 0.1;
    metrics::Map gt(3, 3);
    gt << 1, 0, 0, 1, 0, 0, 0, 0, 0;
    const auto c = metrics::confusion_at(pred, gt, 0.5);
    const bool example = c.tp == 2 && c.fp == 1 && c.fn == 0 && c.precision() == 2.0 / 3.0 && c.recall() == 1.0;
    const double secs = seconds_since(start);
    const bool pass = pr_exact && worst_f <= 1e-9 && worst_mae <= 1e-9 && worst_e <= 1e-9 && worst_s <= 1e-6 &&
                      example && secs < 10.0;
    return {pass, fmt("pr_exact=%d dF=%.2e dMAE=%.2e dE=%.2e dS=%.2e example=%d time=%.2fs", pr_exact, worst_f,
                      worst_mae, worst_e, worst_s, example, secs)};
}

std::pair<bool, std::string> ac2()
{
    std::mt19937_64 rng(202);
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
        const metrics::Map gt = random_mask(rng, 16, 16);
        metrics::MetricAccumulator acc;
        acc.add(gt, gt);
        const auto r = acc.report();
        worst = std::max({worst, std::abs(r.max_f - 1.0), std::abs(r.s_measure - 1.0), std::abs(r.max_e - 1.0),
                          std::abs(r.mae)});
    }
    int violations = 0;
    for (int k = 0; k < 100; ++k) {
        const auto curve = metrics::pr_curve(random_map(rng, 12, 12), random_mask(rng, 12, 12));
        for (int t = 1; t < 256; ++t) {
            violations += curve->recall[t] > curve->recall[t - 1] ? 1 : 0;
        }
    }
    return {worst <= 1e-6 && violations == 0,
            fmt("identity_max_dev=%.2e recall_increases=%d (100 maps x 256 thresholds)", worst, violations)};
}

std::pair<bool, std::string> ac3()
{
    const auto start = Clock::now();
    bool ok = true;
    std::ostringstream detail;
    for (const int s : {64, 128, 256}) {
        ModelConfig c;
        c.common_channels = 32;
        c.input_size = s;
        const PmfNet<float> net(c, 3);
        std::mt19937_64 rng(s);
        const auto rgb = oracle::uniform<float>(Shape{1, 3, s, s}, rng, 0, 1);
        const auto depth = oracle::uniform<float>(Shape{1, 1, s, s}, rng, 0, 1);
        const NoGradGuard guard;
        const auto rp = net.extract_rgb(rgb);
        const auto dp = net.extract_depth(depth);
        for (int i = 1; i <= 5; ++i) {
            const int side = s >> (i - 1);
            for (const auto* p : {&rp, &dp}) {
                const Shape& sh = p->level(i).shape();
                ok = ok && sh.h == side && sh.w == side;
            }
        }
        const auto out = net.decode(rp, &dp, Mode::eval);
        int maps = 0;
        for (const auto& scale : out.scales) {
            maps += scale.logits.shape() == Shape{1, 1, s, s} ? 1 : 0;
        }
        ok = ok && maps == 5 && out.final.shape() == Shape{1, 1, s, s};
        detail << "S=" << s << ":maps=" << maps << ' ';
    }
    const double secs = seconds_since(start);
    detail << fmt("time=%.1fs", secs);
    return {ok && secs < 30.0, detail.str()};
}

std::pair<bool, std::string> ac4()
{
    ParameterRegistry<double> reg;
    std::mt19937_64 rng(404);
    const Scope<double> root(reg, rng);
    const Mgfa<double> mgfa(root.child("mgfa"), 8, {});
    const Mgrm<double> mgrm(root.child("mgrm"), 8);
    double lo = 1.0;
    double hi = 0.0;
    bool bounded = true;
    for (int k = 0; k < 100; ++k) {
        const Var<double> stream(oracle::uniform<double>(Shape{1, 8, 6, 6}, rng, -5, 5));
        const Var<double> depth(oracle::uniform<double>(Shape{1, 8, 6, 6}, rng, -5, 5));
        const auto m1 = mgfa.depth_mask(stream);
        const auto m2 = mgrm.rgb_mask(stream);
        lo = std::min({lo, m1.value().array().minCoeff(), m2.value().array().minCoeff()});
        hi = std::max({hi, m1.value().array().maxCoeff(), m2.value().array().maxCoeff()});
        const auto gated = gate_depth(m1, depth).value();
        bounded = bounded && (gated.array().abs() <= depth.value().array().abs()).all();
    }
    const Var<double> zero(Tensor<double>(Shape{1, 8, 4, 4}));
    const bool half = (mgfa.depth_mask(zero).value().array() == 0.5).all() &&
                      (mgrm.rgb_mask(zero).value().array() == 0.5).all();
    return {lo > 0.0 && hi < 1.0 && bounded && half,
            fmt("mask_range=(%.3e, %.6f) gated_bounded=%d zero_input_half=%d", lo, hi, bounded, half)};
}

std::pair<bool, std::string> ac5()
{
    ParameterRegistry<float> reg;
    std::mt19937_64 rng(505);
    const Mgrm<float> mgrm(Scope<float>(reg, rng).child("mgrm"), 16);
    const auto& d = mgrm.deformable();
    const Var<float> u(oracle::uniform<float>(Shape{2, 16, 8, 8}, rng));
    const auto plain = conv2d(u, d.weight(), d.bias(), same_padding(3)).value();
    const double at_init = oracle::max_abs_diff(d(u).value(), plain);
    Var<float> w = d.offset_predictor().weight();
    w.mutable_value() = oracle::uniform<float>(w.shape(), rng, -0.5, 0.5);
    const Var<float> zeros(Tensor<float>(Shape{2, 18, 8, 8}));
    const double clamped = oracle::max_abs_diff(d.apply(u, zeros).value(), plain);
    return {at_init <= 1e-5 && clamped <= 1e-5, fmt("init_err=%.2e zero_offset_err=%.2e", at_init, clamped)};
}

std::pair<bool, std::string> ac6()
{
    std::mt19937_64 rng(606);
    const Shape s{1, 8, 4, 4};

    ParameterRegistry<double> mgfa_reg;
    const Mgfa<double> mgfa(Scope<double>(mgfa_reg, rng).child("mgfa"), 8, DenseBlockConfig{2, 4});
    Var<double> stream(oracle::uniform<double>(s, rng), true);
    Var<double> rgb(oracle::uniform<double>(s, rng), true);
    Var<double> depth(oracle::uniform<double>(s, rng), true);
    const auto w = oracle::uniform<double>(s, rng);
    std::vector<Var<double>> mgfa_params;
    for (const auto& p : mgfa_reg.parameters()) {
        mgfa_params.push_back(p.var);
    }
    const auto mgfa_loss = [&] { return weighted_sum(mgfa(stream, rgb, depth, Mode::train).fused, w); };
    const auto g1 = oracle::gradcheck(mgfa_loss, {stream, rgb, depth});

    ParameterRegistry<double> mgrm_reg;
    const Mgrm<double> mgrm(Scope<double>(mgrm_reg, rng).child("mgrm"), 8);
    Var<double> ow = mgrm.deformable().offset_predictor().weight();
    ow.mutable_value() = oracle::uniform<double>(ow.shape(), rng, -0.3, 0.3);
    Var<double> coarse(oracle::uniform<double>(Shape{1, 8, 2, 2}, rng), true);
    std::vector<Var<double>> mgrm_params;
    for (const auto& p : mgrm_reg.parameters()) {
        mgrm_params.push_back(p.var);
    }
    const auto mgrm_loss = [&] { return weighted_sum(mgrm.refine(coarse, rgb).refined, w); };
    const auto g2 = oracle::gradcheck(mgrm_loss, {coarse, rgb});

    // Parameter gradients. At step 1e-3 a few stencils straddle a ReLU kink,
    // so the gated check uses 1e-4; the 1e-3 figure is printed alongside.
    const auto p1 = oracle::gradcheck(mgfa_loss, mgfa_params, 1e-4);
    const auto p2 = oracle::gradcheck(mgrm_loss, mgrm_params, 1e-4);
    const auto p1_coarse = oracle::gradcheck(mgfa_loss, mgfa_params);

    // Full model: final map reaches the first depth stage; the deep-supervised
    // loss reaches every trainable parameter.
    ModelConfig c;
    c.common_channels = 8;
    c.input_size = 32;
    c.aspp_rates = {1, 2};
    c.dense = {2, 4};
    std::size_t missing = 0;
    bool depth_stage1 = true;
    {
        PmfNet<float> net(c, 6);
        std::mt19937_64 r(6);
        const auto x = oracle::uniform<float>(Shape{1, 3, 32, 32}, r, 0, 1);
        const auto dx = oracle::uniform<float>(Shape{1, 1, 32, 32}, r, 0, 1);
        backward(mean(net.forward(x, dx, Mode::train).final));
        for (const char* name : {"depth_stream.conv1_1.weight", "depth_stream.conv1_2.weight"}) {
            const auto v = net.registry().find(name);
            depth_stage1 = depth_stage1 && v.has_grad() && v.grad().array().abs().sum() > 0.0F;
        }
    }
    std::size_t total = 0;
    {
        PmfNet<float> net(c, 7);
        std::mt19937_64 r(7);
        const auto x = oracle::uniform<float>(Shape{2, 3, 32, 32}, r, 0, 1);
        const auto dx = oracle::uniform<float>(Shape{2, 1, 32, 32}, r, 0, 1);
        const auto gt = oracle::bernoulli<float>(Shape{2, 1, 32, 32}, r);
        backward(deep_supervision_loss(net.forward(x, dx, Mode::train), gt));
        for (const auto& p : net.registry().parameters()) {
            ++total;
            missing += p.var.has_grad() ? 0 : 1;
        }
    }
    const bool pass = g1.relative_error <= 1e-3 && g2.relative_error <= 1e-3 && p1.relative_error <= 1e-6 &&
                      p2.relative_error <= 1e-6 && depth_stage1 && missing == 0;
    return {pass, fmt("input_grads: mgfa=%.2e mgrm=%.2e | param_grads(h=1e-4): mgfa=%.2e mgrm=%.2e "
                      "(mgfa h=1e-3: %.2e) | depth_stage1_grad=%d params_without_grad=%zu/%zu",
                      g1.relative_error, g2.relative_error, p1.relative_error, p2.relative_error,
                      p1_coarse.relative_error, depth_stage1, missing, total)};
}

std::pair<bool, std::string> ac7()
{
    std::mt19937_64 rng(707);
    const auto gt = oracle::bernoulli<double>(Shape{2, 1, 8, 8}, rng);
    SaliencyOutput<double> out;
    for (int i = 0; i < 5; ++i) {
        ScaleOutput<double> s;
        s.level = 5 - i;
        s.logits = Var<double>(Tensor<double>(Shape{2, 1, 8, 8}), true);
        out.scales.push_back(s);
    }
    out.final = sigmoid(out.scales.back().logits);
    const double loss = deep_supervision_loss(out, gt).value()(0, 0, 0, 0);
    const double expected = 5.0 * std::numbers::ln2;
    const TrainConfig cfg;
    const double lr0 = lr_schedule(0, 1000, cfg);
    const double lr_end = lr_schedule(1000, 1000, cfg);
    const double lr_half = lr_schedule(500, 1000, cfg);
    const bool pass = std::abs(loss - expected) <= 1e-4 && std::abs(lr0 - 1e-3) <= 1e-12 && lr_end == 0.0 &&
                      std::abs(lr_half - 1e-3 * std::pow(0.5, 0.9)) <= 1e-9;
    return {pass, fmt("loss=%.6f (5ln2=%.6f) lr(0)=%.3e lr(max)=%.1e lr(max/2)=%.6e", loss, expected, lr0, lr_end,
                      lr_half)};
}

std::pair<bool, std::string> ac8()
{
    const auto start = Clock::now();
    ModelConfig c;
    c.common_channels = 32;
    c.input_size = 64;
    PmfNet<float> net(c, 8);
    const auto samples = oracle::square_samples(64, 4);
    MemorySource src(samples);
    TrainConfig t;
    t.epochs = 150;
    t.batch_size = 2;
    t.lr0 = 1e-3;
    t.input_size = 64;
    t.augment = false;
    t.prefetch = 0;
    t.seed = 8;
    TrainOptions options{fresh_dir("overfit")};
    options.checkpoint_every = 0;
    const TrainResult r = train(net, src, nullptr, t, options);

    std::array<double, 5> blocks{};
    for (std::size_t i = 0; i < 50 && i < r.trace.size(); ++i) {
        blocks[i / 10] += r.trace[i].loss / 10.0;
    }
    bool monotone = r.trace.size() >= 50;
    for (std::size_t b = 1; b < blocks.size(); ++b) {
        monotone = monotone && blocks[b] < blocks[b - 1];
    }

    const Batch batch = collate(samples);
    double mae = 0.0;
    {
        const NoGradGuard guard;
        const auto out = net.forward(batch.rgb, batch.depth, Mode::eval).final.value();
        mae = (out.array() - batch.gt.array()).abs().mean();
    }
    const double secs = seconds_since(start);
    return {mae < 0.05 && monotone && secs < 300.0,
            fmt("steps=%zu train_MAE=%.4f block_means=[%.4f %.4f %.4f %.4f %.4f] monotone=%d time=%.0fs",
                r.trace.size(), mae, blocks[0], blocks[1], blocks[2], blocks[3], blocks[4], monotone, secs)};
}

std::pair<bool, std::string> ac9()
{
    std::map<std::string, ModelConfig> configs;
    std::map<std::string, std::size_t> counts;
    ModelConfig full;
    full.common_channels = 32;
    for (const auto& key : ablation_keys()) {
        configs[key] = ablation_config(key, full);
        counts[key] = PmfNet<float>(configs[key], 9).parameter_count();
    }
    // mgrm and s5 name the same full model; every other pair must differ.
    int equal_pairs = 0;
    for (auto a = configs.begin(); a != configs.end(); ++a) {
        for (auto b = std::next(a); b != configs.end(); ++b) {
            if (a->second == b->second && !(a->first == "mgrm" && b->first == "s5")) {
                ++equal_pairs;
            }
        }
    }
    const bool order = counts["base"] < counts["mgfa"] && counts["mgfa"] < counts["aspp"] &&
                       counts["aspp"] <= counts["mgrm"] && counts["s3"] < counts["s4"] && counts["s4"] < counts["s5"];
    std::ostringstream detail;
    for (const auto& key : ablation_keys()) {
        detail << key << '=' << counts[key] << ' ';
    }
    detail << "equal_pairs=" << equal_pairs;
    return {order && equal_pairs == 0, detail.str()};
}

std::pair<bool, std::string> ac10()
{
    const fs::path dir = fresh_dir("determinism");
    MemorySource src(oracle::square_samples(32, 3));
    TrainConfig t;
    t.epochs = 2;
    t.batch_size = 2;
    t.input_size = 32;
    t.seed = 10;
    t.prefetch = 0;

    PmfNet<float> a(tiny_model(), 1);
    const TrainResult full = train(a, src, nullptr, t, TrainOptions{dir / "full"});
    PmfNet<float> b(tiny_model(), 1);
    TrainOptions first{dir / "part"};
    first.stop_after_epoch = 1;
    const TrainResult head = train(b, src, nullptr, t, first);
    PmfNet<float> c(tiny_model(), 2);
    TrainOptions second{dir / "part"};
    second.resume = dir / "part" / "last.pmf";
    const TrainResult tail = train(c, src, nullptr, t, second);
    bool trace_equal = full.trace.size() == head.trace.size() + tail.trace.size();
    for (std::size_t i = 0; trace_equal && i < full.trace.size(); ++i) {
        const StepRecord& other = i < head.trace.size() ? head.trace[i] : tail.trace[i - head.trace.size()];
        trace_equal = other.loss == full.trace[i].loss && other.lr == full.trace[i].lr;
    }

    oracle::write_square_dataset(dir / "input", 3, 40, 48);
    const std::string ckpt = (dir / "full" / "last.pmf").string();
    std::ostringstream sink;
    auto* old_out = std::cout.rdbuf(sink.rdbuf());
    const int c1 = run_cli({"predict", "--checkpoint", ckpt, "--input", (dir / "input").string(), "--out",
                            (dir / "p1").string()});
    const int c2 = run_cli({"predict", "--checkpoint", ckpt, "--input", (dir / "input").string(), "--out",
                            (dir / "p2").string()});
    std::cout.rdbuf(old_out);
    int identical = 0;
    for (int i = 0; i < 3; ++i) {
        const std::string name = "s" + std::to_string(i) + ".png";
        const std::string x = slurp(dir / "p1" / name);
        identical += !x.empty() && x == slurp(dir / "p2" / name) ? 1 : 0;
    }
    return {c1 == 0 && c2 == 0 && identical == 3 && trace_equal,
            fmt("predict_exit=%d,%d identical_pngs=%d/3 resume_trace_equal=%d (%zu steps)", c1, c2, identical,
                trace_equal, full.trace.size())};
}

} // namespace

int main()
{
    criterion("AC1", ac1);
    criterion("AC2", ac2);
    criterion("AC3", ac3);
    criterion("AC4", ac4);
    criterion("AC5", ac5);
    criterion("AC6", ac6);
    criterion("AC7", ac7);
    criterion("AC8", ac8);
    criterion("AC9", ac9);
    criterion("AC10", ac10);
    std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
    return failures == 0 ? 0 : 1;
}
