#include "pmf/training.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <thread>

#include "pmf/config.hpp"
#include "pmf/image_io.hpp"
#include "pmf/metrics.hpp"
#include "pmf/tensor_file.hpp"

namespace pmf {

namespace {

constexpr const char* kMomentumPrefix = "optimizer.momentum.";

/// Single-producer queue holding at most `capacity` batches. The producer
/// forwards its exception to the consumer.
class BatchQueue {
public:
    explicit BatchQueue(std::size_t capacity) : capacity_(capacity) {}

    void push(Batch batch)
    {
        std::unique_lock lock(mutex_);
        not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
        if (closed_) {
            return;
        }
        items_.push_back(std::move(batch));
        not_empty_.notify_one();
    }

    void fail(std::exception_ptr error)
    {
        std::lock_guard lock(mutex_);
        error_ = std::move(error);
        not_empty_.notify_all();
    }

    Batch pop()
    {
        std::unique_lock lock(mutex_);
        not_empty_.wait(lock, [&] { return !items_.empty() || error_; });
        if (items_.empty()) {
            std::rethrow_exception(error_);
        }
        Batch b = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return b;
    }

    void close()
    {
        std::lock_guard lock(mutex_);
        closed_ = true;
        not_full_.notify_all();
    }

private:
    std::size_t capacity_;
    std::deque<Batch> items_;
    std::exception_ptr error_;
    bool closed_ = false;
    std::mutex mutex_;
    std::condition_variable not_full_;
    std::condition_variable not_empty_;
};

Batch make_batch(const SampleSource& source, const std::vector<std::size_t>& indices, const TrainConfig& config,
                 int epoch)
{
    std::vector<SamplePair> samples;
    samples.reserve(indices.size());
    for (const std::size_t index : indices) {
        SamplePair s = source.get(index);
        if (config.augment) {
            std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch), index));
            s = augment(s, rng);
        }
        samples.push_back(std::move(s));
    }
    return collate(samples);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, const TrainConfig& config, int epoch)
{
    const std::vector<std::size_t> order = epoch_order(count, config.seed, epoch);
    std::vector<std::vector<std::size_t>> batches;
    const auto batch = static_cast<std::size_t>(config.batch_size);
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
        const std::size_t end = std::min(order.size(), begin + batch);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

nlohmann::json state_to_json(const TrainState& s)
{
    return {{"epoch", s.epoch}, {"global_step", s.global_step}, {"best_val", s.best_val}, {"best_epoch", s.best_epoch}};
}

Checkpoint checkpoint_info(const TensorFile& file, const std::filesystem::path& path)
{
    const auto& m = file.metadata;
    if (!m.contains("model") || !m.contains("train") || !m.contains("state")) {
        throw DataError(path.string() + " is not a model checkpoint");
    }
    Checkpoint c;
    c.model = model_config_from_json(m.at("model"));
    c.train = train_config_from_json(m.at("train"));
    const auto& s = m.at("state");
    c.state.epoch = s.value("epoch", 0);
    c.state.global_step = s.value("global_step", 0LL);
    c.state.best_val = s.value("best_val", -1.0);
    c.state.best_epoch = s.value("best_epoch", -1);
    c.metadata = m;
    return c;
}

void restore(const TensorFile& file, const std::filesystem::path& path, PmfNet<float>& model, Sgd<float>* optimizer)
{
    std::vector<std::string> problems;
    for (const auto& entry : model.registry().state()) {
        const Tensor<float>* t = file.find(entry.name);
        if (t == nullptr) {
            problems.push_back(entry.name + " missing");
            continue;
        }
        if (!(t->shape() == entry.var.shape())) {
            problems.push_back(entry.name + " has shape " + to_string(t->shape()) + ", model expects " +
                               to_string(entry.var.shape()));
            continue;
        }
        Var<float> v = entry.var;
        v.mutable_value() = *t;
    }
    if (!problems.empty()) {
        std::string msg = "checkpoint " + path.string() + " does not fit the model:";
        for (const auto& p : problems) {
            msg += "\n  " + p;
        }
        throw DataError(msg);
    }
    if (optimizer != nullptr) {
        const std::string prefix = kMomentumPrefix;
        for (const auto& [name, tensor] : file.tensors) {
            if (name.rfind(prefix, 0) == 0) {
                optimizer->set_momentum_buffer(name.substr(prefix.size()), tensor);
            }
        }
    }
}

void write_log_line(std::ostream& log, const StepRecord& r)
{
    const nlohmann::json j{{"step", r.step}, {"lr", r.lr}, {"loss", r.loss}, {"epoch", r.epoch}};
    log << j.dump() << '\n';
    log.flush();
}

} // namespace

void validate(const TrainConfig& c)
{
    if (c.epochs < 0) {
        throw ConfigError("epochs must be non-negative");
    }
    if (c.batch_size <= 0) {
        throw ConfigError("batch_size must be positive");
    }
    if (!(c.lr0 > 0.0) || !std::isfinite(c.lr0)) {
        throw ConfigError("lr0 must be positive");
    }
    if (c.momentum < 0.0 || c.momentum >= 1.0) {
        throw ConfigError("momentum must lie in [0, 1)");
    }
    if (c.weight_decay < 0.0) {
        throw ConfigError("weight_decay must be non-negative");
    }
    if (!(c.poly_power > 0.0)) {
        throw ConfigError("poly_power must be positive");
    }
    if (c.input_size <= 0 || c.input_size % 16 != 0) {
        throw ConfigError("input_size must be a positive multiple of 16");
    }
    if (c.prefetch < 0) {
        throw ConfigError("prefetch must be non-negative");
    }
}

void apply_seed_override(TrainConfig& config)
{
    const char* env = std::getenv("PMF_SEED");
    if (env == nullptr || *env == '\0') {
        return;
    }
    const std::string text(env);
    std::uint64_t seed = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), seed);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ConfigError("PMF_SEED must be an unsigned integer, got '" + text + "'");
    }
    config.seed = seed;
}

double lr_schedule(long long step, long long max_step, const TrainConfig& config)
{
    if (max_step <= 0 || step >= max_step) {
        return 0.0;
    }
    const double progress = static_cast<double>(std::max(step, 0LL)) / static_cast<double>(max_step);
    return config.lr0 * std::pow(1.0 - progress, config.poly_power);
}

template <typename Scalar>
Var<Scalar> deep_supervision_loss(const SaliencyOutput<Scalar>& output, const Tensor<Scalar>& gt)
{
    if (output.scales.empty()) {
        throw ContractError("deep_supervision_loss: no scale outputs");
    }
    Var<Scalar> total;
    for (const auto& scale : output.scales) {
        if (!scale.logits.value().all_finite()) {
            throw NumericalError("non-finite logits at level " + std::to_string(scale.level));
        }
        if (!(scale.logits.shape() == gt.shape())) {
            throw ContractError("deep_supervision_loss: logits " + to_string(scale.logits.shape()) +
                                " vs target " + to_string(gt.shape()));
        }
        Var<Scalar> term = bce_with_logits(scale.logits, gt);
        total = total.defined() ? total + term : term;
    }
    return total;
}

template <typename Scalar>
Sgd<Scalar>::Sgd(const ParameterRegistry<Scalar>& registry, double momentum, double weight_decay)
    : params_(registry.parameters()), momentum_(static_cast<Scalar>(momentum)),
      weight_decay_(static_cast<Scalar>(weight_decay))
{
}

template <typename Scalar>
void Sgd<Scalar>::step(double lr)
{
    const auto rate = static_cast<Scalar>(lr);
    for (auto& p : params_) {
        if (!p.var.has_grad()) {
            continue;
        }
        auto& value = p.var.mutable_value().array();
        typename Tensor<Scalar>::Storage g = p.var.grad().array() + weight_decay_ * value;
        auto it = buffers_.find(p.name);
        if (it == buffers_.end()) {
            it = buffers_.emplace(p.name, Tensor<Scalar>(p.var.shape(), std::move(g))).first;
        } else {
            it->second.array() = momentum_ * it->second.array() + g;
        }
        if (rate != Scalar(0)) {
            value -= rate * it->second.array();
        }
    }
}

template <typename Scalar>
void Sgd<Scalar>::set_momentum_buffer(const std::string& name, Tensor<Scalar> value)
{
    for (const auto& p : params_) {
        if (p.name == name) {
            if (!(p.var.shape() == value.shape())) {
                throw DataError("momentum buffer " + name + " has shape " + to_string(value.shape()));
            }
            buffers_[name] = std::move(value);
            return;
        }
    }
    throw DataError("momentum buffer for unknown parameter " + name);
}

template Var<float> deep_supervision_loss(const SaliencyOutput<float>&, const Tensor<float>&);
template Var<double> deep_supervision_loss(const SaliencyOutput<double>&, const Tensor<double>&);
template class Sgd<float>;
template class Sgd<double>;

void save_checkpoint(const std::filesystem::path& path, const PmfNet<float>& model, const Sgd<float>* optimizer,
                     const TrainConfig& train, const TrainState& state, const nlohmann::json& extra)
{
    TensorFile file;
    file.metadata = extra.is_object() ? extra : nlohmann::json::object();
    file.metadata["model"] = to_json(model.config());
    file.metadata["train"] = to_json(train);
    file.metadata["state"] = state_to_json(state);
    for (const auto& entry : model.registry().state()) {
        file.add(entry.name, entry.var.value());
    }
    if (optimizer != nullptr) {
        for (const auto& [name, buffer] : optimizer->momentum_buffers()) {
            file.add(kMomentumPrefix + name, buffer);
        }
    }
    write_tensor_file(path, file);
}

Checkpoint read_checkpoint_info(const std::filesystem::path& path)
{
    return checkpoint_info(read_tensor_file(path), path);
}

PmfNet<float> load_model(const std::filesystem::path& path)
{
    const TensorFile file = read_tensor_file(path);
    Checkpoint info = checkpoint_info(file, path);
    // Trained weights replace any pretrained initialisation.
    info.model.pretrained.clear();
    PmfNet<float> model(info.model);
    restore(file, path, model, nullptr);
    return model;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, PmfNet<float>& model, Sgd<float>* optimizer)
{
    const TensorFile file = read_tensor_file(path);
    Checkpoint info = checkpoint_info(file, path);
    restore(file, path, model, optimizer);
    return info;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, int epoch)
{
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) {
        order[i] = i;
    }
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(epoch), ~std::uint64_t{0}));
    for (std::size_t i = count; i > 1; --i) {
        // Rejection keeps the draw unbiased and platform-independent.
        const std::uint64_t bound = i;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t draw = rng();
        while (draw >= limit) {
            draw = rng();
        }
        const auto j = static_cast<std::size_t>(draw % bound);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

double validation_max_f(const PmfNet<float>& model, const SampleSource& source)
{
    const NoGradGuard no_grad;
    metrics::MetricAccumulator acc;
    for (std::size_t i = 0; i < source.size(); ++i) {
        const SamplePair s = source.get(i);
        if (!s.gt) {
            continue;
        }
        const SaliencyOutput<float> out = model.forward(s.rgb, s.depth, Mode::eval);
        acc.add(io::to_map(out.final.value()), io::to_map(*s.gt));
    }
    return acc.report().max_f;
}

TrainResult train(PmfNet<float>& model, const SampleSource& train_set, const SampleSource* val_set,
                  const TrainConfig& config, const TrainOptions& options)
{
    validate(config);
    if (config.input_size != model.config().input_size) {
        throw ConfigError("training input size differs from the model's");
    }
    if (train_set.size() == 0) {
        throw DataError("training set is empty");
    }
    const std::filesystem::path out_dir = options.out_dir.empty() ? std::filesystem::path(".") : options.out_dir;
    std::filesystem::create_directories(out_dir);

    const auto n = static_cast<long long>(train_set.size());
    const long long steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const long long max_step = steps_per_epoch * config.epochs;

    Sgd<float> optimizer(model.registry(), config.momentum, config.weight_decay);
    TrainResult result;
    if (!options.resume.empty()) {
        const Checkpoint resumed = load_checkpoint(options.resume, model, &optimizer);
        result.state = resumed.state;
        if (resumed.state.global_step != resumed.state.epoch * steps_per_epoch) {
            throw DataError("checkpoint step count does not match this training set and batch size");
        }
    }

    result.last_checkpoint = out_dir / "last.pmf";
    result.best_checkpoint = out_dir / "best.pmf";
    std::ofstream log(out_dir / "train_log.jsonl", options.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) {
        throw DataError("cannot write " + (out_dir / "train_log.jsonl").string());
    }

    if (result.state.epoch >= config.epochs) {
        save_checkpoint(result.last_checkpoint, model, &optimizer, config, result.state, options.metadata);
        return result;
    }

    for (int epoch = result.state.epoch; epoch < config.epochs; ++epoch) {
        const auto batches = epoch_batches(train_set.size(), config, epoch);

        BatchQueue queue(static_cast<std::size_t>(std::max(config.prefetch, 1)));
        std::jthread loader;
        if (config.prefetch > 0) {
            loader = std::jthread([&] {
                try {
                    for (const auto& indices : batches) {
                        queue.push(make_batch(train_set, indices, config, epoch));
                    }
                } catch (...) {
                    queue.fail(std::current_exception());
                }
            });
        }
        struct CloseOnExit {
            BatchQueue& q;
            ~CloseOnExit() { q.close(); }
        } close_on_exit{queue};

        for (const auto& indices : batches) {
            const Batch batch = config.prefetch > 0 ? queue.pop() : make_batch(train_set, indices, config, epoch);
            model.registry().zero_grad();
            const SaliencyOutput<float> out = model.forward(batch.rgb, batch.depth, Mode::train);
            const Var<float> loss = deep_supervision_loss(out, batch.gt);
            const double loss_value = loss.value().array()(0);
            if (!std::isfinite(loss_value)) {
                throw NumericalError("non-finite loss at step " + std::to_string(result.state.global_step + 1));
            }
            backward(loss);
            const double lr = lr_schedule(result.state.global_step, max_step, config);
            optimizer.step(lr);
            ++result.state.global_step;

            const StepRecord record{result.state.global_step, lr, loss_value, epoch};
            write_log_line(log, record);
            result.trace.push_back(record);
            if (options.on_step) {
                options.on_step(record);
            }
        }
        model.registry().zero_grad();
        result.state.epoch = epoch + 1;

        if (val_set != nullptr && val_set->size() > 0) {
            const double score = validation_max_f(model, *val_set);
            std::cerr << "epoch " << result.state.epoch << ": validation max-F " << score << '\n';
            if (score > result.state.best_val) {
                result.state.best_val = score;
                result.state.best_epoch = result.state.epoch;
                save_checkpoint(result.best_checkpoint, model, nullptr, config, result.state, options.metadata);
            }
        }
        const bool stopping = result.state.epoch >= config.epochs ||
                              (options.stop_after_epoch && result.state.epoch >= *options.stop_after_epoch);
        const bool periodic = options.checkpoint_every > 0 && result.state.epoch % options.checkpoint_every == 0;
        if (stopping || periodic) {
            save_checkpoint(result.last_checkpoint, model, &optimizer, config, result.state, options.metadata);
            if (options.keep_epoch_checkpoints) {
                save_checkpoint(out_dir / ("epoch_" + std::to_string(result.state.epoch) + ".pmf"), model,
                                &optimizer, config, result.state, options.metadata);
            }
        }
        if (stopping) {
            break;
        }
    }
    return result;
}

} // namespace pmf
