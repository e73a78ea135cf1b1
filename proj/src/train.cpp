#include "osteo/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace osteo {

namespace {

constexpr std::size_t kEvalBatch = 32;

Checkpoint snapshot(const ModelParams<float>& params, const OptimizerState<float>& opt, int epoch,
                    const std::mt19937_64& rng, double best_val) {
    Checkpoint ck;
    ck.params = params.clone();
    ck.optimizer = opt;
    ck.epoch = epoch;
    std::ostringstream os;
    os << rng;
    ck.rng_state = os.str();
    ck.best_val_accuracy = best_val;
    return ck;
}

Tensor<float> stack(const std::vector<Tensor<float>>& images, std::span<const std::size_t> idx) {
    const auto& s = images[idx[0]].shape();
    Shape shape{idx.size()};
    shape.insert(shape.end(), s.begin(), s.end());
    Tensor<float> batch(shape);
    const std::size_t each = images[idx[0]].numel();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& img = images[idx[i]];
        if (img.shape() != s) throw DimensionError("batch images differ in shape");
        std::copy(img.data().begin(), img.data().end(), batch.data().begin() + static_cast<long>(i * each));
    }
    return batch;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (checkpoint_every < 0) throw ConfigError("checkpoint cadence must be non-negative");
    if (loader_threads < 0) throw ConfigError("loader threads must be non-negative");
    augmentation.validate();
}

void write_epoch_log(const std::vector<EpochLog>& log, std::ostream& os) {
    os << "epoch,train_loss,val_acc,val_mae,val_qwk\n";
    for (const auto& e : log) {
        os << e.epoch << ',' << e.train_loss << ',' << e.val_acc << ',' << e.val_mae << ',' << e.val_qwk << '\n';
    }
}

ImageSet load_split(const DatasetManifest& manifest, Split split, int size, int channels, int threads) {
    const auto idx = manifest.indices(split);
    std::vector<std::optional<Tensor<float>>> decoded(idx.size());
    std::vector<std::string> errors(idx.size());
    auto work = [&](std::size_t k) {
        try {
            decoded[k] = load_image(manifest.resolve(manifest.records[idx[k]]), size, channels);
        } catch (const Error& e) {
            errors[k] = e.what();
        }
    };
    if (threads <= 0) {
        for (std::size_t k = 0; k < idx.size(); ++k) work(k);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t k; (k = next.fetch_add(1)) < idx.size();) work(k);
            });
        }
        for (auto& th : pool) th.join();
    }
    ImageSet set;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& rec = manifest.records[idx[k]];
        if (!decoded[k]) {
            set.errors.push_back(rec.path + ": " + errors[k]);
            continue;
        }
        set.images.push_back(std::move(*decoded[k]));
        set.grades.push_back(rec.kl_grade);
        set.paths.push_back(rec.path);
    }
    return set;
}

template <typename T>
void sgd_step(ModelParams<T>& params, OptimizerState<T>& state, double learning_rate, double momentum) {
    const T lr = static_cast<T>(learning_rate), mom = static_cast<T>(momentum);
    for (auto& [name, p] : params.parameters) {
        auto& buf = state.momentum[name];
        if (buf.empty()) buf.assign(p.numel(), T(0));
        if (buf.size() != p.numel()) {
            throw DimensionError("sgd_step: momentum buffer for '" + name + "' has " + std::to_string(buf.size()) +
                                 " entries, parameter has " + std::to_string(p.numel()));
        }
        const auto g = p.grad();
        if (!g.empty() && g.size() != p.numel()) throw DimensionError("sgd_step: gradient shape mismatch for " + name);
        auto data = p.data();
        for (std::size_t i = 0; i < buf.size(); ++i) {
            buf[i] = mom * buf[i] + (g.empty() ? T(0) : g[i]);
            data[i] -= lr * buf[i];
        }
    }
}

template void sgd_step<float>(ModelParams<float>&, OptimizerState<float>&, double, double);
template void sgd_step<double>(ModelParams<double>&, OptimizerState<double>&, double, double);

Tensor<float> predict_probabilities(ModelParams<float>& params, const std::vector<Tensor<float>>& images) {
    NoGradGuard guard;
    Tensor<float> out(Shape{std::max<std::size_t>(images.size(), 1), static_cast<std::size_t>(kNumGrades)});
    std::vector<std::size_t> all(images.size());
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t start = 0; start < images.size(); start += kEvalBatch) {
        const std::size_t end = std::min(images.size(), start + kEvalBatch);
        auto batch = stack(images, std::span(all).subspan(start, end - start));
        auto probs = softmax(forward(params, batch, ForwardOptions{false, false, false}).logits);
        std::copy(probs.data().begin(), probs.data().end(), out.data().begin() + static_cast<long>(start * kNumGrades));
    }
    return out;
}

Evaluation evaluate(ModelParams<float>& params, const ImageSet& set) {
    if (set.size() == 0) throw DataError("nothing to evaluate: split has no decodable images");
    const auto probs = predict_probabilities(params, set.images);
    Evaluation ev;
    ev.truth = set.grades;
    for (std::size_t i = 0; i < set.size(); ++i) {
        ev.predicted.push_back(argmax_grade(probs.data().subspan(i * kNumGrades, kNumGrades)));
    }
    ev.confusion = confusion(ev.truth, ev.predicted);
    ev.report = evaluate_predictions(ev.truth, ev.predicted);
    return ev;
}

Evaluation evaluate(const Checkpoint& checkpoint, const DatasetManifest& manifest, Split split,
                    const NetworkConfig* expected, int threads) {
    const auto& cfg = checkpoint.params.config;
    if (expected && config_hash(*expected) != config_hash(cfg)) {
        throw ConfigError("checkpoint config hash does not match the requested network configuration");
    }
    auto params = checkpoint.params.clone();
    const auto set = load_split(manifest, split, cfg.input_size, cfg.input_channels, threads);
    return evaluate(params, set);
}

TrainResult train(const NetworkConfig& network, const TrainConfig& config, const ImageSet& train_set,
                  const ImageSet& val_set, const Checkpoint* resume, const EpochCallback& on_epoch) {
    config.validate();
    network.validate();
    if (train_set.size() == 0) throw DataError("training split is empty");
    if (val_set.size() == 0) throw DataError("validation split is empty");

    std::mt19937_64 rng(config.seed);
    ModelParams<float> params;
    OptimizerState<float> opt;
    int start_epoch = 1;
    double best_val = -1.0;
    if (resume) {
        if (config_hash(resume->params.config) != config_hash(network)) {
            throw ConfigError("resume checkpoint was trained with a different network configuration");
        }
        params = resume->params.clone();
        opt = resume->optimizer;
        std::istringstream is(resume->rng_state);
        is >> rng;
        if (!is) throw CheckpointError("resume checkpoint carries an unreadable RNG state");
        start_epoch = resume->epoch + 1;
        best_val = resume->best_val_accuracy;
    } else {
        params = build_network<float>(network, config.seed);
    }

    TrainResult result;
    // With a zero learning rate the model is frozen, batchnorm statistics included.
    const bool update_stats = config.learning_rate > 0.0;
    const auto batch = static_cast<std::size_t>(config.batch_size);
    for (int epoch = start_epoch; epoch <= config.epochs; ++epoch) {
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        shuffle_indices(order, rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::vector<Tensor<float>> imgs;
            std::vector<int> labels;
            for (std::size_t k = start; k < end; ++k) {
                imgs.push_back(augment(train_set.images[order[k]], config.augmentation, rng));
                labels.push_back(train_set.grades[order[k]]);
            }
            std::vector<std::size_t> local(imgs.size());
            std::iota(local.begin(), local.end(), 0);
            auto x = stack(imgs, local);
            auto fwd = forward(params, x, ForwardOptions{true, update_stats, false});
            auto probs = softmax(fwd.logits);
            auto loss = config.loss == LossKind::ordinal ? ordinal_loss(probs, labels, config.penalty)
                                                         : cross_entropy_loss(probs, labels);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                std::ostringstream os;
                os << "non-finite loss at epoch " << epoch << ", batch starting at " << start << "; records:";
                for (std::size_t k = start; k < end; ++k) {
                    os << ' ' << train_set.paths[order[k]] << "(grade " << train_set.grades[order[k]] << ")";
                }
                throw NumericError(os.str());
            }
            backward(loss);
            sgd_step(params, opt, config.learning_rate, config.momentum);
            params.zero_grad();
            loss_sum += value * static_cast<double>(end - start);
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / static_cast<double>(train_set.size());
        const auto val = evaluate(params, val_set);
        log.val_acc = val.report.accuracy;
        log.val_mae = val.report.mae;
        log.val_qwk = val.report.qwk;
        if (config.track_train_accuracy) log.train_acc = evaluate(params, train_set).report.accuracy;
        result.log.push_back(log);

        const bool improved = log.val_acc > best_val;
        if (improved) best_val = log.val_acc;
        result.last = snapshot(params, opt, epoch, rng, best_val);
        if (improved) result.best = result.last;
        if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && !config.checkpoint_dir.empty()) {
            save_checkpoint(result.last, config.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"));
        }
        if (on_epoch) on_epoch(log);
        if (config.track_train_accuracy && config.stop_at_train_accuracy > 0.0 &&
            log.train_acc >= config.stop_at_train_accuracy) {
            break;
        }
    }
    if (result.log.empty()) {
        result.last = snapshot(params, opt, start_epoch - 1, rng, best_val);
    }
    return result;
}

TrainResult train(const NetworkConfig& network, const TrainConfig& config, const DatasetManifest& manifest,
                  const Checkpoint* resume, const EpochCallback& on_epoch) {
    const auto train_set =
        load_split(manifest, Split::train, network.input_size, network.input_channels, config.loader_threads);
    const auto val_set = load_split(manifest, Split::val, network.input_size, network.input_channels, config.loader_threads);
    return train(network, config, train_set, val_set, resume, on_epoch);
}

}  // namespace osteo
