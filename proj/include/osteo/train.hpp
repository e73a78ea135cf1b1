#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "osteo/backbone.hpp"
#include "osteo/checkpoint.hpp"
#include "osteo/data.hpp"
#include "osteo/metrics.hpp"
#include "osteo/ordinal.hpp"

namespace osteo {

enum class LossKind { ordinal, cross_entropy };

struct TrainConfig {
    double learning_rate = 5e-4;
    double momentum = 0.9;
    int epochs = 30;
    int batch_size = 24;
    LossKind loss = LossKind::ordinal;
    PenaltyMatrix penalty = default_penalty_matrix();
    AugmentationPolicy augmentation;
    std::uint64_t seed = 0;
    /// Write `epoch_<n>.ckpt` into checkpoint_dir every n epochs (0 = never).
    int checkpoint_every = 0;
    std::filesystem::path checkpoint_dir;
    /// Evaluate the train split each epoch (eval mode, no augmentation).
    bool track_train_accuracy = false;
    /// Stop once tracked train accuracy reaches this value (<= 0 disables).
    double stop_at_train_accuracy = 0.0;
    /// Decoder threads for image preloading (0 = load on the calling thread).
    int loader_threads = 0;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_acc = 0.0;
    double val_mae = 0.0;
    double val_qwk = 0.0;
    double train_acc = std::numeric_limits<double>::quiet_NaN();

    /// Field-wise; untracked (NaN) train accuracies compare equal.
    bool operator==(const EpochLog& o) const {
        const bool acc = train_acc == o.train_acc || (std::isnan(train_acc) && std::isnan(o.train_acc));
        return epoch == o.epoch && train_loss == o.train_loss && val_acc == o.val_acc && val_mae == o.val_mae &&
               val_qwk == o.val_qwk && acc;
    }
};

/// CSV `epoch,train_loss,val_acc,val_mae,val_qwk`.
void write_epoch_log(const std::vector<EpochLog>& log, std::ostream& os);

/// Decoded, normalized images of one split, in manifest order.
struct ImageSet {
    std::vector<Tensor<float>> images;
    std::vector<int> grades;
    std::vector<std::string> paths;
    /// Records that failed to decode, skipped.
    std::vector<std::string> errors;

    std::size_t size() const { return images.size(); }
};

ImageSet load_split(const DatasetManifest& manifest, Split split, int size, int channels, int threads = 0);

/// buffer = momentum·buffer + grad; param −= lr·buffer. Parameters without a
/// gradient count as zero-gradient.
template <typename T>
void sgd_step(ModelParams<T>& params, OptimizerState<T>& state, double learning_rate, double momentum);

struct TrainResult {
    /// Highest validation accuracy seen in this run; empty when resuming and
    /// no epoch beat the resumed record.
    std::optional<Checkpoint> best;
    Checkpoint last;
    std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train(const NetworkConfig& network, const TrainConfig& config, const ImageSet& train_set,
                  const ImageSet& val_set, const Checkpoint* resume = nullptr, const EpochCallback& on_epoch = {});

TrainResult train(const NetworkConfig& network, const TrainConfig& config, const DatasetManifest& manifest,
                  const Checkpoint* resume = nullptr, const EpochCallback& on_epoch = {});

struct Evaluation {
    MetricsReport report;
    ConfusionMatrix confusion;
    std::vector<int> truth;
    std::vector<int> predicted;
};

/// Eval-mode class probabilities, N×5.
Tensor<float> predict_probabilities(ModelParams<float>& params, const std::vector<Tensor<float>>& images);

Evaluation evaluate(ModelParams<float>& params, const ImageSet& set);

/// Rejects checkpoints whose config hash differs from `expected` when given.
Evaluation evaluate(const Checkpoint& checkpoint, const DatasetManifest& manifest, Split split,
                    const NetworkConfig* expected = nullptr, int threads = 0);

}  // namespace osteo
