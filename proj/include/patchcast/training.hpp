#pragma once

#include "patchcast/data.hpp"
#include "patchcast/model.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace patchcast {

struct TrainConfig {
    double lr = 1e-3;
    Index batch_size = 32;
    Index max_epochs = 30;
    Index patience = 5;
    std::uint64_t seed = 2024;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    Index max_steps = 0;     // optimizer step cap, 0 = none
    Index train_stride = 1;  // >1 subsamples training windows
    bool deterministic = true;

    void validate() const;
};

std::vector<std::pair<std::string, std::string>> train_config_entries(const TrainConfig& config);
bool set_train_config_entry(TrainConfig& config, std::string_view key, std::string_view value);

// Hash of the model and training configuration, 16 hex digits.
std::string config_fingerprint(const ModelConfig& model, const TrainConfig& train);

struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
};

/// Running MSE/MAE over every (sample, step, variable) entry, summed in a
/// fixed order in double precision.
class MetricsAccumulator {
public:
    template <class S>
    void add(const Matrix<S>& pred, const Matrix<S>& target) {
        if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
            throw DimensionError("metrics: prediction " + shape_of(pred) + " vs target " + shape_of(target));
        }
        for (Index i = 0; i < pred.size(); ++i) {
            const double d = static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]);
            sq_ += d * d;
            abs_ += std::abs(d);
        }
        count_ += static_cast<std::size_t>(pred.size());
    }

    std::size_t count() const { return count_; }

    Metrics result() const {
        if (count_ == 0) throw DataError("metrics requested over an empty window set");
        return {sq_ / static_cast<double>(count_), abs_ / static_cast<double>(count_)};
    }

private:
    double sq_ = 0.0;
    double abs_ = 0.0;
    std::size_t count_ = 0;
};

/// Scores `predict` (histories → forecasts, batched) on every window.
template <class S, class Predictor>
Metrics evaluate_with(Predictor&& predict, const WindowSet& windows, Index batch_size = 256) {
    if (windows.empty()) throw DataError("evaluate needs a non-empty window set");
    MetricsAccumulator acc;
    std::vector<Matrix<S>> histories;
    for (Index start = 0; start < windows.size(); start += batch_size) {
        const Index end = std::min(windows.size(), start + batch_size);
        histories.clear();
        for (Index i = start; i < end; ++i) histories.push_back(windows.history<S>(i));
        const std::vector<Matrix<S>> preds = predict(histories);
        for (Index i = start; i < end; ++i) acc.add<S>(preds[static_cast<std::size_t>(i - start)], windows.future<S>(i));
    }
    return acc.result();
}

// Inference-mode evaluation; the model's training flag is restored afterwards.
template <class S>
Metrics evaluate(PatchMLP<S>& model, const WindowSet& windows, Index batch_size = 256) {
    const bool was_training = model.training();
    model.set_training(false);
    const Metrics m = evaluate_with<S>([&](const std::vector<Matrix<S>>& h) { return model.forward(h); }, windows,
                                       batch_size);
    model.set_training(was_training);
    return m;
}

/// Adam with bias correction. Moments are kept per parameter in the order
/// given by PatchMLP::parameters(); gradients are zeroed after every step.
template <class S>
class Adam {
public:
    explicit Adam(const TrainConfig& config) : config_(config) {}

    Index steps() const { return t_; }

    void step(const std::vector<ParamView<S>>& params);

private:
    TrainConfig config_;
    Index t_ = 0;
    std::vector<std::vector<S>> m_;
    std::vector<std::vector<S>> v_;
};

/// Patience counter over validation losses; an epoch improves only on a
/// strictly lower loss.
class EarlyStopping {
public:
    explicit EarlyStopping(Index patience);

    // Returns true when this loss is the new best.
    bool observe(double val_loss);
    bool should_stop() const { return bad_epochs_ >= patience_; }
    double best() const { return best_; }
    Index best_epoch() const { return best_epoch_; }
    Index epochs() const { return epochs_; }

private:
    Index patience_;
    double best_;
    Index best_epoch_ = 0;
    Index epochs_ = 0;
    Index bad_epochs_ = 0;
};

struct EpochRecord {
    Index epoch = 0;
    double train_loss = 0.0;
    double val_mse = 0.0;
};

struct RunReport {
    double test_mse = 0.0;
    double test_mae = 0.0;
    double val_mse = 0.0;
    double train_mse = 0.0;
    std::vector<EpochRecord> epochs;
    Index best_epoch = 0;
    Index steps = 0;
    bool stopped_early = false;
    std::string fingerprint;
    std::uint64_t seed = 0;
    double seconds = 0.0;
    Index train_windows = 0;
    Index val_windows = 0;
    Index test_windows = 0;
    std::size_t parameter_count = 0;
};

/// Mini-batch Adam on the train windows with per-epoch validation and early
/// stopping. On return the model holds the best-validation parameters and the
/// report carries their train/val/test metrics.
template <class S>
RunReport train(PatchMLP<S>& model, const DataSplits& data, const TrainConfig& config);

extern template class Adam<float>;
extern template class Adam<double>;
extern template RunReport train<float>(PatchMLP<float>&, const DataSplits&, const TrainConfig&);
extern template RunReport train<double>(PatchMLP<double>&, const DataSplits&, const TrainConfig&);

} // namespace patchcast
