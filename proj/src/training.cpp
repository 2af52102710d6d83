#include "patchcast/training.hpp"
#include "patchcast/text.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace patchcast {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
    if (train_stride < 1) throw ConfigError("train_stride must be >= 1");
}

std::vector<std::pair<std::string, std::string>> train_config_entries(const TrainConfig& c) {
    return {
        {"lr", text::format_double(c.lr)},
        {"batch_size", std::to_string(c.batch_size)},
        {"max_epochs", std::to_string(c.max_epochs)},
        {"patience", std::to_string(c.patience)},
        {"seed", std::to_string(c.seed)},
        {"adam_beta1", text::format_double(c.beta1)},
        {"adam_beta2", text::format_double(c.beta2)},
        {"adam_eps", text::format_double(c.adam_eps)},
        {"max_steps", std::to_string(c.max_steps)},
        {"train_stride", std::to_string(c.train_stride)},
        {"deterministic", c.deterministic ? "true" : "false"},
    };
}

bool set_train_config_entry(TrainConfig& c, std::string_view key, std::string_view value) {
    if (key == "lr") c.lr = text::parse_double(value, key);
    else if (key == "batch_size") c.batch_size = text::parse_int(value, key);
    else if (key == "max_epochs") c.max_epochs = text::parse_int(value, key);
    else if (key == "patience") c.patience = text::parse_int(value, key);
    else if (key == "seed") c.seed = text::parse_uint(value, key);
    else if (key == "adam_beta1") c.beta1 = text::parse_double(value, key);
    else if (key == "adam_beta2") c.beta2 = text::parse_double(value, key);
    else if (key == "adam_eps") c.adam_eps = text::parse_double(value, key);
    else if (key == "max_steps") c.max_steps = text::parse_int(value, key);
    else if (key == "train_stride") c.train_stride = text::parse_int(value, key);
    else if (key == "deterministic") c.deterministic = text::parse_bool(value, key);
    else return false;
    return true;
}

std::string config_fingerprint(const ModelConfig& model, const TrainConfig& train) {
    std::string blob;
    for (const auto& [k, v] : model_config_entries(model)) blob += k + "=" + v + "\n";
    for (const auto& [k, v] : train_config_entries(train)) blob += k + "=" + v + "\n";
    return text::hex64(text::fnv1a(blob));
}

template <class S>
void Adam<S>::step(const std::vector<ParamView<S>>& params) {
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.value.size(), S(0));
            v_.emplace_back(p.value.size(), S(0));
        }
    }
    if (m_.size() != params.size()) throw StateError("adam: parameter list changed between steps");
    for (const auto& p : params) {
        for (S g : p.grad) {
            if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in " + p.name);
        }
    }
    ++t_;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const S c1 = static_cast<S>(1.0 - std::pow(b1, static_cast<double>(t_)));
    const S c2 = static_cast<S>(1.0 - std::pow(b2, static_cast<double>(t_)));
    const S lr = static_cast<S>(config_.lr);
    const S eps = static_cast<S>(config_.adam_eps);
    const S sb1 = static_cast<S>(b1);
    const S sb2 = static_cast<S>(b2);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& m = m_[k];
        auto& v = v_[k];
        const auto& p = params[k];
        if (m.size() != p.value.size()) throw StateError("adam: shape of " + p.name + " changed");
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const S g = p.grad[i];
            m[i] = sb1 * m[i] + (S(1) - sb1) * g;
            v[i] = sb2 * v[i] + (S(1) - sb2) * g * g;
            const S m_hat = m[i] / c1;
            const S v_hat = v[i] / c2;
            p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
            p.grad[i] = S(0);
        }
    }
}

EarlyStopping::EarlyStopping(Index patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
    if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopping::observe(double val_loss) {
    ++epochs_;
    if (val_loss < best_) {
        best_ = val_loss;
        best_epoch_ = epochs_;
        bad_epochs_ = 0;
        return true;
    }
    ++bad_epochs_;
    return false;
}

template <class S>
RunReport train(PatchMLP<S>& model, const DataSplits& data, const TrainConfig& config) {
    config.validate();
    if (data.train.empty()) throw DataError("training needs at least one train window");
    if (data.val.empty()) throw DataError("training needs at least one validation window");
    if (data.test.empty()) throw DataError("training needs at least one test window");
    const auto started = std::chrono::steady_clock::now();

    RunReport report;
    report.seed = config.seed;
    report.fingerprint = config_fingerprint(model.config(), config);
    report.train_windows = data.train.size();
    report.val_windows = data.val.size();
    report.test_windows = data.test.size();
    report.parameter_count = model.parameter_count();

    Rng shuffle_rng(config.seed, 1);
    model.seed_dropout(config.seed);
    model.zero_grad();
    Adam<S> adam(config);
    EarlyStopping stopper(config.patience);
    ParamSnapshot<S> best = snapshot_params(model);

    std::vector<Index> order(static_cast<std::size_t>(data.train.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::vector<Matrix<S>> histories;
    std::vector<Matrix<S>> futures;
    std::vector<Matrix<S>> grads;
    bool step_cap_hit = false;

    for (Index epoch = 1; epoch <= config.max_epochs && !step_cap_hit; ++epoch) {
        shuffle_rng.shuffle(order);
        model.set_training(true);
        double loss_sum = 0.0;
        Index batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            histories.clear();
            futures.clear();
            for (std::size_t i = start; i < end; ++i) {
                histories.push_back(data.train.history<S>(order[i]));
                futures.push_back(data.train.future<S>(order[i]));
            }
            const auto preds = model.forward(histories);
            const double count = static_cast<double>(histories.size()) * static_cast<double>(futures[0].size());
            double sq = 0.0;
            grads.clear();
            for (std::size_t i = 0; i < preds.size(); ++i) {
                Matrix<S> diff = preds[i] - futures[i];
                for (Index j = 0; j < diff.size(); ++j) {
                    const double d = static_cast<double>(diff.data()[j]);
                    sq += d * d;
                }
                grads.push_back(diff * static_cast<S>(2.0 / count));
            }
            const double loss = sq / count;
            if (!std::isfinite(loss)) {
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches + 1));
            }
            model.backward(grads);
            try {
                adam.step(model.parameters());
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batches + 1));
            }
            loss_sum += loss;
            ++batches;
            if (config.max_steps > 0 && adam.steps() >= config.max_steps) {
                step_cap_hit = true;
                break;
            }
        }
        const double val = evaluate(model, data.val).mse;
        report.epochs.push_back({epoch, loss_sum / static_cast<double>(std::max<Index>(batches, 1)), val});
        if (stopper.observe(val)) best = snapshot_params(model);
        if (stopper.should_stop()) {
            report.stopped_early = true;
            break;
        }
    }

    restore_params(model, best);
    model.set_training(false);
    report.steps = adam.steps();
    report.best_epoch = stopper.best_epoch();
    report.val_mse = stopper.best();
    const Metrics test = evaluate(model, data.test);
    report.test_mse = test.mse;
    report.test_mae = test.mae;
    report.train_mse = evaluate(model, data.train).mse;
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return report;
}

template class Adam<float>;
template class Adam<double>;
template RunReport train<float>(PatchMLP<float>&, const DataSplits&, const TrainConfig&);
template RunReport train<double>(PatchMLP<double>&, const DataSplits&, const TrainConfig&);

} // namespace patchcast
