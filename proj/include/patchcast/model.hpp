#pragma once

#include "patchcast/numerics.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace patchcast {

/// Architectural hyperparameters of the patch-MLP forecaster.
///
/// `resolved()` turns a user-facing config into the one the network is built
/// from: the single-scale ablation keeps only the first patch scale, per-scale
/// embedding widths are derived from `d_model` when not given explicitly, and
/// `d_model` becomes the exact width of the concatenated embedding.
struct ModelConfig {
    Index lookback = 96;
    Index horizon = 96;
    Index variables = 7;
    std::vector<Index> patch_scales{4, 8, 12, 24};
    std::vector<Index> scale_dims;  // empty: derived from d_model
    Index d_model = 512;
    Index num_blocks = 2;
    double hidden_mult = 2.0;
    Index pool_kernel = 25;
    double dropout_rate = 0.1;
    ActivationKind activation = ActivationKind::gelu;
    bool use_decompose = true;
    bool use_mpe = true;
    bool use_dot_product = true;
    bool use_inter_variable = true;
    bool use_instance_norm = true;
    // Decompose the raw window instead of the latent (conventional variant).
    bool decompose_input = false;
    Index input_pool_kernel = 25;

    ModelConfig resolved() const;
    void validate() const;

    Index patch_count(std::size_t scale) const { return lookback / patch_scales[scale]; }
    Index hidden_width(Index width) const;

    bool operator==(const ModelConfig&) const = default;
};

// Each scale gets an equal share d_model/|P| of the latent, rounded to a whole
// number of patch embeddings; leftover width goes to the first scale.
std::vector<Index> derive_scale_dims(Index lookback, const std::vector<Index>& scales, Index d_model);

std::vector<std::pair<std::string, std::string>> model_config_entries(const ModelConfig& config);

// Returns false for keys that are not model keys.
bool set_model_config_entry(ModelConfig& config, std::string_view key, std::string_view value);

std::string_view to_string(ActivationKind kind);
ActivationKind parse_activation(std::string_view value);

template <class S>
struct InstanceStats {
    Vector<S> mean;
    Vector<S> stddev;
};

/// Per-variable window standardization of an L×M history.
template <class S>
std::pair<Matrix<S>, InstanceStats<S>> instance_normalize(const Matrix<S>& x) {
    if (x.rows() < 2) {
        throw DimensionError("instance normalization needs at least 2 time steps, got " + shape_of(x));
    }
    InstanceStats<S> stats;
    stats.mean = x.colwise().mean().transpose();
    Matrix<S> centred = x.rowwise() - stats.mean.transpose();
    const Vector<S> var = centred.array().square().colwise().mean().transpose();
    stats.stddev = (var.array() + static_cast<S>(1e-5)).sqrt();
    centred.array().rowwise() /= stats.stddev.transpose().array();
    return {std::move(centred), std::move(stats)};
}

template <class S>
Matrix<S> instance_denormalize(const Matrix<S>& pred, const InstanceStats<S>& stats) {
    if (pred.cols() != stats.mean.size()) {
        throw DimensionError("instance denormalization: prediction " + shape_of(pred) + " vs " +
                             std::to_string(stats.mean.size()) + " variables");
    }
    Matrix<S> out = pred;
    out.array().rowwise() *= stats.stddev.transpose().array();
    out.rowwise() += stats.mean.transpose();
    return out;
}

/// Transposes each R×C block of a (groups·R)×C stack, giving (groups·C)×R.
/// Applying it twice with the same group count restores the input.
template <class S>
Matrix<S> transpose_blocks(const Matrix<S>& x, Index groups) {
    if (groups <= 0 || x.rows() % groups != 0) {
        throw DimensionError("transpose_blocks: " + shape_of(x) + " is not divisible into " +
                             std::to_string(groups) + " groups");
    }
    const Index r = x.rows() / groups;
    const Index c = x.cols();
    Matrix<S> out(groups * c, r);
    for (Index g = 0; g < groups; ++g) out.block(g * c, 0, c, r) = x.block(g * r, 0, r, c).transpose();
    return out;
}

namespace detail {

// Splits every row of `rows` (R×L) into L/patch patches, embeds them and
// flattens back to R×(N·d).
template <class S>
Matrix<S> embed_scale(const Matrix<S>& rows, Index patch, LinearLayer<S>& layer) {
    const Index n = rows.cols() / patch;
    const Matrix<S> patches = Eigen::Map<const Matrix<S>>(rows.data(), rows.rows() * n, patch);
    const Matrix<S> embedded = layer.forward(patches);
    return Eigen::Map<const Matrix<S>>(embedded.data(), rows.rows(), n * layer.out_features());
}

} // namespace detail

/// Embeds one length-L series at every patch scale and concatenates the
/// flattened per-scale latents in scale order.
template <class S>
Vector<S> multi_scale_patch_embed(const Vector<S>& x, const std::vector<Index>& scales,
                                  std::vector<LinearLayer<S>>& layers) {
    if (scales.size() != layers.size()) {
        throw DimensionError("patch embedding: " + std::to_string(scales.size()) + " scales but " +
                             std::to_string(layers.size()) + " layers");
    }
    const Matrix<S> row = x.transpose();
    std::vector<Matrix<S>> parts;
    Index width = 0;
    for (std::size_t i = 0; i < scales.size(); ++i) {
        if (scales[i] <= 0 || x.size() % scales[i] != 0) {
            throw ConfigError("patch size " + std::to_string(scales[i]) + " does not divide length " +
                              std::to_string(x.size()));
        }
        parts.push_back(detail::embed_scale(row, scales[i], layers[i]));
        width += parts.back().cols();
    }
    Vector<S> out(width);
    Index offset = 0;
    for (const auto& p : parts) {
        out.segment(offset, p.cols()) = p.row(0).transpose();
        offset += p.cols();
    }
    return out;
}

/// Batched multi-scale patch embedding: each input row is one variable's
/// history, each output row its d_model latent.
template <class S>
class MultiScaleEmbedding {
public:
    MultiScaleEmbedding() = default;

    MultiScaleEmbedding(Index lookback, std::vector<Index> scales, const std::vector<Index>& dims)
        : lookback_(lookback), scales_(std::move(scales)) {
        if (scales_.size() != dims.size()) {
            throw ConfigError("patch embedding needs one width per scale");
        }
        for (std::size_t i = 0; i < scales_.size(); ++i) {
            if (scales_[i] <= 0 || lookback_ % scales_[i] != 0) {
                throw ConfigError("patch size " + std::to_string(scales_[i]) + " does not divide lookback " +
                                  std::to_string(lookback_));
            }
            layers_.emplace_back(scales_[i], dims[i]);
            width_ += (lookback_ / scales_[i]) * dims[i];
        }
    }

    Index output_width() const { return width_; }
    const std::vector<Index>& scales() const { return scales_; }
    std::vector<LinearLayer<S>>& layers() { return layers_; }
    const std::vector<LinearLayer<S>>& layers() const { return layers_; }

    Matrix<S> forward(const Matrix<S>& rows) {
        if (rows.cols() != lookback_) {
            throw DimensionError("patch embedding: input " + shape_of(rows) + " expects " +
                                 std::to_string(lookback_) + " columns");
        }
        Matrix<S> out(rows.rows(), width_);
        Index offset = 0;
        for (std::size_t i = 0; i < scales_.size(); ++i) {
            const Matrix<S> part = detail::embed_scale(rows, scales_[i], layers_[i]);
            out.middleCols(offset, part.cols()) = part;
            offset += part.cols();
        }
        return out;
    }

    // The input is data, so only parameter gradients are produced.
    void backward(const Matrix<S>& grad) {
        if (grad.cols() != width_) {
            throw DimensionError("patch embedding backward: gradient " + shape_of(grad) + " expects " +
                                 std::to_string(width_) + " columns");
        }
        Index offset = 0;
        for (std::size_t i = 0; i < scales_.size(); ++i) {
            const Index n = lookback_ / scales_[i];
            const Index d = layers_[i].out_features();
            const Matrix<S> slice = grad.middleCols(offset, n * d);
            const Matrix<S> per_patch = Eigen::Map<const Matrix<S>>(slice.data(), grad.rows() * n, d);
            layers_[i].backward(per_patch, false);
            offset += n * d;
        }
    }

    void collect(const std::string& prefix, std::vector<ParamView<S>>& out) {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            layers_[i].collect(prefix + ".p" + std::to_string(scales_[i]), out);
        }
    }

private:
    Index lookback_ = 0;
    Index width_ = 0;
    std::vector<Index> scales_;
    std::vector<LinearLayer<S>> layers_;
};

/// Latent vectors of every variable and their moving-average decomposition.
template <class S>
struct LatentState {
    Matrix<S> full;
    Matrix<S> smooth;
    Matrix<S> residual;
};

template <class S>
LatentState<S> feature_decompose(const Matrix<S>& x, Index kernel) {
    LatentState<S> state;
    state.full = x;
    state.smooth = avgpool_rows(x, kernel);
    state.residual = x - state.smooth;
    return state;
}

/// Two-layer MLP over the latent axis of each variable, parameters shared
/// across variables, with its own skip connection.
template <class S>
class IntraVariableMlp {
public:
    LinearLayer<S> fc1;
    LinearLayer<S> fc2;

    IntraVariableMlp() = default;

    IntraVariableMlp(Index width, Index hidden, ActivationKind activation, double dropout)
        : fc1(width, hidden), fc2(hidden, width), act_(activation), drop1_(dropout), drop2_(dropout) {}

    Matrix<S> forward(const Matrix<S>& z, Rng& rng, bool training) {
        Matrix<S> h = act_.forward(fc1.forward(z));
        h = fc2.forward(drop1_.forward(h, rng, training));
        return drop2_.forward(h, rng, training) + z;
    }

    Matrix<S> backward(const Matrix<S>& grad) {
        Matrix<S> g = fc2.backward(drop2_.backward(grad));
        g = fc1.backward(act_.backward(drop1_.backward(g)));
        return g + grad;
    }

    void collect(const std::string& prefix, std::vector<ParamView<S>>& out) {
        fc1.collect(prefix + ".fc1", out);
        fc2.collect(prefix + ".fc2", out);
    }

private:
    Activation<S> act_;
    Dropout<S> drop1_;
    Dropout<S> drop2_;
};

/// Two-layer MLP across variables at each latent position. Its output V is
/// merged with the sub-layer input U either multiplicatively (V ⊙ U) or
/// additively (V + U).
template <class S>
class InterVariableMlp {
public:
    LinearLayer<S> fc1;
    LinearLayer<S> fc2;

    InterVariableMlp() = default;

    InterVariableMlp(Index variables, Index hidden, ActivationKind activation, double dropout,
                     bool dot_product)
        : fc1(variables, hidden),
          fc2(hidden, variables),
          variables_(variables),
          dot_product_(dot_product),
          act_(activation),
          drop_(dropout) {}

    bool dot_product() const { return dot_product_; }

    // u: (B·M)×d, B samples stacked with M variable rows each.
    Matrix<S> forward(const Matrix<S>& u, Rng& rng, bool training) {
        if (variables_ <= 0 || u.rows() % variables_ != 0) {
            throw DimensionError("inter-variable MLP: input " + shape_of(u) + " is not a stack of " +
                                 std::to_string(variables_) + "-variable samples");
        }
        groups_ = u.rows() / variables_;
        Matrix<S> h = act_.forward(fc1.forward(transpose_blocks(u, groups_)));
        h = fc2.forward(drop_.forward(h, rng, training));
        u_ = u;
        v_ = transpose_blocks(h, groups_);
        if (dot_product_) return v_.cwiseProduct(u_);
        return v_ + u_;
    }

    Matrix<S> backward(const Matrix<S>& grad) {
        const Matrix<S> grad_v = dot_product_ ? Matrix<S>(grad.cwiseProduct(u_)) : grad;
        Matrix<S> grad_u = dot_product_ ? Matrix<S>(grad.cwiseProduct(v_)) : grad;
        Matrix<S> g = fc2.backward(transpose_blocks(grad_v, groups_));
        g = fc1.backward(act_.backward(drop_.backward(g)));
        grad_u += transpose_blocks(g, groups_);
        return grad_u;
    }

    void collect(const std::string& prefix, std::vector<ParamView<S>>& out) {
        fc1.collect(prefix + ".fc1", out);
        fc2.collect(prefix + ".fc2", out);
    }

private:
    Index variables_ = 0;
    bool dot_product_ = true;
    Activation<S> act_;
    Dropout<S> drop_;
    Index groups_ = 0;
    Matrix<S> u_;
    Matrix<S> v_;
};

/// One MLP layer: intra-variable MLP, then (when mixing) the inter-variable
/// MLP plus a skip from the block input.
template <class S>
class MlpBlock {
public:
    IntraVariableMlp<S> intra;
    InterVariableMlp<S> inter;  // empty unless mixing

    MlpBlock() = default;

    MlpBlock(Index width, Index variables, const ModelConfig& config, bool mixing)
        : intra(width, config.hidden_width(width), config.activation, config.dropout_rate),
          mixing_(mixing) {
        if (mixing_) {
            inter = InterVariableMlp<S>(variables, config.hidden_width(variables), config.activation,
                                        config.dropout_rate, config.use_dot_product);
        }
    }

    bool mixing() const { return mixing_; }

    Matrix<S> forward(const Matrix<S>& z, Rng& rng, bool training) {
        Matrix<S> u = intra.forward(z, rng, training);
        if (!mixing_) return u;
        return inter.forward(u, rng, training) + z;
    }

    Matrix<S> backward(const Matrix<S>& grad) {
        if (!mixing_) return intra.backward(grad);
        return intra.backward(inter.backward(grad)) + grad;
    }

    void collect(const std::string& prefix, std::vector<ParamView<S>>& out) {
        intra.collect(prefix + ".intra", out);
        if (mixing_) inter.collect(prefix + ".inter", out);
    }

private:
    bool mixing_ = false;
};

/// The patch-MLP forecaster.
///
/// Histories (L×M each) are optionally instance-normalized, embedded per
/// variable at several patch scales, split into a smooth latent and a residual
/// latent, pushed through two block stacks (channel mixing on the smooth path,
/// channel-independent on the residual path) and mapped to the horizon by one
/// linear head per path. The two head outputs are summed.
template <class S>
class PatchMLP {
public:
    explicit PatchMLP(const ModelConfig& config) : config_(config.resolved()) {
        config_.validate();
        const auto& c = config_;
        embed_ = MultiScaleEmbedding<S>(c.lookback, c.patch_scales, c.scale_dims);
        if (c.decompose_input) {
            embed_remainder_ = MultiScaleEmbedding<S>(c.lookback, c.patch_scales, c.scale_dims);
        }
        const Index width = c.d_model;
        for (Index i = 0; i < c.num_blocks; ++i) {
            smooth_blocks_.emplace_back(width, c.variables, c, c.use_inter_variable);
        }
        smooth_head_ = LinearLayer<S>(width, c.horizon);
        if (has_residual_path()) {
            for (Index i = 0; i < c.num_blocks; ++i) residual_blocks_.emplace_back(width, c.variables, c, false);
            residual_head_ = LinearLayer<S>(width, c.horizon);
        }
    }

    const ModelConfig& config() const { return config_; }

    bool has_residual_path() const { return config_.use_decompose || config_.decompose_input; }

    void set_training(bool training) { training_ = training; }
    bool training() const { return training_; }
    void seed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed, 2); }

    MultiScaleEmbedding<S>& embedding() { return embed_; }
    MultiScaleEmbedding<S>& remainder_embedding() { return embed_remainder_; }
    std::vector<MlpBlock<S>>& smooth_blocks() { return smooth_blocks_; }
    std::vector<MlpBlock<S>>& residual_blocks() { return residual_blocks_; }
    LinearLayer<S>& smooth_head() { return smooth_head_; }
    LinearLayer<S>& residual_head() { return residual_head_; }

    // Latent state of the most recent forward; rows are (sample, variable).
    const LatentState<S>& last_latent() const { return latent_; }

    // Test hook: scales the head gradient of the smooth path so gradient
    // checks have a negative control.
    void set_backward_fault(bool enabled) { backward_fault_ = enabled; }

    std::vector<Matrix<S>> forward(const std::vector<Matrix<S>>& batch) {
        const auto& c = config_;
        const Index b_count = static_cast<Index>(batch.size());
        for (const auto& x : batch) {
            if (x.rows() != c.lookback || x.cols() != c.variables) {
                throw DimensionError("forward: history " + shape_of(x) + " expects " +
                                     std::to_string(c.lookback) + "x" + std::to_string(c.variables));
            }
        }
        const Index m = c.variables;
        batch_size_ = b_count;
        stats_.clear();
        Matrix<S> rows(b_count * m, c.lookback);
        for (Index b = 0; b < b_count; ++b) {
            if (c.use_instance_norm) {
                auto [normed, stats] = instance_normalize(batch[static_cast<std::size_t>(b)]);
                rows.middleRows(b * m, m) = normed.transpose();
                stats_.push_back(std::move(stats));
            } else {
                rows.middleRows(b * m, m) = batch[static_cast<std::size_t>(b)].transpose();
            }
        }

        Matrix<S> smooth;
        Matrix<S> residual;
        if (c.decompose_input) {
            const Matrix<S> trend = avgpool_rows(rows, c.input_pool_kernel);
            smooth = embed_.forward(trend);
            residual = embed_remainder_.forward(rows - trend);
            latent_ = {};
        } else if (c.use_decompose) {
            latent_ = feature_decompose(embed_.forward(rows), c.pool_kernel);
            smooth = latent_.smooth;
            residual = latent_.residual;
        } else {
            latent_ = {};
            latent_.full = embed_.forward(rows);
            smooth = latent_.full;
        }

        for (auto& block : smooth_blocks_) smooth = block.forward(smooth, dropout_rng_, training_);
        Matrix<S> y = smooth_head_.forward(smooth);
        if (has_residual_path()) {
            for (auto& block : residual_blocks_) residual = block.forward(residual, dropout_rng_, training_);
            y += residual_head_.forward(residual);
        }

        std::vector<Matrix<S>> out;
        out.reserve(batch.size());
        for (Index b = 0; b < b_count; ++b) {
            Matrix<S> pred = y.middleRows(b * m, m).transpose();
            if (c.use_instance_norm) pred = instance_denormalize(pred, stats_[static_cast<std::size_t>(b)]);
            out.push_back(std::move(pred));
        }
        return out;
    }

    Matrix<S> forward_one(const Matrix<S>& history) { return forward({history}).front(); }

    // grads: dLoss/dForecast, one T×M matrix per sample of the last forward.
    void backward(const std::vector<Matrix<S>>& grads) {
        const auto& c = config_;
        const Index m = c.variables;
        if (static_cast<Index>(grads.size()) != batch_size_) {
            throw StateError("backward: " + std::to_string(grads.size()) + " gradients for a batch of " +
                             std::to_string(batch_size_));
        }
        Matrix<S> grad_y(batch_size_ * m, c.horizon);
        for (Index b = 0; b < batch_size_; ++b) {
            const auto& g = grads[static_cast<std::size_t>(b)];
            if (g.rows() != c.horizon || g.cols() != m) {
                throw DimensionError("backward: gradient " + shape_of(g) + " expects " +
                                     std::to_string(c.horizon) + "x" + std::to_string(m));
            }
            Matrix<S> scaled = g;
            if (c.use_instance_norm) {
                scaled.array().rowwise() *= stats_[static_cast<std::size_t>(b)].stddev.transpose().array();
            }
            grad_y.middleRows(b * m, m) = scaled.transpose();
        }

        Matrix<S> grad_smooth =
            smooth_head_.backward(backward_fault_ ? Matrix<S>(grad_y * S(1.5)) : grad_y);
        for (auto it = smooth_blocks_.rbegin(); it != smooth_blocks_.rend(); ++it) {
            grad_smooth = it->backward(grad_smooth);
        }
        Matrix<S> grad_residual;
        if (has_residual_path()) {
            grad_residual = residual_head_.backward(grad_y);
            for (auto it = residual_blocks_.rbegin(); it != residual_blocks_.rend(); ++it) {
                grad_residual = it->backward(grad_residual);
            }
        }

        if (c.decompose_input) {
            embed_.backward(grad_smooth);
            embed_remainder_.backward(grad_residual);
        } else if (c.use_decompose) {
            // X_s = pool(X), X_r = X - X_s
            Matrix<S> grad_x = grad_residual + avgpool_rows_backward<S>(grad_smooth - grad_residual, c.pool_kernel);
            embed_.backward(grad_x);
        } else {
            embed_.backward(grad_smooth);
        }
    }

    std::vector<ParamView<S>> parameters() {
        std::vector<ParamView<S>> out;
        embed_.collect("embed", out);
        if (config_.decompose_input) embed_remainder_.collect("embed_remainder", out);
        for (std::size_t i = 0; i < smooth_blocks_.size(); ++i) {
            smooth_blocks_[i].collect("smooth.block" + std::to_string(i), out);
        }
        smooth_head_.collect("smooth.head", out);
        if (has_residual_path()) {
            for (std::size_t i = 0; i < residual_blocks_.size(); ++i) {
                residual_blocks_[i].collect("residual.block" + std::to_string(i), out);
            }
            residual_head_.collect("residual.head", out);
        }
        return out;
    }

    void zero_grad() {
        for (auto& p : parameters()) std::fill(p.grad.begin(), p.grad.end(), S(0));
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (const auto& p : parameters()) n += p.value.size();
        return n;
    }

private:
    ModelConfig config_;
    MultiScaleEmbedding<S> embed_;
    MultiScaleEmbedding<S> embed_remainder_;
    std::vector<MlpBlock<S>> smooth_blocks_;
    std::vector<MlpBlock<S>> residual_blocks_;
    LinearLayer<S> smooth_head_;
    LinearLayer<S> residual_head_;

    Rng dropout_rng_{0, 2};
    bool training_ = false;
    bool backward_fault_ = false;

    Index batch_size_ = 0;
    std::vector<InstanceStats<S>> stats_;
    LatentState<S> latent_;
};

/// Uniform(−a, a) weights with a = 1/√fan_in, zero biases, drawn in
/// parameter order.
template <class S>
void init_params(PatchMLP<S>& model, Rng& rng) {
    for (auto& p : model.parameters()) {
        const bool is_bias = p.cols == 1 && p.name.ends_with(".bias");
        if (is_bias) {
            std::fill(p.value.begin(), p.value.end(), S(0));
            continue;
        }
        const double a = 1.0 / std::sqrt(static_cast<double>(p.cols));
        for (auto& v : p.value) v = static_cast<S>(rng.uniform(-a, a));
    }
}

template <class S>
using ParamSnapshot = std::vector<std::vector<S>>;

template <class S>
ParamSnapshot<S> snapshot_params(PatchMLP<S>& model) {
    ParamSnapshot<S> out;
    for (const auto& p : model.parameters()) out.emplace_back(p.value.begin(), p.value.end());
    return out;
}

template <class S>
void restore_params(PatchMLP<S>& model, const ParamSnapshot<S>& snapshot) {
    auto params = model.parameters();
    if (params.size() != snapshot.size()) throw StateError("parameter snapshot does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].value.size() != snapshot[i].size()) {
            throw StateError("parameter snapshot shape mismatch for " + params[i].name);
        }
        std::copy(snapshot[i].begin(), snapshot[i].end(), params[i].value.begin());
    }
}

/// Binary checkpoint: magic, format version, scalar width, the model config as
/// key=value text, then every parameter with its name and shape header.
template <class S>
void save_checkpoint(const std::filesystem::path& path, PatchMLP<S>& model);

template <class S>
PatchMLP<S> load_checkpoint(const std::filesystem::path& path);

extern template void save_checkpoint<float>(const std::filesystem::path&, PatchMLP<float>&);
extern template void save_checkpoint<double>(const std::filesystem::path&, PatchMLP<double>&);
extern template PatchMLP<float> load_checkpoint<float>(const std::filesystem::path&);
extern template PatchMLP<double> load_checkpoint<double>(const std::filesystem::path&);

} // namespace patchcast
