#pragma once

#include "patchcast/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace patchcast {

using Index = Eigen::Index;

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class Derived>
std::string shape_of(const Eigen::EigenBase<Derived>& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.derived().array().isFinite().all();
}

/// Seedable 64-bit generator. A (seed, stream) pair selects an independent
/// sequence so that parameter init, shuffling and dropout never share draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0)
        : engine_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}

    std::uint64_t next() { return engine_(); }

    // 53 random mantissa bits, uniform on [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; the second variate is kept for the next call.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    // Uniform integer on [0, n) by rejection, n > 0.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t draw = next();
        while (draw >= limit) draw = next();
        return draw % n;
    }

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Mutable view of one parameter tensor and its gradient buffer.
template <class S>
struct ParamView {
    std::string name;
    Index rows = 0;
    Index cols = 0;
    std::span<S> value;
    std::span<S> grad;
};

/// Fully connected layer y = x·Wᵀ + b over a batch of row vectors.
///
/// Gradients accumulate across backward calls until zero_grad(). The input of
/// the most recent forward is cached for backward; a layer applied to a
/// stacked batch is therefore called once per forward pass.
template <class S>
class LinearLayer {
public:
    Matrix<S> weight;  // out × in
    Vector<S> bias;    // out
    Matrix<S> grad_weight;
    Vector<S> grad_bias;

    LinearLayer() = default;

    LinearLayer(Index in_features, Index out_features)
        : weight(Matrix<S>::Zero(out_features, in_features)),
          bias(Vector<S>::Zero(out_features)),
          grad_weight(Matrix<S>::Zero(out_features, in_features)),
          grad_bias(Vector<S>::Zero(out_features)) {}

    Index in_features() const { return weight.cols(); }
    Index out_features() const { return weight.rows(); }

    Matrix<S> forward(const Matrix<S>& x) {
        if (x.cols() != in_features()) {
            throw DimensionError("linear forward: input " + shape_of(x) + " does not match weight " +
                                 shape_of(weight));
        }
        input_ = x;
        has_input_ = true;
        Matrix<S> out(x.rows(), out_features());
        out.noalias() = x * weight.transpose();
        out.rowwise() += bias.transpose();
        return out;
    }

    // Returns the gradient w.r.t. the cached input unless need_input_grad is
    // false, in which case an empty matrix is returned.
    Matrix<S> backward(const Matrix<S>& grad_out, bool need_input_grad = true) {
        if (!has_input_) throw StateError("linear backward called without a cached forward");
        if (grad_out.rows() != input_.rows() || grad_out.cols() != out_features()) {
            throw DimensionError("linear backward: gradient " + shape_of(grad_out) +
                                 " does not match output " + std::to_string(input_.rows()) + "x" +
                                 std::to_string(out_features()));
        }
        grad_weight.noalias() += grad_out.transpose() * input_;
        grad_bias += grad_out.colwise().sum().transpose();
        if (!need_input_grad) return {};
        Matrix<S> grad_in(grad_out.rows(), in_features());
        grad_in.noalias() = grad_out * weight;
        return grad_in;
    }

    void zero_grad() {
        grad_weight.setZero();
        grad_bias.setZero();
    }

    void clear_cache() {
        input_.resize(0, 0);
        has_input_ = false;
    }

    void collect(const std::string& prefix, std::vector<ParamView<S>>& out) {
        out.push_back({prefix + ".weight", weight.rows(), weight.cols(),
                       std::span<S>(weight.data(), static_cast<std::size_t>(weight.size())),
                       std::span<S>(grad_weight.data(), static_cast<std::size_t>(grad_weight.size()))});
        out.push_back({prefix + ".bias", bias.rows(), 1,
                       std::span<S>(bias.data(), static_cast<std::size_t>(bias.size())),
                       std::span<S>(grad_bias.data(), static_cast<std::size_t>(grad_bias.size()))});
    }

private:
    Matrix<S> input_;
    bool has_input_ = false;
};

enum class ActivationKind { gelu, relu };

// GELU, tanh approximation.
template <class S>
S gelu(S x) {
    constexpr S c = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
    constexpr S k = static_cast<S>(0.044715);
    return static_cast<S>(0.5) * x * (static_cast<S>(1) + std::tanh(c * (x + k * x * x * x)));
}

template <class S>
S gelu_derivative(S x) {
    constexpr S c = static_cast<S>(0.7978845608028654);
    constexpr S k = static_cast<S>(0.044715);
    const S t = std::tanh(c * (x + k * x * x * x));
    return static_cast<S>(0.5) * (static_cast<S>(1) + t) +
           static_cast<S>(0.5) * x * (static_cast<S>(1) - t * t) * c *
               (static_cast<S>(1) + static_cast<S>(3) * k * x * x);
}

template <class S>
class Activation {
public:
    explicit Activation(ActivationKind kind = ActivationKind::gelu) : kind_(kind) {}

    ActivationKind kind() const { return kind_; }

    Matrix<S> forward(const Matrix<S>& x) {
        input_ = x;
        has_input_ = true;
        if (kind_ == ActivationKind::relu) return x.cwiseMax(S(0));
        return x.unaryExpr([](S v) { return gelu(v); });
    }

    Matrix<S> backward(const Matrix<S>& grad) const {
        if (!has_input_) throw StateError("activation backward called without a cached forward");
        if (grad.rows() != input_.rows() || grad.cols() != input_.cols()) {
            throw DimensionError("activation backward: gradient " + shape_of(grad) +
                                 " does not match input " + shape_of(input_));
        }
        if (kind_ == ActivationKind::relu) {
            return grad.cwiseProduct(
                input_.unaryExpr([](S v) { return v > S(0) ? S(1) : S(0); }));
        }
        return grad.cwiseProduct(input_.unaryExpr([](S v) { return gelu_derivative(v); }));
    }

private:
    ActivationKind kind_;
    Matrix<S> input_;
    bool has_input_ = false;
};

inline void check_dropout_rate(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
}

/// Inverted dropout: survivors are scaled by 1/(1-rate) during training so the
/// inference path is the identity.
template <class S>
class Dropout {
public:
    explicit Dropout(double rate = 0.0) : rate_(rate) { check_dropout_rate(rate); }

    double rate() const { return rate_; }

    Matrix<S> forward(const Matrix<S>& x, Rng& rng, bool training) {
        active_ = training && rate_ > 0.0;
        if (!active_) return x;
        const S scale = static_cast<S>(1.0 / (1.0 - rate_));
        mask_.resize(x.rows(), x.cols());
        for (Index i = 0; i < mask_.size(); ++i) {
            mask_.data()[i] = rng.uniform() < rate_ ? S(0) : scale;
        }
        return x.cwiseProduct(mask_);
    }

    Matrix<S> backward(const Matrix<S>& grad) const {
        if (!active_) return grad;
        return grad.cwiseProduct(mask_);
    }

private:
    double rate_;
    Matrix<S> mask_;
    bool active_ = false;
};

/// Odd kernel no larger than 2·length−1, so replicate padding of (k−1)/2 on
/// either side never reaches past a mirrored copy of the series.
inline void check_pool_kernel(Index kernel, Index length) {
    if (kernel < 1 || kernel % 2 == 0) {
        throw ConfigError("pool kernel must be odd and >= 1, got " + std::to_string(kernel));
    }
    if (length > 0 && kernel > 2 * length - 1) {
        throw ConfigError("pool kernel " + std::to_string(kernel) + " exceeds 2*length-1 for length " +
                          std::to_string(length));
    }
}

/// Moving average with a centred window of `kernel` samples and edge-value
/// padding, so the output has the input's length and constants are preserved.
template <class Derived>
Vector<typename Derived::Scalar> avgpool1d_same(const Eigen::MatrixBase<Derived>& x, Index kernel) {
    using S = typename Derived::Scalar;
    const Index n = x.size();
    check_pool_kernel(kernel, n);
    const Index half = (kernel - 1) / 2;
    Vector<S> out(n);
    for (Index i = 0; i < n; ++i) {
        S sum = S(0);
        for (Index o = -half; o <= half; ++o) sum += x(std::clamp<Index>(i + o, 0, n - 1));
        out(i) = sum / static_cast<S>(kernel);
    }
    return out;
}

/// avgpool1d_same applied to every row.
template <class S>
Matrix<S> avgpool_rows(const Matrix<S>& x, Index kernel) {
    const Index n = x.cols();
    check_pool_kernel(kernel, n);
    const Index half = (kernel - 1) / 2;
    const S inv = S(1) / static_cast<S>(kernel);
    Matrix<S> out(x.rows(), n);
    for (Index r = 0; r < x.rows(); ++r) {
        const S* src = x.data() + r * n;
        S* dst = out.data() + r * n;
        for (Index i = 0; i < n; ++i) {
            S sum = S(0);
            for (Index o = -half; o <= half; ++o) sum += src[std::clamp<Index>(i + o, 0, n - 1)];
            dst[i] = sum * inv;
        }
    }
    return out;
}

/// Adjoint of avgpool_rows: every output position spreads its gradient over
/// the (clamped) input positions of its window.
template <class S>
Matrix<S> avgpool_rows_backward(const Matrix<S>& grad, Index kernel) {
    const Index n = grad.cols();
    check_pool_kernel(kernel, n);
    const Index half = (kernel - 1) / 2;
    const S inv = S(1) / static_cast<S>(kernel);
    Matrix<S> out = Matrix<S>::Zero(grad.rows(), n);
    for (Index r = 0; r < grad.rows(); ++r) {
        const S* src = grad.data() + r * n;
        S* dst = out.data() + r * n;
        for (Index i = 0; i < n; ++i) {
            const S g = src[i] * inv;
            for (Index o = -half; o <= half; ++o) dst[std::clamp<Index>(i + o, 0, n - 1)] += g;
        }
    }
    return out;
}

template <class S>
struct LossResult {
    double value = 0.0;
    Matrix<S> grad;
};

template <class S>
LossResult<S> mse_loss(const Matrix<S>& pred, const Matrix<S>& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw DimensionError("mse loss: prediction " + shape_of(pred) + " vs target " +
                             shape_of(target));
    }
    LossResult<S> result;
    const Index count = pred.size();
    if (count == 0) {
        result.grad = Matrix<S>::Zero(pred.rows(), pred.cols());
        return result;
    }
    const Matrix<S> diff = pred - target;
    double sum = 0.0;
    for (Index i = 0; i < count; ++i) {
        const double d = static_cast<double>(diff.data()[i]);
        sum += d * d;
    }
    result.value = sum / static_cast<double>(count);
    result.grad = diff * static_cast<S>(2.0 / static_cast<double>(count));
    return result;
}

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    Index worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t entries_checked = 0;
};

/// Entry-wise relative error with an absolute floor so that entries whose
/// true gradient is ~0 are judged on absolute error instead.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

/// Compares analytic gradients against central differences for every entry of
/// every parameter.
///
/// `objective(true)` must zero gradients, run forward and backward, and return
/// the loss; `objective(false)` runs forward only. The objective must be
/// deterministic (dropout off).
template <class Objective>
GradCheckResult grad_check(Objective&& objective, std::span<const ParamView<double>> params,
                           double eps = 1e-5) {
    if (!(eps > 0.0) || !std::isfinite(eps)) {
        throw ConfigError("grad_check eps must be positive and finite, got " + std::to_string(eps));
    }
    const double base = objective(true);
    if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss at the base point");

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.emplace_back(p.grad.begin(), p.grad.end());

    GradCheckResult result;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& p = params[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + eps;
            const double plus = objective(false);
            p.value[i] = saved - eps;
            const double minus = objective(false);
            p.value[i] = saved;
            if (!std::isfinite(plus) || !std::isfinite(minus)) {
                throw NumericError("grad_check: non-finite loss perturbing " + p.name + "[" +
                                   std::to_string(i) + "]");
            }
            const double numeric = (plus - minus) / (2.0 * eps);
            const double err = relative_error(analytic[k][i], numeric);
            ++result.entries_checked;
            if (err > result.max_relative_error || result.worst_index < 0) {
                result.max_relative_error = err;
                result.worst_parameter = p.name;
                result.worst_index = static_cast<Index>(i);
                result.analytic = analytic[k][i];
                result.numeric = numeric;
            }
        }
    }
    return result;
}

} // namespace patchcast
