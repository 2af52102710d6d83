#include "patchcast/synth.hpp"

#include <cmath>
#include <numbers>

namespace patchcast {

void SynthSpec::validate() const {
    if (length < 1) throw ConfigError("synth length must be >= 1");
    if (variables < 1) throw ConfigError("synth variables must be >= 1");
    if (periods.size() != amplitudes.size()) {
        throw ConfigError("synth periods and amplitudes must have the same length");
    }
    for (Index p : periods) {
        if (p < 2) throw ConfigError("synth periods must be >= 2, got " + std::to_string(p));
    }
    if (!(noise_sigma >= 0.0)) throw ConfigError("synth noise_sigma must be >= 0");
    if (coupling.size() > 0 && coupling.rows() != variables) {
        throw ConfigError("synth coupling must have one row per variable");
    }
    if (!latent_lags.empty() && static_cast<Index>(latent_lags.size()) != variables) {
        throw ConfigError("synth latent_lags must have one entry per variable");
    }
    for (Index lag : latent_lags) {
        if (lag < 0) throw ConfigError("synth latent lags must be >= 0");
    }
    if (!(latent_ar >= 0.0 && latent_ar < 1.0)) throw ConfigError("synth latent_ar must lie in [0, 1)");
}

Matrix<double> generate(const SynthSpec& spec) {
    spec.validate();
    const Index n = spec.length;
    const Index m_count = spec.variables;
    Matrix<double> x = Matrix<double>::Zero(n, m_count);

    Rng phase_rng(spec.seed, 0);
    for (Index m = 0; m < m_count; ++m) {
        for (std::size_t j = 0; j < spec.periods.size(); ++j) {
            const double phase = phase_rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double w = 2.0 * std::numbers::pi / static_cast<double>(spec.periods[j]);
            for (Index t = 0; t < n; ++t) {
                x(t, m) += spec.amplitudes[j] * std::sin(w * static_cast<double>(t) + phase);
            }
        }
        for (Index t = 0; t < n; ++t) x(t, m) += spec.trend_slope * static_cast<double>(t);
    }

    if (spec.coupling.size() > 0) {
        Index max_lag = 0;
        for (Index lag : spec.latent_lags) max_lag = std::max(max_lag, lag);
        const Index k_count = spec.coupling.cols();
        const Index span = n + max_lag;
        // latent index u corresponds to time u - max_lag
        Matrix<double> latents(span, k_count);
        Rng latent_rng(spec.seed, 1);
        const double rho = spec.latent_ar;
        const double innov = std::sqrt(1.0 - rho * rho);
        for (Index k = 0; k < k_count; ++k) {
            double s = latent_rng.normal();
            for (Index u = 0; u < span; ++u) {
                latents(u, k) = s;
                s = rho * s + innov * latent_rng.normal();
            }
        }
        for (Index m = 0; m < m_count; ++m) {
            const Index lag = spec.latent_lags.empty() ? 0 : spec.latent_lags[static_cast<std::size_t>(m)];
            for (Index t = 0; t < n; ++t) {
                x(t, m) += spec.coupling.row(m).dot(latents.row(t + max_lag - lag));
            }
        }
    }

    if (spec.noise_sigma > 0.0) {
        Rng noise_rng(spec.seed, 2);
        for (Index t = 0; t < n; ++t) {
            for (Index m = 0; m < m_count; ++m) x(t, m) += spec.noise_sigma * noise_rng.normal();
        }
    }
    return x;
}

Series generate_series(const SynthSpec& spec) {
    Series s;
    s.values = generate(spec);
    for (Index m = 0; m < spec.variables; ++m) s.names.push_back("v" + std::to_string(m));
    s.timestamps.reserve(static_cast<std::size_t>(spec.length));
    for (Index t = 0; t < spec.length; ++t) s.timestamps.push_back("t" + std::to_string(t));
    return s;
}

} // namespace patchcast
