#pragma once

#include "patchcast/data.hpp"
#include "patchcast/numerics.hpp"

#include <cstdint>
#include <vector>

namespace patchcast {

/// Synthetic multivariate series with closed-form structure:
///
///   x_m(t) = slope·t + Σ_j a_j·sin(2πt/period_j + φ_{m,j})
///          + Σ_k C[m][k]·s_k(t − lag_m) + σ·ε_m(t)
///
/// where s_k are independent unit-variance AR(1) latents shared across
/// variables through the coupling matrix C. A variable with a positive lag
/// sees the latents late, so its future is visible in the history of a
/// variable with a smaller lag.
struct SynthSpec {
    Index length = 4000;
    Index variables = 3;
    std::vector<Index> periods{24};
    std::vector<double> amplitudes{1.0};
    double trend_slope = 0.0;
    double noise_sigma = 0.0;
    Matrix<double> coupling;       // variables × latents; empty: no latent term
    std::vector<Index> latent_lags;  // per variable; empty: all zero
    double latent_ar = 0.95;
    std::uint64_t seed = 7;

    void validate() const;
};

Matrix<double> generate(const SynthSpec& spec);

// Same generator as a loadable Series with hourly-style timestamps.
Series generate_series(const SynthSpec& spec);

} // namespace patchcast
