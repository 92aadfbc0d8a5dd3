#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "lcfm/dataio.hpp"
#include "lcfm/tensor.hpp"

namespace lcfm {

/// Fourier positional-feature configuration.
struct EncodingConfig {
    std::size_t bands = 32;    // K
    double max_freq = 64.0;    // Nyquist for 128 samples
    bool include_raw = true;   // append the raw position

    std::size_t feature_len() const { return 2 * bands + (include_raw ? 1 : 0); }
    std::size_t input_channels() const { return 1 + feature_len(); }

    void validate() const {
        if (bands < 1) raise(ErrorCode::BadConfig, "enc.bands must be >= 1");
        if (max_freq < 1.0) raise(ErrorCode::BadConfig, "enc.max_freq must be >= 1");
    }
};

/// Band frequencies, geometrically spaced from 1 to max_freq/2.
inline std::vector<double> fourier_bands(const EncodingConfig& cfg) {
    std::vector<double> f(cfg.bands);
    const double top = cfg.max_freq / 2.0;
    for (std::size_t k = 0; k < cfg.bands; ++k)
        f[k] = cfg.bands == 1 ? 1.0 : std::pow(top, static_cast<double>(k) / static_cast<double>(cfg.bands - 1));
    return f;
}

/// [sin(pi f_k p), cos(pi f_k p)] per band, optionally followed by p itself.
inline std::vector<double> fourier_encode(double p, const EncodingConfig& cfg) {
    cfg.validate();
    if (std::abs(p) > 1.0) raise(ErrorCode::PositionOutOfRange, "position must lie in [-1, 1]");
    std::vector<double> out;
    out.reserve(cfg.feature_len());
    for (double f : fourier_bands(cfg)) {
        const double a = std::numbers::pi * f * p;
        out.push_back(std::sin(a));
        out.push_back(std::cos(a));
    }
    if (cfg.include_raw) out.push_back(p);
    return out;
}

/// The M x C array consumed by cross-attention: one row per sample, column 0
/// the magnitude value, the rest the Fourier features of the row's position
/// (uniform over [-1, 1]).
inline Tensor build_input(const LightCurve& curve, const EncodingConfig& cfg) {
    cfg.validate();
    if (curve.values.size() != kCurveLen)
        raise(ErrorCode::ShapeMismatch, "curve must have exactly " + std::to_string(kCurveLen) + " values");
    const std::size_t c = cfg.input_channels();
    Tensor out({kCurveLen, c});
    for (std::size_t m = 0; m < kCurveLen; ++m) {
        const double p = -1.0 + 2.0 * static_cast<double>(m) / static_cast<double>(kCurveLen - 1);
        out.at(m, 0) = curve.values[m];
        const auto feats = fourier_encode(p, cfg);
        for (std::size_t j = 0; j < feats.size(); ++j) out.at(m, 1 + j) = feats[j];
    }
    return out;
}

}  // namespace lcfm
