#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lcfm/model.hpp"

namespace lcfm {

// ---------------------------------------------------------------------------
// Latent-neighbourhood generation
// ---------------------------------------------------------------------------

/// How to sample around a reference latent.
struct GenSpec {
    std::optional<std::size_t> target_class;  // labels the outputs, when set
    double threshold = 0.9;       // reference-selection confidence
    double noise_scale = 0.5;     // stddev added to the selected coordinates
    double top_fraction = 0.25;   // fraction of |z|-largest coordinates to perturb
    std::size_t count = 1;        // curves per reference
    double sigma = 2.0;           // gaussian smoothing width, in samples
    std::uint64_t seed = 0;

    void validate() const {
        if (noise_scale < 0.0 || noise_scale > 1.5)
            raise(ErrorCode::BadConfig, "noise_scale must lie in [0, 1.5]");
        if (top_fraction <= 0.0 || top_fraction > 1.0)
            raise(ErrorCode::BadConfig, "top_fraction must lie in (0, 1]");
        if (sigma <= 0.0) raise(ErrorCode::BadConfig, "sigma must be positive");
    }
};

struct Reference {
    std::size_t index = 0;     // into the scanned curve list
    double confidence = 0.0;   // predicted probability of the target class
};

/// Curves whose predicted probability for the target class exceeds the
/// threshold, most confident first.
inline std::vector<Reference> select_references(const ModelParams& params,
                                                const std::vector<LightCurve>& curves,
                                                std::size_t target_class, double threshold) {
    if (target_class >= params.cfg.n_classes)
        raise(ErrorCode::VocabMismatch, "target class outside the model vocabulary");
    std::vector<Reference> refs;
    for (std::size_t i = 0; i < curves.size(); ++i) {
        auto [mu, logvar] = encode(params, curves[i]);
        const Tensor probs = classify(params, mu);
        if (probs[target_class] > threshold) refs.push_back({i, probs[target_class]});
    }
    if (refs.empty())
        raise(ErrorCode::NoReferences, "no curve exceeds confidence " + std::to_string(threshold) +
                                           "; consider lowering the threshold");
    std::sort(refs.begin(), refs.end(), [](const Reference& a, const Reference& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.index < b.index;
    });
    return refs;
}

/// Adds N(0, noise_scale^2) draws to the ceil(top_fraction * d_z) largest
/// magnitude coordinates of z; everything else is left bit-identical.
/// Selected coordinates are perturbed in index order.
inline Tensor perturb_latent(const Tensor& z_ref, double top_fraction, double noise_scale, Rng& rng) {
    const std::size_t d = z_ref.numel();
    const std::size_t k = static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(d)));
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(z_ref[a]) > std::abs(z_ref[b]);
    });
    std::vector<bool> selected(d, false);
    for (std::size_t i = 0; i < std::min(k, d); ++i) selected[order[i]] = true;

    Tensor out = z_ref;
    for (std::size_t i = 0; i < d; ++i)
        if (selected[i]) out[i] += noise_scale * rng.normal();
    return out;
}

/// Discrete gaussian kernel of radius ceil(3 sigma), normalised to sum 1,
/// reflect padding at the boundaries.
inline std::vector<double> gaussian_smooth(const std::vector<double>& values, double sigma = 2.0) {
    if (sigma <= 0.0) raise(ErrorCode::BadConfig, "sigma must be positive");
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(values.size());
    const std::ptrdiff_t radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (std::ptrdiff_t j = -radius; j <= radius; ++j) {
        kernel[j + radius] = std::exp(-static_cast<double>(j * j) / (2.0 * sigma * sigma));
        sum += kernel[j + radius];
    }
    for (double& k : kernel) k /= sum;

    auto reflect = [n](std::ptrdiff_t i) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - 1 - i;
        }
        return i;
    };
    std::vector<double> out(values.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::ptrdiff_t j = -radius; j <= radius; ++j)
            acc += kernel[j + radius] * values[reflect(i + j)];
        out[i] = acc;
    }
    return out;
}

/// encode reference (mu) -> perturb -> decode -> smooth -> clamp to [0,1],
/// `count` times. Deterministic for a given spec seed; noise_scale 0
/// reproduces smooth(decode(mu)) exactly.
inline std::vector<LightCurve> generate(const ModelParams& params, const LightCurve& reference,
                                        const GenSpec& spec) {
    spec.validate();
    auto [mu, logvar] = encode(params, reference);
    Rng rng(spec.seed);
    std::vector<LightCurve> out;
    out.reserve(spec.count);
    for (std::size_t s = 0; s < spec.count; ++s) {
        const Tensor z = perturb_latent(mu, spec.top_fraction, spec.noise_scale, rng);
        const Tensor decoded = decode(params, z);
        LightCurve c;
        c.id = reference.id + "_gen" + std::to_string(s);
        c.values = gaussian_smooth(std::vector<double>(decoded.data.begin(), decoded.data.end()), spec.sigma);
        for (double& v : c.values) v = std::clamp(v, 0.0, 1.0);
        c.label = spec.target_class;
        c.meta.generator = "latent_neighbourhood";
        c.meta.reference_id = reference.id;
        c.meta.noise_scale = spec.noise_scale;
        out.push_back(std::move(c));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parametric labelled-curve simulator
// ---------------------------------------------------------------------------

/// One waveform family with optional parameter overrides. Families cover the
/// six motion modes plus NORMAL/ANOMALY for the binary task. Curves are
/// emitted directly in standardised [0,1] units.
struct MotionFamily {
    std::string class_name;                   // INERTIAL SAFE SPIN SUN TUMBLING YAW NORMAL ANOMALY
    std::optional<double> cycles;             // dominant frequency, cycles per window
    std::optional<double> amplitude;
    std::optional<double> trend;              // net drift over the window
    std::optional<std::string> anomaly_kind;  // step | glint | periodic_onset
    std::optional<double> noise;              // observation noise stddev
};

namespace detail {

struct SimDraw {
    double cycles = 0.0, amplitude = 0.0, trend = 0.0, phase = 0.0;
};

inline void add_noise(std::vector<double>& v, double sigma, Rng& rng) {
    if (sigma <= 0.0) return;
    for (double& x : v) x += sigma * rng.normal();
}

inline void clamp01(std::vector<double>& v) {
    for (double& x : v) x = std::clamp(x, 0.0, 1.0);
}

inline double tval(std::size_t k) { return static_cast<double>(k) / static_cast<double>(kCurveLen - 1); }

/// Smooth "normal" base profiles: bell bumps, monotonic ramps, or gentle
/// low-frequency variation.
inline std::vector<double> normal_base(Rng& rng) {
    std::vector<double> v(kCurveLen);
    const int kind = static_cast<int>(rng.below(3));
    if (kind == 0) {  // bell
        const double centre = rng.uniform(0.35, 0.65);
        const double width = rng.uniform(0.12, 0.28);
        const double height = rng.uniform(0.4, 0.7);
        const double base = rng.uniform(0.1, 0.25);
        for (std::size_t k = 0; k < kCurveLen; ++k) {
            const double d = (tval(k) - centre) / width;
            v[k] = base + height * std::exp(-0.5 * d * d);
        }
    } else if (kind == 1) {  // monotonic ramp
        const double lo = rng.uniform(0.1, 0.3);
        const double hi = rng.uniform(0.6, 0.9);
        const double bend = rng.uniform(0.7, 1.6);
        const bool rising = rng.uniform() < 0.5;
        for (std::size_t k = 0; k < kCurveLen; ++k) {
            const double t = rising ? tval(k) : 1.0 - tval(k);
            v[k] = lo + (hi - lo) * std::pow(t, bend);
        }
    } else {  // gentle variation
        const double a = rng.uniform(0.08, 0.18);
        const double f = rng.uniform(0.6, 1.3);
        const double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double base = rng.uniform(0.35, 0.6);
        for (std::size_t k = 0; k < kCurveLen; ++k)
            v[k] = base + a * std::sin(2.0 * std::numbers::pi * f * tval(k) + ph) +
                   0.4 * a * std::sin(2.0 * std::numbers::pi * 1.7 * f * tval(k));
    }
    return v;
}

}  // namespace detail

/// Deterministic labelled curves for one family. Motion families are tuned
/// to occupy distinct frequency/shape bands; the anomaly family injects a
/// step change, glint spike, or abrupt periodic onset into a normal base.
inline std::vector<LightCurve> simulate_labeled(const MotionFamily& family, std::size_t n,
                                                std::uint64_t seed) {
    static const std::vector<std::string> kFamilies{"INERTIAL", "SAFE", "SPIN",   "SUN",
                                                    "TUMBLING", "YAW",  "NORMAL", "ANOMALY"};
    if (std::find(kFamilies.begin(), kFamilies.end(), family.class_name) == kFamilies.end())
        raise(ErrorCode::BadFamily, "unknown family " + family.class_name);

    Rng rng(seed);
    const auto motion = motion_vocab();
    const auto anomaly = anomaly_vocab();
    std::vector<LightCurve> out;
    out.reserve(n);

    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v(kCurveLen, 0.0);
        double noise = family.noise.value_or(0.02);
        const double pi2 = 2.0 * std::numbers::pi;

        if (family.class_name == "INERTIAL") {
            // near-constant with a small drift; observation noise must stay
            // tiny or the total-variation contract cannot hold
            const double base = rng.uniform(0.35, 0.65);
            const double trend = family.trend.value_or(rng.uniform(-0.08, 0.08));
            for (std::size_t k = 0; k < kCurveLen; ++k) v[k] = base + trend * detail::tval(k);
            noise = family.noise.value_or(0.0002);
        } else if (family.class_name == "SPIN") {
            const double cycles = family.cycles.value_or(rng.uniform(4.0, 12.0));
            const double a = family.amplitude.value_or(rng.uniform(0.15, 0.3));
            const double ph = rng.uniform(0.0, pi2);
            for (std::size_t k = 0; k < kCurveLen; ++k)
                v[k] = 0.5 + a * std::sin(pi2 * cycles * detail::tval(k) + ph);
        } else if (family.class_name == "SUN") {
            const double cycles = family.cycles.value_or(rng.uniform(0.5, 1.4));
            const double a = family.amplitude.value_or(rng.uniform(0.12, 0.25));
            const double trend = family.trend.value_or(rng.uniform(-0.15, 0.15));
            const double ph = rng.uniform(0.0, pi2);
            for (std::size_t k = 0; k < kCurveLen; ++k) {
                const double t = detail::tval(k);
                v[k] = 0.5 + a * std::sin(pi2 * cycles * t + ph) +
                       0.3 * a * std::sin(pi2 * 1.7 * cycles * t) + trend * t;
            }
        } else if (family.class_name == "SAFE") {
            const double cycles = family.cycles.value_or(rng.uniform(2.0, 3.4));
            const double a = family.amplitude.value_or(rng.uniform(0.12, 0.25));
            const double trend = family.trend.value_or(rng.uniform(-0.1, 0.1));
            const double ph = rng.uniform(0.0, pi2);
            for (std::size_t k = 0; k < kCurveLen; ++k) {
                const double t = detail::tval(k);
                v[k] = 0.5 + a * std::sin(pi2 * cycles * t + ph) +
                       0.3 * a * std::sin(pi2 * 1.9 * cycles * t + 0.7) + trend * t;
            }
        } else if (family.class_name == "TUMBLING") {
            // multi-frequency high-rate mixture
            const std::size_t parts = 3 + rng.below(2);
            std::vector<double> fs, as, phs;
            for (std::size_t p = 0; p < parts; ++p) {
                fs.push_back(rng.uniform(8.0, 28.0));
                as.push_back(rng.uniform(0.06, 0.15));
                phs.push_back(rng.uniform(0.0, pi2));
            }
            if (family.cycles) fs[0] = *family.cycles;
            for (std::size_t k = 0; k < kCurveLen; ++k) {
                double acc = 0.5;
                for (std::size_t p = 0; p < parts; ++p)
                    acc += as[p] * std::sin(pi2 * fs[p] * detail::tval(k) + phs[p]);
                v[k] = acc;
            }
        } else if (family.class_name == "YAW") {
            // phase-modulated sine: periodic but left/right asymmetric
            const double cycles = family.cycles.value_or(rng.uniform(1.5, 3.8));
            const double a = family.amplitude.value_or(rng.uniform(0.15, 0.3));
            const double beta = rng.uniform(0.6, 1.2);
            const double ph = rng.uniform(0.0, pi2);
            for (std::size_t k = 0; k < kCurveLen; ++k) {
                const double x = pi2 * cycles * detail::tval(k) + ph;
                v[k] = 0.5 + a * std::sin(x + beta * std::sin(x));
            }
        } else if (family.class_name == "NORMAL") {
            v = detail::normal_base(rng);
            noise = family.noise.value_or(0.015);
        } else {  // ANOMALY
            v = detail::normal_base(rng);
            noise = family.noise.value_or(0.015);
            static const std::vector<std::string> kinds{"step", "glint", "periodic_onset"};
            const std::string kind = family.anomaly_kind.value_or(kinds[rng.below(3)]);
            const double onset = rng.uniform(0.3, 0.8);
            const std::size_t k0 = static_cast<std::size_t>(onset * (kCurveLen - 1));
            if (kind == "step") {
                const double h = rng.uniform(0.25, 0.5) * (rng.uniform() < 0.5 ? 1.0 : -1.0);
                for (std::size_t k = k0; k < kCurveLen; ++k) v[k] += h;
            } else if (kind == "glint") {
                const double h = rng.uniform(0.3, 0.6);
                const double w = rng.uniform(1.5, 4.0);
                for (std::size_t k = 0; k < kCurveLen; ++k) {
                    const double d = (static_cast<double>(k) - static_cast<double>(k0)) / w;
                    v[k] += h * std::exp(-0.5 * d * d);
                }
            } else if (kind == "periodic_onset") {
                const double a = rng.uniform(0.2, 0.35);
                const double f = rng.uniform(10.0, 25.0);
                const double ph = rng.uniform(0.0, pi2);
                for (std::size_t k = k0; k < kCurveLen; ++k)
                    v[k] += a * std::sin(pi2 * f * detail::tval(k) + ph);
            } else {
                raise(ErrorCode::BadFamily, "unknown anomaly kind " + kind);
            }
        }

        detail::add_noise(v, noise, rng);
        detail::clamp01(v);

        LightCurve c;
        c.id = family.class_name + "_" + std::to_string(seed) + "_" + std::to_string(i);
        c.values = std::move(v);
        c.meta.generator = "simulator";
        if (family.class_name == "NORMAL" || family.class_name == "ANOMALY")
            c.label = anomaly.index_of(family.class_name);
        else
            c.label = motion.index_of(family.class_name);
        out.push_back(std::move(c));
    }
    return out;
}

/// Balanced multi-class corpus: n curves spread evenly over the families.
inline std::vector<LightCurve> simulate_corpus(const std::vector<std::string>& families, std::size_t n,
                                               std::uint64_t seed) {
    if (families.empty()) raise(ErrorCode::BadFamily, "no families requested");
    std::vector<LightCurve> out;
    const std::size_t per = n / families.size();
    const std::size_t extra = n % families.size();
    for (std::size_t f = 0; f < families.size(); ++f) {
        MotionFamily fam;
        fam.class_name = families[f];
        const std::size_t count = per + (f < extra ? 1 : 0);
        auto curves = simulate_labeled(fam, count, seed + 1000 * f + 17);
        out.insert(out.end(), curves.begin(), curves.end());
    }
    return out;
}

}  // namespace lcfm
