#include <gtest/gtest.h>

#include <complex>
#include <numbers>

#include "lcfm/anomaly.hpp"
#include "lcfm/genlab.hpp"

using namespace lcfm;

namespace {

ModelConfig tiny_config(std::size_t n_classes = 0) {
    ModelConfig cfg;
    cfg.n_latents = 4;
    cfg.latent_dim = 8;
    cfg.z_dim = 4;
    cfg.self_attn_blocks = 1;
    cfg.heads = 2;
    cfg.n_classes = n_classes;
    cfg.enc.bands = 2;
    cfg.enc.max_freq = 8.0;
    return cfg;
}

double dft_magnitude(const std::vector<double>& v, std::size_t bin) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t k = 0; k < v.size(); ++k) {
        const double a = -2.0 * std::numbers::pi * static_cast<double>(bin * k) / static_cast<double>(v.size());
        acc += v[k] * std::complex<double>(std::cos(a), std::sin(a));
    }
    return std::abs(acc);
}

}  // namespace

TEST(PerturbLatent, ZeroNoiseIsExact) {
    Rng rng(1);
    Tensor z = Tensor::vector({3.0, -2.0, 0.1, 0.0});
    Tensor out = perturb_latent(z, 0.5, 0.0, rng);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out[i], z[i]);
}

TEST(PerturbLatent, SelectsLargestMagnitudeCoordinates) {
    Rng rng(2);
    Tensor z = Tensor::vector({3.0, -2.0, 0.1, 0.0});
    Tensor out = perturb_latent(z, 0.5, 0.8, rng);  // ceil(0.5*4) = 2 -> coords {0,1}
    EXPECT_NE(out[0], z[0]);
    EXPECT_NE(out[1], z[1]);
    EXPECT_EQ(out[2], z[2]);
    EXPECT_EQ(out[3], z[3]);
}

TEST(PerturbLatent, FullFractionPerturbsEverything) {
    Rng rng(3);
    Tensor z = Tensor::vector({0.5, -0.5, 0.25, 4.0});
    Tensor out = perturb_latent(z, 1.0, 0.3, rng);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NE(out[i], z[i]);
}

TEST(GaussianSmooth, ConstantInvariant) {
    std::vector<double> flat(kCurveLen, 0.42);
    auto out = gaussian_smooth(flat, 2.0);
    for (double v : out) EXPECT_NEAR(v, 0.42, 1e-12);
}

TEST(GaussianSmooth, ImpulseReproducesKernel) {
    std::vector<double> impulse(kCurveLen, 0.0);
    impulse[64] = 1.0;
    auto out = gaussian_smooth(impulse, 2.0);
    const std::ptrdiff_t radius = 6;  // ceil(3*2)
    double sum = 0.0;
    for (std::ptrdiff_t j = -radius; j <= radius; ++j) sum += std::exp(-static_cast<double>(j * j) / 8.0);
    for (std::ptrdiff_t j = -radius; j <= radius; ++j) {
        const double expected = std::exp(-static_cast<double>(j * j) / 8.0) / sum;
        EXPECT_NEAR(out[64 + j], expected, 1e-12);
    }
    EXPECT_NEAR(out[64 - radius - 1], 0.0, 1e-12);
    EXPECT_NEAR(out[64 + radius + 1], 0.0, 1e-12);
}

TEST(GaussianSmooth, AttenuatesNyquistAlternation) {
    std::vector<double> alt(kCurveLen);
    for (std::size_t i = 0; i < kCurveLen; ++i) alt[i] = i % 2 == 0 ? 1.0 : -1.0;
    auto out = gaussian_smooth(alt, 2.0);
    double max_abs = 0.0;
    for (double v : out) max_abs = std::max(max_abs, std::abs(v));
    EXPECT_LT(max_abs, 0.2);
}

TEST(GaussianSmooth, PreservesMeanOfInteriorSignal) {
    std::vector<double> v(kCurveLen, 0.0);
    Rng rng(5);
    for (std::size_t i = 20; i < 100; ++i) v[i] = rng.uniform();  // zero near borders
    auto out = gaussian_smooth(v, 2.0);
    const double mean_in = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    const double mean_out = std::accumulate(out.begin(), out.end(), 0.0) / static_cast<double>(out.size());
    EXPECT_NEAR(mean_in, mean_out, 1e-9);
}

TEST(Generate, ZeroNoiseReproducesSmoothedDecodeExactly) {
    auto mp = init_model(tiny_config(2), 9);
    mp.vocab = anomaly_vocab();
    auto refs = simulate_labeled({.class_name = "NORMAL"}, 1, 31);
    GenSpec spec;
    spec.noise_scale = 0.0;
    spec.count = 3;
    spec.seed = 7;
    auto out = generate(mp, refs[0], spec);
    ASSERT_EQ(out.size(), 3u);

    auto [mu, logvar] = encode(mp, refs[0]);
    Tensor dec = decode(mp, mu);
    auto expected = gaussian_smooth(std::vector<double>(dec.data.begin(), dec.data.end()), spec.sigma);
    for (double& v : expected) v = std::clamp(v, 0.0, 1.0);
    for (const auto& c : out) {
        ASSERT_EQ(c.values.size(), kCurveLen);
        for (std::size_t i = 0; i < kCurveLen; ++i) EXPECT_EQ(c.values[i], expected[i]);
        EXPECT_EQ(c.meta.generator, "latent_neighbourhood");
        EXPECT_EQ(c.meta.reference_id, refs[0].id);
    }
}

TEST(Generate, DeterministicAndBounded) {
    auto mp = init_model(tiny_config(), 11);
    auto refs = simulate_labeled({.class_name = "SUN"}, 1, 33);
    GenSpec spec;
    spec.noise_scale = 0.75;
    spec.count = 5;
    spec.seed = 13;
    auto a = generate(mp, refs[0], spec);
    auto b = generate(mp, refs[0], spec);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t s = 0; s < a.size(); ++s)
        for (std::size_t i = 0; i < kCurveLen; ++i) {
            EXPECT_EQ(a[s].values[i], b[s].values[i]);
            EXPECT_GE(a[s].values[i], 0.0);
            EXPECT_LE(a[s].values[i], 1.0);
        }
}

TEST(Generate, RejectsOutOfRangeSpec) {
    GenSpec spec;
    spec.noise_scale = 2.0;
    EXPECT_THROW(spec.validate(), Error);
    spec.noise_scale = 0.5;
    spec.top_fraction = 0.0;
    EXPECT_THROW(spec.validate(), Error);
}

TEST(SelectReferences, ThresholdExtremes) {
    auto mp = init_model(tiny_config(2), 13);
    mp.vocab = anomaly_vocab();
    auto curves = simulate_labeled({.class_name = "NORMAL"}, 6, 35);
    // zero-initialised head: every curve sits at exactly p = 0.5
    auto all = select_references(mp, curves, 1, 0.0);
    EXPECT_EQ(all.size(), curves.size());
    try {
        select_references(mp, curves, 1, 1.0);
        FAIL() << "expected NoReferences";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NoReferences);
    }
}

TEST(Simulate, SpinPeriodSixteenHasDominantBinEight) {
    MotionFamily fam;
    fam.class_name = "SPIN";
    fam.cycles = 8.0;  // period of 16 samples over a 128-sample window
    auto curves = simulate_labeled(fam, 3, 41);
    for (const auto& c : curves) {
        std::vector<double> centred = c.values;
        const double mean = std::accumulate(centred.begin(), centred.end(), 0.0) / 128.0;
        for (double& v : centred) v -= mean;
        std::size_t best = 1;
        for (std::size_t bin = 1; bin < 64; ++bin)
            if (dft_magnitude(centred, bin) > dft_magnitude(centred, best)) best = bin;
        EXPECT_EQ(best, 8u);
    }
}

TEST(Simulate, InertialHasLowTotalVariation) {
    auto curves = simulate_labeled({.class_name = "INERTIAL"}, 20, 43);
    for (const auto& c : curves) {
        double tv = 0.0;
        for (std::size_t i = 1; i < kCurveLen; ++i) tv += std::abs(c.values[i] - c.values[i - 1]);
        EXPECT_LT(tv, 0.15);
    }
}

TEST(Simulate, DeterministicPerFamilyAndSeed) {
    auto a = simulate_labeled({.class_name = "TUMBLING"}, 4, 45);
    auto b = simulate_labeled({.class_name = "TUMBLING"}, 4, 45);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < kCurveLen; ++k) EXPECT_EQ(a[i].values[k], b[i].values[k]);
}

TEST(Simulate, LabelsFollowVocabularies) {
    EXPECT_EQ(*simulate_labeled({.class_name = "SPIN"}, 1, 1)[0].label, motion_vocab().index_of("SPIN"));
    EXPECT_EQ(*simulate_labeled({.class_name = "ANOMALY"}, 1, 1)[0].label, 1u);
    EXPECT_EQ(*simulate_labeled({.class_name = "NORMAL"}, 1, 1)[0].label, 0u);
    EXPECT_THROW(simulate_labeled({.class_name = "WOBBLE"}, 1, 1), Error);
}

TEST(Simulate, CorpusBalancesFamilies) {
    auto corpus = simulate_corpus({"INERTIAL", "SAFE", "SPIN", "SUN", "TUMBLING", "YAW"}, 60, 47);
    ASSERT_EQ(corpus.size(), 60u);
    std::vector<std::size_t> hist(6, 0);
    for (const auto& c : corpus) hist[*c.label] += 1;
    for (std::size_t h : hist) EXPECT_EQ(h, 10u);
}

TEST(RankAnomalies, OrderingAndTieBreak) {
    auto mp = init_model(tiny_config(), 17);
    auto curves = simulate_labeled({.class_name = "NORMAL"}, 8, 49);
    auto ranked = rank_anomalies(mp, curves, 3);
    ASSERT_EQ(ranked.top.size(), 3u);
    ASSERT_EQ(ranked.bottom.size(), 3u);
    ASSERT_EQ(ranked.all.size(), 8u);
    for (std::size_t i = 1; i < ranked.all.size(); ++i) {
        EXPECT_GE(ranked.all[i - 1].error, ranked.all[i].error);
        if (ranked.all[i - 1].error == ranked.all[i].error)
            EXPECT_LT(ranked.all[i - 1].id, ranked.all[i].id);
    }
    EXPECT_EQ(ranked.bottom.front().id, ranked.all.back().id);
    EXPECT_THROW(rank_anomalies(mp, {}, 1), Error);
}

TEST(Forecast, TailProtocol) {
    auto mp = init_model(tiny_config(), 19);
    auto curves = simulate_labeled({.class_name = "SUN"}, 1, 51);
    auto res = forecast(mp, curves[0]);
    ASSERT_EQ(res.tail_indices.size(), 32u);
    EXPECT_EQ(res.tail_indices.front(), 96u);
    EXPECT_EQ(res.tail_indices.back(), 127u);

    // poisoned-tail probe: altering the true tail changes only the error
    LightCurve poisoned = curves[0];
    for (std::size_t i = 96; i < kCurveLen; ++i) poisoned.values[i] = 1.0 - poisoned.values[i];
    auto res2 = forecast(mp, poisoned);
    for (std::size_t i = 0; i < res.predicted_tail.size(); ++i)
        EXPECT_EQ(res.predicted_tail[i], res2.predicted_tail[i]);
    EXPECT_NE(res.error, res2.error);
}

TEST(ReconError, EvalPurity) {
    auto mp = init_model(tiny_config(), 23);
    auto curves = simulate_labeled({.class_name = "SAFE"}, 1, 53);
    EXPECT_EQ(recon_error(mp, curves[0]), recon_error(mp, curves[0]));

    // constant-0.5 curve against a constant-0.5 reconstruction
    LightCurve flat;
    flat.id = "flat";
    flat.values.assign(kCurveLen, 0.5);
    std::vector<double> recon(kCurveLen, 0.5);
    EXPECT_DOUBLE_EQ(loss_recon(flat.values, recon), 0.0);
}
