#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "nvwb/formats.hpp"
#include "nvwb/workbench.hpp"

using namespace nvwb;

namespace {

// Naive full scan, written independently of roi_mask.
struct ScanResult {
    std::vector<std::uint8_t> mask;
    double mean = 0.0;
};

ScanResult naive_scan(const FluorescenceImage& img, double fraction) {
    double peak = 0.0;
    for (std::size_t r = 0; r < img.height; ++r) {
        for (std::size_t c = 0; c < img.width; ++c) peak = std::max(peak, img.at(c, r));
    }
    ScanResult out;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < img.height; ++r) {
        for (std::size_t c = 0; c < img.width; ++c) {
            const bool in = img.at(c, r) >= fraction * peak;
            out.mask.push_back(in ? 1 : 0);
            if (in) {
                sum += img.at(c, r);
                ++n;
            }
        }
    }
    out.mean = sum / static_cast<double>(n);
    return out;
}

}  // namespace

TEST(Roi, UniformImage) {
    const FluorescenceImage img{4, 3, std::vector<double>(12, 7.5)};
    const auto r = roi_mask(img);
    EXPECT_EQ(r.count, 12u);
    EXPECT_EQ(r.mean, 7.5);
}

TEST(Roi, SingleBrightPixel) {
    FluorescenceImage img{5, 5, std::vector<double>(25, 10.0)};
    img.pixels[13] = 100.0;
    const auto r = roi_mask(img);
    EXPECT_EQ(r.count, 1u);
    EXPECT_EQ(r.mask[13], 1);
    EXPECT_EQ(r.mean, 100.0);
    EXPECT_EQ(r.threshold, 85.0);
}

TEST(Roi, MatchesNaiveScanExactly) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int n = 0; n < 50; ++n) {
        auto img = gaussian_spot(20 + n, 15 + n / 2, 3.0 + 10.0 * u(rng), 4.0 + 5.0 * u(rng), 1.0 + 4.0 * u(rng),
                                 1000.0 * u(rng) + 1.0, 20.0 * u(rng));
        for (double& p : img.pixels) p += 5.0 * u(rng);
        for (double fraction : {0.85, 0.5, 1.0}) {
            const auto got = roi_mask(img, fraction);
            const auto ref = naive_scan(img, fraction);
            EXPECT_EQ(got.mask, ref.mask);
            EXPECT_EQ(got.mean, ref.mean);
            EXPECT_GE(got.count, 1u);
        }
    }
}

TEST(Roi, Errors) {
    EXPECT_THROW(roi_mask(FluorescenceImage{2, 2, std::vector<double>(4, 0.0)}), ValidationError);
    EXPECT_THROW(roi_mask(FluorescenceImage{2, 2, {1, 2, 3}}), ValidationError);
    EXPECT_THROW(roi_mask(FluorescenceImage{2, 1, {1, -2}}), ValidationError);
    EXPECT_THROW(roi_mask(FluorescenceImage{2, 1, {1, 2}}, 0.0), ValidationError);
}

TEST(ImageFormats, PgmAndCsv) {
    const auto img = parse_pgm("P2\n# spot\n3 2\n255\n0 10 255\n 7 8 9\n");
    EXPECT_EQ(img.width, 3u);
    EXPECT_EQ(img.height, 2u);
    EXPECT_EQ(img.at(2, 0), 255.0);
    EXPECT_EQ(img.at(0, 1), 7.0);
    EXPECT_EQ(parse_pgm(format_pgm(img)).pixels, img.pixels);
    EXPECT_THROW(parse_pgm("P5\n1 1\n255\n0\n"), ValidationError);
    EXPECT_THROW(parse_pgm("P2\n2 2\n255\n1 2 3\n"), ValidationError);
    EXPECT_THROW(parse_pgm("P2\n1 1\n255\n300\n"), ValidationError);

    const auto spot = gaussian_spot(9, 7, 4.2, 3.1, 1.7, 123.456, 3.0);
    EXPECT_EQ(parse_image_csv(format_image_csv(spot)).pixels, spot.pixels);
    EXPECT_THROW(parse_image_csv("1,2\n3\n"), ValidationError);
}

TEST(Synthesize, NoiselessIsExactModel) {
    const auto c = reference_case(ModelKind::ramsey);
    SyntheticConfig s{c.truth, uniform_axis(c.x_min, c.x_max, 300), 0.0, 4};
    const auto d = synthesize(s);
    for (std::size_t k = 0; k < d.size(); ++k) EXPECT_EQ(d.y[k], c.truth.evaluate(d.x[k]));
}

TEST(Synthesize, SeedDeterminesBytes) {
    const auto c = reference_case(ModelKind::rabi);
    SyntheticConfig s{c.truth, uniform_axis(c.x_min, c.x_max, 200), 0.005, 77};
    const auto a = format_dataset_csv(synthesize(s), "s");
    EXPECT_EQ(a, format_dataset_csv(synthesize(s), "s"));
    s.seed = 78;
    EXPECT_NE(a, format_dataset_csv(synthesize(s), "s"));
    s.noise_sigma = -1.0;
    EXPECT_THROW(synthesize(s), ValidationError);
}

TEST(Synthesize, RabiMedianOmegaWithinFivePercent) {
    const auto c = reference_case(ModelKind::rabi);
    std::vector<double> omegas;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        SyntheticConfig s{c.truth, uniform_axis(c.x_min, c.x_max, 401), 0.005, seed};
        omegas.push_back(fit(synthesize(s), ModelKind::rabi).model.theta[1]);
    }
    std::nth_element(omegas.begin(), omegas.begin() + 10, omegas.end());
    EXPECT_NEAR(omegas[10], 28.96e6, 0.05 * 28.96e6);
}

TEST(SweepAxis, NanosecondsToSeconds) {
    ProtocolSpec s;
    s.kind = ProtocolKind::rabi;
    s.sweep = {0, 50, 100};
    const auto x = sweep_axis(s);
    ASSERT_EQ(x.size(), 3u);
    EXPECT_EQ(x[0], 0.0);
    EXPECT_DOUBLE_EQ(x[1], 50e-9);
    EXPECT_DOUBLE_EQ(x[2], 100e-9);
    s.kind = ProtocolKind::odmr;
    s.sweep = {2.8e9};
    EXPECT_EQ(sweep_axis(s), (std::vector<double>{2.8e9}));
}

TEST(ReferenceCases, MeasuredSampleParameters) {
    EXPECT_EQ(reference_case(ModelKind::rabi).truth.theta[1], 28.96e6);
    EXPECT_EQ(reference_case(ModelKind::t1_exp).truth.theta[1], 5.2e-3);
    EXPECT_EQ(reference_case(ModelKind::hahn).truth.revivals, 3);
    const auto four = four_dip_odmr();
    EXPECT_EQ(four.dips, 4);
    EXPECT_NEAR(b_field_from_splitting(four.theta[1], four.theta[10]), 39.65, 0.01);
}

TEST(CrlbSampleCount, ShrinksWithNoise) {
    const auto c = reference_case(ModelKind::t1_exp);
    const auto loud = crlb_sample_count(c.truth, c.x_min, c.x_max, 0.2 * 0.015);
    const auto quiet = crlb_sample_count(c.truth, c.x_min, c.x_max, 0.05 * 0.015);
    EXPECT_GE(loud, quiet);
    EXPECT_GE(quiet, 1000u);
    EXPECT_THROW(crlb_sample_count(c.truth, c.x_min, c.x_max, 0.0), ValidationError);
}

TEST(ParametersRecovered, PhaseWrapAndZeroTruths) {
    auto truth = reference_case(ModelKind::rabi).truth;
    auto fitted = truth;
    fitted.theta[0] = -truth.theta[0];
    fitted.theta[2] = truth.theta[2] + std::numbers::pi + 4.0 * std::numbers::pi;
    for (bool ok : parameters_recovered(truth, fitted)) EXPECT_TRUE(ok);
    fitted.theta[1] *= 1.2;
    EXPECT_FALSE(parameters_recovered(truth, fitted)[1]);
    auto odmr = reference_case(ModelKind::lorentzian_multi).truth;
    auto o2 = odmr;
    o2.theta[3] = 0.05 * std::abs(odmr.theta[0]);
    EXPECT_TRUE(parameters_recovered(odmr, o2)[3]);
    o2.theta[3] = 0.2 * std::abs(odmr.theta[0]);
    EXPECT_FALSE(parameters_recovered(odmr, o2)[3]);
}

TEST(Pipeline, T1RelaxometryFit) {
    PipelineConfig cfg;
    const auto rep = pipeline_run(cfg);
    EXPECT_NEAR(rep.expected_t1_s, 1.0 / 195.0, 1e-15);
    EXPECT_GE(rep.fitted_t1_s, 4.6e-3);
    EXPECT_LE(rep.fitted_t1_s, 5.7e-3);
    EXPECT_NEAR(rep.reference_t1_s, rep.expected_t1_s, 1e-3 * rep.expected_t1_s);
    EXPECT_NEAR(rep.max_abs_contrast, 0.12, 0.015);
    EXPECT_NEAR(rep.contrast_curve_value, -0.12, 0.015);
    EXPECT_EQ(rep.data.size(), 151u);
    EXPECT_TRUE(rep.fit.converged);
}

TEST(Pipeline, RamseyNoiselessExact) {
    const auto c = reference_case(ModelKind::ramsey);
    PipelineConfig cfg;
    cfg.kind = ProtocolKind::ramsey;
    cfg.synth = SyntheticConfig{c.truth, uniform_axis(c.x_min, c.x_max, 1000), 0.0, 1};
    const auto rep = pipeline_run(cfg);
    for (bool ok : rep.recovered) EXPECT_TRUE(ok);
    EXPECT_LT(rep.stats.rms, 1e-12);
    auto truth = c.truth;
    truth.canonicalize();
    for (Eigen::Index k = 0; k < truth.theta.size(); ++k) {
        EXPECT_NEAR(rep.fit.model.theta[k], truth.theta[k], 1e-6 * std::abs(truth.theta[k]));
    }
}

TEST(Pipeline, HahnNoisyT2WithinTenPercent) {
    const auto c = reference_case(ModelKind::hahn);
    PipelineConfig cfg;
    cfg.kind = ProtocolKind::hahn;
    // Grid sized so the Cramer-Rao error of every parameter is <= 4%.
    const auto n = crlb_sample_count(c.truth, c.x_min, c.x_max, 0.002);
    cfg.synth = SyntheticConfig{c.truth, uniform_axis(c.x_min, c.x_max, n), 0.002, 12};
    const auto rep = pipeline_run(cfg);
    EXPECT_NEAR(rep.fit.model.theta[1], 21e-6, 0.1 * 21e-6);
    EXPECT_EQ(rep.seed, 12u);
}

TEST(Pipeline, Errors) {
    PipelineConfig cfg;
    cfg.kind = ProtocolKind::rabi;
    EXPECT_THROW(pipeline_run(cfg), ValidationError);
    cfg.synth = SyntheticConfig{reference_case(ModelKind::t1_exp).truth, uniform_axis(0, 1e-2, 50), 0.0, 1};
    EXPECT_THROW(pipeline_run(cfg), ValidationError);
}
