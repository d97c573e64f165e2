#include <gtest/gtest.h>

#include <sstream>

#include "fflow/embed.hpp"
#include "support.hpp"

using namespace fflow;
using fflow::testing::gaussian_triplet;
using fflow::testing::mean_of;

TEST(Nonlinearity, Examples) {
    EXPECT_EQ(nonlinearity(2.0, 0.7), 2.0);
    EXPECT_DOUBLE_EQ(nonlinearity(-2.0, 0.7), -1.4);
    EXPECT_EQ(nonlinearity(0.0, 0.7), 0.0);
    EXPECT_EQ(nonlinearity(-3.0, 1.0), -3.0);
}

TEST(RandomProjection, DeterministicPerSeedAndStage) {
    EXPECT_EQ(random_projection(5, 7, 3, 1), random_projection(5, 7, 3, 1));
    EXPECT_NE(random_projection(5, 7, 3, 1), random_projection(5, 7, 3, 2));
    EXPECT_NE(random_projection(5, 7, 3, 1), random_projection(5, 7, 4, 1));
    const RowMatrix a = random_projection(5, 7, 3, 1);
    EXPECT_EQ(a.rows(), 7);
    EXPECT_EQ(a.cols(), 5);
}

TEST(RandomProjection, StandardNormalEntries) {
    const RowMatrix a = random_projection(1000, 1000, 17, 1);
    const double mean = a.mean();
    const double sd = std::sqrt((a.array() - mean).square().sum() / static_cast<double>(a.size() - 1));
    EXPECT_NEAR(mean, 0.0, 0.01);
    EXPECT_NEAR(sd, 1.0, 0.01);
}

TEST(RandomProjection, StagesAreUncorrelated) {
    const RowMatrix a = random_projection(100, 1000, 17, 1);
    const RowMatrix b = random_projection(100, 1000, 17, 2);
    const double corr = (a.array() * b.array()).mean() / std::sqrt(a.array().square().mean() * b.array().square().mean());
    EXPECT_LT(std::abs(corr), 0.01);
}

TEST(EmbedTriplet, IdentityPipelineReturnsInput) {
    const TripletSample t = gaussian_triplet(6, 300, 0.1, 3);
    EmbedConfig cfg;
    cfg.alpha = 1.0;
    cfg.sigma_noise = 0.0;
    const RowMatrix eye = RowMatrix::Identity(6, 6);
    const TripletSample u = embed_triplet(t, eye, cfg, 5);
    EXPECT_EQ(u.minus, t.minus);
    EXPECT_EQ(u.center, t.center);
    EXPECT_EQ(u.plus, t.plus);
}

TEST(EmbedTriplet, ShapeAndContract) {
    const TripletSample t = gaussian_triplet(6, 300, 0.1, 3);
    const EmbedConfig cfg;
    const TripletSample u = embed_triplet(t, random_projection(6, 20, 1, 1), cfg, 5);
    EXPECT_EQ(u.dim(), 20);
    EXPECT_EQ(u.center.rows(), 300);
    EXPECT_THROW(embed_triplet(t, random_projection(5, 20, 1, 1), cfg, 5), ContractViolation);
}

TEST(EmbedTriplet, MembersGetIndependentNoise) {
    // Equal inputs in all members: any difference after embedding is noise.
    TripletSample t = gaussian_triplet(4, 1000, 0.1, 3);
    t.plus = t.minus;
    t.center = t.minus;
    EmbedConfig cfg;
    cfg.sigma_noise = 1.0;
    const TripletSample u = embed_triplet(t, random_projection(4, 8, 1, 1), cfg, 5);
    const RowMatrix e1 = u.plus.data() - u.minus.data();
    const RowMatrix e2 = u.center.data() - u.minus.data();
    EXPECT_NEAR(e1.array().square().mean(), 2.0, 0.15);
    EXPECT_NEAR((e1.array() * e2.array()).mean(), 1.0, 0.15);
}

TEST(EmbedTriplet, StreamedStatisticsMatchMaterialized) {
    const TripletSample t = gaussian_triplet(10, 3000, 0.05, 9);
    EmbedConfig cfg;
    cfg.sigma_noise = 0.1;
    const RowMatrix a = random_projection(10, 40, 2, 1);
    const LfiParts streamed = embedded_lfi_parts(t, a, cfg, 77);
    const LfiParts direct = lfi_parts(embed_triplet(t, a, cfg, 77), cfg.lfi.rel_tol);
    EXPECT_NEAR(streamed.quadratic, direct.quadratic, 1e-10 * std::abs(direct.quadratic));
    EXPECT_EQ(streamed.dim, 40);
    EXPECT_EQ(streamed.n, 3000);
}

TEST(EmbedTriplet, PreservesMostInformationOfGaussianMean) {
    const TripletSample t = gaussian_triplet(50, 50000, 0.05, 12);
    EmbedConfig cfg;
    const double j0 = lfi_corrected(t).value;
    const double je = corrected_estimate(embedded_lfi_parts(t, random_projection(50, 150, 4, 1), cfg, 8)).value;
    EXPECT_GE(je, 0.9 * j0);
}

TEST(MaximizeLfi, GaussianMeanStopsNearAnalyticValue) {
    const TripletSample t = gaussian_triplet(20, 50000, 0.05, 31);
    EmbedConfig cfg;
    cfg.seed = 5;
    const MaximizationTrace tr = maximize_lfi(t, cfg);
    EXPECT_NEAR(tr.final.value, 20.0, 3.0 * tr.final.abs_std + 0.05 * 20.0);
    EXPECT_GE(tr.final.value, tr.base.value);
    EXPECT_EQ(tr.base_dim, 20);
    EXPECT_TRUE(tr.verdict == Verdict::early_exit_flat || tr.verdict == Verdict::fallback_base_lfi ||
                tr.verdict == Verdict::converged);
}

TEST(MaximizeLfi, FinalNeverBelowBase) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const TripletSample t = gaussian_triplet(8, 5000, 0.1, seed);
        EmbedConfig cfg;
        cfg.seed = seed;
        cfg.delta_d = 10;
        const MaximizationTrace tr = maximize_lfi(t, cfg);
        EXPECT_GE(tr.final.value, tr.base.value) << "seed " << seed;
    }
}

TEST(MaximizeLfi, HeavyNoiseFallsBackToBase) {
    const TripletSample t = gaussian_triplet(10, 20000, 0.05, 4);
    EmbedConfig cfg;
    cfg.sigma_noise = 20.0;
    cfg.delta_d = 10;
    const MaximizationTrace tr = maximize_lfi(t, cfg);
    EXPECT_EQ(tr.verdict, Verdict::fallback_base_lfi);
    EXPECT_EQ(tr.final.value, tr.base.value);
    EXPECT_EQ(tr.final.method, FiMethod::corrected);
}

TEST(MaximizeLfi, ReproducibleBitForBit) {
    const TripletSample t = gaussian_triplet(8, 4000, 0.1, 2);
    EmbedConfig cfg;
    cfg.seed = 11;
    cfg.delta_d = 10;
    std::ostringstream a, b;
    write_trace_csv(a, maximize_lfi(t, cfg));
    write_trace_csv(b, maximize_lfi(t, cfg));
    EXPECT_EQ(a.str(), b.str());
    EXPECT_EQ(a.str().rfind("d_prime,lfi,rel_std\n8,", 0), 0u);
}

TEST(MaximizeLfi, CapGivesNotConvergedWithWarning) {
    // A nonlinear task whose ladder keeps moving; a small cap stops it.
    const TripletSample t = make_triplet(GaussianStd{10}, 1.0, 0.05, 40000, 6);
    EmbedConfig cfg;
    cfg.delta_d = 5;
    cfg.max_dim = 25;
    cfg.sigma_noise = 0.1;
    const MaximizationTrace tr = maximize_lfi(t, cfg);
    EXPECT_EQ(tr.rule, Verdict::not_converged);
    EXPECT_EQ(tr.dims.size(), 3u);
    EXPECT_FALSE(tr.warning.empty());
}

TEST(MaximizeLfi, InsufficientSampleReportsRequiredSize) {
    // J near 10 with n = 1000 and h = 0.1 predicts about 30% relative error.
    const TripletSample t = gaussian_triplet(10, 1000, 0.05, 6);
    EmbedConfig cfg;
    try {
        maximize_lfi(t, cfg);
        FAIL() << "expected InsufficientSample";
    } catch (const InsufficientSample &e) {
        EXPECT_GT(e.required_n(), 1000u);
        EXPECT_LT(lfi_rel_std(10.0, 10, static_cast<Index>(e.required_n()) + 500, 0.1), 0.25);
    }
}

TEST(MaximizeLfi, LadderIsMonotoneInExpectationOnNonlinearTask) {
    // For the std task the raw data are poorly summarized by their mean, so
    // the embedded LFI grows with d'. Average over seeds at fixed stages.
    const Index d = 10;
    const TripletSample t = make_triplet(GaussianStd{d}, 1.0, 0.05, 20000, 3);
    std::vector<double> by_stage[4];
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        EmbedConfig cfg;
        cfg.seed = seed;
        cfg.sigma_noise = 0.1;
        for (std::uint64_t k = 1; k <= 4; ++k) {
            const Index dp = d + static_cast<Index>(k) * 20;
            by_stage[k - 1].push_back(
                corrected_estimate(embedded_lfi_parts(t, random_projection(d, dp, seed, k), cfg, stage_seed(cfg, k)))
                    .raw_value);
        }
    }
    for (int k = 1; k < 4; ++k) {
        EXPECT_GT(mean_of(by_stage[k]), mean_of(by_stage[k - 1])) << "stage " << k + 1;
    }
}

TEST(MaximizeLfi, SmoothingOptionRuns) {
    const TripletSample t = gaussian_triplet(8, 5000, 0.1, 2);
    EmbedConfig cfg;
    cfg.smooth = true;
    cfg.delta_d = 10;
    const MaximizationTrace tr = maximize_lfi(t, cfg);
    EXPECT_GE(tr.final.value, tr.base.value);
}

TEST(Verdict, StringRoundTrip) {
    for (Verdict v : {Verdict::converged, Verdict::early_exit_flat, Verdict::fallback_base_lfi, Verdict::not_converged}) {
        EXPECT_EQ(verdict_from_string(to_string(v)), v);
    }
    EXPECT_THROW(verdict_from_string("bogus"), ContractViolation);
}
