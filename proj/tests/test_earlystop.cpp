#include <gtest/gtest.h>

#include <sstream>

#include "fflow/earlystop.hpp"
#include "support.hpp"

using namespace fflow;

namespace {

std::vector<LossRecord> losses(std::vector<double> train, double val_offset = 0.1) {
    std::vector<LossRecord> out;
    for (std::size_t i = 0; i < train.size(); ++i) {
        out.push_back({static_cast<int>(i), train[i], train[i] + val_offset});
    }
    return out;
}

FiEstimate fi_of(double value, double rel_std = 0.0) {
    FiEstimate e;
    e.value = value;
    e.raw_value = value;
    e.rel_std = rel_std;
    e.abs_std = value * rel_std;
    e.method = FiMethod::maximized;
    return e;
}

/// Single affine map averaging the d inputs.
Checkpoint averaging_net(Index d) {
    MlpSpec spec;
    spec.layer_sizes = {d, 1};
    MlpModel m = init_mlp(spec);
    m.weights[0].setConstant(1.0 / static_cast<double>(d));
    return Checkpoint{0, m, 0, 0};
}

}  // namespace

TEST(StoppingEpoch, FirstCrossingBelowOne) {
    StopReport r = normalize_losses(losses({1.5, 1.2, 0.98, 0.9}), fi_of(1.0));
    EXPECT_EQ(stopping_epoch(r), std::optional<std::size_t>(2));
    r = normalize_losses(losses({1.5, 1.2, 1.1}), fi_of(1.0));
    EXPECT_FALSE(stopping_epoch(r).has_value());
}

TEST(StoppingEpoch, IgnoresValidationLoss) {
    std::vector<LossRecord> h = losses({1.5, 0.5});
    h[1].val_loss = 100.0;
    EXPECT_EQ(stopping_epoch(normalize_losses(h, fi_of(1.0))), std::optional<std::size_t>(1));
}

TEST(NormalizeLosses, ScalesByInputInformation) {
    const StopReport r = normalize_losses(losses({0.25, 0.5}), fi_of(4.0));
    EXPECT_EQ(r.norm_train[0], 1.0);
    const StopReport doubled = normalize_losses(losses({0.25, 0.5}), fi_of(8.0));
    EXPECT_EQ(doubled.norm_train[1], 2.0 * r.norm_train[1]);
    EXPECT_THROW(normalize_losses(losses({1.0}), fi_of(0.0)), ContractViolation);
}

TEST(NormalizeLosses, CrossingInvariantUnderCommonRescaling) {
    const std::vector<double> base{3.0, 2.0, 1.5, 0.75, 0.5};
    const auto r = normalize_losses(losses(base), fi_of(0.6));
    std::vector<double> scaled;
    for (double v : base) scaled.push_back(v * 8.0);
    const auto s = normalize_losses(losses(scaled), fi_of(0.6 / 8.0));
    EXPECT_EQ(stopping_epoch(r), stopping_epoch(s));
}

TEST(NormalizeLosses, ValidationMinimum) {
    std::vector<LossRecord> h = losses({3, 2, 1, 0.5});
    h[2].val_loss = 0.01;
    const StopReport r = normalize_losses(h, fi_of(1.0));
    EXPECT_EQ(r.val_min_epoch(), 2);
}

TEST(BiasGradient, IdentityEstimatorOnNoiselessData) {
    const Index d = 5;
    auto rows = [&](double theta) { return SampleMatrix(RowMatrix::Constant(4, d, theta)); };
    const TripletSample t{rows(0.9), rows(1.0), rows(1.1), 1.0, 0.1};
    EXPECT_NEAR(bias_gradient(averaging_net(d), t), 1.0, 1e-12);
}

TEST(BiasGradient, ConstantNetworkHasZeroSlope) {
    Checkpoint c = averaging_net(3);
    c.model.weights[0].setZero();
    c.model.biases[0].setConstant(0.5);
    const TripletSample t = fflow::testing::gaussian_triplet(3, 100, 0.1, 1);
    EXPECT_EQ(bias_gradient(c, t), 0.0);
    EXPECT_FALSE(std::isfinite(crlb_gap(c, t, fi_of(3.0)).ratio));
}

TEST(CrlbGap, EfficientEstimatorReachesBound) {
    const Index d = 10;
    const TripletSample t = fflow::testing::gaussian_triplet(d, 100000, 0.1, 7);
    const CrlbGap g = crlb_gap(averaging_net(d), t, fi_of(10.0, 0.01));
    EXPECT_NEAR(g.ratio, 1.0, 3.0 * g.rel_std);
    EXPECT_NEAR(g.bias_gradient, 1.0, 0.02);
    EXPECT_FALSE(g.inconsistent);
}

TEST(CrlbGap, UntrainedNetworkIsFarFromBound) {
    MlpSpec spec;
    spec.layer_sizes = {10, 20, 1};
    spec.seed = 3;
    const Checkpoint c{0, init_mlp(spec), 0, 0};
    const CrlbGap g = crlb_gap(c, fflow::testing::gaussian_triplet(10, 50000, 0.1, 8), fi_of(10.0, 0.01));
    EXPECT_GT(g.ratio, 1.5);
}

TEST(CrlbGap, RatioBelowOneIsFlagged) {
    const TripletSample t = fflow::testing::gaussian_triplet(10, 100000, 0.1, 7);
    const CrlbGap g = crlb_gap(averaging_net(10), t, fi_of(5.0, 0.01));
    EXPECT_LT(g.ratio, 0.6);
    EXPECT_TRUE(g.inconsistent);
}

TEST(AverageFi, MeanAndCombinedError) {
    const std::vector<FiEstimate> v{fi_of(2.0, 0.1), fi_of(4.0, 0.1)};
    const FiEstimate a = average_fi(v);
    EXPECT_DOUBLE_EQ(a.value, 3.0);
    EXPECT_NEAR(a.abs_std, std::hypot(0.2, 0.4) / 2.0, 1e-15);
}

TEST(StopOutputs, CsvAndJsonRoundTrip) {
    StopReport r = normalize_losses(losses({1.5, 1.2, 0.98, 0.9}), fi_of(1.0, 0.05));
    r.crossing_index = stopping_epoch(r);
    r.crlb_gap = 1.7;
    std::ostringstream csv;
    write_stop_csv(csv, r);
    EXPECT_EQ(csv.str().substr(0, 47), "epoch,train_loss,val_loss,norm_train,norm_val\n0");
    const nlohmann::json j = stop_summary_json(r);
    EXPECT_EQ(j.at("crossing_epoch"), 2);
    EXPECT_EQ(j.at("val_min_epoch"), 3);
    EXPECT_EQ(j.at("input_fi"), 1.0);
    EXPECT_EQ(j.at("rel_std"), 0.05);
    EXPECT_EQ(j.at("crlb_gap"), 1.7);
    const StopReport back = stop_from_json(nlohmann::json::parse(j.dump()));
    std::ostringstream csv2;
    write_stop_csv(csv2, back);
    EXPECT_EQ(csv.str(), csv2.str());
    EXPECT_EQ(back.crossing_epoch(), r.crossing_epoch());
    EXPECT_EQ(back.crlb_gap, r.crlb_gap);

    const StopReport none = normalize_losses(losses({2.0, 1.5}), fi_of(1.0));
    EXPECT_TRUE(stop_summary_json(none).at("crossing_epoch").is_null());
}
