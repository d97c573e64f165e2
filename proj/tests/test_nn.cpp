#include <gtest/gtest.h>

#include <sstream>

#include "fflow/checkpoint.hpp"
#include "fflow/datagen.hpp"
#include "fflow/nn.hpp"

using namespace fflow;

namespace {

MlpModel small_net(Activation act, std::uint64_t seed = 3) {
    MlpSpec spec;
    spec.layer_sizes = {4, 7, 5, 2};
    spec.activation = act;
    spec.seed = seed;
    MlpModel m = init_mlp(spec);
    // Nonzero biases so their gradients are exercised.
    for (std::size_t k = 0; k < m.biases.size(); ++k) {
        m.biases[k] = Vector::LinSpaced(m.biases[k].size(), -0.3, 0.2 + 0.1 * static_cast<double>(k));
    }
    return m;
}

double parameter(MlpModel &m, std::size_t k, bool bias, Index i, std::optional<double> set = {}) {
    double &p = bias ? m.biases[k](i) : m.weights[k].data()[i];
    if (set) p = *set;
    return p;
}

LabeledDataset linear_data(Index n, std::uint64_t seed) {
    LabeledDataset data;
    data.x = standard_normal_rows(n, 1, seed);
    data.y = 2.0 * data.x.col(0);
    data.group.assign(static_cast<std::size_t>(n), 0);
    for (Index i = 0; i < n; ++i) {
        data.group[static_cast<std::size_t>(i)] = i % 5;
    }
    return data;
}

MlpSpec spec_of(std::vector<Index> sizes, std::uint64_t seed = 1) {
    MlpSpec s;
    s.layer_sizes = std::move(sizes);
    s.seed = seed;
    return s;
}

}  // namespace

TEST(MlpInit, DeterministicAndHeScaled) {
    const MlpSpec spec = spec_of({200, 300, 1}, 9);
    const MlpModel a = init_mlp(spec);
    EXPECT_EQ(a, init_mlp(spec));
    EXPECT_FALSE(a == init_mlp(spec_of({200, 300, 1}, 10)));
    const RowMatrix &w = a.weights[0];
    const double var = w.array().square().mean();
    EXPECT_NEAR(var, 2.0 / 200.0, 0.05 * 2.0 / 200.0);
    EXPECT_NEAR(w.mean(), 0.0, 0.01);
    EXPECT_EQ(a.biases[0].cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(a.parameter_count(), 200 * 300 + 300 + 300 + 1);
}

TEST(MlpInit, RejectsBadShapes) {
    EXPECT_THROW(init_mlp(spec_of({5})), ContractViolation);
    EXPECT_THROW(init_mlp(spec_of({5, 0, 1})), ContractViolation);
}

TEST(MlpForward, ZeroInputGivesZeroOutput) {
    const MlpModel m = init_mlp(spec_of({6, 10, 3}));
    EXPECT_EQ(predict(m, RowMatrix::Zero(4, 6)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(MlpForward, HandSetLayer) {
    MlpModel m = init_mlp(spec_of({1, 1, 1}));
    m.weights[0](0, 0) = 1.0;
    m.weights[1](0, 0) = 1.0;
    RowMatrix x(2, 1);
    x << -2.0, 3.0;
    const auto layers = forward_collect(m, SampleMatrix(x));
    ASSERT_EQ(layers.size(), 3u);
    EXPECT_DOUBLE_EQ(layers[1].data()(0, 0), -1.4);
    EXPECT_DOUBLE_EQ(layers[1].data()(1, 0), 3.0);
    EXPECT_DOUBLE_EQ(layers[2].data()(0, 0), -1.4);
}

TEST(MlpForward, LayerZeroIsInputAndShapesFollowSpec) {
    const MlpModel m = small_net(Activation::leaky_relu);
    const SampleMatrix x(standard_normal_rows(9, 4, 2));
    const auto layers = forward_collect(m, x);
    EXPECT_EQ(layers[0], x);
    for (std::size_t k = 0; k < layers.size(); ++k) {
        EXPECT_EQ(layers[k].dim(), m.spec.layer_sizes[k]);
        EXPECT_EQ(layers[k].rows(), 9);
    }
    EXPECT_THROW(forward_collect(m, SampleMatrix(standard_normal_rows(9, 3, 2))), ContractViolation);
}

TEST(MlpForward, BatchesAreIndependent) {
    const MlpModel m = small_net(Activation::tanh);
    const RowMatrix a = standard_normal_rows(5, 4, 1);
    const RowMatrix b = standard_normal_rows(8, 4, 2);
    RowMatrix ab(13, 4);
    ab << a, b;
    const RowMatrix out = predict(m, ab);
    // Matrix-product kernels may round differently for other row counts.
    EXPECT_TRUE(RowMatrix(out.topRows(5)).isApprox(predict(m, a), 1e-13));
    EXPECT_TRUE(RowMatrix(out.bottomRows(8)).isApprox(predict(m, b), 1e-13));
}

TEST(Mse, Examples) {
    Vector p(2), t(2);
    p << 0, 2;
    t << 0, 0;
    EXPECT_DOUBLE_EQ(mse(p, t), 2.0);
    EXPECT_EQ(mse(t, t), 0.0);
    EXPECT_THROW(mse(Vector(), Vector()), ContractViolation);
    EXPECT_THROW(mse(p, Vector::Zero(3)), ContractViolation);
}

TEST(MlpGradient, MatchesCentralDifferences) {
    for (Activation act : {Activation::tanh, Activation::leaky_relu}) {
        MlpModel m = small_net(act);
        const RowMatrix x = standard_normal_rows(6, 4, 5);
        const RowMatrix y = standard_normal_rows(6, 2, 6);
        Gradients g;
        loss_and_gradient(m, x, y, g);
        Gradients scratch;
        const double eps = 1e-5;
        double worst = 0.0;
        for (std::size_t k = 0; k < m.weights.size(); ++k) {
            for (bool bias : {false, true}) {
                const Index count = bias ? m.biases[k].size() : m.weights[k].size();
                for (Index i = 0; i < count; ++i) {
                    const double p0 = parameter(m, k, bias, i);
                    parameter(m, k, bias, i, p0 + eps);
                    const double up = loss_and_gradient(m, x, y, scratch);
                    parameter(m, k, bias, i, p0 - eps);
                    const double down = loss_and_gradient(m, x, y, scratch);
                    parameter(m, k, bias, i, p0);
                    const double fd = (up - down) / (2 * eps);
                    const double an = bias ? g.biases[k](i) : g.weights[k].data()[i];
                    worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3}));
                }
            }
        }
        EXPECT_LT(worst, 1e-5) << to_string(act);
    }
}

TEST(MlpTrain, ZeroLearningRateKeepsWeights) {
    MlpModel m = init_mlp(spec_of({1, 8, 1}));
    const MlpModel start = m;
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 3;
    const std::vector<int> epochs{0, 1, 2, 3};
    const auto ckpts = train(m, linear_data(200, 1), cfg, epochs);
    ASSERT_EQ(ckpts.size(), 4u);
    for (const auto &c : ckpts) {
        EXPECT_EQ(c.model, start);
    }
    EXPECT_EQ(m, start);
}

TEST(MlpTrain, LearnsLinearMap) {
    MlpModel m = init_mlp(spec_of({1, 1}, 4));
    TrainConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 64;
    cfg.epochs = 200;
    std::vector<LossRecord> history;
    train(m, linear_data(2000, 2), cfg, {}, &history);
    ASSERT_EQ(history.size(), 201u);
    EXPECT_LT(history.back().train_loss, 1e-6);
    EXPECT_NEAR(m.weights[0](0, 0), 2.0, 1e-3);
}

TEST(MlpTrain, EpochZeroCheckpointPrecedesUpdates) {
    MlpModel m = init_mlp(spec_of({1, 4, 1}));
    const MlpModel start = m;
    TrainConfig cfg;
    cfg.epochs = 2;
    const std::vector<int> epochs{0, 2};
    const auto ckpts = train(m, linear_data(300, 3), cfg, epochs);
    ASSERT_EQ(ckpts.size(), 2u);
    EXPECT_EQ(ckpts[0].epoch, 0);
    EXPECT_EQ(ckpts[0].model, start);
    EXPECT_FALSE(ckpts[1].model == start);
    EXPECT_EQ(ckpts[1].model, m);
}

TEST(MlpTrain, RetrainingFromSavedInitIsBitIdentical) {
    const LabeledDataset data = linear_data(500, 8);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.shuffle_seed = 42;
    MlpModel a = init_mlp(spec_of({1, 6, 3, 1}, 5));
    const std::vector<int> epochs{0, 3};
    const auto ckpts = train(a, data, cfg, epochs);

    std::stringstream file;
    write_checkpoint(file, ckpts[0]);
    MlpModel b = read_checkpoint(file).checkpoint.model;
    const auto again = train(b, data, cfg, epochs);
    EXPECT_EQ(a, b);
    EXPECT_EQ(again[1].train_loss, ckpts[1].train_loss);
}

TEST(MlpTrain, DivergenceIsReported) {
    MlpModel m = init_mlp(spec_of({1, 4, 1}));
    TrainConfig cfg;
    cfg.learning_rate = 1e300;
    cfg.epochs = 5;
    try {
        train(m, linear_data(200, 1), cfg, {});
        FAIL() << "expected TrainingDiverged";
    } catch (const TrainingDiverged &e) {
        EXPECT_GE(e.epoch(), 1);
    }
}

TEST(MlpTrain, RejectsEmptyDataset) {
    MlpModel m = init_mlp(spec_of({1, 1}));
    LabeledDataset empty;
    empty.x.resize(0, 1);
    EXPECT_THROW(train(m, empty, TrainConfig{}, {}), Error);
}

TEST(MlpTrain, ValidationLossFallsOnGaussianMeanTask) {
    GridDataset grid = gen_gaussian_mean(linspace(-1, 1, 31), 1000, 64, 17);
    const LabeledDataset data = make_labeled(std::move(grid));
    MlpModel m = init_mlp(spec_of({64, 50, 25, 1}, 2));
    TrainConfig cfg;
    cfg.learning_rate = 1e-5;
    cfg.epochs = 10;
    std::vector<LossRecord> history;
    train(m, data, cfg, {}, &history);
    for (std::size_t e = 1; e < history.size(); ++e) {
        EXPECT_LT(history[e].val_loss, history[e - 1].val_loss) << "epoch " << e;
    }
}

TEST(StratifiedSplit, SizesDisjointAndDeterministic) {
    const LabeledDataset data = linear_data(1000, 1);
    const Split s = stratified_split(data, 0.2, 7);
    EXPECT_EQ(s.val.size(), 200u);
    EXPECT_EQ(s.train.size(), 800u);
    std::vector<int> seen(1000, 0);
    std::vector<int> val_per_group(5, 0);
    for (Index i : s.train) ++seen[static_cast<std::size_t>(i)];
    for (Index i : s.val) {
        ++seen[static_cast<std::size_t>(i)];
        ++val_per_group[static_cast<std::size_t>(data.group[static_cast<std::size_t>(i)])];
    }
    EXPECT_EQ(std::count(seen.begin(), seen.end(), 1), 1000);
    for (int v : val_per_group) EXPECT_EQ(v, 40);
    EXPECT_EQ(stratified_split(data, 0.2, 7).val, s.val);
    EXPECT_NE(stratified_split(data, 0.2, 8).val, s.val);
}

TEST(CheckpointFile, RoundTrip) {
    Checkpoint c{7, small_net(Activation::tanh), 0.25, 0.5};
    c.model.spec.activation_alpha = 0.3;
    std::stringstream file;
    write_checkpoint(file, c, {{"note", "x"}});
    const LoadedCheckpoint back = read_checkpoint(file);
    EXPECT_EQ(back.checkpoint.epoch, 7);
    EXPECT_EQ(back.checkpoint.model, c.model);
    EXPECT_EQ(back.checkpoint.model.spec.activation, Activation::tanh);
    EXPECT_EQ(back.checkpoint.model.spec.activation_alpha, 0.3);
    EXPECT_EQ(back.checkpoint.train_loss, 0.25);
    EXPECT_EQ(back.checkpoint.val_loss, 0.5);
    EXPECT_EQ(back.provenance.at("note"), "x");
}

TEST(CheckpointFile, CorruptionRaisesFormatError) {
    std::stringstream file;
    write_checkpoint(file, Checkpoint{1, small_net(Activation::tanh), 1, 1});
    const std::string bytes = file.str();

    std::stringstream bad_magic("FFLOW-CKPT-9" + bytes.substr(12));
    EXPECT_THROW(read_checkpoint(bad_magic), FormatError);

    std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
    try {
        read_checkpoint(truncated);
        FAIL() << "expected FormatError";
    } catch (const FormatError &e) {
        EXPECT_GT(e.offset(), 12u);
        EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
    }
}
