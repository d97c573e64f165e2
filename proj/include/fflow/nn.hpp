#pragma once

// Feedforward regression network: dense layers, leaky-ReLU or tanh hidden
// activations, identity output, MSE loss, minibatch ADAM.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fflow/errors.hpp"
#include "fflow/random.hpp"
#include "fflow/stats.hpp"

namespace fflow {

enum class Activation { leaky_relu, tanh };

inline std::string_view to_string(Activation a) { return a == Activation::tanh ? "tanh" : "leaky_relu"; }

inline Activation activation_from_string(std::string_view s) {
    if (s == "tanh") {
        return Activation::tanh;
    }
    if (s == "leaky_relu") {
        return Activation::leaky_relu;
    }
    throw ContractViolation("unknown activation '" + std::string(s) + "'");
}

struct MlpSpec {
    std::vector<Index> layer_sizes;
    Activation activation = Activation::leaky_relu;
    double activation_alpha = 0.7;  ///< negative-side slope of leaky_relu
    std::uint64_t seed = 0;

    void validate() const {
        require(layer_sizes.size() >= 2, "network needs at least 2 layers");
        for (Index s : layer_sizes) {
            require(s >= 1, "layer sizes must be positive");
        }
    }
};

struct MlpModel {
    MlpSpec spec;
    std::vector<RowMatrix> weights;  ///< weights[k]: sizes[k+1] x sizes[k]
    std::vector<Vector> biases;      ///< biases[k]: sizes[k+1]

    Index layer_count() const noexcept { return static_cast<Index>(spec.layer_sizes.size()); }
    Index input_dim() const { return spec.layer_sizes.front(); }
    Index output_dim() const { return spec.layer_sizes.back(); }

    Index parameter_count() const {
        Index total = 0;
        for (std::size_t k = 0; k < weights.size(); ++k) {
            total += weights[k].size() + biases[k].size();
        }
        return total;
    }

    friend bool operator==(const MlpModel &a, const MlpModel &b) {
        if (a.spec.layer_sizes != b.spec.layer_sizes || a.weights.size() != b.weights.size()) {
            return false;
        }
        for (std::size_t k = 0; k < a.weights.size(); ++k) {
            if (a.weights[k] != b.weights[k] || a.biases[k] != b.biases[k]) {
                return false;
            }
        }
        return true;
    }
};

/// He-normal weights N(0, 2 / fan_in), zero biases; layer k draws from
/// derive_seed(spec.seed, "init", k).
inline MlpModel init_mlp(const MlpSpec &spec) {
    spec.validate();
    MlpModel m;
    m.spec = spec;
    for (std::size_t k = 0; k + 1 < spec.layer_sizes.size(); ++k) {
        const Index fan_in = spec.layer_sizes[k];
        const Index fan_out = spec.layer_sizes[k + 1];
        NormalStream normal(derive_seed(spec.seed, "init", k));
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        RowMatrix w(fan_out, fan_in);
        for (Index i = 0; i < w.size(); ++i) {
            w.data()[i] = scale * normal();
        }
        m.weights.push_back(std::move(w));
        m.biases.push_back(Vector::Zero(fan_out));
    }
    return m;
}

namespace detail {

inline void apply_activation(RowMatrix &z, const MlpSpec &spec) {
    if (spec.activation == Activation::tanh) {
        z = z.array().tanh();
    } else {
        const double a = spec.activation_alpha;
        z = (z.array() > 0.0).select(z.array(), a * z.array());
    }
}

/// Derivative of the activation evaluated at the pre-activation z.
inline RowMatrix activation_derivative(const RowMatrix &z, const MlpSpec &spec) {
    if (spec.activation == Activation::tanh) {
        return 1.0 - z.array().tanh().square();
    }
    const double a = spec.activation_alpha;
    return (z.array() > 0.0).select(RowMatrix::Ones(z.rows(), z.cols()).array(),
                                    RowMatrix::Constant(z.rows(), z.cols(), a).array());
}

inline void affine(RowMatrix &out, const RowMatrix &in, const MlpModel &m, std::size_t k) {
    out.noalias() = in * m.weights[k].transpose();
    out.rowwise() += m.biases[k].transpose();
}

}  // namespace detail

/// Calls visit(k, activations) for every layer k = 0 .. L-1 in order; layer
/// 0 is `x` itself, the last layer is the (linear) network output.
template <typename Visitor>
void forward_layers(const MlpModel &m, const RowMatrix &x, Visitor &&visit) {
    require(x.cols() == m.input_dim(), "input width " + std::to_string(x.cols()) + " does not match network input " +
                                           std::to_string(m.input_dim()));
    visit(Index{0}, x);
    RowMatrix current = x;
    RowMatrix next;
    const std::size_t last = m.weights.size() - 1;
    for (std::size_t k = 0; k < m.weights.size(); ++k) {
        detail::affine(next, current, m, k);
        if (k != last) {
            detail::apply_activation(next, m.spec);
        }
        current.swap(next);
        visit(static_cast<Index>(k + 1), static_cast<const RowMatrix &>(current));
    }
}

/// Post-activation values of every layer, input layer first.
inline std::vector<SampleMatrix> forward_collect(const MlpModel &m, const SampleMatrix &batch) {
    std::vector<SampleMatrix> layers;
    layers.reserve(static_cast<std::size_t>(m.layer_count()));
    forward_layers(m, batch.data(), [&](Index, const RowMatrix &a) { layers.emplace_back(a); });
    return layers;
}

/// Network output for every row of x.
inline RowMatrix predict(const MlpModel &m, const RowMatrix &x) {
    RowMatrix out;
    forward_layers(m, x, [&](Index k, const RowMatrix &a) {
        if (k == m.layer_count() - 1) {
            out = a;
        }
    });
    return out;
}

/// Mean of squared differences.
inline double mse(const Vector &pred, const Vector &target) {
    require(pred.size() == target.size(), "mse operands differ in length");
    require(pred.size() > 0, "mse of an empty vector");
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

struct Gradients {
    std::vector<RowMatrix> weights;
    std::vector<Vector> biases;

    static Gradients zeros_like(const MlpModel &m) {
        Gradients g;
        for (std::size_t k = 0; k < m.weights.size(); ++k) {
            g.weights.push_back(RowMatrix::Zero(m.weights[k].rows(), m.weights[k].cols()));
            g.biases.push_back(Vector::Zero(m.biases[k].size()));
        }
        return g;
    }
};

/// MSE over all entries of `target` (rows x output width) and its gradient.
inline double loss_and_gradient(const MlpModel &m, const RowMatrix &x, const RowMatrix &target, Gradients &grad) {
    require(target.rows() == x.rows() && target.cols() == m.output_dim(), "target shape mismatch");
    const std::size_t L = m.weights.size();
    std::vector<RowMatrix> acts(L + 1);
    std::vector<RowMatrix> pre(L);
    acts[0] = x;
    for (std::size_t k = 0; k < L; ++k) {
        detail::affine(pre[k], acts[k], m, k);
        acts[k + 1] = pre[k];
        if (k + 1 != L) {
            detail::apply_activation(acts[k + 1], m.spec);
        }
    }
    const double count = static_cast<double>(target.size());
    RowMatrix delta = acts[L] - target;
    const double loss = delta.squaredNorm() / count;
    delta *= 2.0 / count;

    if (grad.weights.size() != L) {
        grad = Gradients::zeros_like(m);
    }
    for (std::size_t k = L; k-- > 0;) {
        grad.weights[k].noalias() = delta.transpose() * acts[k];
        grad.biases[k] = delta.colwise().sum().transpose();
        if (k > 0) {
            RowMatrix back = delta * m.weights[k];
            delta = back.array() * detail::activation_derivative(pre[k - 1], m.spec).array();
        }
    }
    return loss;
}

/// Rows with scalar labels, grouped by the parameter block they came from.
struct LabeledDataset {
    RowMatrix x;
    Vector y;
    std::vector<Index> group;  ///< per-row block id

    Index size() const noexcept { return x.rows(); }
};

struct TrainConfig {
    double learning_rate = 1e-3;
    Index batch_size = 128;
    int epochs = 10;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double val_fraction = 0.2;
    std::uint64_t shuffle_seed = 0;

    void validate() const {
        require(learning_rate >= 0.0, "learning rate must be non-negative");
        require(batch_size >= 1, "batch size must be positive");
        require(epochs >= 0, "epochs must be non-negative");
        require(adam_beta1 > 0.0 && adam_beta1 < 1.0, "adam_beta1 must lie in (0,1)");
        require(adam_beta2 > 0.0 && adam_beta2 < 1.0, "adam_beta2 must lie in (0,1)");
        require(adam_eps > 0.0, "adam_eps must be positive");
        require(val_fraction > 0.0 && val_fraction < 1.0, "val_fraction must lie in (0,1)");
    }
};

struct Checkpoint {
    int epoch = 0;
    MlpModel model;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct LossRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct Split {
    std::vector<Index> train;
    std::vector<Index> val;
};

/// Per-group seeded shuffle; the last val_fraction of every group (rounded
/// to nearest) goes to validation.
inline Split stratified_split(const LabeledDataset &data, double val_fraction, std::uint64_t seed) {
    Index groups = 0;
    for (Index g : data.group) {
        groups = std::max(groups, g + 1);
    }
    std::vector<std::vector<Index>> members(static_cast<std::size_t>(groups));
    for (Index i = 0; i < data.size(); ++i) {
        members[static_cast<std::size_t>(data.group[static_cast<std::size_t>(i)])].push_back(i);
    }
    Split split;
    for (std::size_t g = 0; g < members.size(); ++g) {
        auto &rows = members[g];
        seeded_shuffle(rows, derive_seed(seed, "split", g));
        const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(rows.size())));
        const std::size_t n_train = rows.size() - std::min(n_val, rows.size());
        split.train.insert(split.train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
        split.val.insert(split.val.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
    }
    return split;
}

namespace detail {

inline void gather(const LabeledDataset &data, std::span<const Index> rows, RowMatrix &x, RowMatrix &y) {
    x.resize(static_cast<Index>(rows.size()), data.x.cols());
    y.resize(static_cast<Index>(rows.size()), 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        x.row(static_cast<Index>(i)) = data.x.row(rows[i]);
        y(static_cast<Index>(i), 0) = data.y(rows[i]);
    }
}

}  // namespace detail

/// MSE of the network on the given rows.
inline double dataset_loss(const MlpModel &m, const LabeledDataset &data, std::span<const Index> rows) {
    require(!rows.empty(), "loss over an empty row set");
    constexpr std::size_t chunk = 4096;
    RowMatrix x, y;
    double sum = 0.0;
    for (std::size_t r = 0; r < rows.size(); r += chunk) {
        const auto part = rows.subspan(r, std::min(chunk, rows.size() - r));
        detail::gather(data, part, x, y);
        sum += (predict(m, x) - y).squaredNorm();
    }
    return sum / static_cast<double>(rows.size());
}

class Adam {
public:
    Adam(const MlpModel &m, const TrainConfig &cfg) : cfg_(cfg), first_(Gradients::zeros_like(m)), second_(first_) {}

    void step(MlpModel &m, const Gradients &g) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
        const double lr = cfg_.learning_rate;
        auto update = [&](auto &param, const auto &grad, auto &m1, auto &m2) {
            m1 = cfg_.adam_beta1 * m1 + (1.0 - cfg_.adam_beta1) * grad;
            m2 = cfg_.adam_beta2 * m2.array() + (1.0 - cfg_.adam_beta2) * grad.array().square();
            param.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg_.adam_eps);
        };
        for (std::size_t k = 0; k < m.weights.size(); ++k) {
            update(m.weights[k], g.weights[k], first_.weights[k], second_.weights[k]);
            update(m.biases[k], g.biases[k], first_.biases[k], second_.biases[k]);
        }
    }

private:
    TrainConfig cfg_;
    Gradients first_;
    Gradients second_;
    long t_ = 0;
};

/// Minibatch ADAM on the MSE. Snapshots are taken after every epoch listed in
/// `checkpoint_epochs` (epoch 0 = before the first update). If `history` is
/// given it receives the losses of every epoch 0..cfg.epochs.
inline std::vector<Checkpoint> train(MlpModel &m, const LabeledDataset &data, const TrainConfig &cfg,
                                     std::span<const int> checkpoint_epochs,
                                     std::vector<LossRecord> *history = nullptr) {
    cfg.validate();
    if (data.size() == 0) {
        throw Error("cannot train on an empty dataset");
    }
    require(data.x.cols() == m.input_dim(), "dataset width does not match the network input");
    require(m.output_dim() == 1, "training expects a scalar output");
    require(static_cast<Index>(data.group.size()) == data.size() && data.y.size() == data.size(),
            "labels and groups must cover every row");
    require(std::is_sorted(checkpoint_epochs.begin(), checkpoint_epochs.end()), "checkpoint epochs must be sorted");

    const Split split = stratified_split(data, cfg.val_fraction, cfg.shuffle_seed);
    require(!split.train.empty() && !split.val.empty(), "split left an empty train or validation set");

    std::vector<Checkpoint> checkpoints;
    auto record = [&](int epoch) {
        const double tl = dataset_loss(m, data, split.train);
        const double vl = dataset_loss(m, data, split.val);
        if (!std::isfinite(tl) || !std::isfinite(vl)) {
            throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch), epoch);
        }
        if (history != nullptr) {
            history->push_back({epoch, tl, vl});
        }
        if (std::binary_search(checkpoint_epochs.begin(), checkpoint_epochs.end(), epoch)) {
            checkpoints.push_back({epoch, m, tl, vl});
        }
    };
    record(0);

    Adam adam(m, cfg);
    Gradients grad = Gradients::zeros_like(m);
    std::vector<Index> order = split.train;
    RowMatrix xb, yb;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        order = split.train;
        seeded_shuffle(order, derive_seed(cfg.shuffle_seed, "epoch", epoch));
        const std::span<const Index> all(order);
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const auto part = all.subspan(b, std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                                                   order.size() - b));
            detail::gather(data, part, xb, yb);
            loss_and_gradient(m, xb, yb, grad);
            adam.step(m, grad);
        }
        record(epoch);
    }
    return checkpoints;
}

}  // namespace fflow
