#pragma once

// Validation-free stopping: training is stopped once MSE * I drops below 1,
// since no unbiased estimator can have a smaller variance than 1 / I.

#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include <json.hpp>

#include "fflow/flow.hpp"
#include "fflow/lfi.hpp"
#include "fflow/nn.hpp"
#include "fflow/text.hpp"

namespace fflow {

struct StopReport {
    std::vector<int> epochs;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> norm_train;
    std::vector<double> norm_val;
    std::optional<std::size_t> crossing_index;  ///< index into epochs
    std::size_t val_min_index = 0;
    FiEstimate input_fi;
    std::optional<double> crlb_gap;
    std::optional<double> crlb_gap_rel_std;
    std::optional<double> bias_gradient;

    std::optional<int> crossing_epoch() const {
        if (!crossing_index) {
            return std::nullopt;
        }
        return epochs[*crossing_index];
    }
    int val_min_epoch() const { return epochs[val_min_index]; }
};

inline StopReport normalize_losses(std::span<const LossRecord> history, const FiEstimate &input_fi) {
    require(input_fi.value > 0.0, "normalization needs a positive input FI");
    require(!history.empty(), "no losses to normalize");
    StopReport r;
    r.input_fi = input_fi;
    for (const auto &h : history) {
        r.epochs.push_back(h.epoch);
        r.train_loss.push_back(h.train_loss);
        r.val_loss.push_back(h.val_loss);
        r.norm_train.push_back(h.train_loss * input_fi.value);
        r.norm_val.push_back(h.val_loss * input_fi.value);
    }
    for (std::size_t i = 1; i < r.val_loss.size(); ++i) {
        if (r.val_loss[i] < r.val_loss[r.val_min_index]) {
            r.val_min_index = i;
        }
    }
    return r;
}

inline StopReport normalize_losses(const std::vector<Checkpoint> &ckpts, const FiEstimate &input_fi) {
    std::vector<LossRecord> history;
    for (const auto &c : ckpts) {
        history.push_back({c.epoch, c.train_loss, c.val_loss});
    }
    return normalize_losses(history, input_fi);
}

/// Index of the first entry with MSE * I < 1. Validation losses are never
/// consulted.
inline std::optional<std::size_t> stopping_epoch(const StopReport &r) {
    require(!r.norm_train.empty(), "empty loss series");
    for (std::size_t i = 0; i < r.norm_train.size(); ++i) {
        if (r.norm_train[i] < 1.0) {
            return i;
        }
    }
    return std::nullopt;
}

inline Vector scalar_outputs(const MlpModel &m, const SampleMatrix &s) {
    require(m.output_dim() == 1, "model output must be scalar");
    return predict(m, s.data()).col(0);
}

/// d<theta_hat>/d theta from the mean outputs on the plus and minus blocks.
inline double bias_gradient(const Checkpoint &ckpt, const TripletSample &t) {
    t.validate();
    const Vector plus = scalar_outputs(ckpt.model, t.plus);
    const Vector minus = scalar_outputs(ckpt.model, t.minus);
    Vector mp(1), mm(1);
    mp << plus.mean();
    mm << minus.mean();
    return central_difference(mp, mm, t.delta_theta)(0);
}

struct CrlbGap {
    double ratio = 0.0;          ///< Var(theta_hat) * I / b^2
    double variance = 0.0;       ///< on the center block
    double bias_gradient = 0.0;  ///< b
    double rel_std = 0.0;        ///< combined relative error of the ratio
    bool inconsistent = false;   ///< ratio below 1 - 3 rel_std
};

/// Achieved variance over the bias-aware bound (d<theta_hat>/d theta)^2 / I.
inline CrlbGap crlb_gap(const Checkpoint &ckpt, const TripletSample &t, const FiEstimate &input_fi) {
    require(input_fi.value > 0.0, "crlb_gap needs a positive input FI");
    t.validate();
    const Vector center = scalar_outputs(ckpt.model, t.center);
    const Vector plus = scalar_outputs(ckpt.model, t.plus);
    const Vector minus = scalar_outputs(ckpt.model, t.minus);
    auto var = [](const Vector &v) {
        return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
    };
    CrlbGap g;
    g.variance = var(center);
    g.bias_gradient = (plus.mean() - minus.mean()) / (2.0 * t.delta_theta);
    const double b2 = g.bias_gradient * g.bias_gradient;
    g.ratio = b2 > 0.0 ? g.variance * input_fi.value / b2 : std::numeric_limits<double>::infinity();

    const double n_c = static_cast<double>(center.size());
    const double rel_var = std::sqrt(2.0 / (n_c - 1.0));
    const double b_std = std::sqrt(var(plus) / static_cast<double>(plus.size()) +
                                   var(minus) / static_cast<double>(minus.size())) /
                         (2.0 * t.delta_theta);
    const double rel_b2 = g.bias_gradient != 0.0 ? 2.0 * b_std / std::abs(g.bias_gradient) : 0.0;
    g.rel_std = std::sqrt(rel_var * rel_var + input_fi.rel_std * input_fi.rel_std + rel_b2 * rel_b2);
    g.inconsistent = g.ratio < 1.0 - 3.0 * g.rel_std;
    return g;
}

/// Information averaged over several parameter values, for datasets whose
/// FI depends on theta.
inline FiEstimate average_fi(std::span<const FiEstimate> values) {
    require(!values.empty(), "nothing to average");
    FiEstimate out;
    double var = 0.0;
    double raw = 0.0;
    for (const auto &v : values) {
        out.value += v.value;
        raw += v.raw_value;
        var += v.abs_std * v.abs_std;
    }
    const double k = static_cast<double>(values.size());
    out.value /= k;
    out.raw_value = raw / k;
    out.abs_std = std::sqrt(var) / k;
    out.rel_std = out.value > 0.0 ? out.abs_std / out.value : 0.0;
    out.method = values.front().method;
    return out;
}

inline void write_stop_csv(std::ostream &out, const StopReport &r) {
    out << "epoch,train_loss,val_loss,norm_train,norm_val\n";
    for (std::size_t i = 0; i < r.epochs.size(); ++i) {
        out << r.epochs[i] << ',' << format_double(r.train_loss[i]) << ',' << format_double(r.val_loss[i]) << ','
            << format_double(r.norm_train[i]) << ',' << format_double(r.norm_val[i]) << '\n';
    }
}

inline nlohmann::json stop_summary_json(const StopReport &r) {
    nlohmann::json j;
    const auto crossing = r.crossing_epoch();
    j["crossing_epoch"] = crossing ? nlohmann::json(*crossing) : nlohmann::json(nullptr);
    j["val_min_epoch"] = r.val_min_epoch();
    j["input_fi"] = r.input_fi.value;
    j["rel_std"] = r.input_fi.rel_std;
    j["crlb_gap"] = r.crlb_gap ? nlohmann::json(*r.crlb_gap) : nlohmann::json(nullptr);
    j["crlb_gap_rel_std"] = r.crlb_gap_rel_std ? nlohmann::json(*r.crlb_gap_rel_std) : nlohmann::json(nullptr);
    j["bias_gradient"] = r.bias_gradient ? nlohmann::json(*r.bias_gradient) : nlohmann::json(nullptr);
    j["input_fi_estimate"] = to_json(r.input_fi);
    j["epochs"] = r.epochs;
    j["train_loss"] = r.train_loss;
    j["val_loss"] = r.val_loss;
    return j;
}

inline StopReport stop_from_json(const nlohmann::json &j) {
    std::vector<LossRecord> history;
    const auto epochs = j.at("epochs").get<std::vector<int>>();
    const auto train = j.at("train_loss").get<std::vector<double>>();
    const auto val = j.at("val_loss").get<std::vector<double>>();
    require(epochs.size() == train.size() && train.size() == val.size(), "stop JSON series differ in length");
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        history.push_back({epochs[i], train[i], val[i]});
    }
    StopReport r = normalize_losses(history, fi_estimate_from_json(j.at("input_fi_estimate")));
    r.crossing_index = stopping_epoch(r);
    auto opt = [&](const char *key) -> std::optional<double> {
        if (!j.contains(key) || j.at(key).is_null()) {
            return std::nullopt;
        }
        return j.at(key).get<double>();
    };
    r.crlb_gap = opt("crlb_gap");
    r.crlb_gap_rel_std = opt("crlb_gap_rel_std");
    r.bias_gradient = opt("bias_gradient");
    return r;
}

}  // namespace fflow
