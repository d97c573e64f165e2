#pragma once

// Layerwise Fisher information of a network across training checkpoints.

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fflow/datagen.hpp"
#include "fflow/embed.hpp"
#include "fflow/errors.hpp"
#include "fflow/lfi.hpp"
#include "fflow/nn.hpp"
#include "fflow/parallel.hpp"
#include "fflow/text.hpp"

namespace fflow {

/// Output of layer k+1 given the activations of layer k.
inline RowMatrix apply_layer(const MlpModel &m, std::size_t k, const RowMatrix &x) {
    require(k < m.weights.size(), "layer index out of range");
    require(x.cols() == m.weights[k].cols(), "activation width does not match layer input");
    RowMatrix out;
    detail::affine(out, x, m, k);
    if (k + 1 != m.weights.size()) {
        detail::apply_activation(out, m.spec);
    }
    return out;
}

inline TripletSample advance_triplet(const MlpModel &m, std::size_t k, const TripletSample &t) {
    return TripletSample{SampleMatrix(apply_layer(m, k, t.minus.data())),
                         SampleMatrix(apply_layer(m, k, t.center.data())),
                         SampleMatrix(apply_layer(m, k, t.plus.data())), t.theta, t.delta_theta};
}

/// Triplets of every layer, input first. Holds all layers in memory at once;
/// fi_flow walks them one at a time instead.
inline std::vector<TripletSample> layer_triplets(const Checkpoint &ckpt, const TripletSample &t) {
    t.validate();
    require(t.dim() == ckpt.model.input_dim(), "triplet width does not match the network input");
    std::vector<TripletSample> out;
    out.push_back(t);
    for (std::size_t k = 0; k < ckpt.model.weights.size(); ++k) {
        out.push_back(advance_triplet(ckpt.model, k, out.back()));
    }
    return out;
}

struct FlowCell {
    int epoch = 0;
    Index layer = 0;
    Index d_layer = 0;
    FiEstimate fi;
    double normalized = 0.0;
    Verdict verdict = Verdict::not_converged;
    bool precision_limited = false;
    /// The sample could not resolve this cell's information; `fi` holds the
    /// corrected LFI of the raw layer instead of a maximized value.
    bool insufficient = false;
    /// Listed as an expected exception by the caller.
    bool annotated = false;
    std::string warning;
    MaximizationTrace trace;
};

struct FlowReport {
    std::vector<int> epochs;
    std::vector<Index> layers;
    std::vector<Index> dims;
    FiEstimate input_fi;
    std::vector<std::vector<FlowCell>> cells;  ///< [epoch index][layer]

    const FlowCell &at(std::size_t e, std::size_t layer) const { return cells[e][layer]; }
};

/// A (epoch, layer) cell the caller expects not to converge.
struct CellException {
    int epoch = 0;
    Index layer = 0;
};

enum class InsufficientPolicy { propagate, annotate };

struct FlowOptions {
    unsigned workers = 1;
    InsufficientPolicy on_insufficient = InsufficientPolicy::propagate;
    std::vector<CellException> exceptions;

    bool is_exception(int epoch, Index layer) const {
        for (const auto &e : exceptions) {
            if (e.epoch == epoch && e.layer == layer) {
                return true;
            }
        }
        return false;
    }
};

/// Seed of the (epoch, layer) cell; the input layer has a single cell
/// shared by all epochs.
inline std::uint64_t cell_seed(std::uint64_t seed, int epoch, Index layer) {
    if (layer == 0) {
        return derive_seed(seed, "input");
    }
    return derive_seed(seed, "cell", static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(layer));
}

namespace detail {

inline FlowCell estimate_cell(const TripletSample &t, const EmbedConfig &ecfg, int epoch, Index layer,
                              const FlowOptions &opt) {
    EmbedConfig cfg = ecfg;
    cfg.seed = cell_seed(ecfg.seed, epoch, layer);
    FlowCell cell;
    cell.epoch = epoch;
    cell.layer = layer;
    cell.d_layer = t.dim();
    cell.annotated = opt.is_exception(epoch, layer);
    try {
        cell.trace = maximize_lfi(t, cfg);
        cell.fi = cell.trace.final;
        cell.verdict = cell.trace.verdict;
        cell.precision_limited = cell.trace.precision_limited;
        cell.warning = cell.trace.warning;
    } catch (const InsufficientSample &e) {
        const std::string where = "epoch " + std::to_string(epoch) + " layer " + std::to_string(layer) + ": ";
        if (opt.on_insufficient == InsufficientPolicy::propagate) {
            throw InsufficientSample(where + e.what(), e.required_n());
        }
        cell.insufficient = true;
        cell.fi = lfi_corrected(t, cfg.lfi);
        cell.verdict = Verdict::not_converged;
        cell.warning = std::string("insufficient sample: ") + e.what();
    }
    return cell;
}

}  // namespace detail

/// FI of every layer at every checkpoint, normalized by the input FI.
/// Checkpoints are processed in parallel; layers of one checkpoint are
/// walked sequentially so at most one layer triplet per worker is alive.
inline FlowReport fi_flow(const std::vector<Checkpoint> &ckpts, const TripletSample &t, const EmbedConfig &ecfg,
                          const FlowOptions &opt = {}) {
    require(!ckpts.empty(), "flow needs at least one checkpoint");
    t.validate();
    ecfg.validate();
    const MlpModel &first = ckpts.front().model;
    require(t.dim() == first.input_dim(), "triplet width does not match the network input");
    for (const auto &c : ckpts) {
        require(c.model.spec.layer_sizes == first.spec.layer_sizes, "checkpoints must share one architecture");
    }

    FlowReport report;
    for (Index k = 0; k < first.layer_count(); ++k) {
        report.layers.push_back(k);
        report.dims.push_back(first.spec.layer_sizes[static_cast<std::size_t>(k)]);
    }
    const FlowCell input = detail::estimate_cell(t, ecfg, 0, 0, opt);
    report.input_fi = input.fi;

    report.epochs.resize(ckpts.size());
    report.cells.resize(ckpts.size());
    parallel_for(ckpts.size(), opt.workers, [&](std::size_t e) {
        const Checkpoint &ckpt = ckpts[e];
        report.epochs[e] = ckpt.epoch;
        auto &row = report.cells[e];
        row.push_back(input);
        row.back().epoch = ckpt.epoch;
        row.back().annotated = opt.is_exception(ckpt.epoch, 0);
        TripletSample current = t;
        for (std::size_t k = 0; k < ckpt.model.weights.size(); ++k) {
            current = advance_triplet(ckpt.model, k, current);
            row.push_back(detail::estimate_cell(current, ecfg, ckpt.epoch, static_cast<Index>(k + 1), opt));
        }
    });

    const double base = report.input_fi.value;
    for (auto &row : report.cells) {
        for (auto &cell : row) {
            if (cell.layer == 0) {
                cell.normalized = 1.0;
            } else {
                cell.normalized = base > 0.0 ? cell.fi.value / base : std::numeric_limits<double>::quiet_NaN();
            }
        }
    }
    return report;
}

struct MonotoneViolation {
    int epoch = 0;
    Index from_layer = 0;
    Index to_layer = 0;
    double increase = 0.0;
    double tolerance = 0.0;
};

/// Every pair of layers i < j of one checkpoint where FI grows by more than
/// k_sigma combined standard errors.
inline std::vector<MonotoneViolation> check_monotone(const FlowReport &r, double k_sigma) {
    std::vector<MonotoneViolation> out;
    for (const auto &row : r.cells) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            for (std::size_t j = i + 1; j < row.size(); ++j) {
                const double inc = row[j].fi.value - row[i].fi.value;
                const double tol = k_sigma * std::hypot(row[i].fi.abs_std, row[j].fi.abs_std);
                if (inc > tol) {
                    out.push_back({row[i].epoch, row[i].layer, row[j].layer, inc, tol});
                }
            }
        }
    }
    return out;
}

/// Cells that neither converged nor were listed as expected exceptions.
inline std::vector<const FlowCell *> blocking_cells(const FlowReport &r) {
    std::vector<const FlowCell *> out;
    for (const auto &row : r.cells) {
        for (const auto &cell : row) {
            if ((cell.verdict == Verdict::not_converged || cell.insufficient) && !cell.annotated) {
                out.push_back(&cell);
            }
        }
    }
    return out;
}

inline void write_flow_csv(std::ostream &out, const FlowReport &r) {
    out << "epoch,layer,d_layer,fi,rel_std,normalized,verdict\n";
    for (const auto &row : r.cells) {
        for (const auto &c : row) {
            out << c.epoch << ',' << c.layer << ',' << c.d_layer << ',' << format_double(c.fi.value) << ','
                << format_double(c.fi.rel_std) << ',' << format_double(c.normalized) << ',' << to_string(c.verdict)
                << '\n';
        }
    }
}

inline nlohmann::json to_json(const FiEstimate &e) {
    return {{"value", e.value},
            {"raw_value", e.raw_value},
            {"rel_std", e.rel_std},
            {"abs_std", e.abs_std},
            {"method", std::string(to_string(e.method))}};
}

inline FiEstimate fi_estimate_from_json(const nlohmann::json &j) {
    FiEstimate e;
    e.value = j.at("value").get<double>();
    e.raw_value = j.at("raw_value").get<double>();
    e.rel_std = j.at("rel_std").get<double>();
    e.abs_std = j.at("abs_std").get<double>();
    const auto m = j.at("method").get<std::string>();
    e.method = m == "maximized" ? FiMethod::maximized : m == "corrected" ? FiMethod::corrected : FiMethod::plugin;
    return e;
}

namespace detail {

/// JSON has no NaN; non-finite doubles are stored as strings.
inline nlohmann::json number(double x) {
    if (std::isfinite(x)) {
        return x;
    }
    return format_double(x);
}

inline double number_from(const nlohmann::json &j) {
    if (j.is_string()) {
        return std::strtod(j.get<std::string>().c_str(), nullptr);
    }
    return j.get<double>();
}

}  // namespace detail

inline nlohmann::json to_json(const FlowReport &r) {
    nlohmann::json j;
    j["epochs"] = r.epochs;
    j["layers"] = r.layers;
    j["dims"] = r.dims;
    j["input_fi"] = to_json(r.input_fi);
    auto &cells = j["cells"] = nlohmann::json::array();
    for (const auto &row : r.cells) {
        for (const auto &c : row) {
            nlohmann::json trace = {{"d_prime", c.trace.dims}, {"lfi", c.trace.lfi_values},
                                    {"rel_std", c.trace.rel_stds}, {"rule", std::string(to_string(c.trace.rule))}};
            cells.push_back({{"epoch", c.epoch},
                             {"layer", c.layer},
                             {"d_layer", c.d_layer},
                             {"fi", to_json(c.fi)},
                             {"normalized", detail::number(c.normalized)},
                             {"verdict", std::string(to_string(c.verdict))},
                             {"precision_limited", c.precision_limited},
                             {"insufficient", c.insufficient},
                             {"annotated", c.annotated},
                             {"warning", c.warning},
                             {"trace", trace}});
        }
    }
    return j;
}

inline FlowReport flow_from_json(const nlohmann::json &j) {
    FlowReport r;
    r.epochs = j.at("epochs").get<std::vector<int>>();
    r.layers = j.at("layers").get<std::vector<Index>>();
    r.dims = j.at("dims").get<std::vector<Index>>();
    r.input_fi = fi_estimate_from_json(j.at("input_fi"));
    r.cells.resize(r.epochs.size());
    std::size_t i = 0;
    for (const auto &jc : j.at("cells")) {
        FlowCell c;
        c.epoch = jc.at("epoch").get<int>();
        c.layer = jc.at("layer").get<Index>();
        c.d_layer = jc.at("d_layer").get<Index>();
        c.fi = fi_estimate_from_json(jc.at("fi"));
        c.normalized = detail::number_from(jc.at("normalized"));
        c.verdict = verdict_from_string(jc.at("verdict").get<std::string>());
        c.precision_limited = jc.at("precision_limited").get<bool>();
        c.insufficient = jc.at("insufficient").get<bool>();
        c.annotated = jc.at("annotated").get<bool>();
        c.warning = jc.at("warning").get<std::string>();
        const auto &jt = jc.at("trace");
        c.trace.dims = jt.at("d_prime").get<std::vector<Index>>();
        c.trace.lfi_values = jt.at("lfi").get<std::vector<double>>();
        c.trace.rel_stds = jt.at("rel_std").get<std::vector<double>>();
        c.trace.rule = verdict_from_string(jt.at("rule").get<std::string>());
        c.trace.verdict = c.verdict;
        const std::size_t e = i / r.layers.size();
        require(e < r.cells.size(), "flow JSON has more cells than epochs x layers");
        r.cells[e].push_back(std::move(c));
        ++i;
    }
    return r;
}

// --- parameter-resolved flow ------------------------------------------------

struct ParamFlowReport {
    std::vector<double> thetas;
    std::vector<Index> layers;
    std::vector<std::vector<FlowCell>> cells;  ///< [theta index][layer]; epoch field = checkpoint epoch
};

/// FI per layer at each theta, with one freshly generated triplet per theta
/// (seed derive_seed(seed, "theta", i)). Cell seeds are keyed by theta index.
template <typename Generator>
ParamFlowReport param_resolved_flow(const Checkpoint &ckpt, const std::vector<double> &thetas, double delta_theta,
                                    Index n, const EmbedConfig &ecfg, const Generator &gen, std::uint64_t seed,
                                    const FlowOptions &opt = {}) {
    require(!thetas.empty(), "no theta values");
    ParamFlowReport r;
    r.thetas = thetas;
    for (Index k = 0; k < ckpt.model.layer_count(); ++k) {
        r.layers.push_back(k);
    }
    r.cells.resize(thetas.size());
    parallel_for(thetas.size(), opt.workers, [&](std::size_t i) {
        TripletSample current = make_triplet(gen, thetas[i], delta_theta, n, derive_seed(seed, "theta", i));
        require(current.dim() == ckpt.model.input_dim(), "generated width does not match the network input");
        EmbedConfig cfg = ecfg;
        cfg.seed = derive_seed(ecfg.seed, "theta", i);
        auto &row = r.cells[i];
        row.push_back(detail::estimate_cell(current, cfg, ckpt.epoch, 0, opt));
        for (std::size_t k = 0; k < ckpt.model.weights.size(); ++k) {
            current = advance_triplet(ckpt.model, k, current);
            row.push_back(detail::estimate_cell(current, cfg, ckpt.epoch, static_cast<Index>(k + 1), opt));
        }
        const double base = row.front().fi.value;
        for (auto &c : row) {
            c.normalized = c.layer == 0 ? 1.0 : (base > 0.0 ? c.fi.value / base : std::numeric_limits<double>::quiet_NaN());
        }
    });
    return r;
}

inline void write_param_flow_csv(std::ostream &out, const ParamFlowReport &r) {
    out << "theta,layer,d_layer,fi,rel_std,normalized,verdict\n";
    for (std::size_t i = 0; i < r.thetas.size(); ++i) {
        for (const auto &c : r.cells[i]) {
            out << format_double(r.thetas[i]) << ',' << c.layer << ',' << c.d_layer << ',' << format_double(c.fi.value)
                << ',' << format_double(c.fi.rel_std) << ',' << format_double(c.normalized) << ','
                << to_string(c.verdict) << '\n';
        }
    }
}

}  // namespace fflow
