#pragma once

// Experiment plumbing shared by the command-line tool and the tests: turns a
// RunConfig into datasets, trained checkpoints and reports.

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fflow/checkpoint.hpp"
#include "fflow/config.hpp"
#include "fflow/datagen.hpp"
#include "fflow/earlystop.hpp"
#include "fflow/flow.hpp"

namespace fflow {

inline Matrix experiment_mixing(const RunConfig &c) {
    return mixing_matrix(c.data.dim, c.data.mix_std, c.seeds().matrix);
}

/// Analytic FI of the generated data at the triplet center, when known.
inline std::optional<double> analytic_fi(const RunConfig &c) {
    switch (data_kind(c.experiment)) {
        case DataKind::gaussian_mean: return GaussianMean{c.data.dim}.analytic_fi(c.data.triplet_theta);
        case DataKind::gaussian_std: return GaussianStd{c.data.dim}.analytic_fi(c.data.triplet_theta);
        case DataKind::lognormal: return LogNormal{experiment_mixing(c)}.analytic_fi(c.data.triplet_theta);
        case DataKind::images: return std::nullopt;
    }
    return std::nullopt;
}

/// Reads either container type, recognized by its magic.
inline GridDataset load_grid(const std::string &path, const CropWindow &crop) {
    auto in = io::open_in(path);
    char head[11] = {};
    in.read(head, sizeof head);
    if (std::string_view(head, static_cast<std::size_t>(in.gcount())) == kImageMagic) {
        return load_image_container(path, crop);
    }
    return load_dataset(path);
}

/// Calls f(generator) with the synthetic generator of the experiment.
template <typename F>
decltype(auto) with_generator(const RunConfig &c, F &&f) {
    switch (data_kind(c.experiment)) {
        case DataKind::gaussian_mean: return f(GaussianMean{c.data.dim});
        case DataKind::gaussian_std: return f(GaussianStd{c.data.dim});
        case DataKind::lognormal: return f(LogNormal{experiment_mixing(c)});
        case DataKind::images: break;
    }
    throw Error("experiment " + std::string(to_string(c.experiment)) +
                " has no generator; supply data.train_path / data.triplet_path");
}

inline GridDataset training_grid(const RunConfig &c) {
    if (!c.data.train_path.empty()) {
        return load_grid(c.data.train_path, c.data.crop);
    }
    const auto grid = linspace(c.data.grid_lo, c.data.grid_hi, c.data.grid_count);
    GridDataset ds = with_generator(
        c, [&](const auto &gen) { return generate_grid(gen, grid, c.data.n_per_theta, c.seeds().data); });
    if (data_kind(c.experiment) == DataKind::lognormal) {
        ds.mixing = experiment_mixing(c);
    }
    ds.provenance = config_to_json(c).dump();
    return ds;
}

/// The three-block grid theta - dt, theta, theta + dt as a triplet.
inline TripletSample triplet_from_grid(GridDataset &&ds) {
    require(ds.blocks.size() == 3, "a triplet dataset needs exactly 3 blocks");
    const double lo = ds.thetas[1] - ds.thetas[0];
    const double hi = ds.thetas[2] - ds.thetas[1];
    require(std::abs(lo - hi) <= 1e-9 * std::max(std::abs(lo), std::abs(hi)), "triplet grid must be equally spaced");
    return TripletSample{std::move(ds.blocks[0]), std::move(ds.blocks[1]), std::move(ds.blocks[2]), ds.thetas[1],
                         0.5 * (lo + hi)};
}

inline TripletSample experiment_triplet(const RunConfig &c) {
    if (!c.data.triplet_path.empty()) {
        return triplet_from_grid(load_grid(c.data.triplet_path, c.data.crop));
    }
    return with_generator(c, [&](const auto &gen) {
        return make_triplet(gen, c.data.triplet_theta, c.data.triplet_delta, c.data.triplet_n, c.seeds().triplet);
    });
}

inline GridDataset triplet_to_grid(const TripletSample &t, const std::string &provenance) {
    GridDataset ds;
    ds.thetas = {t.theta - t.delta_theta, t.theta, t.theta + t.delta_theta};
    ds.blocks = {t.minus, t.center, t.plus};
    ds.provenance = provenance;
    return ds;
}

struct TrainOutcome {
    MlpModel model;  ///< final weights
    std::vector<Checkpoint> checkpoints;
    std::vector<LossRecord> history;
};

inline TrainOutcome run_training(const RunConfig &c, GridDataset &&grid) {
    LabeledDataset data = make_labeled(std::move(grid));
    TrainOutcome out;
    out.model = init_mlp(c.net);
    const auto epochs = c.resolved_checkpoint_epochs();
    out.checkpoints = train(out.model, data, c.train, epochs, &out.history);
    return out;
}

inline FlowOptions flow_options(const RunConfig &c) {
    FlowOptions o;
    o.workers = c.workers;
    o.exceptions = c.flow.exceptions;
    o.on_insufficient = c.flow.annotate_insufficient ? InsufficientPolicy::annotate : InsufficientPolicy::propagate;
    return o;
}

/// Input FI for the stopping rule: maximized FI at the triplet center, or
/// the average over es.fi_thetas equally spaced grid points.
inline FiEstimate stopping_input_fi(const RunConfig &c, const TripletSample &center) {
    EmbedConfig ecfg = c.embed;
    ecfg.seed = derive_seed(c.embed.seed, "es-input");
    if (c.es.fi_thetas <= 1) {
        return maximize_lfi(center, ecfg).final;
    }
    const auto thetas = linspace(c.data.grid_lo + c.data.triplet_delta, c.data.grid_hi - c.data.triplet_delta,
                                 c.es.fi_thetas);
    std::vector<FiEstimate> values(thetas.size());
    parallel_for(thetas.size(), c.workers, [&](std::size_t i) {
        const TripletSample t = with_generator(c, [&](const auto &gen) {
            return make_triplet(gen, thetas[i], c.data.triplet_delta, c.data.triplet_n,
                                derive_seed(c.seeds().triplet, "es-theta", i));
        });
        EmbedConfig cell = ecfg;
        cell.seed = derive_seed(ecfg.seed, i);
        values[i] = maximize_lfi(t, cell).final;
    });
    return average_fi(values);
}

/// Stop report with the crossing epoch and, if a checkpoint exists for that
/// epoch, the CRLB gap there.
inline StopReport run_earlystop(const std::vector<LossRecord> &history, const FiEstimate &input_fi,
                                const std::vector<Checkpoint> &ckpts, const TripletSample &t) {
    StopReport r = normalize_losses(history, input_fi);
    r.crossing_index = stopping_epoch(r);
    if (r.crossing_index) {
        const int epoch = r.epochs[*r.crossing_index];
        for (const auto &c : ckpts) {
            if (c.epoch == epoch) {
                const CrlbGap g = crlb_gap(c, t, input_fi);
                r.crlb_gap = g.ratio;
                r.crlb_gap_rel_std = g.rel_std;
                r.bias_gradient = g.bias_gradient;
            }
        }
    }
    return r;
}

}  // namespace fflow
