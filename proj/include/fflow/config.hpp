#pragma once

// Experiment configuration: an INI-style key/value file with a schema
// version, plus named presets for every experiment.

#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "fflow/datagen.hpp"
#include "fflow/embed.hpp"
#include "fflow/flow.hpp"
#include "fflow/nn.hpp"
#include "fflow/random.hpp"
#include "fflow/text.hpp"

namespace fflow {

inline constexpr int kSchemaVersion = 1;

enum class Experiment { gaussian_flow, experimental_flow, gaussian_es, experimental_es, lognormal_flow, lognormal_es, fig3_std };

inline constexpr Experiment kAllExperiments[] = {Experiment::gaussian_flow, Experiment::experimental_flow,
                                                 Experiment::gaussian_es,   Experiment::experimental_es,
                                                 Experiment::lognormal_flow, Experiment::lognormal_es,
                                                 Experiment::fig3_std};

inline std::string_view to_string(Experiment e) {
    switch (e) {
        case Experiment::gaussian_flow: return "gaussian_flow";
        case Experiment::experimental_flow: return "experimental_flow";
        case Experiment::gaussian_es: return "gaussian_es";
        case Experiment::experimental_es: return "experimental_es";
        case Experiment::lognormal_flow: return "lognormal_flow";
        case Experiment::lognormal_es: return "lognormal_es";
        case Experiment::fig3_std: return "fig3_std";
    }
    return "unknown";
}

inline Experiment experiment_from_string(std::string_view s) {
    for (Experiment e : kAllExperiments) {
        if (to_string(e) == s) {
            return e;
        }
    }
    throw ContractViolation("unknown experiment '" + std::string(s) + "'");
}

/// Which generator produces the data of an experiment.
enum class DataKind { gaussian_mean, gaussian_std, lognormal, images };

inline DataKind data_kind(Experiment e) {
    switch (e) {
        case Experiment::gaussian_flow:
        case Experiment::gaussian_es: return DataKind::gaussian_mean;
        case Experiment::lognormal_flow:
        case Experiment::lognormal_es: return DataKind::lognormal;
        case Experiment::fig3_std: return DataKind::gaussian_std;
        default: return DataKind::images;
    }
}

struct DataConfig {
    double grid_lo = -1.0;
    double grid_hi = 1.0;
    int grid_count = 31;
    Index n_per_theta = 20000;
    Index dim = 256;
    double mix_std = 0.1;
    double triplet_theta = 0.0;
    double triplet_delta = 0.03;
    Index triplet_n = 150000;
    std::string train_path;    ///< dataset or image container; empty = generate
    std::string triplet_path;  ///< three-block dataset or image container; empty = generate
    CropWindow crop;
};

struct FlowConfig {
    std::vector<CellException> exceptions;
    double k_sigma = 3.0;
    bool annotate_insufficient = true;
    int param_points = 15;
    double param_lo = -1.0;
    double param_hi = 1.0;
    double param_delta = 0.1;
    Index param_n = 100000;
};

struct EsConfig {
    /// Number of theta values the input FI is averaged over (1 = center only).
    int fi_thetas = 1;
};

/// Per-purpose seeds fanned out from the master seed, so changing one stage
/// never perturbs another: seed(purpose) = derive_seed(master, purpose).
struct Seeds {
    std::uint64_t data = 0;
    std::uint64_t triplet = 0;
    std::uint64_t matrix = 0;
    std::uint64_t init = 0;
    std::uint64_t shuffle = 0;
    std::uint64_t embed = 0;

    static Seeds from_master(std::uint64_t master) {
        return {derive_seed(master, "data"),  derive_seed(master, "triplet"), derive_seed(master, "matrix"),
                derive_seed(master, "init"),  derive_seed(master, "shuffle"), derive_seed(master, "embed")};
    }
};

struct RunConfig {
    int schema_version = kSchemaVersion;
    Experiment experiment = Experiment::gaussian_flow;
    std::uint64_t master_seed = 1;
    std::string out_dir = "out";
    unsigned workers = 1;
    DataConfig data;
    MlpSpec net;
    TrainConfig train;
    /// Epochs with saved checkpoints; empty = every epoch.
    std::vector<int> checkpoint_epochs;
    EmbedConfig embed;
    FlowConfig flow;
    EsConfig es;

    Seeds seeds() const { return Seeds::from_master(master_seed); }

    /// Copies the derived seeds into the module configs.
    void resolve() {
        const Seeds s = seeds();
        net.seed = s.init;
        train.shuffle_seed = s.shuffle;
        embed.seed = s.embed;
    }

    std::vector<int> resolved_checkpoint_epochs() const {
        if (!checkpoint_epochs.empty()) {
            return checkpoint_epochs;
        }
        std::vector<int> all;
        for (int e = 0; e <= train.epochs; ++e) {
            all.push_back(e);
        }
        return all;
    }

    void validate() const {
        require(schema_version == kSchemaVersion, "unsupported schema_version " + std::to_string(schema_version));
        net.validate();
        train.validate();
        embed.validate();
        require(data.grid_count >= 1 && data.n_per_theta >= 2, "grid needs points and samples");
        require(data.triplet_delta > 0.0 && data.triplet_n >= 2, "triplet needs positive spacing and samples");
        require(workers >= 1, "workers must be at least 1");
        require(es.fi_thetas >= 1, "es.fi_thetas must be at least 1");
        if (data_kind(experiment) != DataKind::gaussian_std) {
            require(net.layer_sizes.front() == (data_kind(experiment) == DataKind::images
                                                    ? data.crop.height * data.crop.width
                                                    : data.dim),
                    "network input width must equal the data dimension");
        }
        for (std::size_t i = 1; i < checkpoint_epochs.size(); ++i) {
            require(checkpoint_epochs[i] > checkpoint_epochs[i - 1], "checkpoint epochs must increase");
        }
        if (!checkpoint_epochs.empty()) {
            require(checkpoint_epochs.front() == 0, "checkpoint epochs must include 0");
        }
    }
};

/// Defaults for each experiment (architectures, learning rates, data sizes
/// and maximization parameters of the original study). Epoch counts are not
/// given there; the values below are choices.
inline RunConfig preset(Experiment e) {
    RunConfig c;
    c.experiment = e;
    c.net.activation = Activation::leaky_relu;
    c.net.activation_alpha = 0.7;
    c.train.batch_size = 128;
    c.embed.delta_d = 30;
    c.embed.kappa = 0.1;
    c.embed.gamma = 0.05;
    c.embed.sigma_noise = 0.01;
    switch (e) {
        case Experiment::gaussian_flow:
            c.data = {};
            c.net.layer_sizes = {256, 150, 100, 50, 25, 1};
            c.train.learning_rate = 1e-6;
            c.train.epochs = 100;
            c.checkpoint_epochs = {0, 1, 2, 5, 10, 20, 50, 100};
            c.flow.exceptions = {{0, 5}};
            break;
        case Experiment::experimental_flow:
            c.data.dim = 432;
            c.data.grid_count = 13;
            c.data.n_per_theta = 50000;
            c.data.triplet_theta = 0.0;
            c.data.triplet_delta = 0.3;
            c.data.triplet_n = 150000;
            c.data.train_path = "images_train.fimg";
            c.data.triplet_path = "images_triplet.fimg";
            c.net.layer_sizes = {432, 800, 100, 25, 5, 1};
            c.train.learning_rate = 5e-7;
            c.train.epochs = 100;
            c.checkpoint_epochs = {0, 1, 2, 5, 10, 20, 50, 100};
            c.flow.exceptions = {{0, 2}, {1, 2}, {0, 4}};
            break;
        case Experiment::gaussian_es:
            c.data.grid_lo = -1.5;
            c.data.grid_hi = 1.5;
            c.data.grid_count = 101;
            c.data.n_per_theta = 7000;
            c.net.layer_sizes = {256, 1000, 500, 300, 50, 1};
            c.train.learning_rate = 1e-7;
            c.train.epochs = 200;
            break;
        case Experiment::experimental_es:
            c.data.dim = 432;
            c.data.grid_count = 13;
            c.data.n_per_theta = 11000;
            c.data.triplet_delta = 0.3;
            c.data.train_path = "images_train.fimg";
            c.data.triplet_path = "images_triplet.fimg";
            c.net.layer_sizes = {432, 5000, 1500, 250, 150, 1};
            c.train.learning_rate = 1e-7;
            c.train.epochs = 200;
            break;
        case Experiment::lognormal_flow:
            c.data.grid_lo = -7.0;
            c.data.grid_hi = 7.0;
            c.data.grid_count = 21;
            c.data.n_per_theta = 20000;
            c.data.dim = 10;
            c.data.triplet_delta = 0.1;
            c.data.triplet_n = 150000;
            c.net.layer_sizes = {10, 150, 100, 50, 25, 1};
            c.train.learning_rate = 1e-4;
            c.train.epochs = 50;
            c.checkpoint_epochs = {0, 1, 2, 5, 10, 20, 50};
            c.embed.delta_d = 50;
            c.flow.exceptions = {{0, 5}};
            break;
        case Experiment::lognormal_es:
            c.data.grid_lo = -7.0;
            c.data.grid_hi = 7.0;
            c.data.grid_count = 21;
            c.data.n_per_theta = 20000;
            c.data.dim = 10;
            c.data.triplet_delta = 0.1;
            c.data.triplet_n = 150000;
            c.net.layer_sizes = {10, 1500, 1000, 350, 150, 1};
            c.train.learning_rate = 5e-6;
            c.train.epochs = 100;
            c.embed.delta_d = 50;
            break;
        case Experiment::fig3_std:
            c.data.dim = 50;
            c.data.triplet_theta = 1.0;
            c.data.triplet_delta = 0.05;
            c.data.triplet_n = 100000;
            c.data.grid_lo = 0.5;
            c.data.grid_hi = 1.5;
            c.data.grid_count = 11;
            c.net.layer_sizes = {50, 1};
            c.embed.delta_d = 100;
            c.embed.sigma_noise = 0.1;
            break;
    }
    c.resolve();
    return c;
}

namespace detail {

template <typename T>
std::string join(const std::vector<T> &v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        os << (i ? "," : "") << v[i];
    }
    return os.str();
}

template <typename T>
std::vector<T> split_list(const std::string &s) {
    std::vector<T> out;
    std::vector<std::string> parts;
    boost::split(parts, s, boost::is_any_of(","));
    for (auto &p : parts) {
        boost::trim(p);
        if (!p.empty()) {
            out.push_back(boost::lexical_cast<T>(p));
        }
    }
    return out;
}

inline std::string exceptions_text(const std::vector<CellException> &v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        os << (i ? "," : "") << v[i].epoch << ':' << v[i].layer;
    }
    return os.str();
}

inline std::vector<CellException> parse_exceptions(const std::string &s) {
    std::vector<CellException> out;
    for (const auto &item : split_list<std::string>(s)) {
        const auto colon = item.find(':');
        require(colon != std::string::npos, "exception '" + item + "' must be epoch:layer");
        out.push_back({std::stoi(item.substr(0, colon)), static_cast<Index>(std::stol(item.substr(colon + 1)))});
    }
    return out;
}

}  // namespace detail

/// Flat key -> text view of the configuration; keys are "section.name".
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig &c) {
    const auto d = [](double x) { return format_double(x); };
    return {
        {"run.schema_version", std::to_string(c.schema_version)},
        {"run.experiment", std::string(to_string(c.experiment))},
        {"run.master_seed", std::to_string(c.master_seed)},
        {"run.out_dir", c.out_dir},
        {"run.workers", std::to_string(c.workers)},
        {"data.grid_lo", d(c.data.grid_lo)},
        {"data.grid_hi", d(c.data.grid_hi)},
        {"data.grid_count", std::to_string(c.data.grid_count)},
        {"data.n_per_theta", std::to_string(c.data.n_per_theta)},
        {"data.dim", std::to_string(c.data.dim)},
        {"data.mix_std", d(c.data.mix_std)},
        {"data.triplet_theta", d(c.data.triplet_theta)},
        {"data.triplet_delta", d(c.data.triplet_delta)},
        {"data.triplet_n", std::to_string(c.data.triplet_n)},
        {"data.train_path", c.data.train_path},
        {"data.triplet_path", c.data.triplet_path},
        {"data.crop_height", std::to_string(c.data.crop.height)},
        {"data.crop_width", std::to_string(c.data.crop.width)},
        {"data.crop_row_offset", std::to_string(c.data.crop.row_offset)},
        {"data.crop_col_offset", std::to_string(c.data.crop.col_offset)},
        {"net.layer_sizes", detail::join(c.net.layer_sizes)},
        {"net.activation", std::string(to_string(c.net.activation))},
        {"net.activation_alpha", d(c.net.activation_alpha)},
        {"train.learning_rate", d(c.train.learning_rate)},
        {"train.batch_size", std::to_string(c.train.batch_size)},
        {"train.epochs", std::to_string(c.train.epochs)},
        {"train.adam_beta1", d(c.train.adam_beta1)},
        {"train.adam_beta2", d(c.train.adam_beta2)},
        {"train.adam_eps", d(c.train.adam_eps)},
        {"train.val_fraction", d(c.train.val_fraction)},
        {"train.checkpoint_epochs", detail::join(c.checkpoint_epochs)},
        {"embed.delta_d", std::to_string(c.embed.delta_d)},
        {"embed.kappa", d(c.embed.kappa)},
        {"embed.gamma", d(c.embed.gamma)},
        {"embed.sigma_noise", d(c.embed.sigma_noise)},
        {"embed.alpha", d(c.embed.alpha)},
        {"embed.max_dim", std::to_string(c.embed.max_dim)},
        {"embed.smooth", c.embed.smooth ? "true" : "false"},
        {"embed.max_rel_std", d(c.embed.max_rel_std)},
        {"embed.rel_tol", d(c.embed.lfi.rel_tol)},
        {"embed.step", c.embed.lfi.step == StepConvention::full_spacing ? "full_spacing" : "half_step"},
        {"flow.exceptions", detail::exceptions_text(c.flow.exceptions)},
        {"flow.k_sigma", d(c.flow.k_sigma)},
        {"flow.annotate_insufficient", c.flow.annotate_insufficient ? "true" : "false"},
        {"flow.param_points", std::to_string(c.flow.param_points)},
        {"flow.param_lo", d(c.flow.param_lo)},
        {"flow.param_hi", d(c.flow.param_hi)},
        {"flow.param_delta", d(c.flow.param_delta)},
        {"flow.param_n", std::to_string(c.flow.param_n)},
        {"es.fi_thetas", std::to_string(c.es.fi_thetas)},
    };
}

namespace detail {

inline bool parse_bool(const std::string &s) {
    if (s == "true" || s == "1" || s == "yes") {
        return true;
    }
    if (s == "false" || s == "0" || s == "no") {
        return false;
    }
    throw ContractViolation("expected a boolean, got '" + s + "'");
}

}  // namespace detail

/// Sets one "section.name" key from text.
inline void set_config_value(RunConfig &c, const std::string &key, const std::string &raw) {
    const std::string v = boost::trim_copy(raw);
    using boost::lexical_cast;
    auto num = [&]<typename T>(T &field) { field = lexical_cast<T>(v); };
    try {
        if (key == "run.schema_version") num(c.schema_version);
        else if (key == "run.experiment") c.experiment = experiment_from_string(v);
        else if (key == "run.master_seed") num(c.master_seed);
        else if (key == "run.out_dir") c.out_dir = v;
        else if (key == "run.workers") num(c.workers);
        else if (key == "data.grid_lo") num(c.data.grid_lo);
        else if (key == "data.grid_hi") num(c.data.grid_hi);
        else if (key == "data.grid_count") num(c.data.grid_count);
        else if (key == "data.n_per_theta") num(c.data.n_per_theta);
        else if (key == "data.dim") num(c.data.dim);
        else if (key == "data.mix_std") num(c.data.mix_std);
        else if (key == "data.triplet_theta") num(c.data.triplet_theta);
        else if (key == "data.triplet_delta") num(c.data.triplet_delta);
        else if (key == "data.triplet_n") num(c.data.triplet_n);
        else if (key == "data.train_path") c.data.train_path = v;
        else if (key == "data.triplet_path") c.data.triplet_path = v;
        else if (key == "data.crop_height") num(c.data.crop.height);
        else if (key == "data.crop_width") num(c.data.crop.width);
        else if (key == "data.crop_row_offset") num(c.data.crop.row_offset);
        else if (key == "data.crop_col_offset") num(c.data.crop.col_offset);
        else if (key == "net.layer_sizes") c.net.layer_sizes = detail::split_list<Index>(v);
        else if (key == "net.activation") c.net.activation = activation_from_string(v);
        else if (key == "net.activation_alpha") num(c.net.activation_alpha);
        else if (key == "train.learning_rate") num(c.train.learning_rate);
        else if (key == "train.batch_size") num(c.train.batch_size);
        else if (key == "train.epochs") num(c.train.epochs);
        else if (key == "train.adam_beta1") num(c.train.adam_beta1);
        else if (key == "train.adam_beta2") num(c.train.adam_beta2);
        else if (key == "train.adam_eps") num(c.train.adam_eps);
        else if (key == "train.val_fraction") num(c.train.val_fraction);
        else if (key == "train.checkpoint_epochs") c.checkpoint_epochs = detail::split_list<int>(v);
        else if (key == "embed.delta_d") num(c.embed.delta_d);
        else if (key == "embed.kappa") num(c.embed.kappa);
        else if (key == "embed.gamma") num(c.embed.gamma);
        else if (key == "embed.sigma_noise") num(c.embed.sigma_noise);
        else if (key == "embed.alpha") num(c.embed.alpha);
        else if (key == "embed.max_dim") num(c.embed.max_dim);
        else if (key == "embed.smooth") c.embed.smooth = detail::parse_bool(v);
        else if (key == "embed.max_rel_std") num(c.embed.max_rel_std);
        else if (key == "embed.rel_tol") num(c.embed.lfi.rel_tol);
        else if (key == "embed.step") {
            require(v == "full_spacing" || v == "half_step", "embed.step must be full_spacing or half_step");
            c.embed.lfi.step = v == "half_step" ? StepConvention::half_step : StepConvention::full_spacing;
        }
        else if (key == "flow.exceptions") c.flow.exceptions = detail::parse_exceptions(v);
        else if (key == "flow.k_sigma") num(c.flow.k_sigma);
        else if (key == "flow.annotate_insufficient") c.flow.annotate_insufficient = detail::parse_bool(v);
        else if (key == "flow.param_points") num(c.flow.param_points);
        else if (key == "flow.param_lo") num(c.flow.param_lo);
        else if (key == "flow.param_hi") num(c.flow.param_hi);
        else if (key == "flow.param_delta") num(c.flow.param_delta);
        else if (key == "flow.param_n") num(c.flow.param_n);
        else if (key == "es.fi_thetas") num(c.es.fi_thetas);
        else throw ContractViolation("unknown config key '" + key + "'");
    } catch (const boost::bad_lexical_cast &) {
        throw ContractViolation("bad value '" + v + "' for config key '" + key + "'");
    }
}

/// INI text: one [section] per group, "name = value" lines.
inline std::string config_to_ini(const RunConfig &c) {
    boost::property_tree::ptree tree;
    for (const auto &[key, value] : config_entries(c)) {
        tree.put(key, value);
    }
    std::ostringstream os;
    boost::property_tree::write_ini(os, tree);
    return os.str();
}

/// Reads an INI file on top of `base`. The experiment named in the file, if
/// any, selects the preset used as starting point.
inline RunConfig config_from_ini(std::istream &in, const RunConfig *base = nullptr) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error &e) {
        throw ContractViolation(std::string("config parse error: ") + e.what());
    }
    RunConfig c;
    if (auto exp = tree.get_optional<std::string>("run.experiment")) {
        c = preset(experiment_from_string(boost::trim_copy(*exp)));
    } else if (base != nullptr) {
        c = *base;
    }
    const auto schema = tree.get_optional<int>("run.schema_version");
    require(schema.has_value(), "config must declare run.schema_version");
    for (const auto &[section, body] : tree) {
        require(!body.empty(), "key '" + section + "' must sit inside a [section]");
        for (const auto &[name, value] : body) {
            set_config_value(c, section + "." + name, value.data());
        }
    }
    c.resolve();
    return c;
}

/// Resolved configuration and seeds for provenance records. The worker count
/// is left out: it never changes results.
inline nlohmann::json config_to_json(const RunConfig &c) {
    nlohmann::json j;
    for (const auto &[key, value] : config_entries(c)) {
        if (key != "run.workers") {
            j["config"][key] = value;
        }
    }
    const Seeds s = c.seeds();
    j["seeds"] = {{"master", c.master_seed}, {"data", s.data},       {"triplet", s.triplet}, {"matrix", s.matrix},
                  {"init", s.init},          {"shuffle", s.shuffle}, {"embed", s.embed}};
    return j;
}

}  // namespace fflow
