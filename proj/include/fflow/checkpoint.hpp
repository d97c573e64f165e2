#pragma once

// FFLOW-CKPT-1 container:
//
//   magic "FFLOW-CKPT-1"
//   u64 length + UTF-8 JSON header
//     {"layer_sizes", "activation", "activation_alpha", "seed",
//      "epoch", "train_loss", "val_loss", "provenance"}
//   f64 payload, little-endian: for each layer k in order, the weight
//   matrix (sizes[k+1] x sizes[k], row-major) followed by the bias vector.
// Loss scalars are repeated in the payload tail as raw f64 so they survive
// the round trip bit for bit.

#include <string>
#include <vector>

#include <json.hpp>

#include "fflow/binary_io.hpp"
#include "fflow/nn.hpp"

namespace fflow {

inline constexpr std::string_view kCheckpointMagic = "FFLOW-CKPT-1";

inline void write_checkpoint(std::ostream &os, const Checkpoint &c, const nlohmann::json &provenance = {}) {
    const MlpSpec &spec = c.model.spec;
    nlohmann::json header;
    header["layer_sizes"] = spec.layer_sizes;
    header["activation"] = std::string(to_string(spec.activation));
    header["activation_alpha"] = spec.activation_alpha;
    header["seed"] = spec.seed;
    header["epoch"] = c.epoch;
    header["train_loss"] = c.train_loss;
    header["val_loss"] = c.val_loss;
    header["provenance"] = provenance;
    io::Writer w(os);
    w.magic(kCheckpointMagic);
    w.text(header.dump());
    for (std::size_t k = 0; k < c.model.weights.size(); ++k) {
        const auto &W = c.model.weights[k];
        const auto &b = c.model.biases[k];
        w.array(W.data(), static_cast<std::size_t>(W.size()));
        w.array(b.data(), static_cast<std::size_t>(b.size()));
    }
    w.scalar(c.train_loss);
    w.scalar(c.val_loss);
    w.scalar(spec.activation_alpha);
}

struct LoadedCheckpoint {
    Checkpoint checkpoint;
    nlohmann::json provenance;
};

inline LoadedCheckpoint read_checkpoint(std::istream &is) {
    io::Reader r(is);
    r.expect_magic(kCheckpointMagic);
    const auto header_at = r.offset();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.text("header"));
    } catch (const nlohmann::json::exception &e) {
        throw FormatError(std::string("unreadable checkpoint header: ") + e.what(), header_at);
    }
    LoadedCheckpoint out;
    MlpSpec spec;
    try {
        spec.layer_sizes = header.at("layer_sizes").get<std::vector<Index>>();
        spec.activation = activation_from_string(header.at("activation").get<std::string>());
        spec.seed = header.at("seed").get<std::uint64_t>();
        out.checkpoint.epoch = header.at("epoch").get<int>();
        out.provenance = header.value("provenance", nlohmann::json{});
        spec.validate();
    } catch (const std::exception &e) {
        throw FormatError(std::string("invalid checkpoint header: ") + e.what(), header_at);
    }
    MlpModel m;
    m.spec = spec;
    for (std::size_t k = 0; k + 1 < spec.layer_sizes.size(); ++k) {
        if (spec.layer_sizes[k] > (Index{1} << 20) || spec.layer_sizes[k + 1] > (Index{1} << 20)) {
            throw FormatError("implausible layer size", header_at);
        }
        RowMatrix W(spec.layer_sizes[k + 1], spec.layer_sizes[k]);
        Vector b(spec.layer_sizes[k + 1]);
        r.array(W.data(), static_cast<std::size_t>(W.size()), "weights");
        r.array(b.data(), static_cast<std::size_t>(b.size()), "biases");
        m.weights.push_back(std::move(W));
        m.biases.push_back(std::move(b));
    }
    out.checkpoint.train_loss = r.scalar<double>("train loss");
    out.checkpoint.val_loss = r.scalar<double>("validation loss");
    m.spec.activation_alpha = r.scalar<double>("activation alpha");
    r.expect_end();
    out.checkpoint.model = std::move(m);
    return out;
}

inline void save_checkpoint(const std::string &path, const Checkpoint &c, const nlohmann::json &provenance = {}) {
    auto out = io::open_out(path);
    write_checkpoint(out, c, provenance);
}

inline LoadedCheckpoint load_checkpoint(const std::string &path) {
    auto in = io::open_in(path);
    return read_checkpoint(in);
}

}  // namespace fflow
