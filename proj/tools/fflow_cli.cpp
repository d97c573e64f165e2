// fflow: generate data, train networks, estimate Fisher information, trace
// its flow through layers and evaluate the information-based stopping rule.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error, 3 some requested
// FI cell did not converge and was not listed as an expected exception.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fflow/convert.hpp"
#include "fflow/fflow.hpp"
#include "fflow/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNotConverged = 3;

struct CommonOptions {
    std::string config_path;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<unsigned> workers;
    bool dry_run = false;
    std::vector<std::string> overrides;
};

void add_common(CLI::App *cmd, CommonOptions &o) {
    cmd->add_option("--config", o.config_path, "INI configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--preset", o.preset, "named experiment preset")
        ->check(CLI::IsMember({"gaussian_flow", "experimental_flow", "gaussian_es", "experimental_es",
                               "lognormal_flow", "lognormal_es", "fig3_std"}));
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--workers", o.workers, "worker threads for independent FI cells")->check(CLI::PositiveNumber);
    cmd->add_flag("--dry-run", o.dry_run, "report what would be computed without computing it");
    cmd->add_option("--set", o.overrides, "override a config key, section.name=value (repeatable)");
}

fflow::RunConfig resolve_config(const CommonOptions &o) {
    fflow::RunConfig c = fflow::preset(o.preset.empty() ? fflow::Experiment::gaussian_flow
                                                        : fflow::experiment_from_string(o.preset));
    c.workers = fflow::default_workers();
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        c = fflow::config_from_ini(in, &c);
    }
    for (const auto &kv : o.overrides) {
        const auto eq = kv.find('=');
        fflow::require(eq != std::string::npos, "--set expects section.name=value, got '" + kv + "'");
        fflow::set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed) {
        c.master_seed = *o.seed;
    }
    if (!o.out.empty()) {
        c.out_dir = o.out;
    }
    if (o.workers) {
        c.workers = *o.workers;
    }
    c.resolve();
    c.validate();
    return c;
}

fs::path ensure_dir(const std::string &dir) {
    fs::create_directories(dir);
    return fs::path(dir);
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw fflow::Error("cannot write '" + path.string() + "'");
    }
    out << text;
}

template <typename Writer>
void write_with(const fs::path &path, Writer &&w) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw fflow::Error("cannot write '" + path.string() + "'");
    }
    w(out);
}

json provenance(const fflow::RunConfig &c) { return fflow::config_to_json(c); }

json estimate_json(const fflow::FiEstimate &e) { return fflow::to_json(e); }

json dataset_summary(const fflow::GridDataset &ds, const fs::path &path) {
    return {{"path", path.string()}, {"blocks", ds.blocks.size()}, {"dim", ds.dim()}, {"rows", ds.total_rows()}};
}

std::string ckpt_name(int epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%04d.fckpt", epoch);
    return buf;
}

std::vector<fflow::Checkpoint> load_checkpoints(const fs::path &dir) {
    std::vector<fflow::Checkpoint> out;
    if (!fs::is_directory(dir)) {
        throw fflow::Error("checkpoint directory '" + dir.string() + "' does not exist");
    }
    for (const auto &f : fs::directory_iterator(dir)) {
        if (f.path().extension() == ".fckpt") {
            out.push_back(fflow::load_checkpoint(f.path().string()).checkpoint);
        }
    }
    std::sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.epoch < b.epoch; });
    if (out.empty()) {
        throw fflow::Error("no checkpoints in '" + dir.string() + "'");
    }
    return out;
}

int cmd_gen(const fflow::RunConfig &c) {
    const fs::path dir = ensure_dir(c.out_dir);
    json summary = {{"experiment", std::string(fflow::to_string(c.experiment))}};
    if (const auto fi = fflow::analytic_fi(c)) {
        summary["analytic_fi"] = *fi;
    }
    {
        fflow::GridDataset train = fflow::training_grid(c);
        fflow::save_dataset((dir / "train.fdata").string(), train);
        summary["train"] = dataset_summary(train, dir / "train.fdata");
    }
    const fflow::GridDataset triplet =
        fflow::triplet_to_grid(fflow::experiment_triplet(c), provenance(c).dump());
    fflow::save_dataset((dir / "triplet.fdata").string(), triplet);
    summary["triplet"] = dataset_summary(triplet, dir / "triplet.fdata");
    std::cout << summary.dump(2) << '\n';
    return 0;
}

int cmd_train(const fflow::RunConfig &c) {
    const fs::path dir = ensure_dir(c.out_dir);
    const fs::path ckdir = ensure_dir((dir / "ckpt").string());
    const json prov = provenance(c);
    fflow::TrainOutcome out = fflow::run_training(c, fflow::training_grid(c));
    json record = prov;
    for (const auto &ck : out.checkpoints) {
        fflow::save_checkpoint((ckdir / ckpt_name(ck.epoch)).string(), ck, prov);
        record["checkpoints"].push_back(ckpt_name(ck.epoch));
    }
    for (const auto &h : out.history) {
        record["history"].push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"val_loss", h.val_loss}});
    }
    write_text(dir / "train.json", record.dump(2) + "\n");
    write_with(dir / "history.csv", [&](std::ostream &os) {
        os << "epoch,train_loss,val_loss\n";
        for (const auto &h : out.history) {
            os << h.epoch << ',' << fflow::format_double(h.train_loss) << ',' << fflow::format_double(h.val_loss)
               << '\n';
        }
    });
    const auto &last = out.history.back();
    std::cout << json{{"epochs", c.train.epochs},
                      {"checkpoints", out.checkpoints.size()},
                      {"final_train_loss", last.train_loss},
                      {"final_val_loss", last.val_loss}}
                     .dump(2)
              << '\n';
    return 0;
}

int cmd_estimate(const fflow::RunConfig &c, bool dry_run, std::optional<double> fi_scale) {
    if (dry_run) {
        const Eigen::Index d = fflow::data_kind(c.experiment) == fflow::DataKind::images
                                   ? c.data.crop.height * c.data.crop.width
                                   : c.data.dim;
        const auto scale = fi_scale ? fi_scale : fflow::analytic_fi(c);
        if (!scale) {
            throw fflow::Error("dry run needs an FI scale: the experiment has no analytic FI, pass --fi-scale");
        }
        const double h = fflow::fd_step(c.data.triplet_delta, c.embed.lfi.step);
        const Eigen::Index max_dim = c.embed.resolved_max_dim(d);
        json j = {{"fi_scale", *scale},
                  {"dim", d},
                  {"n_sample", c.data.triplet_n},
                  {"step", h},
                  {"rel_std_at_d", fflow::lfi_rel_std(*scale, d, c.data.triplet_n, h)},
                  {"max_dim", max_dim},
                  {"rel_std_at_max_dim", fflow::lfi_rel_std(*scale, max_dim, c.data.triplet_n, h)},
                  {"bias_term_at_d", fflow::lfi_bias_term(d, c.data.triplet_n, h)}};
        std::cout << j.dump(2) << '\n';
        return 0;
    }
    const fs::path dir = ensure_dir(c.out_dir);
    const fflow::TripletSample t = fflow::experiment_triplet(c);
    const fflow::MaximizationTrace trace = fflow::maximize_lfi(t, c.embed);
    write_with(dir / "trace.csv", [&](std::ostream &os) { fflow::write_trace_csv(os, trace); });
    json j = provenance(c);
    j["estimate"] = estimate_json(trace.final);
    j["base"] = estimate_json(trace.base);
    j["verdict"] = std::string(fflow::to_string(trace.verdict));
    j["rule"] = std::string(fflow::to_string(trace.rule));
    j["warning"] = trace.warning;
    if (const auto fi = fflow::analytic_fi(c)) {
        j["analytic_fi"] = *fi;
    }
    write_text(dir / "estimate.json", j.dump(2) + "\n");
    std::cout << json{{"fi", trace.final.value},
                      {"rel_std", trace.final.rel_std},
                      {"base_lfi", trace.base.value},
                      {"verdict", std::string(fflow::to_string(trace.verdict))}}
                     .dump(2)
              << '\n';
    return trace.verdict == fflow::Verdict::not_converged ? kExitNotConverged : 0;
}

int cmd_flow(const fflow::RunConfig &c, const std::string &ckpt_dir, bool param) {
    const fs::path dir = ensure_dir(c.out_dir);
    const auto ckpts = load_checkpoints(ckpt_dir.empty() ? dir / "ckpt" : fs::path(ckpt_dir));
    const fflow::TripletSample t = fflow::experiment_triplet(c);
    const fflow::FlowReport report = fflow::fi_flow(ckpts, t, c.embed, fflow::flow_options(c));
    const auto violations = fflow::check_monotone(report, c.flow.k_sigma);
    const auto blocking = fflow::blocking_cells(report);

    write_with(dir / "flow.csv", [&](std::ostream &os) { fflow::write_flow_csv(os, report); });
    json j = provenance(c);
    j["report"] = fflow::to_json(report);
    for (const auto &v : violations) {
        j["violations"].push_back({{"epoch", v.epoch},
                                   {"from_layer", v.from_layer},
                                   {"to_layer", v.to_layer},
                                   {"increase", v.increase},
                                   {"tolerance", v.tolerance}});
    }
    write_text(dir / "flow.json", j.dump(2) + "\n");

    if (param) {
        const auto thetas = fflow::linspace(c.flow.param_lo, c.flow.param_hi, c.flow.param_points);
        const auto pr = fflow::with_generator(c, [&](const auto &gen) {
            return fflow::param_resolved_flow(ckpts.back(), thetas, c.flow.param_delta, c.flow.param_n, c.embed, gen,
                                              fflow::derive_seed(c.seeds().triplet, "param"), fflow::flow_options(c));
        });
        write_with(dir / "param_flow.csv", [&](std::ostream &os) { fflow::write_param_flow_csv(os, pr); });
    }

    json out = {{"input_fi", report.input_fi.value}, {"violations", violations.size()}, {"blocking_cells", blocking.size()}};
    for (std::size_t e = 0; e < report.epochs.size(); ++e) {
        out["output_normalized"][std::to_string(report.epochs[e])] = report.cells[e].back().normalized;
    }
    std::cout << out.dump(2) << '\n';
    for (const auto *cell : blocking) {
        std::cerr << "not converged: epoch " << cell->epoch << " layer " << cell->layer << " (" << cell->warning
                  << ")\n";
    }
    return blocking.empty() ? 0 : kExitNotConverged;
}

int cmd_earlystop(const fflow::RunConfig &c, const std::string &run_dir) {
    const fs::path dir = ensure_dir(c.out_dir);
    const fs::path src = run_dir.empty() ? dir : fs::path(run_dir);
    std::ifstream in(src / "train.json");
    if (!in) {
        throw fflow::Error("missing '" + (src / "train.json").string() + "'; run `train` first");
    }
    const json record = json::parse(in);
    std::vector<fflow::LossRecord> history;
    for (const auto &h : record.at("history")) {
        history.push_back({h.at("epoch").get<int>(), h.at("train_loss").get<double>(), h.at("val_loss").get<double>()});
    }
    const auto ckpts = load_checkpoints(src / "ckpt");
    const fflow::TripletSample t = fflow::experiment_triplet(c);
    const fflow::FiEstimate input_fi = fflow::stopping_input_fi(c, t);
    const fflow::StopReport r = fflow::run_earlystop(history, input_fi, ckpts, t);

    write_with(dir / "stop.csv", [&](std::ostream &os) { fflow::write_stop_csv(os, r); });
    json j = fflow::stop_summary_json(r);
    j["provenance"] = provenance(c);
    write_text(dir / "stop.json", j.dump(2) + "\n");
    json out = fflow::stop_summary_json(r);
    for (const char *k : {"epochs", "train_loss", "val_loss", "input_fi_estimate"}) {
        out.erase(k);
    }
    std::cout << out.dump(2) << '\n';
    return 0;
}

int cmd_convert(const std::string &input, const std::string &out, unsigned width, unsigned height) {
    fflow::ImageContainer c = fflow::convert_matrix_directory(input, width, height);
    c.provenance = json{{"source", input}}.dump();
    fflow::save_image_container(out, c);
    json j = {{"positions", c.positions}, {"width", c.width}, {"height", c.height}};
    for (std::size_t p = 0; p < c.positions.size(); ++p) {
        j["frames"].push_back(c.frame_count(p));
    }
    std::cout << j.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Fisher information estimation and flow analysis for small networks"};
    app.require_subcommand(1);

    CommonOptions gen_o, train_o, est_o, flow_o, es_o;
    auto *gen = app.add_subcommand("gen", "write the training and triplet datasets");
    add_common(gen, gen_o);
    auto *train = app.add_subcommand("train", "train the network and save checkpoints");
    add_common(train, train_o);
    auto *est = app.add_subcommand("estimate-fi", "maximized FI of the triplet dataset");
    add_common(est, est_o);
    std::optional<double> fi_scale;
    est->add_option("--fi-scale", fi_scale, "FI scale for --dry-run when no analytic value exists");
    auto *flow = app.add_subcommand("flow", "FI per layer and checkpoint");
    add_common(flow, flow_o);
    std::string flow_ckpts;
    bool flow_param = false;
    flow->add_option("--checkpoints", flow_ckpts, "directory of .fckpt files (default <out>/ckpt)");
    flow->add_flag("--param", flow_param, "also resolve the last checkpoint over a theta range");
    auto *es = app.add_subcommand("earlystop", "information-based stopping epoch and CRLB gap");
    add_common(es, es_o);
    std::string es_run;
    es->add_option("--run", es_run, "directory written by `train` (default <out>)");

    auto *conv = app.add_subcommand("convert-images", "build an image container from exported matrices");
    CommonOptions conv_o;
    add_common(conv, conv_o);
    std::string conv_input;
    unsigned conv_width = 64;
    unsigned conv_height = 32;
    conv->add_option("--input", conv_input, "directory of .npy/.csv/.txt matrices")->required();
    conv->add_option("--width", conv_width, "frame width in pixels");
    conv->add_option("--height", conv_height, "frame height in pixels");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            const auto c = resolve_config(gen_o);
            if (gen_o.dry_run) {
                std::cout << provenance(c).dump(2) << '\n';
                return 0;
            }
            return cmd_gen(c);
        }
        if (train->parsed()) {
            const auto c = resolve_config(train_o);
            if (train_o.dry_run) {
                std::cout << json{{"parameters", fflow::init_mlp(c.net).parameter_count()},
                                  {"config", provenance(c)}}
                                 .dump(2)
                          << '\n';
                return 0;
            }
            return cmd_train(c);
        }
        if (est->parsed()) {
            return cmd_estimate(resolve_config(est_o), est_o.dry_run, fi_scale);
        }
        if (flow->parsed()) {
            const auto c = resolve_config(flow_o);
            if (flow_o.dry_run) {
                std::cout << provenance(c).dump(2) << '\n';
                return 0;
            }
            return cmd_flow(c, flow_ckpts, flow_param);
        }
        if (es->parsed()) {
            const auto c = resolve_config(es_o);
            if (es_o.dry_run) {
                std::cout << provenance(c).dump(2) << '\n';
                return 0;
            }
            return cmd_earlystop(c, es_run);
        }
        if (conv->parsed()) {
            const std::string out = conv_o.out.empty() ? "images.fimg" : conv_o.out;
            if (conv_o.dry_run) {
                std::cout << json{{"input", conv_input}, {"out", out}}.dump(2) << '\n';
                return 0;
            }
            return cmd_convert(conv_input, out, conv_width, conv_height);
        }
    } catch (const fflow::ContractViolation &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitUsage;
}
