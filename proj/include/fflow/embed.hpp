#pragma once

// LFI maximization by random nonlinear embeddings.
//
// Each stage maps every observation x to phi(A x) + eps, with A a fresh
// d' x d Gaussian matrix, phi the leaky map below and eps small Gaussian
// noise, then re-estimates the corrected LFI. d' grows by delta_d per stage
// until the ladder flattens out (see maximize_lfi for the stopping rules).

#include <algorithm>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "fflow/errors.hpp"
#include "fflow/lfi.hpp"
#include "fflow/random.hpp"
#include "fflow/stats.hpp"
#include "fflow/text.hpp"

namespace fflow {

struct EmbedConfig {
    Index delta_d = 30;
    double kappa = 0.1;
    double gamma = 0.05;
    double sigma_noise = 0.01;
    double alpha = 0.7;
    /// Largest embedding dimension; 0 selects d + 40 * delta_d.
    Index max_dim = 0;
    std::uint64_t seed = 0;
    /// Average the ladder over a trailing window of three before the
    /// convergence test.
    bool smooth = false;
    /// Precision guard on the predicted relative error.
    double max_rel_std = 0.25;
    LfiOptions lfi{};

    void validate() const {
        require(delta_d >= 1, "delta_d must be at least 1");
        require(kappa > 0.0 && kappa < 1.0, "kappa must lie in (0,1)");
        require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
        require(sigma_noise >= 0.0, "sigma_noise must be non-negative");
        require(max_dim >= 0, "max_dim must be non-negative");
        require(max_rel_std > 0.0, "max_rel_std must be positive");
    }

    Index resolved_max_dim(Index d) const { return max_dim > 0 ? max_dim : d + 40 * delta_d; }
};

enum class Verdict { converged, early_exit_flat, fallback_base_lfi, not_converged };

inline std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::converged: return "converged";
        case Verdict::early_exit_flat: return "early_exit_flat";
        case Verdict::fallback_base_lfi: return "fallback_base_lfi";
        case Verdict::not_converged: return "not_converged";
    }
    return "unknown";
}

inline Verdict verdict_from_string(std::string_view s) {
    for (Verdict v : {Verdict::converged, Verdict::early_exit_flat, Verdict::fallback_base_lfi,
                      Verdict::not_converged}) {
        if (to_string(v) == s) {
            return v;
        }
    }
    throw ContractViolation("unknown verdict '" + std::string(s) + "'");
}

struct MaximizationTrace {
    std::vector<Index> dims;
    std::vector<double> lfi_values;  ///< raw corrected LFI per stage
    std::vector<double> rel_stds;
    Verdict verdict = Verdict::not_converged;
    /// Rule that ended the ladder; differs from `verdict` only on fallback.
    Verdict rule = Verdict::not_converged;
    FiEstimate base;
    FiEstimate final;
    Index base_dim = 0;
    /// Set when the ladder stopped because the next stage would exceed the
    /// precision guard.
    bool precision_limited = false;
    std::string warning;
};

/// phi(x) = x for x > 0, alpha x otherwise.
constexpr double nonlinearity(double x, double alpha) noexcept { return x > 0.0 ? x : alpha * x; }

/// d' x d matrix of i.i.d. standard normals, keyed by (seed, stage).
inline RowMatrix random_projection(Index d, Index d_prime, std::uint64_t seed, std::uint64_t stage) {
    require(d >= 1 && d_prime >= 1, "projection dimensions must be positive");
    NormalStream normal(derive_seed(seed, "projection", stage));
    RowMatrix a(d_prime, d);
    double *p = a.data();
    for (Index i = 0, n = a.size(); i < n; ++i) {
        p[i] = normal();
    }
    return a;
}

namespace detail {

/// Embeds `x` chunk by chunk and hands every chunk to `visit(first_row, chunk)`.
/// The noise of rows [b*kRowBlock, (b+1)*kRowBlock) comes from the stream
/// derive_seed(noise_seed, b), so results do not depend on chunking.
template <typename Visitor>
void embed_rows(const RowMatrix &x, const RowMatrix &projection, double alpha, double sigma_noise,
                std::uint64_t noise_seed, Visitor &&visit) {
    require(projection.cols() == x.cols(), "projection columns must equal the data dimension");
    const Index dp = projection.rows();
    const Index step = chunk_rows(dp);
    RowMatrix y;
    for (Index r = 0; r < x.rows(); r += step) {
        const Index m = std::min(step, x.rows() - r);
        y.noalias() = x.middleRows(r, m) * projection.transpose();
        y = (y.array() > 0.0).select(y.array(), alpha * y.array());
        if (sigma_noise > 0.0) {
            for (Index b0 = 0; b0 < m; b0 += kRowBlock) {
                NormalStream normal(derive_seed(noise_seed, static_cast<std::uint64_t>((r + b0) / kRowBlock)));
                const Index rows = std::min(kRowBlock, m - b0);
                double *p = y.row(b0).data();
                for (Index i = 0, n = rows * dp; i < n; ++i) {
                    p[i] += sigma_noise * normal();
                }
            }
        }
        visit(r, y);
    }
}

inline std::uint64_t member_noise_seed(std::uint64_t stage_seed, int member) {
    return derive_seed(stage_seed, "noise", member);
}

inline RowMatrix embed_matrix(const RowMatrix &x, const RowMatrix &projection, double alpha, double sigma_noise,
                              std::uint64_t noise_seed) {
    RowMatrix out(x.rows(), projection.rows());
    embed_rows(x, projection, alpha, sigma_noise, noise_seed,
               [&](Index r, const RowMatrix &chunk) { out.middleRows(r, chunk.rows()) = chunk; });
    return out;
}

inline Vector embedded_mean(const RowMatrix &x, const RowMatrix &projection, double alpha, double sigma_noise,
                            std::uint64_t noise_seed) {
    Vector sum = Vector::Zero(projection.rows());
    embed_rows(x, projection, alpha, sigma_noise, noise_seed,
               [&](Index, const RowMatrix &chunk) { sum += chunk.colwise().sum().transpose(); });
    return sum / static_cast<double>(x.rows());
}

}  // namespace detail

/// Applies x -> phi(A x) + eps to all three members. Member noise streams
/// are independent (minus, center and plus never share noise).
inline TripletSample embed_triplet(const TripletSample &t, const RowMatrix &projection, const EmbedConfig &cfg,
                                   std::uint64_t stage_seed) {
    t.validate();
    require(projection.cols() == t.dim(), "projection columns must equal the triplet dimension");
    auto embed = [&](const SampleMatrix &s, int member) {
        return SampleMatrix(detail::embed_matrix(s.data(), projection, cfg.alpha, cfg.sigma_noise,
                                                 detail::member_noise_seed(stage_seed, member)));
    };
    return TripletSample{embed(t.minus, 0), embed(t.center, 1), embed(t.plus, 2), t.theta, t.delta_theta};
}

/// LFI statistics of embed_triplet(t, projection, cfg, stage_seed) without
/// materializing the embedded samples.
inline LfiParts embedded_lfi_parts(const TripletSample &t, const RowMatrix &projection, const EmbedConfig &cfg,
                                   std::uint64_t stage_seed) {
    t.validate();
    require(projection.cols() == t.dim(), "projection columns must equal the triplet dimension");
    const Vector mean_minus = detail::embedded_mean(t.minus.data(), projection, cfg.alpha, cfg.sigma_noise,
                                                    detail::member_noise_seed(stage_seed, 0));
    const Vector mean_plus = detail::embedded_mean(t.plus.data(), projection, cfg.alpha, cfg.sigma_noise,
                                                   detail::member_noise_seed(stage_seed, 2));
    MomentAccumulator center(projection.rows());
    detail::embed_rows(t.center.data(), projection, cfg.alpha, cfg.sigma_noise,
                       detail::member_noise_seed(stage_seed, 1),
                       [&](Index, const RowMatrix &chunk) { center.add_rows(chunk); });
    return lfi_parts(mean_minus, mean_plus, center.finish().cov, t.offset_rows(), t.delta_theta,
                     cfg.lfi.rel_tol);
}

inline std::uint64_t stage_seed(const EmbedConfig &cfg, std::uint64_t stage) {
    return derive_seed(cfg.seed, "stage", stage);
}

namespace detail {

inline double spread(const std::vector<double> &v, std::size_t first) {
    const auto [lo, hi] = std::minmax_element(v.begin() + static_cast<std::ptrdiff_t>(first),
                                              v.begin() + static_cast<std::ptrdiff_t>(first + 3));
    return *hi - *lo;
}

inline double mean3(const std::vector<double> &v, std::size_t first) {
    return (v[first] + v[first + 1] + v[first + 2]) / 3.0;
}

}  // namespace detail

/// Largest information level seen so far: J0 or any stage value.
inline double information_scale(double j0, const std::vector<double> &values) {
    double scale = j0;
    for (double v : values) {
        scale = std::max(scale, v);
    }
    return scale;
}

/// Runs the embedding ladder on `t`.
///
/// J0 is the corrected LFI of the raw data. Stage k embeds into
/// d' = d + k * delta_d. The ladder stops when
///  - after stage 3, max(first three) - J0 < gamma * J0: early_exit_flat,
///    final = mean of the first three;
///  - from stage 4 on, spread(last three) < kappa * spread(first three):
///    converged, final = mean of the last three (spread = max - min);
///  - the next d' would exceed max_dim, or (from stage 2 on) would push the
///    predicted relative error at the largest LFI seen so far above
///    max_rel_std: not_converged, final = last stage.
/// A final value below J0 is replaced by J0 (fallback_base_lfi).
///
/// Throws InsufficientSample when even the raw dimension d misses the
/// precision guard at the largest LFI seen. A ladder that never sees a
/// positive value reports zero information instead.
inline MaximizationTrace maximize_lfi(const TripletSample &t, const EmbedConfig &cfg) {
    t.validate();
    cfg.validate();
    const Index d = t.dim();
    const Index n = t.offset_rows();
    const double h = fd_step(t.delta_theta, cfg.lfi.step);
    const Index max_dim = cfg.resolved_max_dim(d);

    MaximizationTrace trace;
    trace.base = lfi_corrected(t, cfg.lfi);
    trace.base_dim = d;
    const double j0 = trace.base.value;

    std::vector<double> series;  // values the stopping rules look at
    double final_raw = 0.0;
    Index final_dim = d;
    bool have_final = false;

    for (std::uint64_t k = 1;; ++k) {
        const Index dp = d + static_cast<Index>(k) * cfg.delta_d;
        if (dp > max_dim) {
            trace.rule = Verdict::not_converged;
            trace.warning = "embedding dimension cap " + std::to_string(max_dim) + " reached";
            break;
        }
        const double scale = information_scale(j0, trace.lfi_values);
        if (k > 1 && scale > 0.0 && lfi_rel_std(scale, dp, n, h) >= cfg.max_rel_std) {
            trace.rule = Verdict::not_converged;
            trace.precision_limited = true;
            trace.warning = "predicted relative error at d'=" + std::to_string(dp) + " exceeds " +
                            format_double(cfg.max_rel_std);
            break;
        }

        const RowMatrix projection = random_projection(d, dp, cfg.seed, k);
        const FiEstimate stage = corrected_estimate(embedded_lfi_parts(t, projection, cfg, stage_seed(cfg, k)), cfg.lfi);
        trace.dims.push_back(dp);
        trace.lfi_values.push_back(stage.raw_value);
        trace.rel_stds.push_back(stage.rel_std);

        if (cfg.smooth) {
            const std::size_t i = trace.lfi_values.size() - 1;
            const std::size_t lo = i >= 2 ? i - 2 : 0;
            double s = 0.0;
            for (std::size_t j = lo; j <= i; ++j) {
                s += trace.lfi_values[j];
            }
            series.push_back(s / static_cast<double>(i - lo + 1));
        } else {
            series.push_back(stage.raw_value);
        }

        const std::size_t count = series.size();
        if (count == 3) {
            const double best = *std::max_element(series.begin(), series.end());
            if (best - j0 < cfg.gamma * j0) {
                trace.rule = Verdict::early_exit_flat;
                final_raw = detail::mean3(trace.lfi_values, 0);
                final_dim = trace.dims[2];
                have_final = true;
                break;
            }
        }
        if (count >= 4 && detail::spread(series, count - 3) < cfg.kappa * detail::spread(series, 0)) {
            trace.rule = Verdict::converged;
            final_raw = detail::mean3(trace.lfi_values, count - 3);
            final_dim = trace.dims.back();
            have_final = true;
            break;
        }
    }

    if (!have_final) {
        if (!trace.lfi_values.empty()) {
            final_raw = trace.lfi_values.back();
            final_dim = trace.dims.back();
        } else {
            final_raw = trace.base.raw_value;
            final_dim = d;
        }
    }

    FiEstimate fin;
    fin.method = FiMethod::maximized;
    fin.raw_value = final_raw;
    fin.value = std::max(final_raw, 0.0);
    fin.abs_std = lfi_abs_std(fin.value, final_dim, n, h);
    fin.rel_std = fin.value > 0.0 ? lfi_rel_std(fin.value, final_dim, n, h) : 0.0;
    trace.final = fin;
    trace.verdict = trace.rule;

    if (fin.value < j0 || (trace.lfi_values.empty() && trace.rule == Verdict::not_converged)) {
        trace.final = trace.base;
        final_dim = d;
        if (fin.value < j0) {
            trace.verdict = Verdict::fallback_base_lfi;
        }
    }

    const double scale = information_scale(j0, trace.lfi_values);
    if (scale > 0.0 && lfi_rel_std(scale, d, n, h) >= cfg.max_rel_std) {
        const Index needed = required_sample_size(scale, d, h, cfg.max_rel_std);
        throw InsufficientSample("largest LFI " + format_double(scale) + " at d=" + std::to_string(d) +
                                     " has predicted relative error " + format_double(lfi_rel_std(scale, d, n, h)) +
                                     " with N_sample=" + std::to_string(n) + "; need N_sample >= " +
                                     std::to_string(needed),
                                 static_cast<std::uint64_t>(needed));
    }
    return trace;
}

/// CSV with columns d_prime, lfi, rel_std; the first row is the raw data.
inline void write_trace_csv(std::ostream &out, const MaximizationTrace &trace) {
    out << "d_prime,lfi,rel_std\n";
    out << trace.base_dim << ',' << format_double(trace.base.raw_value) << ','
        << format_double(trace.base.rel_std) << '\n';
    for (std::size_t i = 0; i < trace.dims.size(); ++i) {
        out << trace.dims[i] << ',' << format_double(trace.lfi_values[i]) << ','
            << format_double(trace.rel_stds[i]) << '\n';
    }
}

}  // namespace fflow
