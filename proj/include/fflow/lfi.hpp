#pragma once

// Linear Fisher information from finite samples.
//
//   J = (d mu / d theta)^T Sigma^+ (d mu / d theta)
//
// The derivative comes from the plus/minus sample means, Sigma from the
// center sample. The plug-in value is biased upward by the noise of the
// finite difference; lfi_corrected subtracts 2 d / (N h^2) and lfi_rel_std
// evaluates the relative spread (8/L)(1 + d/L), L = J N h^2, where h is the
// finite-difference step (see StepConvention).

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include "fflow/errors.hpp"
#include "fflow/stats.hpp"

namespace fflow {

/// Samples at theta - dt, theta and theta + dt.
struct TripletSample {
    SampleMatrix minus;
    SampleMatrix center;
    SampleMatrix plus;
    double theta = 0.0;
    double delta_theta = 0.0;

    Index dim() const noexcept { return center.dim(); }
    /// Per-offset sample size (rows of the plus and minus blocks).
    Index offset_rows() const noexcept { return plus.rows(); }

    void validate() const {
        require(minus.dim() == center.dim() && plus.dim() == center.dim(),
                "triplet members must share the dimension");
        require(minus.rows() == plus.rows(), "plus and minus samples must have equal size");
        if (!(delta_theta > 0.0)) {
            throw InvalidStep("triplet delta_theta must be positive");
        }
    }
};

enum class FiMethod { plugin, corrected, maximized };

inline std::string_view to_string(FiMethod m) {
    switch (m) {
        case FiMethod::plugin: return "plugin";
        case FiMethod::corrected: return "corrected";
        case FiMethod::maximized: return "maximized";
    }
    return "unknown";
}

/// A Fisher information value with its predicted error.
///
/// `rel_std` is the relative standard error from the variance model (0 when
/// the value is 0 and a relative error is undefined); `abs_std` is the
/// absolute standard error, which stays meaningful at zero information.
struct FiEstimate {
    double value = 0.0;
    double rel_std = 0.0;
    double abs_std = 0.0;
    FiMethod method = FiMethod::plugin;
    double raw_value = 0.0;
};

/// Which length enters the bias and variance formulas as the step h.
///
/// full_spacing: h = 2 dt, the distance between the minus and plus samples.
///   With this choice the correction term equals the expected plug-in bias of
///   the symmetric difference, d / (2 N dt^2).
/// half_step: h = dt, the offset from the center sample. The correction is
///   then four times the plug-in bias.
enum class StepConvention { full_spacing, half_step };

struct LfiOptions {
    double rel_tol = kDefaultRelTol;
    StepConvention step = StepConvention::full_spacing;
};

inline double fd_step(double delta_theta, StepConvention convention) {
    return convention == StepConvention::full_spacing ? 2.0 * delta_theta : delta_theta;
}

/// 2 d / (n h^2).
inline double lfi_bias_term(Index d, Index n, double step) {
    if (!(step > 0.0)) {
        throw InvalidStep("bias term needs a positive step");
    }
    return 2.0 * static_cast<double>(d) / (static_cast<double>(n) * step * step);
}

/// Relative variance eta(L) = (8/L)(1 + d/L), L = j n h^2.
inline double lfi_rel_variance(double j, Index d, Index n, double step) {
    if (!(j > 0.0)) {
        throw UndefinedScale("error model needs a positive information scale, got " + std::to_string(j));
    }
    require(n >= 2, "error model needs n >= 2");
    if (!(step > 0.0)) {
        throw InvalidStep("error model needs a positive step");
    }
    const double L = j * static_cast<double>(n) * step * step;
    return 8.0 / L * (1.0 + static_cast<double>(d) / L);
}

/// sqrt(eta(L)).
inline double lfi_rel_std(double j, Index d, Index n, double step) {
    return std::sqrt(lfi_rel_variance(j, d, n, step));
}

/// Absolute standard error sqrt(j^2 eta), continued to j = 0.
inline double lfi_abs_std(double j, Index d, Index n, double step) {
    const double a = static_cast<double>(n) * step * step;
    const double jj = std::max(j, 0.0);
    return std::sqrt(8.0 * jj / a + 8.0 * static_cast<double>(d) / (a * a));
}

/// Smallest per-offset sample size whose predicted relative error at
/// information scale j and dimension d is below `max_rel_std`.
inline Index required_sample_size(double j, Index d, double step, double max_rel_std) {
    require(j > 0.0 && max_rel_std > 0.0, "required_sample_size needs positive scale and target");
    // eta(L) = target^2 solved for L: t L^2 - 8 L - 8 d = 0.
    const double t = max_rel_std * max_rel_std;
    const double L = (8.0 + std::sqrt(64.0 + 32.0 * t * static_cast<double>(d))) / (2.0 * t);
    return static_cast<Index>(std::ceil(L / (j * step * step)));
}

/// Sufficient statistics of one LFI evaluation, before any correction.
struct LfiParts {
    double quadratic = 0.0;  ///< plug-in J
    Index dim = 0;
    Index n = 0;             ///< per-offset sample size
    double delta_theta = 0.0;
};

inline FiEstimate fill_error(FiEstimate e, const LfiParts &p, const LfiOptions &opt, double scale) {
    const double h = fd_step(p.delta_theta, opt.step);
    e.abs_std = lfi_abs_std(scale, p.dim, p.n, h);
    e.rel_std = scale > 0.0 ? lfi_rel_std(scale, p.dim, p.n, h) : 0.0;
    return e;
}

inline FiEstimate plugin_estimate(const LfiParts &p, const LfiOptions &opt = {}) {
    FiEstimate e;
    e.method = FiMethod::plugin;
    e.raw_value = p.quadratic;
    e.value = std::max(p.quadratic, 0.0);
    return fill_error(e, p, opt, e.value);
}

/// The error scale is the corrected value itself, or the plug-in value when
/// the corrected value is not positive.
inline FiEstimate corrected_estimate(const LfiParts &p, const LfiOptions &opt = {}) {
    FiEstimate e;
    e.method = FiMethod::corrected;
    e.raw_value = p.quadratic - lfi_bias_term(p.dim, p.n, fd_step(p.delta_theta, opt.step));
    e.value = std::max(e.raw_value, 0.0);
    const double scale = e.value > 0.0 ? e.value : std::max(p.quadratic, 0.0);
    return fill_error(e, p, opt, scale);
}

/// Plug-in quadratic form from moments already reduced.
inline LfiParts lfi_parts(const Vector &mean_minus, const Vector &mean_plus, const Matrix &center_cov,
                          Index n, double delta_theta, double rel_tol) {
    const Vector derivative = central_difference(mean_plus, mean_minus, delta_theta);
    require(center_cov.rows() == derivative.size(), "covariance and mean dimensions differ");
    LfiParts p;
    p.quadratic = PcaSpectrum(center_cov, rel_tol).quadratic_form(derivative);
    p.dim = derivative.size();
    p.n = n;
    p.delta_theta = delta_theta;
    return p;
}

inline LfiParts lfi_parts(const TripletSample &t, double rel_tol) {
    t.validate();
    const MomentPair center = sample_moments(t.center);
    return lfi_parts(sample_mean(t.minus.data()), sample_mean(t.plus.data()), center.cov, t.offset_rows(),
                     t.delta_theta, rel_tol);
}

inline FiEstimate lfi_plugin(const TripletSample &t, const LfiOptions &opt = {}) {
    return plugin_estimate(lfi_parts(t, opt.rel_tol), opt);
}

inline FiEstimate lfi_corrected(const TripletSample &t, const LfiOptions &opt = {}) {
    return corrected_estimate(lfi_parts(t, opt.rel_tol), opt);
}

}  // namespace fflow
