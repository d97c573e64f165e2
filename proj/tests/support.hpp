#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "fflow/datagen.hpp"
#include "fflow/lfi.hpp"

namespace fflow::testing {

inline TripletSample gaussian_triplet(Index d, Index n, double delta, std::uint64_t seed, double theta = 0.0) {
    return make_triplet(GaussianMean{d}, theta, delta, n, seed);
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string &name) {
    const auto dir = std::filesystem::temp_directory_path() / ("fflow_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline double mean_of(const std::vector<double> &v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_std(const std::vector<double> &v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace fflow::testing
