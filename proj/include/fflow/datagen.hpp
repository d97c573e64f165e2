#pragma once

// Synthetic parameter-grid datasets, triplets for finite differences, and
// the two binary containers (datasets and camera image stacks).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fflow/binary_io.hpp"
#include "fflow/errors.hpp"
#include "fflow/lfi.hpp"
#include "fflow/nn.hpp"
#include "fflow/random.hpp"
#include "fflow/stats.hpp"

namespace fflow {

struct GridDataset {
    std::vector<double> thetas;
    std::vector<SampleMatrix> blocks;
    std::optional<Matrix> mixing;  ///< log-normal mixing matrix, if any
    std::string provenance;        ///< free-form JSON describing how it was made

    Index dim() const { return blocks.empty() ? 0 : blocks.front().dim(); }

    Index total_rows() const {
        Index n = 0;
        for (const auto &b : blocks) {
            n += b.rows();
        }
        return n;
    }

    void validate() const {
        require(thetas.size() == blocks.size(), "one block per theta");
        require(!blocks.empty(), "grid dataset has no blocks");
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            require(blocks[i].dim() == dim(), "blocks differ in dimension");
            if (i > 0) {
                require(thetas[i] > thetas[i - 1], "thetas must be strictly increasing");
            }
        }
    }

    friend bool operator==(const GridDataset &a, const GridDataset &b) {
        return a.thetas == b.thetas && a.blocks == b.blocks && a.mixing.has_value() == b.mixing.has_value() &&
               (!a.mixing || *a.mixing == *b.mixing) && a.provenance == b.provenance;
    }
};

/// `count` equally spaced values from lo to hi inclusive.
inline std::vector<double> linspace(double lo, double hi, int count) {
    require(count >= 1, "linspace needs at least one point");
    std::vector<double> v(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        v[static_cast<std::size_t>(i)] = count == 1 ? lo : lo + (hi - lo) * i / (count - 1);
    }
    return v;
}

inline RowMatrix standard_normal_rows(Index n, Index d, std::uint64_t seed) {
    NormalStream normal(seed);
    RowMatrix x(n, d);
    for (Index i = 0; i < x.size(); ++i) {
        x.data()[i] = normal();
    }
    return x;
}

// Block generators: g(theta, n, seed) returns n rows drawn at parameter theta.

/// N(theta * 1, I_d).
struct GaussianMean {
    Index d = 1;

    RowMatrix operator()(double theta, Index n, std::uint64_t seed) const {
        RowMatrix x = standard_normal_rows(n, d, seed);
        x.array() += theta;
        return x;
    }

    double analytic_fi(double) const { return static_cast<double>(d); }
};

/// N(0, theta^2 I_d); theta is the standard deviation.
struct GaussianStd {
    Index d = 1;

    RowMatrix operator()(double theta, Index n, std::uint64_t seed) const {
        require(theta > 0.0, "standard deviation must be positive");
        RowMatrix x = standard_normal_rows(n, d, seed);
        x *= theta;
        return x;
    }

    double analytic_fi(double theta) const { return 2.0 * static_cast<double>(d) / (theta * theta); }
};

/// exp(M z) with z ~ N(theta * 1, I_d) and a fixed mixing matrix M.
struct LogNormal {
    Matrix mixing;

    RowMatrix operator()(double theta, Index n, std::uint64_t seed) const {
        RowMatrix z = GaussianMean{mixing.cols()}(theta, n, seed);
        RowMatrix y = z * mixing.transpose();
        y = y.array().exp();
        return y;
    }

    /// FI of the underlying Gaussian, 1^T M^T (M M^T)^-1 M 1, which is d for
    /// invertible M.
    double analytic_fi(double) const {
        const Vector dm = mixing * Vector::Ones(mixing.cols());
        return PcaSpectrum(mixing * mixing.transpose(), kDefaultRelTol).quadratic_form(dm);
    }
};

/// d x d matrix with N(0, mix_std^2) entries from derive_seed(matrix_seed, "mixing").
inline Matrix mixing_matrix(Index d, double mix_std, std::uint64_t matrix_seed) {
    require(mix_std > 0.0, "mixing std must be positive");
    NormalStream normal(derive_seed(matrix_seed, "mixing"));
    Matrix m(d, d);
    for (Index i = 0; i < d; ++i) {
        for (Index j = 0; j < d; ++j) {
            m(i, j) = mix_std * normal();
        }
    }
    return m;
}

/// Block i is drawn from derive_seed(seed, "block", i).
template <typename Generator>
GridDataset generate_grid(const Generator &gen, const std::vector<double> &grid, Index n_per_theta,
                          std::uint64_t seed) {
    require(!grid.empty(), "empty theta grid");
    require(n_per_theta >= 2, "need at least 2 points per theta");
    GridDataset ds;
    ds.thetas = grid;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        ds.blocks.emplace_back(gen(grid[i], n_per_theta, derive_seed(seed, "block", i)));
    }
    ds.validate();
    return ds;
}

inline GridDataset gen_gaussian_mean(const std::vector<double> &grid, Index n_per_theta, Index d,
                                     std::uint64_t seed) {
    require(d >= 1, "dimension must be positive");
    return generate_grid(GaussianMean{d}, grid, n_per_theta, seed);
}

inline SampleMatrix gen_gaussian_std(Index n, Index d, double sigma, std::uint64_t seed) {
    require(d >= 1, "dimension must be positive");
    return SampleMatrix(GaussianStd{d}(sigma, n, seed));
}

/// Log-normal grid with an explicit mixing matrix, stored in the dataset.
inline GridDataset gen_lognormal(const std::vector<double> &grid, Index n_per_theta, const Matrix &mixing,
                                 std::uint64_t seed) {
    require(mixing.rows() == mixing.cols() && mixing.rows() >= 1, "mixing matrix must be square");
    GridDataset ds = generate_grid(LogNormal{mixing}, grid, n_per_theta, seed);
    ds.mixing = mixing;
    return ds;
}

inline GridDataset gen_lognormal(const std::vector<double> &grid, Index n_per_theta, Index d, double mix_std,
                                 std::uint64_t seed, std::uint64_t matrix_seed) {
    return gen_lognormal(grid, n_per_theta, mixing_matrix(d, mix_std, matrix_seed), seed);
}

/// Members at theta - dt, theta, theta + dt from derive_seed(seed, "offset", 0|1|2).
template <typename Generator>
TripletSample make_triplet(const Generator &gen, double theta, double delta_theta, Index n, std::uint64_t seed) {
    if (!(delta_theta > 0.0)) {
        throw InvalidStep("triplet spacing must be positive");
    }
    TripletSample t{SampleMatrix(gen(theta - delta_theta, n, derive_seed(seed, "offset", 0))),
                    SampleMatrix(gen(theta, n, derive_seed(seed, "offset", 1))),
                    SampleMatrix(gen(theta + delta_theta, n, derive_seed(seed, "offset", 2))), theta,
                    delta_theta};
    return t;
}

/// Concatenates the blocks into one labeled set; the grid is consumed block
/// by block to keep the peak footprint near one copy.
inline LabeledDataset make_labeled(GridDataset &&ds) {
    ds.validate();
    LabeledDataset out;
    out.x.resize(ds.total_rows(), ds.dim());
    out.y.resize(out.x.rows());
    out.group.resize(static_cast<std::size_t>(out.x.rows()));
    Index row = 0;
    for (std::size_t b = 0; b < ds.blocks.size(); ++b) {
        RowMatrix block = std::move(ds.blocks[b]).release();
        out.x.middleRows(row, block.rows()) = block;
        out.y.segment(row, block.rows()).setConstant(ds.thetas[b]);
        std::fill_n(out.group.begin() + row, block.rows(), static_cast<Index>(b));
        row += block.rows();
    }
    ds.blocks.clear();
    return out;
}

// ---------------------------------------------------------------------------
// FFLOW-DATA-1
//
//   magic "FFLOW-DATA-1"
//   u64 d, u64 K
//   f64[K] thetas, u64[K] row counts
//   u64 has_mixing; if 1: f64[d*d] mixing matrix, row-major
//   u64 length + UTF-8 JSON provenance
//   K blocks of row-major f64
// All integers and floats little-endian.

inline constexpr std::string_view kDataMagic = "FFLOW-DATA-1";

inline void write_dataset(std::ostream &os, const GridDataset &ds) {
    ds.validate();
    io::Writer w(os);
    w.magic(kDataMagic);
    const auto d = static_cast<std::uint64_t>(ds.dim());
    w.scalar<std::uint64_t>(d);
    w.scalar<std::uint64_t>(ds.thetas.size());
    w.array(ds.thetas.data(), ds.thetas.size());
    for (const auto &b : ds.blocks) {
        w.scalar<std::uint64_t>(static_cast<std::uint64_t>(b.rows()));
    }
    w.scalar<std::uint64_t>(ds.mixing ? 1 : 0);
    if (ds.mixing) {
        require(ds.mixing->rows() == ds.dim() && ds.mixing->cols() == ds.dim(), "mixing matrix must be d x d");
        const RowMatrix m = *ds.mixing;
        w.array(m.data(), static_cast<std::size_t>(m.size()));
    }
    w.text(ds.provenance);
    for (const auto &b : ds.blocks) {
        w.array(b.data().data(), static_cast<std::size_t>(b.data().size()));
    }
}

inline GridDataset read_dataset(std::istream &is) {
    io::Reader r(is);
    r.expect_magic(kDataMagic);
    const auto d = r.count("dimension", std::uint64_t{1} << 24);
    const auto k = r.count("block count", std::uint64_t{1} << 24);
    if (d == 0 || k == 0) {
        throw FormatError("dataset needs positive dimension and block count", r.offset());
    }
    GridDataset ds;
    ds.thetas.resize(k);
    r.array(ds.thetas.data(), k, "thetas");
    std::vector<std::uint64_t> rows(k);
    for (auto &n : rows) {
        n = r.count("row count", std::uint64_t{1} << 34);
    }
    const auto flag_at = r.offset();
    const auto has_mixing = r.scalar<std::uint64_t>("mixing flag");
    if (has_mixing > 1) {
        throw FormatError("mixing flag must be 0 or 1", flag_at);
    }
    if (has_mixing == 1) {
        RowMatrix m(static_cast<Index>(d), static_cast<Index>(d));
        r.array(m.data(), static_cast<std::size_t>(m.size()), "mixing matrix");
        ds.mixing = Matrix(m);
    }
    ds.provenance = r.text("provenance");
    for (std::uint64_t b = 0; b < k; ++b) {
        const auto at = r.offset();
        RowMatrix block(static_cast<Index>(rows[b]), static_cast<Index>(d));
        r.array(block.data(), static_cast<std::size_t>(block.size()), "block data");
        try {
            ds.blocks.emplace_back(std::move(block));
        } catch (const Error &e) {
            throw FormatError(std::string("invalid block: ") + e.what(), at);
        }
    }
    r.expect_end();
    try {
        ds.validate();
    } catch (const ContractViolation &e) {
        throw FormatError(e.what(), r.offset());
    }
    return ds;
}

inline void save_dataset(const std::string &path, const GridDataset &ds) {
    auto out = io::open_out(path);
    write_dataset(out, ds);
}

inline GridDataset load_dataset(const std::string &path) {
    auto in = io::open_in(path);
    return read_dataset(in);
}

// ---------------------------------------------------------------------------
// FFLOW-IMG-1
//
//   magic "FFLOW-IMG-1"
//   u32 width, u32 height, u64 P
//   f64[P] positions, u64[P] frame counts
//   u64 length + UTF-8 JSON provenance
//   P stacks of frames, each frame height x width row-major f32

inline constexpr std::string_view kImageMagic = "FFLOW-IMG-1";

struct ImageContainer {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<double> positions;
    std::vector<std::vector<float>> frames;  ///< per position: count * height * width values
    std::string provenance;

    std::size_t frame_size() const { return static_cast<std::size_t>(width) * height; }
    std::size_t frame_count(std::size_t p) const { return frames[p].size() / std::max<std::size_t>(frame_size(), 1); }

    void validate() const {
        require(width >= 1 && height >= 1, "image size must be positive");
        require(positions.size() == frames.size() && !positions.empty(), "one frame stack per position");
        for (std::size_t p = 0; p < frames.size(); ++p) {
            require(frames[p].size() % frame_size() == 0, "frame stack length is not a multiple of the frame size");
            if (p > 0) {
                require(positions[p] > positions[p - 1], "positions must be strictly increasing");
            }
        }
    }

    friend bool operator==(const ImageContainer &, const ImageContainer &) = default;
};

inline void write_image_container(std::ostream &os, const ImageContainer &c) {
    c.validate();
    io::Writer w(os);
    w.magic(kImageMagic);
    w.scalar<std::uint32_t>(c.width);
    w.scalar<std::uint32_t>(c.height);
    w.scalar<std::uint64_t>(c.positions.size());
    w.array(c.positions.data(), c.positions.size());
    for (std::size_t p = 0; p < c.frames.size(); ++p) {
        w.scalar<std::uint64_t>(c.frame_count(p));
    }
    w.text(c.provenance);
    for (const auto &stack : c.frames) {
        w.array(stack.data(), stack.size());
    }
}

inline ImageContainer read_image_container(std::istream &is) {
    io::Reader r(is);
    r.expect_magic(kImageMagic);
    ImageContainer c;
    const auto size_at = r.offset();
    c.width = r.scalar<std::uint32_t>("width");
    c.height = r.scalar<std::uint32_t>("height");
    if (c.width == 0 || c.height == 0 || c.frame_size() > (std::size_t{1} << 24)) {
        throw FormatError("invalid frame size", size_at);
    }
    const auto p = r.count("position count", std::uint64_t{1} << 20);
    if (p == 0) {
        throw FormatError("container has no positions", r.offset());
    }
    c.positions.resize(p);
    r.array(c.positions.data(), p, "positions");
    for (std::size_t i = 1; i < p; ++i) {
        if (!(c.positions[i] > c.positions[i - 1])) {
            throw FormatError("positions must be strictly increasing", size_at + 16 + 8 * i);
        }
    }
    std::vector<std::uint64_t> counts(p);
    for (auto &n : counts) {
        n = r.count("frame count", std::uint64_t{1} << 32);
    }
    c.provenance = r.text("provenance");
    c.frames.resize(p);
    for (std::size_t i = 0; i < p; ++i) {
        c.frames[i].resize(counts[i] * c.frame_size());
        r.array(c.frames[i].data(), c.frames[i].size(), "frames");
    }
    r.expect_end();
    return c;
}

inline void save_image_container(const std::string &path, const ImageContainer &c) {
    auto out = io::open_out(path);
    write_image_container(out, c);
}

/// Crop window; a negative offset means centered.
struct CropWindow {
    Index height = 18;
    Index width = 24;
    Index row_offset = -1;
    Index col_offset = -1;

    std::pair<Index, Index> origin(Index frame_height, Index frame_width) const {
        const Index r0 = row_offset >= 0 ? row_offset : (frame_height - height) / 2;
        const Index c0 = col_offset >= 0 ? col_offset : (frame_width - width) / 2;
        require(height >= 1 && width >= 1 && r0 + height <= frame_height && c0 + width <= frame_width,
                "crop window does not fit inside the frame");
        return {r0, c0};
    }
};

/// Crops every frame, flattens row-major and standardizes with one scalar
/// mean and standard deviation taken over all cropped pixels of all frames.
inline GridDataset images_to_grid(const ImageContainer &c, const CropWindow &crop = {}) {
    c.validate();
    const auto [r0, c0] = crop.origin(c.height, c.width);
    const Index d = crop.height * crop.width;
    GridDataset ds;
    ds.thetas = c.positions;
    std::vector<RowMatrix> blocks;
    double sum = 0.0;
    Index count = 0;
    for (std::size_t p = 0; p < c.frames.size(); ++p) {
        const auto frames = static_cast<Index>(c.frame_count(p));
        RowMatrix block(frames, d);
        for (Index f = 0; f < frames; ++f) {
            const float *frame = c.frames[p].data() + static_cast<std::size_t>(f) * c.frame_size();
            for (Index i = 0; i < crop.height; ++i) {
                for (Index j = 0; j < crop.width; ++j) {
                    block(f, i * crop.width + j) = frame[(r0 + i) * c.width + (c0 + j)];
                }
            }
        }
        sum += block.sum();
        count += block.size();
        blocks.push_back(std::move(block));
    }
    require(count > 0, "container holds no frames");
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (const auto &b : blocks) {
        ss += (b.array() - mean).square().sum();
    }
    const double sd = std::sqrt(ss / static_cast<double>(count));
    if (!(sd > 0.0) || !std::isfinite(sd)) {
        throw StandardizationError("image intensities have zero spread; cannot standardize");
    }
    for (auto &b : blocks) {
        b = (b.array() - mean) / sd;
        ds.blocks.emplace_back(std::move(b));
    }
    ds.provenance = c.provenance;
    return ds;
}

inline GridDataset load_image_container(const std::string &path, const CropWindow &crop = {}) {
    auto in = io::open_in(path);
    return images_to_grid(read_image_container(in), crop);
}

}  // namespace fflow
