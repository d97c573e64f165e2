#pragma once

// Builds an FFLOW-IMG-1 container from a directory of exported matrices.
//
// Every regular file whose name ends in .npy, .csv or .txt holds the frames
// of one position. The position (in the units of the experiment) is the
// number at the end of the file stem, e.g. "pos_-0.3.npy" or "0.6.csv".
//   .npy       : C-order array of shape (frames, height, width) or
//                (frames, height * width); dtype f4, f8, u1, u2, i2, i4, u4
//   .csv, .txt : one frame per line, height * width values separated by
//                commas or whitespace

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "fflow/binary_io.hpp"
#include "fflow/datagen.hpp"

namespace fflow {

struct MatrixFile {
    std::vector<std::size_t> shape;
    std::vector<float> values;
};

namespace detail {

template <typename T>
void append_as_float(io::Reader &r, std::size_t count, std::vector<float> &out, bool big_endian) {
    std::vector<T> buf(count);
    r.bytes(buf.data(), count * sizeof(T), "array data");
    for (T v : buf) {
        if (big_endian && sizeof(T) > 1) {
            auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
            std::reverse(bytes.begin(), bytes.end());
            v = std::bit_cast<T>(bytes);
        }
        out.push_back(static_cast<float>(v));
    }
}

}  // namespace detail

inline MatrixFile read_npy(const std::string &path) {
    auto in = io::open_in(path);
    io::Reader r(in);
    r.expect_magic("\x93NUMPY");
    const auto major = r.scalar<std::uint8_t>("version");
    r.scalar<std::uint8_t>("version");
    const std::uint64_t header_len =
        major == 1 ? r.scalar<std::uint16_t>("header length") : r.scalar<std::uint32_t>("header length");
    const auto header_at = r.offset();
    std::string header(header_len, '\0');
    r.bytes(header.data(), header.size(), "header");

    std::smatch m;
    if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([<>|=])([a-z])(\d+)')"))) {
        throw FormatError("npy header lacks a dtype", header_at);
    }
    const bool big = m[1] == ">";
    const std::string kind = m[2];
    const int width = std::stoi(m[3]);
    if (std::regex_search(header, std::regex(R"('fortran_order'\s*:\s*True)"))) {
        throw FormatError("Fortran-ordered arrays are not supported", header_at);
    }
    if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))"))) {
        throw FormatError("npy header lacks a shape", header_at);
    }
    MatrixFile out;
    std::stringstream dims(m[1].str());
    std::string item;
    std::size_t total = 1;
    while (std::getline(dims, item, ',')) {
        item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
        if (!item.empty()) {
            out.shape.push_back(std::stoull(item));
            total *= out.shape.back();
        }
    }
    if (out.shape.size() < 2 || out.shape.size() > 3) {
        throw FormatError("expected a 2-d or 3-d array", header_at);
    }
    out.values.reserve(total);
    const std::string code = kind + std::to_string(width);
    if (code == "f4") detail::append_as_float<float>(r, total, out.values, big);
    else if (code == "f8") detail::append_as_float<double>(r, total, out.values, big);
    else if (code == "u1") detail::append_as_float<std::uint8_t>(r, total, out.values, big);
    else if (code == "u2") detail::append_as_float<std::uint16_t>(r, total, out.values, big);
    else if (code == "i2") detail::append_as_float<std::int16_t>(r, total, out.values, big);
    else if (code == "i4") detail::append_as_float<std::int32_t>(r, total, out.values, big);
    else if (code == "u4") detail::append_as_float<std::uint32_t>(r, total, out.values, big);
    else throw FormatError("unsupported dtype " + code, header_at);
    return out;
}

inline MatrixFile read_text_matrix(const std::string &path) {
    auto in = io::open_in(path);
    MatrixFile out;
    std::string line;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::uint64_t offset = 0;
    while (std::getline(in, line)) {
        const auto line_at = offset;
        offset += line.size() + 1;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream fields(line);
        std::size_t n = 0;
        double v;
        while (fields >> v) {
            out.values.push_back(static_cast<float>(v));
            ++n;
        }
        if (!fields.eof()) {
            throw FormatError("non-numeric field in " + path, line_at);
        }
        if (n == 0) {
            continue;
        }
        if (cols == 0) {
            cols = n;
        } else if (n != cols) {
            throw FormatError("row has " + std::to_string(n) + " values, expected " + std::to_string(cols), line_at);
        }
        ++rows;
    }
    out.shape = {rows, cols};
    return out;
}

/// Position encoded at the end of a file stem.
inline double position_from_stem(const std::string &stem) {
    std::smatch m;
    if (!std::regex_search(stem, m, std::regex(R"(([-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)$)"))) {
        throw ContractViolation("cannot read a position from file name '" + stem + "'");
    }
    return std::stod(m[1]);
}

/// Frames of `height` x `width` pixels. 3-d npy arrays carry their own frame
/// shape, which must agree with the requested one.
inline ImageContainer convert_matrix_directory(const std::string &dir, std::uint32_t width, std::uint32_t height) {
    namespace fs = std::filesystem;
    require(fs::is_directory(dir), "'" + dir + "' is not a directory");
    struct Entry {
        double position;
        fs::path path;
    };
    std::vector<Entry> entries;
    for (const auto &f : fs::directory_iterator(dir)) {
        const auto ext = f.path().extension().string();
        if (f.is_regular_file() && (ext == ".npy" || ext == ".csv" || ext == ".txt")) {
            entries.push_back({position_from_stem(f.path().stem().string()), f.path()});
        }
    }
    require(!entries.empty(), "no .npy/.csv/.txt files in '" + dir + "'");
    std::sort(entries.begin(), entries.end(), [](const Entry &a, const Entry &b) { return a.position < b.position; });

    ImageContainer c;
    c.width = width;
    c.height = height;
    for (const auto &e : entries) {
        MatrixFile m = e.path.extension() == ".npy" ? read_npy(e.path.string()) : read_text_matrix(e.path.string());
        const std::size_t frame = m.shape.size() == 3 ? m.shape[1] * m.shape[2] : m.shape[1];
        if (m.shape.size() == 3 && (m.shape[1] != height || m.shape[2] != width)) {
            throw FormatError(e.path.string() + ": frames are " + std::to_string(m.shape[1]) + "x" +
                                  std::to_string(m.shape[2]) + ", expected " + std::to_string(height) + "x" +
                                  std::to_string(width),
                              0);
        }
        if (frame != c.frame_size()) {
            throw FormatError(e.path.string() + ": frame has " + std::to_string(frame) + " values, expected " +
                                  std::to_string(c.frame_size()),
                              0);
        }
        if (!c.positions.empty() && !(e.position > c.positions.back())) {
            throw ContractViolation("duplicate position " + std::to_string(e.position));
        }
        c.positions.push_back(e.position);
        c.frames.push_back(std::move(m.values));
    }
    c.validate();
    return c;
}

}  // namespace fflow
