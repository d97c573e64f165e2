#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "fflow/errors.hpp"

namespace fflow::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T value) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    } else {
        return value;
    }
}

class Writer {
public:
    explicit Writer(std::ostream &out) : out_(out) {}

    void bytes(const void *p, std::size_t n) {
        out_.write(static_cast<const char *>(p), static_cast<std::streamsize>(n));
        if (!out_) {
            throw Error("write failed");
        }
    }

    void magic(std::string_view m) { bytes(m.data(), m.size()); }

    template <typename T>
    void scalar(T value) {
        const T le = to_little(value);
        bytes(&le, sizeof le);
    }

    template <typename T>
    void array(const T *p, std::size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            bytes(p, n * sizeof(T));
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                scalar(p[i]);
            }
        }
    }

    void text(const std::string &s) {
        scalar<std::uint64_t>(s.size());
        bytes(s.data(), s.size());
    }

private:
    std::ostream &out_;
};

/// Sequential reader that reports the byte offset of any malformed field.
class Reader {
public:
    explicit Reader(std::istream &in) : in_(in) {}

    std::uint64_t offset() const noexcept { return offset_; }

    void bytes(void *p, std::size_t n, std::string_view what) {
        in_.read(static_cast<char *>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw FormatError("truncated file while reading " + std::string(what), offset_ + in_.gcount());
        }
        offset_ += n;
    }

    void expect_magic(std::string_view m) {
        std::string got(m.size(), '\0');
        const auto at = offset_;
        bytes(got.data(), got.size(), "magic");
        if (got != m) {
            throw FormatError("bad magic, expected " + std::string(m), at);
        }
    }

    template <typename T>
    T scalar(std::string_view what) {
        T value;
        bytes(&value, sizeof value, what);
        return to_little(value);
    }

    template <typename T>
    void array(T *p, std::size_t n, std::string_view what) {
        bytes(p, n * sizeof(T), what);
        if constexpr (std::endian::native == std::endian::big) {
            for (std::size_t i = 0; i < n; ++i) {
                p[i] = to_little(p[i]);
            }
        }
    }

    /// A count field, checked against `limit` so a corrupt header cannot
    /// trigger a huge allocation.
    std::uint64_t count(std::string_view what, std::uint64_t limit) {
        const auto at = offset_;
        const auto n = scalar<std::uint64_t>(what);
        if (n > limit) {
            throw FormatError("implausible " + std::string(what) + " " + std::to_string(n), at);
        }
        return n;
    }

    std::string text(std::string_view what, std::uint64_t limit = std::uint64_t{1} << 26) {
        const auto n = count(what, limit);
        std::string s(n, '\0');
        bytes(s.data(), n, what);
        return s;
    }

    void expect_end() {
        if (in_.peek() != std::char_traits<char>::eof()) {
            throw FormatError("trailing bytes after payload", offset_);
        }
    }

private:
    std::istream &in_;
    std::uint64_t offset_ = 0;
};

inline std::ofstream open_out(const std::string &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open '" + path + "' for writing");
    }
    return out;
}

inline std::ifstream open_in(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path + "' for reading");
    }
    return in;
}

}  // namespace fflow::io
