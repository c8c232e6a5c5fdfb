#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "medsae/errors.hpp"

namespace medsae {

// Dense row-major matrix of 64-bit floats. Files may carry f32 payloads;
// values are promoted to f64 on load so downstream math runs in one precision.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    std::size_t size() const { return data.size(); }

    bool operator==(const Matrix& other) const = default;
};

enum class Dtype : std::uint16_t { f32 = 0, f64 = 1 };

// SAEM container, bit-exact:
//   magic "SAEM" | version u16 LE = 1 | dtype u16 LE (0=f32, 1=f64)
//   | rows u64 LE | cols u64 LE | payload rows*cols values LE row-major
// Header is 24 bytes. Several records may be concatenated in one file
// (checkpoints store four).

namespace detail {

constexpr std::size_t kSaemHeaderBytes = 24;
constexpr std::uint16_t kSaemVersion = 1;

inline void put_u16le(unsigned char* p, std::uint16_t v) {
    p[0] = static_cast<unsigned char>(v & 0xff);
    p[1] = static_cast<unsigned char>(v >> 8);
}

inline void put_u64le(unsigned char* p, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<unsigned char>(v >> (8 * i));
}

inline std::uint16_t get_u16le(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (std::uint16_t(p[1]) << 8));
}

inline std::uint64_t get_u64le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return v;
}

inline std::uint64_t double_bits(double v) {
    std::uint64_t b;
    std::memcpy(&b, &v, 8);
    return b;
}

inline double bits_double(std::uint64_t b) {
    double v;
    std::memcpy(&v, &b, 8);
    return v;
}

inline std::uint32_t float_bits(float v) {
    std::uint32_t b;
    std::memcpy(&b, &v, 4);
    return b;
}

inline float bits_float(std::uint32_t b) {
    float v;
    std::memcpy(&v, &b, 4);
    return v;
}

} // namespace detail

inline void write_matrix(const Matrix& m, std::ostream& out, Dtype dtype = Dtype::f64) {
    if (m.data.size() != m.rows * m.cols) {
        throw ShapeMismatch("write_matrix: data length != rows*cols");
    }
    unsigned char header[detail::kSaemHeaderBytes];
    std::memcpy(header, "SAEM", 4);
    detail::put_u16le(header + 4, detail::kSaemVersion);
    detail::put_u16le(header + 6, static_cast<std::uint16_t>(dtype));
    detail::put_u64le(header + 8, m.rows);
    detail::put_u64le(header + 16, m.cols);
    out.write(reinterpret_cast<const char*>(header), sizeof(header));

    std::vector<unsigned char> buf;
    if (dtype == Dtype::f64) {
        buf.resize(m.data.size() * 8);
        for (std::size_t i = 0; i < m.data.size(); ++i) {
            detail::put_u64le(buf.data() + 8 * i, detail::double_bits(m.data[i]));
        }
    } else {
        buf.resize(m.data.size() * 4);
        for (std::size_t i = 0; i < m.data.size(); ++i) {
            std::uint32_t b = detail::float_bits(static_cast<float>(m.data[i]));
            for (int k = 0; k < 4; ++k) {
                buf[4 * i + k] = static_cast<unsigned char>(b >> (8 * k));
            }
        }
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoFailure("write_matrix: stream write failed");
}

inline void write_matrix(const Matrix& m, const std::filesystem::path& path,
                         Dtype dtype = Dtype::f64) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("write_matrix: cannot open " + path.string());
    write_matrix(m, out, dtype);
    out.flush();
    if (!out) throw IoFailure("write_matrix: write failed for " + path.string());
}

// Reads one SAEM record from the stream. When expect_eof is set the stream
// must end exactly at the payload boundary (single-matrix files).
inline Matrix read_matrix(std::istream& in, bool expect_eof = false) {
    unsigned char header[detail::kSaemHeaderBytes];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(header))) {
        throw MalformedHeader("read_matrix: file shorter than 24-byte header");
    }
    if (std::memcmp(header, "SAEM", 4) != 0) {
        throw MalformedHeader("read_matrix: bad magic bytes");
    }
    std::uint16_t version = detail::get_u16le(header + 4);
    if (version != detail::kSaemVersion) {
        throw MalformedHeader("read_matrix: unsupported version " + std::to_string(version));
    }
    std::uint16_t dtype_raw = detail::get_u16le(header + 6);
    if (dtype_raw > 1) {
        throw MalformedHeader("read_matrix: unknown dtype " + std::to_string(dtype_raw));
    }
    auto dtype = static_cast<Dtype>(dtype_raw);
    std::uint64_t rows = detail::get_u64le(header + 8);
    std::uint64_t cols = detail::get_u64le(header + 16);
    if (rows != 0 && cols > std::numeric_limits<std::uint64_t>::max() / rows) {
        throw MalformedHeader("read_matrix: rows*cols overflows");
    }
    std::uint64_t count = rows * cols;
    std::size_t value_bytes = dtype == Dtype::f64 ? 8 : 4;

    std::vector<unsigned char> buf(count * value_bytes);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw ShapeMismatch("read_matrix: payload shorter than rows*cols");
    }
    if (expect_eof) {
        in.peek();
        if (!in.eof()) {
            throw ShapeMismatch("read_matrix: trailing bytes after rows*cols payload");
        }
    }

    Matrix m;
    m.rows = static_cast<std::size_t>(rows);
    m.cols = static_cast<std::size_t>(cols);
    m.data.resize(static_cast<std::size_t>(count));
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        double v;
        if (dtype == Dtype::f64) {
            v = detail::bits_double(detail::get_u64le(buf.data() + 8 * i));
        } else {
            std::uint32_t b = 0;
            for (int k = 0; k < 4; ++k) b |= std::uint32_t(buf[4 * i + k]) << (8 * k);
            v = static_cast<double>(detail::bits_float(b));
        }
        if (!std::isfinite(v)) {
            throw NonFiniteEntry("read_matrix: non-finite value at flat index " +
                                     std::to_string(i), i);
        }
        m.data[i] = v;
    }
    return m;
}

inline Matrix read_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("read_matrix: cannot open " + path.string());
    return read_matrix(in, /*expect_eof=*/true);
}

} // namespace medsae
