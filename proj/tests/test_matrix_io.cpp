#include "doctest.h"

#include <cmath>
#include <cstring>
#include <limits>

#include "medsae/matrix.hpp"
#include "medsae/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace medsae;

TEST_CASE("read_matrix recovers the header-declared shape and row-major values") {
    testutil::TempDir dir("saem");
    Matrix m(2, 3);
    m.data = {1, 2, 3, 4, 5, 6};
    write_matrix(m, dir / "m.saem");
    Matrix back = read_matrix(dir / "m.saem");
    CHECK(back.rows == 2);
    CHECK(back.cols == 3);
    CHECK(back == m);
}

TEST_CASE("empty matrix writes a header-only 24-byte file") {
    testutil::TempDir dir("saem");
    write_matrix(Matrix(0, 0), dir / "empty.saem");
    CHECK(std::filesystem::file_size(dir / "empty.saem") == 24);
    Matrix back = read_matrix(dir / "empty.saem");
    CHECK(back.rows == 0);
    CHECK(back.cols == 0);
}

TEST_CASE("1x1 matrix is a header plus one 8-byte value") {
    testutil::TempDir dir("saem");
    Matrix m(1, 1);
    m.data = {3.5};
    write_matrix(m, dir / "one.saem");
    CHECK(std::filesystem::file_size(dir / "one.saem") == 32);
    auto bytes = testutil::read_bytes(dir / "one.saem");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(bytes[24 + i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    CHECK(v == 3.5);
}

TEST_CASE("write then read round-trips bitwise for seeded random matrices") {
    testutil::TempDir dir("saem");
    Matrix m = oracle::random_matrix(7, 5, 1234, -100.0, 100.0);
    write_matrix(m, dir / "rt.saem");
    CHECK(read_matrix(dir / "rt.saem") == m);

    Matrix big = oracle::gaussian_matrix(100, 512, 987);
    write_matrix(big, dir / "big.saem");
    CHECK(read_matrix(dir / "big.saem") == big);
}

TEST_CASE("f32 payloads promote to f64 and round-trip exactly") {
    testutil::TempDir dir("saem");
    Matrix m(4, 3);
    SplitMix64 rng(55);
    for (auto& v : m.data) v = static_cast<double>(static_cast<float>(rng.next_uniform(-2, 2)));
    write_matrix(m, dir / "f32.saem", Dtype::f32);
    // header + 12 * 4 payload bytes
    CHECK(std::filesystem::file_size(dir / "f32.saem") == 24 + 12 * 4);
    Matrix back = read_matrix(dir / "f32.saem");
    CHECK(back == m);
}

TEST_CASE("payload one value short raises ShapeMismatch") {
    testutil::TempDir dir("saem");
    Matrix m(2, 3);
    m.data = {1, 2, 3, 4, 5, 6};
    write_matrix(m, dir / "short.saem");
    auto bytes = testutil::read_bytes(dir / "short.saem");
    bytes.resize(bytes.size() - 8);
    testutil::write_bytes(dir / "short.saem", bytes);
    CHECK_THROWS_AS(read_matrix(dir / "short.saem"), ShapeMismatch);
}

TEST_CASE("trailing bytes after the payload raise ShapeMismatch") {
    testutil::TempDir dir("saem");
    write_matrix(Matrix(1, 2, 1.0), dir / "long.saem");
    auto bytes = testutil::read_bytes(dir / "long.saem");
    bytes.push_back(0);
    testutil::write_bytes(dir / "long.saem", bytes);
    CHECK_THROWS_AS(read_matrix(dir / "long.saem"), ShapeMismatch);
}

TEST_CASE("corrupt headers raise MalformedHeader") {
    testutil::TempDir dir("saem");
    write_matrix(Matrix(1, 1, 1.0), dir / "m.saem");
    auto good = testutil::read_bytes(dir / "m.saem");

    auto bad_magic = good;
    bad_magic[0] = 'X';
    testutil::write_bytes(dir / "bad_magic.saem", bad_magic);
    CHECK_THROWS_AS(read_matrix(dir / "bad_magic.saem"), MalformedHeader);

    auto bad_version = good;
    bad_version[4] = 9;
    testutil::write_bytes(dir / "bad_version.saem", bad_version);
    CHECK_THROWS_AS(read_matrix(dir / "bad_version.saem"), MalformedHeader);

    auto bad_dtype = good;
    bad_dtype[6] = 7;
    testutil::write_bytes(dir / "bad_dtype.saem", bad_dtype);
    CHECK_THROWS_AS(read_matrix(dir / "bad_dtype.saem"), MalformedHeader);

    auto truncated = good;
    truncated.resize(10);
    testutil::write_bytes(dir / "truncated.saem", truncated);
    CHECK_THROWS_AS(read_matrix(dir / "truncated.saem"), MalformedHeader);

    // rows*cols overflowing 64 bits is rejected before any allocation
    auto overflow = good;
    for (int i = 0; i < 8; ++i) overflow[8 + i] = 0xff;
    for (int i = 0; i < 8; ++i) overflow[16 + i] = 0xff;
    testutil::write_bytes(dir / "overflow.saem", overflow);
    CHECK_THROWS_AS(read_matrix(dir / "overflow.saem"), MalformedHeader);
}

TEST_CASE("non-finite payload entries are rejected with their flat index") {
    testutil::TempDir dir("saem");
    Matrix m(2, 2, 1.0);
    write_matrix(m, dir / "nan.saem");
    auto bytes = testutil::read_bytes(dir / "nan.saem");
    double bad = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t bits;
    std::memcpy(&bits, &bad, 8);
    for (int i = 0; i < 8; ++i) {
        bytes[24 + 8 * 3 + i] = static_cast<unsigned char>(bits >> (8 * i));
    }
    testutil::write_bytes(dir / "nan.saem", bytes);
    try {
        read_matrix(dir / "nan.saem");
        FAIL("expected NonFiniteEntry");
    } catch (const NonFiniteEntry& e) {
        CHECK(e.index == 3);
    }

    double inf = std::numeric_limits<double>::infinity();
    std::memcpy(&bits, &inf, 8);
    for (int i = 0; i < 8; ++i) {
        bytes[24 + i] = static_cast<unsigned char>(bits >> (8 * i));
    }
    testutil::write_bytes(dir / "inf.saem", bytes);
    try {
        read_matrix(dir / "inf.saem");
        FAIL("expected NonFiniteEntry");
    } catch (const NonFiniteEntry& e) {
        CHECK(e.index == 0);
    }
}

TEST_CASE("missing file raises IoFailure") {
    CHECK_THROWS_AS(read_matrix("/nonexistent/nowhere.saem"), IoFailure);
}
