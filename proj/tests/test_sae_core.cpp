#include "doctest.h"

#include <cmath>

#include "medsae/sae.hpp"
#include "oracles.hpp"

using namespace medsae;

namespace {

SaeParams tiny_identity_params() {
    // d = m = 2, w_enc = w_dec = I, zero biases
    SaeParams p;
    p.d = 2;
    p.m = 2;
    p.w_enc = Matrix(2, 2);
    p.w_dec = Matrix(2, 2);
    p.w_enc(0, 0) = p.w_enc(1, 1) = 1.0;
    p.w_dec(0, 0) = p.w_dec(1, 1) = 1.0;
    p.b_pre.assign(2, 0.0);
    p.b_enc.assign(2, 0.0);
    return p;
}

SaeParams random_params(std::size_t d, std::size_t m, std::uint64_t seed) {
    SaeParams p = init_params(d, m, seed);
    SplitMix64 rng(derive_seed(seed, "bias-jitter"));
    for (auto& v : p.b_pre) v = rng.next_uniform(-0.3, 0.3);
    for (auto& v : p.b_enc) v = rng.next_uniform(-0.3, 0.3);
    return p;
}

} // namespace

TEST_CASE("init_params is deterministic with unit decoder columns and zero biases") {
    SaeParams a = init_params(4, 8, 7);
    SaeParams b = init_params(4, 8, 7);
    CHECK(a.w_enc == b.w_enc);
    CHECK(a.w_dec == b.w_dec);
    CHECK(a.b_pre == b.b_pre);
    CHECK(a.b_enc == b.b_enc);

    for (std::size_t j = 0; j < 8; ++j) {
        double nsq = 0.0;
        for (std::size_t i = 0; i < 4; ++i) nsq += a.w_dec(i, j) * a.w_dec(i, j);
        CHECK(std::fabs(std::sqrt(nsq) - 1.0) < 1e-12);
    }
    for (double v : a.b_enc) CHECK(v == 0.0);
    for (double v : a.b_pre) CHECK(v == 0.0);
    // encoder starts as the decoder transpose
    for (std::size_t j = 0; j < 8; ++j) {
        for (std::size_t i = 0; i < 4; ++i) CHECK(a.w_enc(j, i) == a.w_dec(i, j));
    }
    CHECK(init_params(4, 8, 8).w_dec != a.w_dec);
}

TEST_CASE("encode clips negatives through the ReLU") {
    SaeParams p = tiny_identity_params();
    Matrix x(1, 2);
    x.data = {-1.0, 2.0};
    Matrix z = encode(p, x);
    CHECK(z(0, 0) == 0.0);
    CHECK(z(0, 1) == 2.0);
}

TEST_CASE("encoding b_pre itself yields ReLU(b_enc)") {
    SaeParams p = random_params(3, 6, 21);
    Matrix x(1, 3);
    for (std::size_t a = 0; a < 3; ++a) x(0, a) = p.b_pre[a];
    Matrix z = encode(p, x);
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(z(0, j) == doctest::Approx(std::max(p.b_enc[j], 0.0)).epsilon(1e-12));
    }
}

TEST_CASE("encode output is entrywise non-negative") {
    SaeParams p = random_params(5, 15, 3);
    Matrix x = oracle::random_matrix(11, 5, 31, -3, 3);
    Matrix z = encode(p, x);
    for (double v : z.data) CHECK(v >= 0.0);
}

TEST_CASE("encode matches the independent re-implementation within 1e-12") {
    SaeParams p = random_params(6, 14, 99);
    Matrix x = oracle::random_matrix(9, 6, 101, -2, 2);
    Matrix z = encode(p, x);
    Matrix zo = oracle::encode(p, x);
    REQUIRE(z.rows == zo.rows);
    for (std::size_t i = 0; i < z.size(); ++i) {
        CHECK(std::fabs(z.data[i] - zo.data[i]) < 1e-12);
    }
}

TEST_CASE("decode of zero codes returns b_pre rows") {
    SaeParams p = random_params(4, 9, 5);
    Matrix z(3, 9);
    Matrix xhat = decode(p, z);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t a = 0; a < 4; ++a) CHECK(xhat(i, a) == p.b_pre[a]);
    }
}

TEST_CASE("decode of a scaled one-hot code picks one decoder column") {
    SaeParams p = random_params(4, 9, 6);
    const std::size_t j = 4;
    const double c = 2.5;
    Matrix z(1, 9);
    z(0, j) = c;
    Matrix xhat = decode(p, z);
    for (std::size_t a = 0; a < 4; ++a) {
        CHECK(xhat(0, a) == doctest::Approx(c * p.w_dec(a, j) + p.b_pre[a]).epsilon(1e-12));
    }
}

TEST_CASE("decode matches the independent re-implementation within 1e-12") {
    SaeParams p = random_params(7, 12, 44);
    Matrix z = oracle::random_matrix(5, 12, 45, 0, 2);
    Matrix a = decode(p, z);
    Matrix b = oracle::decode(p, z);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::fabs(a.data[i] - b.data[i]) < 1e-12);
    }
}

TEST_CASE("a perfect autoencoder with zero codes has zero loss") {
    SaeParams p = random_params(4, 8, 77);
    // all-negative pre-activations: x = b_pre gives z == ReLU(b_enc); force b_enc <= 0
    for (auto& v : p.b_enc) v = -std::fabs(v) - 0.1;
    Matrix x(3, 4);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t a = 0; a < 4; ++a) x(i, a) = p.b_pre[a];
    }
    LossBreakdown lb = loss(p, x, 3e-4);
    CHECK(lb.reconstruction == 0.0);
    CHECK(lb.sparsity == 0.0);
    CHECK(lb.total == 0.0);
}

TEST_CASE("lambda zero makes total equal reconstruction exactly") {
    SaeParams p = random_params(5, 10, 13);
    Matrix x = oracle::random_matrix(6, 5, 14);
    LossBreakdown lb = loss(p, x, 0.0);
    CHECK(lb.total == lb.reconstruction);
}

TEST_CASE("loss components match a scalar recomputation from encode/decode") {
    SaeParams p = random_params(6, 12, 15);
    Matrix x = oracle::random_matrix(7, 6, 16);
    const double lambda = 3e-4;
    LossBreakdown lb = loss(p, x, lambda);

    Matrix z = oracle::encode(p, x);
    Matrix xhat = oracle::decode(p, z);
    double rec = 0.0, l1 = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t a = 0; a < 6; ++a) {
            double r = xhat(i, a) - x(i, a);
            rec += r * r;
        }
        for (std::size_t j = 0; j < 12; ++j) l1 += z(i, j);
    }
    rec /= x.rows;
    l1 /= x.rows;
    CHECK(std::fabs(lb.reconstruction - rec) < 1e-12);
    CHECK(std::fabs(lb.sparsity - l1) < 1e-12);
    CHECK(std::fabs(lb.total - (rec + lambda * l1)) < 1e-12);
}

TEST_CASE("zero batch with zero biases has zero b_pre gradient") {
    SaeParams p = init_params(4, 8, 50); // biases zero by construction
    Matrix x(3, 4);                      // all-zero batch
    SaeGrads g = grad(p, x, 3e-4);
    for (double v : g.b_pre) CHECK(v == 0.0);
}

TEST_CASE("analytic gradients match central finite differences") {
    const double h = 1e-5, rel = 1e-5, abs_floor = 1e-7;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        for (double lambda : {0.0, 3e-4, 1e-2}) {
            auto [p, x] = oracle::margin_safe_instance(6, 12, 4, seed);
            SaeGrads g = grad(p, x, lambda);
            const std::size_t count = oracle::param_count(p);
            for (std::size_t idx = 0; idx < count; ++idx) {
                double analytic = oracle::grad_at(g, idx);
                double numeric = oracle::fd_gradient(p, x, lambda, idx, h);
                double tol = std::max(abs_floor,
                                      rel * std::max(std::fabs(analytic), std::fabs(numeric)));
                CHECK(std::fabs(analytic - numeric) <= tol);
            }
        }
    }
}

TEST_CASE("gradient is affine in lambda") {
    auto [p, x] = oracle::margin_safe_instance(5, 10, 3, 77);
    const double c = 1e-3;
    SaeGrads g1 = grad(p, x, c);
    SaeGrads g2 = grad(p, x, 2 * c);
    SaeGrads g3 = grad(p, x, 3 * c);
    const std::size_t count = oracle::param_count(p);
    for (std::size_t idx = 0; idx < count; ++idx) {
        double d12 = oracle::grad_at(g2, idx) - oracle::grad_at(g1, idx);
        double d23 = oracle::grad_at(g3, idx) - oracle::grad_at(g2, idx);
        CHECK(std::fabs(d12 - d23) < 1e-10);
    }
}

TEST_CASE("a small step along the negative gradient decreases the loss") {
    for (std::uint64_t seed : {5ull, 6ull}) {
        auto [p, x] = oracle::margin_safe_instance(6, 12, 4, seed);
        const double lambda = 3e-4;
        double before = loss(p, x, lambda).total;
        SaeGrads g = grad(p, x, lambda);
        SaeParams stepped = p;
        const double eta = 1e-8;
        const std::size_t count = oracle::param_count(stepped);
        for (std::size_t idx = 0; idx < count; ++idx) {
            *oracle::param_at(stepped, idx) -= eta * oracle::grad_at(g, idx);
        }
        double after = loss(stepped, x, lambda).total;
        CHECK(after < before);
    }
}

TEST_CASE("l0_rate counts strictly positive entries") {
    Matrix z(2, 4);
    CHECK(l0_rate(z) == 0.0);
    for (auto& v : z.data) v = 1.0;
    CHECK(l0_rate(z) == 1.0);
    z = Matrix(2, 4);
    z(0, 0) = 0.5;
    z(0, 3) = 2.0;
    z(1, 1) = 0.1;
    CHECK(l0_rate(z) == doctest::Approx(0.375));
}

TEST_CASE("l0_rate matches the scalar oracle") {
    Matrix z = oracle::random_matrix(13, 17, 8, -1, 1);
    for (auto& v : z.data) v = std::max(v, 0.0);
    CHECK(l0_rate(z) == doctest::Approx(oracle::l0_rate(z)).epsilon(1e-12));
}

TEST_CASE("fve is 1 for perfect reconstruction and 0 for the column-mean predictor") {
    Matrix x = oracle::random_matrix(10, 6, 9);
    CHECK(fve(x, x) == 1.0);

    Matrix mean_pred(10, 6);
    for (std::size_t j = 0; j < 6; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < 10; ++i) mu += x(i, j);
        mu /= 10;
        for (std::size_t i = 0; i < 10; ++i) mean_pred(i, j) = mu;
    }
    CHECK(fve(x, mean_pred) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("fve matches the scalar oracle and rejects constant data") {
    Matrix x = oracle::random_matrix(8, 5, 10);
    Matrix xhat = oracle::random_matrix(8, 5, 11);
    CHECK(fve(x, xhat) == doctest::Approx(oracle::fve(x, xhat)).epsilon(1e-12));
    CHECK_THROWS_AS(fve(Matrix(3, 2, 1.0), Matrix(3, 2, 1.0)), DegenerateData);
}

TEST_CASE("dead_neurons counts columns that never exceed the threshold") {
    Matrix z(4, 10);
    CHECK(dead_neurons(z, 0.0).dead_fraction == 1.0);

    for (std::size_t j = 0; j < 10; ++j) z(1, j) = 1.0;
    CHECK(dead_neurons(z, 0.0).dead_fraction == 0.0);

    // exactly 3 all-zero columns out of 10
    z = Matrix(4, 10);
    for (std::size_t j = 0; j < 10; ++j) {
        if (j == 2 || j == 5 || j == 9) continue;
        z(j % 4, j) = 0.7;
    }
    auto rep = dead_neurons(z, 0.0);
    CHECK(rep.dead_fraction == doctest::Approx(0.30));
    CHECK(rep.alive[2] == 0);
    CHECK(rep.alive[5] == 0);
    CHECK(rep.alive[9] == 0);
    CHECK(rep.alive[0] == 1);

    Matrix zr = oracle::random_matrix(12, 9, 12, 0, 1);
    for (std::size_t j = 0; j < 9; j += 3) {
        for (std::size_t i = 0; i < 12; ++i) zr(i, j) = 0.0;
    }
    CHECK(dead_neurons(zr, 0.0).dead_fraction ==
          doctest::Approx(oracle::dead_fraction(zr, 0.0)).epsilon(1e-12));
}

TEST_CASE("shape mismatches are rejected across the forward ops") {
    SaeParams p = random_params(4, 8, 60);
    CHECK_THROWS_AS(encode(p, Matrix(2, 5)), DimensionMismatch);
    CHECK_THROWS_AS(decode(p, Matrix(2, 7)), DimensionMismatch);
    CHECK_THROWS_AS(loss(p, Matrix(2, 5), 0.1), DimensionMismatch);
    CHECK_THROWS_AS(grad(p, Matrix(2, 5), 0.1), DimensionMismatch);
    CHECK_THROWS_AS(fve(Matrix(2, 3), Matrix(2, 4)), DimensionMismatch);
}
