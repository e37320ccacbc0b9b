#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "stnet/ternary.hpp"
#include "stnet/ops.hpp"

using namespace stnet;

TEST_CASE("threshold quantizer: worked example pinned by hand") {
    // mean|w| = (0.3+0.8+0.05+0.6)/4 = 0.4375, threshold = 0.7*0.4375 = 0.30625.
    // Survivors: -0.8 and 0.6; scale = (0.8+0.6)/2 = 0.7.
    std::vector<double> w{0.3, -0.8, 0.05, 0.6};
    TernaryResult r = ternary_quantize(w, 0.7);
    CHECK(r.entries == std::vector<std::int8_t>{0, -1, 0, 1});
    CHECK(r.threshold == doctest::Approx(0.30625).epsilon(1e-9));
    CHECK(r.scale == doctest::Approx(0.7).epsilon(1e-9));
    CHECK_FALSE(r.degenerate);
}

TEST_CASE("threshold quantizer: scale equals mean magnitude of survivors") {
    std::mt19937 rng(99);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> w(257);
    for (auto& x : w) x = dist(rng);
    TernaryResult r = ternary_quantize(w, 0.7);
    double mean_abs = 0.0;
    for (double x : w) mean_abs += std::abs(x);
    mean_abs /= double(w.size());
    const double delta = 0.7 * mean_abs;
    double sum = 0.0;
    int kept = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (std::abs(w[i]) > delta) {
            CHECK(r.entries[i] == (w[i] > 0 ? 1 : -1));
            sum += std::abs(w[i]);
            ++kept;
        } else {
            CHECK(r.entries[i] == 0);
        }
    }
    REQUIRE(kept > 0);
    CHECK(r.scale == doctest::Approx(sum / kept).epsilon(1e-12));
    // A Gaussian sample at this threshold keeps a strict subset: some zeros,
    // some survivors.
    CHECK(kept < int(w.size()));
}

TEST_CASE("threshold quantizer: all-zero input is degenerate with unit scale") {
    std::vector<float> w(16, 0.0f);
    TernaryResult r = ternary_quantize(w, 0.7);
    for (auto e : r.entries) CHECK(e == 0);
    CHECK(r.scale == doctest::Approx(1.0));
    CHECK(r.degenerate);
}

TEST_CASE("threshold quantizer: input validation") {
    std::vector<float> w{1.0f, 2.0f};
    CHECK_THROWS_AS(ternary_quantize(w, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(ternary_quantize(w, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(ternary_quantize(w, -0.3), std::invalid_argument);
    CHECK_THROWS_AS(ternary_quantize(std::vector<float>{}, 0.7), std::invalid_argument);
    CHECK_THROWS_AS(ternary_quantize_matrix(w, 3, 1, 0.7), std::invalid_argument);
}

TEST_CASE("matrix wrapper preserves layout") {
    std::vector<float> w{0.3f, -0.8f, 0.05f, 0.6f};
    TernaryMatrix m = ternary_quantize_matrix(w, 2, 2, 0.7);
    CHECK(m.rows == 2);
    CHECK(m.cols == 2);
    CHECK(m.at(0, 1) == -1);
    CHECK(m.at(1, 1) == 1);
    CHECK(m.scale == doctest::Approx(0.7));
}

TEST_CASE("2-bit codec: round trip at awkward lengths") {
    std::mt19937 rng(5);
    std::uniform_int_distribution<int> d(-1, 1);
    for (std::size_t n : {1u, 2u, 3u, 4u, 5u, 7u, 8u, 63u, 64u, 65u, 1000u}) {
        std::vector<std::int8_t> t(n);
        for (auto& e : t) e = static_cast<std::int8_t>(d(rng));
        auto bytes = pack_ternary(t);
        CHECK(bytes.size() == (n + 3) / 4);
        CHECK(unpack_ternary(bytes, n) == t);
    }
}

TEST_CASE("2-bit codec: rejects bad input") {
    CHECK_THROWS_AS(pack_ternary({0, 2, 0}), std::invalid_argument);
    // Code 11 inside the payload.
    CHECK_THROWS_AS(unpack_ternary({0b00000011}, 4), std::runtime_error);
    // Nonzero bits in the padding region of the last byte.
    CHECK_THROWS_AS(unpack_ternary({0b01000001}, 2), std::runtime_error);
    // Wrong byte count for the element count.
    CHECK_THROWS_AS(unpack_ternary({0x00, 0x00}, 3), std::invalid_argument);
}

TEST_CASE("straight-through op: forward matches quantizer, backward is identity") {
    Tensor<double> w({2, 3}, {0.3, -0.8, 0.05, 0.6, -0.02, 0.9});
    w.set_requires_grad(true);
    Tape<double> tape;
    Tensor<double> y = ops::ste_ternary(w, 0.7);

    TernaryResult r = ternary_quantize(w.vec(), 0.7);
    for (std::size_t i = 0; i < y.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(r.scale * r.entries[i]));

    // Scalar loss sum(y * g) with a fixed cotangent g: STE must report dL/dw = g
    // exactly, independent of which entries were zeroed.
    Tensor<double> g({2, 3}, {1.0, -2.0, 3.0, 0.5, 4.0, -1.5});
    Tensor<double> prod = ops::mul(y, g);
    Tensor<double> flat = ops::reshape(prod, {1, 6});
    Tensor<double> ones({6}, std::vector<double>(6, 1.0));
    Tensor<double> loss = ops::matvec(flat, ones);
    tape.backward(loss);
    for (std::size_t i = 0; i < w.size(); ++i)
        CHECK(w.grad()[i] == doctest::Approx(g.data()[i]).epsilon(1e-12));
}

TEST_CASE("straight-through op: no tape means no recording") {
    Tensor<float> w({4}, {0.3f, -0.8f, 0.05f, 0.6f});
    w.set_requires_grad(true);
    Tensor<float> y = ops::ste_ternary(w, 0.7);
    CHECK_FALSE(y.requires_grad());
}
