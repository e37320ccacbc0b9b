#pragma once

// Ternary quantization: threshold-based projection of real-valued weights onto
// {-1, 0, +1} with a single positive scale per tensor, a straight-through
// estimator op for training, and a 2-bit storage codec.

#include <cmath>
#include <cstdint>
#include <vector>

#include "stnet/tensor.hpp"
#include "stnet/tape.hpp"

namespace stnet {

// A ternary-valued matrix with one fp scale. Entries live in {-1, 0, +1}.
// `degenerate` marks the all-zero case (no entry crossed the threshold), in
// which the scale is fixed to 1 so downstream math stays well defined.
struct TernaryMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<std::int8_t> entries;  // row-major, values in {-1,0,+1}
    double scale = 1.0;
    bool degenerate = false;

    std::int8_t at(int r, int c) const { return entries[static_cast<std::size_t>(r) * cols + c]; }
};

struct TernaryResult {
    std::vector<std::int8_t> entries;
    double scale = 1.0;
    double threshold = 0.0;
    bool degenerate = false;
};

// Symmetric threshold quantizer. threshold = factor * mean(|w|); entries with
// magnitude above it keep their sign, the rest collapse to zero; the scale is
// the mean magnitude of the surviving entries.
template <class T>
TernaryResult ternary_quantize(const std::vector<T>& w, double threshold_factor = 0.7) {
    check(threshold_factor > 0.0 && threshold_factor < 1.0,
          "ternary_quantize: threshold_factor must lie in (0,1)");
    check(!w.empty(), "ternary_quantize: empty input");
    double mean_abs = 0.0;
    for (T x : w) mean_abs += std::abs(static_cast<double>(x));
    mean_abs /= static_cast<double>(w.size());
    const double delta = threshold_factor * mean_abs;

    TernaryResult out;
    out.threshold = delta;
    out.entries.resize(w.size());
    double kept_sum = 0.0;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double x = static_cast<double>(w[i]);
        if (std::abs(x) > delta) {
            out.entries[i] = x > 0 ? std::int8_t{1} : std::int8_t{-1};
            kept_sum += std::abs(x);
            ++kept;
        } else {
            out.entries[i] = 0;
        }
    }
    if (kept == 0) {
        out.scale = 1.0;
        out.degenerate = true;
    } else {
        out.scale = kept_sum / static_cast<double>(kept);
    }
    return out;
}

template <class T>
TernaryMatrix ternary_quantize_matrix(const std::vector<T>& w, int rows, int cols,
                                      double threshold_factor = 0.7) {
    check(rows > 0 && cols > 0, "ternary_quantize_matrix: bad shape");
    check(w.size() == static_cast<std::size_t>(rows) * cols,
          "ternary_quantize_matrix: size/shape mismatch");
    TernaryResult r = ternary_quantize(w, threshold_factor);
    TernaryMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.entries = std::move(r.entries);
    m.scale = r.scale;
    m.degenerate = r.degenerate;
    return m;
}

// 2-bit codec for ternary entries: 00 -> 0, 01 -> +1, 10 -> -1. Four entries
// per byte, element i occupying bits [2*(i%4), 2*(i%4)+1]. Code 11 is invalid
// and rejected on decode, as are nonzero padding bits in the final byte.
std::vector<std::uint8_t> pack_ternary(const std::vector<std::int8_t>& t);
std::vector<std::int8_t> unpack_ternary(const std::vector<std::uint8_t>& bytes,
                                        std::size_t count);

namespace ops {

// Straight-through ternary projection: forward emits scale * ternary(w); the
// backward pass copies the output gradient through unchanged, which is what
// lets the underlying full-precision master weights keep training.
template <class T>
Tensor<T> ste_ternary(const Tensor<T>& w, double threshold_factor = 0.7) {
    TernaryResult r = ternary_quantize(w.vec(), threshold_factor);
    Tensor<T> y(w.shape());
    for (std::size_t i = 0; i < y.size(); ++i)
        y.data()[i] = static_cast<T>(r.scale) * static_cast<T>(r.entries[i]);
    if (Tape<T>::active() && w.requires_grad()) {
        y.set_requires_grad(true);
        Tensor<T> wc = w;
        Tensor<T> yc = y;
        Tape<T>::record([wc, yc]() mutable {
            T* dw = wc.grad();
            const T* dy = yc.grad();
            for (std::size_t i = 0; i < wc.size(); ++i) dw[i] += dy[i];
        });
    }
    return y;
}

}  // namespace ops
}  // namespace stnet
