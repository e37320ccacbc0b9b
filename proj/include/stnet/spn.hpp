#pragma once

// Sum-product networks for exact bilinear products: a matrix product C = A*B
// is computed as vec(C) = Wc * ((Wb vec(B)) .* (Wa vec(A))) with all three
// matrices constrained to entries in {-1, 0, +1}. Additions implement Wa/Wb/Wc
// and the Hadamard step contributes exactly h = rows(Wa) multiplications.
//
// This header carries the algebraic core (triples, exactness verification,
// the ternary decomposition search) and the strassenified convolution unit
// built on top of it.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "stnet/ops.hpp"
#include "stnet/ternary.hpp"

namespace stnet {

// One bilinear SPN: computes an m x n product from an m x k left factor and a
// k x n right factor using h multiplications. Wa has h rows; its column count
// is m*k for a generic left factor, or the number of free symbols when the
// left factor is a structured template with shared entries.
struct SpnTriple {
    int m = 0, k = 0, n = 0;
    int h = 0;
    TernaryMatrix Wa;  // h x a_cols
    TernaryMatrix Wb;  // h x (k*n)
    TernaryMatrix Wc;  // (m*n) x h
};

// Structured m x k left-factor template: cell (r,c) carries the free symbol
// symbol_of_cell[r*k+c]. A generic factor is the identity mapping.
struct FilterBankTemplate {
    int m = 0, k = 0;
    std::vector<int> symbol_of_cell;  // length m*k, values in [0, num_symbols)

    int num_symbols() const {
        int s = 0;
        for (int v : symbol_of_cell) s = std::max(s, v + 1);
        return s;
    }
};

// Generic m x k factor: every cell is its own symbol.
FilterBankTemplate generic_template(int m, int k);

// 2x2 bank of two single-value filters that share one value:
//   [ a  b ]
//   [ c  a ]
// Three free symbols; the shared diagonal drops the generic rank by one.
FilterBankTemplate shared_value_template();

// Canonical 7-multiplication SPN for the generic 2x2 x 2x2 product
// (Strassen's algorithm written as ternary matrices). Verified exact on
// construction.
SpnTriple make_canonical_strassen();

// Naive expansion: one multiplication per scalar product term, h = m*k*n.
SpnTriple make_naive_expansion(int m, int k, int n);

// Exactness check by basis enumeration: for every (left basis symbol, right
// basis cell) pair the SPN output must equal the true product. Pure ternary
// triples (all scales 1) are compared in exact integer arithmetic.
bool verify_spn_exact(const SpnTriple& spn, const FilterBankTemplate& tmpl);
bool verify_spn_exact(const SpnTriple& spn);  // generic template from spn.m/k

// Evaluate the SPN on concrete factor data. `a` has Wa.cols entries (symbol
// values for templated factors, vec(A) otherwise), `b` has k*n entries.
// Exactly spn.h scalar multiplications of T occur in the Hadamard step; the
// ternary combines are additions and subtractions only.
template <class T>
std::vector<T> spn_matmul(const SpnTriple& spn, const std::vector<T>& a,
                          const std::vector<T>& b) {
    check(static_cast<int>(a.size()) == spn.Wa.cols, "spn_matmul: left factor size");
    check(static_cast<int>(b.size()) == spn.Wb.cols, "spn_matmul: right factor size");
    auto combine = [](const TernaryMatrix& w, const std::vector<T>& x) {
        std::vector<T> y(static_cast<std::size_t>(w.rows), T(0));
        for (int r = 0; r < w.rows; ++r) {
            T acc = T(0);
            for (int c = 0; c < w.cols; ++c) {
                const std::int8_t e = w.at(r, c);
                if (e == 1)
                    acc += x[static_cast<std::size_t>(c)];
                else if (e == -1)
                    acc -= x[static_cast<std::size_t>(c)];
            }
            y[static_cast<std::size_t>(r)] = acc;
        }
        return y;
    };
    std::vector<T> u = combine(spn.Wa, a);
    std::vector<T> v = combine(spn.Wb, b);
    std::vector<T> p(static_cast<std::size_t>(spn.h));
    for (int t = 0; t < spn.h; ++t)
        p[static_cast<std::size_t>(t)] =
            u[static_cast<std::size_t>(t)] * v[static_cast<std::size_t>(t)];
    std::vector<T> c = combine(spn.Wc, p);
    const double s = spn.Wa.scale * spn.Wb.scale * spn.Wc.scale;
    if (s != 1.0)
        for (T& x : c) x = x * T(s);
    return c;
}

// Gradient-based search for an exact ternary SPN of width h realizing the
// product (template x generic k*n factor). Continuous factor matrices are
// trained on random instantiations of the product, annealed toward ternary
// values, periodically rounded and checked for exactness.
struct SpnSearchConfig {
    int trials = 24;            // independent restarts
    int steps = 4000;           // optimizer steps per trial
    int batch = 32;             // random instantiations per step
    double lr = 0.02;
    double pressure_max = 0.08; // peak weight of the ternarization penalty
    int round_from = 600;       // first step eligible for a rounding attempt
    int round_every = 100;
    std::uint64_t seed = 0x5eed;
};

struct SpnSearchResult {
    bool found = false;
    SpnTriple spn;
    int trial = -1;       // restart index that produced the triple
    int step = -1;        // optimizer step at which rounding became exact
    double final_loss = 0.0;
};

SpnSearchResult search_filter_bank_spn(const FilterBankTemplate& tmpl, int n, int h,
                                       const SpnSearchConfig& cfg = {});

// Exhaustively enumerate every ternary triple of width h for the given
// template and report whether any is exact. Only feasible for tiny
// dimensions; used to certify impossibility results.
bool exists_exact_spn_exhaustive(const FilterBankTemplate& tmpl, int n, int h);

// ---------------------------------------------------------------------------
// Strassenified convolution unit.
//
// A convolution with filter bank F [c_out, c_in*k*k] applied to an im2col
// patch column is an (m=c_out, k=c_in*k*k, n=1) product, so one SPN triple
// per layer strassenifies it:
//
//   y(patch) = Wc * ( (Wb patch) .* (Wa vec(F)) )
//
// Wb acts as an h-filter convolution, the Hadamard step is a per-channel
// scale (h multiplications per output position), and Wc is a 1x1 convolution.
// After training, a_hat = s_a*s_b*s_c * (ternary(Wa) vec(F)) is folded into
// the channel scale; Wb and Wc ship as pure ternary matrices.

enum class QuantPhase { FULL_PRECISION, QUANT_ACTIVE, FROZEN_TERNARY };

template <class T>
struct SpnConvUnit {
    int c_in = 0, c_out = 0, ksize = 0, stride = 1, pad = 0, h = 0;
    double threshold_factor = 0.7;
    QuantPhase phase = QuantPhase::FULL_PRECISION;

    Tensor<T> masters;  // [c_out, c_in, k, k] full-precision filter bank
    Tensor<T> Wa;       // [h, c_out*c_in*k*k]
    Tensor<T> Wb;       // [h, c_in*k*k]
    Tensor<T> Wc;       // [c_out, h]

    // Populated by freeze_and_fold().
    TernaryMatrix Wb_t, Wc_t;
    Tensor<T> a_hat;      // [h], the only trainable tensor once frozen
    Tensor<T> Wb_frozen;  // [h, c_in, k, k] ternary entries as T
    Tensor<T> Wc_frozen;  // [c_out, h, 1, 1]

    template <class Rng>
    void init(Rng& rng) {
        const std::size_t fan = static_cast<std::size_t>(c_in) * ksize * ksize;
        masters = Tensor<T>({(std::size_t)c_out, (std::size_t)c_in, (std::size_t)ksize,
                             (std::size_t)ksize},
                            true);
        Wa = Tensor<T>({(std::size_t)h, (std::size_t)c_out * fan}, true);
        Wb = Tensor<T>({(std::size_t)h, fan}, true);
        Wc = Tensor<T>({(std::size_t)c_out, (std::size_t)h}, true);
        auto xavier = [&rng](Tensor<T>& t, std::size_t fan_in, std::size_t fan_out) {
            const double b = std::sqrt(6.0 / double(fan_in + fan_out));
            std::uniform_real_distribution<double> d(-b, b);
            for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = T(d(rng));
        };
        xavier(masters, fan, (std::size_t)c_out);
        xavier(Wa, Wa.dim(1), (std::size_t)h);
        xavier(Wb, fan, (std::size_t)h);
        xavier(Wc, (std::size_t)h, (std::size_t)c_out);
    }

    void set_phase(QuantPhase p) {
        check(!(p == QuantPhase::FROZEN_TERNARY && !a_hat.defined()),
              "SpnConvUnit: call freeze_and_fold() to enter the frozen phase");
        phase = p;
    }

    Tensor<T> forward(const Tensor<T>& x) {
        if (phase == QuantPhase::FROZEN_TERNARY) {
            Tensor<T> u = ops::conv2d(x, Wb_frozen, stride, pad);
            Tensor<T> p = ops::channel_scale(u, a_hat);
            return ops::conv2d(p, Wc_frozen, 1, 0);
        }
        Tensor<T> wa = Wa, wb = Wb, wc = Wc;
        if (phase == QuantPhase::QUANT_ACTIVE) {
            wa = ops::ste_ternary(Wa, threshold_factor);
            wb = ops::ste_ternary(Wb, threshold_factor);
            wc = ops::ste_ternary(Wc, threshold_factor);
        }
        Tensor<T> fvec = ops::reshape(masters, {masters.size()});
        Tensor<T> a = ops::matvec(wa, fvec);  // [h]
        Tensor<T> wb4 = ops::reshape(
            wb, {(std::size_t)h, (std::size_t)c_in, (std::size_t)ksize, (std::size_t)ksize});
        Tensor<T> wc4 = ops::reshape(wc, {(std::size_t)c_out, (std::size_t)h, 1u, 1u});
        Tensor<T> u = ops::conv2d(x, wb4, stride, pad);
        Tensor<T> p = ops::channel_scale(u, a);
        return ops::conv2d(p, wc4, 1, 0);
    }

    // Quantize Wa/Wb/Wc, fold all three scales and the master filters into the
    // channel-scale vector, and switch to the frozen phase. Only a_hat keeps
    // requires_grad afterwards.
    void freeze_and_fold() {
        TernaryResult qa = ternary_quantize(Wa.vec(), threshold_factor);
        TernaryResult qb = ternary_quantize(Wb.vec(), threshold_factor);
        TernaryResult qc = ternary_quantize(Wc.vec(), threshold_factor);
        Wb_t = TernaryMatrix{(int)Wb.dim(0), (int)Wb.dim(1), qb.entries, qb.scale,
                             qb.degenerate};
        Wc_t = TernaryMatrix{(int)Wc.dim(0), (int)Wc.dim(1), qc.entries, qc.scale,
                             qc.degenerate};
        const double s = qa.scale * qb.scale * qc.scale;
        a_hat = Tensor<T>({(std::size_t)h}, true);
        const std::size_t cols = Wa.dim(1);
        for (int t = 0; t < h; ++t) {
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
                const std::int8_t e = qa.entries[(std::size_t)t * cols + j];
                if (e == 1)
                    acc += (double)masters.data()[j];
                else if (e == -1)
                    acc -= (double)masters.data()[j];
            }
            a_hat.data()[t] = T(s * acc);
        }
        Wb_frozen = Tensor<T>(
            {(std::size_t)h, (std::size_t)c_in, (std::size_t)ksize, (std::size_t)ksize});
        for (std::size_t i = 0; i < Wb_frozen.size(); ++i)
            Wb_frozen.data()[i] = T(qb.entries[i]);
        Wc_frozen = Tensor<T>({(std::size_t)c_out, (std::size_t)h, 1u, 1u});
        for (std::size_t i = 0; i < Wc_frozen.size(); ++i)
            Wc_frozen.data()[i] = T(qc.entries[i]);
        masters.set_requires_grad(false);
        Wa.set_requires_grad(false);
        Wb.set_requires_grad(false);
        Wc.set_requires_grad(false);
        phase = QuantPhase::FROZEN_TERNARY;
    }

    // The layer's SPN triple in the frozen phase (Wa is represented by the
    // folded a_hat, so only Wb/Wc appear).
    SpnTriple frozen_triple() const {
        SpnTriple t;
        t.m = c_out;
        t.k = c_in * ksize * ksize;
        t.n = 1;
        t.h = h;
        t.Wb = Wb_t;
        t.Wc = Wc_t;
        return t;
    }
};

}  // namespace stnet
