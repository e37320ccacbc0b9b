#include "stnet/spn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace stnet {
namespace {

TernaryMatrix ternary_from_rows(int rows, int cols, const std::vector<int>& flat) {
    check(flat.size() == static_cast<std::size_t>(rows) * cols,
          "ternary_from_rows: size mismatch");
    TernaryMatrix m;
    m.rows = rows;
    m.cols = cols;
    m.entries.resize(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) {
        check(flat[i] >= -1 && flat[i] <= 1, "ternary_from_rows: entry outside {-1,0,+1}");
        m.entries[i] = static_cast<std::int8_t>(flat[i]);
    }
    return m;
}

// Reference product for a templated left factor: symbols[s] instantiates A,
// b is vec(B) for a k x n right factor; returns vec(A*B), length m*n.
std::vector<double> template_product(const FilterBankTemplate& tmpl, int n,
                                     const std::vector<double>& symbols,
                                     const std::vector<double>& b) {
    const int m = tmpl.m, k = tmpl.k;
    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
    for (int r = 0; r < m; ++r)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l)
                acc += symbols[static_cast<std::size_t>(
                           tmpl.symbol_of_cell[static_cast<std::size_t>(r) * k + l])] *
                       b[static_cast<std::size_t>(l) * n + j];
            c[static_cast<std::size_t>(r) * n + j] = acc;
        }
    return c;
}

bool unit_scales(const SpnTriple& spn) {
    return spn.Wa.scale == 1.0 && spn.Wb.scale == 1.0 && spn.Wc.scale == 1.0;
}

}  // namespace

FilterBankTemplate generic_template(int m, int k) {
    check(m > 0 && k > 0, "generic_template: bad shape");
    FilterBankTemplate t;
    t.m = m;
    t.k = k;
    t.symbol_of_cell.resize(static_cast<std::size_t>(m) * k);
    for (std::size_t i = 0; i < t.symbol_of_cell.size(); ++i)
        t.symbol_of_cell[i] = static_cast<int>(i);
    return t;
}

FilterBankTemplate shared_value_template() {
    FilterBankTemplate t;
    t.m = 2;
    t.k = 2;
    t.symbol_of_cell = {0, 1, 2, 0};  // [[a, b], [c, a]]
    return t;
}

SpnTriple make_canonical_strassen() {
    SpnTriple s;
    s.m = s.k = s.n = 2;
    s.h = 7;
    // Left combinations, rows over [a11, a12, a21, a22].
    s.Wa = ternary_from_rows(7, 4,
                             {1, 0, 0, 1,    // a11 + a22
                              0, 0, 1, 1,    // a21 + a22
                              1, 0, 0, 0,    // a11
                              0, 0, 0, 1,    // a22
                              1, 1, 0, 0,    // a11 + a12
                              -1, 0, 1, 0,   // a21 - a11
                              0, 1, 0, -1}); // a12 - a22
    // Right combinations, rows over [b11, b12, b21, b22].
    s.Wb = ternary_from_rows(7, 4,
                             {1, 0, 0, 1,    // b11 + b22
                              1, 0, 0, 0,    // b11
                              0, 1, 0, -1,   // b12 - b22
                              -1, 0, 1, 0,   // b21 - b11
                              0, 0, 0, 1,    // b22
                              1, 1, 0, 0,    // b11 + b12
                              0, 0, 1, 1});  // b21 + b22
    // Output reconstruction, rows over [c11, c12, c21, c22].
    s.Wc = ternary_from_rows(4, 7,
                             {1, 0, 0, 1, -1, 0, 1,
                              0, 0, 1, 0, 1, 0, 0,
                              0, 1, 0, 1, 0, 0, 0,
                              1, -1, 1, 0, 0, 1, 0});
    check(verify_spn_exact(s), "canonical 2x2 triple failed self-verification");
    return s;
}

SpnTriple make_naive_expansion(int m, int k, int n) {
    check(m > 0 && k > 0 && n > 0, "make_naive_expansion: bad shape");
    SpnTriple s;
    s.m = m;
    s.k = k;
    s.n = n;
    s.h = m * k * n;
    s.Wa.rows = s.Wb.rows = s.h;
    s.Wa.cols = m * k;
    s.Wb.cols = k * n;
    s.Wc.rows = m * n;
    s.Wc.cols = s.h;
    s.Wa.entries.assign(static_cast<std::size_t>(s.h) * s.Wa.cols, 0);
    s.Wb.entries.assign(static_cast<std::size_t>(s.h) * s.Wb.cols, 0);
    s.Wc.entries.assign(static_cast<std::size_t>(s.Wc.rows) * s.h, 0);
    for (int i = 0; i < m; ++i)
        for (int l = 0; l < k; ++l)
            for (int j = 0; j < n; ++j) {
                const int t = (i * k + l) * n + j;
                s.Wa.entries[static_cast<std::size_t>(t) * s.Wa.cols + (i * k + l)] = 1;
                s.Wb.entries[static_cast<std::size_t>(t) * s.Wb.cols + (l * n + j)] = 1;
                s.Wc.entries[static_cast<std::size_t>(i * n + j) * s.h + t] = 1;
            }
    return s;
}

bool verify_spn_exact(const SpnTriple& spn, const FilterBankTemplate& tmpl) {
    const int s_count = tmpl.num_symbols();
    if (spn.Wa.cols != s_count) return false;
    if (spn.Wb.cols != spn.k * spn.n) return false;
    if (spn.Wc.rows != spn.m * spn.n) return false;
    if (spn.Wa.rows != spn.h || spn.Wb.rows != spn.h || spn.Wc.cols != spn.h) return false;
    if (tmpl.m != spn.m || tmpl.k != spn.k) return false;
    const bool exact_ints = unit_scales(spn);
    for (int i = 0; i < s_count; ++i) {
        std::vector<double> a(static_cast<std::size_t>(s_count), 0.0);
        a[static_cast<std::size_t>(i)] = 1.0;
        for (int j = 0; j < spn.k * spn.n; ++j) {
            std::vector<double> b(static_cast<std::size_t>(spn.k) * spn.n, 0.0);
            b[static_cast<std::size_t>(j)] = 1.0;
            const std::vector<double> got = spn_matmul(spn, a, b);
            const std::vector<double> want = template_product(tmpl, spn.n, a, b);
            for (std::size_t p = 0; p < want.size(); ++p) {
                if (exact_ints) {
                    // All quantities are small integers; doubles hold them exactly.
                    if (got[p] != want[p]) return false;
                } else {
                    const double tol = 1e-9 * std::max(1.0, std::abs(want[p]));
                    if (std::abs(got[p] - want[p]) > tol) return false;
                }
            }
        }
    }
    return true;
}

bool verify_spn_exact(const SpnTriple& spn) {
    return verify_spn_exact(spn, generic_template(spn.m, spn.k));
}

bool exists_exact_spn_exhaustive(const FilterBankTemplate& tmpl, int n, int h) {
    check(h == 1, "exists_exact_spn_exhaustive: only h=1 enumeration is supported");
    const int s = tmpl.num_symbols();
    const int kn = tmpl.k * n;
    const int mn = tmpl.m * n;
    // Target trilinear coefficients: T[i][j][p] with basis pair (i, j).
    std::vector<double> target(static_cast<std::size_t>(s) * kn * mn);
    for (int i = 0; i < s; ++i) {
        std::vector<double> a(static_cast<std::size_t>(s), 0.0);
        a[static_cast<std::size_t>(i)] = 1.0;
        for (int j = 0; j < kn; ++j) {
            std::vector<double> b(static_cast<std::size_t>(kn), 0.0);
            b[static_cast<std::size_t>(j)] = 1.0;
            const auto c = template_product(tmpl, n, a, b);
            for (int p = 0; p < mn; ++p)
                target[(static_cast<std::size_t>(i) * kn + j) * mn + p] = c[static_cast<std::size_t>(p)];
        }
    }
    // A width-1 SPN realizes the rank-1 tensor u (x) v (x) w. Enumerate all
    // ternary u, v, w.
    std::vector<int> u(static_cast<std::size_t>(s)), v(static_cast<std::size_t>(kn)),
        w(static_cast<std::size_t>(mn));
    auto next = [](std::vector<int>& digits) {
        for (auto& d : digits) {
            if (d < 1) {
                ++d;
                return true;
            }
            d = -1;
        }
        return false;
    };
    std::fill(u.begin(), u.end(), -1);
    do {
        std::fill(v.begin(), v.end(), -1);
        do {
            std::fill(w.begin(), w.end(), -1);
            do {
                bool ok = true;
                for (int i = 0; ok && i < s; ++i)
                    for (int j = 0; ok && j < kn; ++j)
                        for (int p = 0; ok && p < mn; ++p)
                            ok = (double(u[(std::size_t)i] * v[(std::size_t)j] *
                                         w[(std::size_t)p]) ==
                                  target[(static_cast<std::size_t>(i) * kn + j) * mn + p]);
                if (ok) return true;
            } while (next(w));
        } while (next(v));
    } while (next(u));
    return false;
}

SpnSearchResult search_filter_bank_spn(const FilterBankTemplate& tmpl, int n, int h,
                                       const SpnSearchConfig& cfg) {
    check(n > 0 && h > 0, "search_filter_bank_spn: bad shape");
    const int s = tmpl.num_symbols();
    const int kn = tmpl.k * n;
    const int mn = tmpl.m * n;

    struct AdamBuf {
        std::vector<double> m, v;
        explicit AdamBuf(std::size_t n_) : m(n_, 0.0), v(n_, 0.0) {}
    };

    auto round_ternary = [](double x) -> std::int8_t {
        if (x > 0.5) return 1;
        if (x < -0.5) return -1;
        return 0;
    };

    SpnSearchResult result;
    for (int trial = 0; trial < cfg.trials; ++trial) {
        std::mt19937_64 rng(cfg.seed + 0x9e3779b97f4a7c15ULL * (std::uint64_t)(trial + 1));
        std::uniform_real_distribution<double> init(-1.0, 1.0);
        std::normal_distribution<double> gauss(0.0, 1.0);

        Tensor<double> Wa({(std::size_t)h, (std::size_t)s}, true);
        Tensor<double> Wb({(std::size_t)h, (std::size_t)kn}, true);
        Tensor<double> Wc({(std::size_t)mn, (std::size_t)h}, true);
        for (auto* W : {&Wa, &Wb, &Wc})
            for (std::size_t i = 0; i < W->size(); ++i) W->data()[i] = init(rng);

        AdamBuf ba(Wa.size()), bb(Wb.size()), bc(Wc.size());
        double last_loss = 0.0;

        auto candidate = [&]() {
            SpnTriple c;
            c.m = tmpl.m;
            c.k = tmpl.k;
            c.n = n;
            c.h = h;
            auto quantize = [&](const Tensor<double>& W, int rows, int cols) {
                TernaryMatrix t;
                t.rows = rows;
                t.cols = cols;
                t.entries.resize(W.size());
                for (std::size_t i = 0; i < W.size(); ++i)
                    t.entries[i] = round_ternary(W.data()[i]);
                return t;
            };
            c.Wa = quantize(Wa, h, s);
            c.Wb = quantize(Wb, h, kn);
            c.Wc = quantize(Wc, mn, h);
            return c;
        };

        for (int step = 1; step <= cfg.steps; ++step) {
            Tensor<double> X({(std::size_t)s, (std::size_t)cfg.batch});
            Tensor<double> B({(std::size_t)kn, (std::size_t)cfg.batch});
            Tensor<double> T({(std::size_t)mn, (std::size_t)cfg.batch});
            std::vector<double> sym((std::size_t)s), bv((std::size_t)kn);
            for (int col = 0; col < cfg.batch; ++col) {
                for (int i = 0; i < s; ++i) {
                    sym[(std::size_t)i] = gauss(rng);
                    X.data()[(std::size_t)i * cfg.batch + col] = sym[(std::size_t)i];
                }
                for (int j = 0; j < kn; ++j) {
                    bv[(std::size_t)j] = gauss(rng);
                    B.data()[(std::size_t)j * cfg.batch + col] = bv[(std::size_t)j];
                }
                const auto c = template_product(tmpl, n, sym, bv);
                for (int p = 0; p < mn; ++p)
                    T.data()[(std::size_t)p * cfg.batch + col] = c[(std::size_t)p];
            }

            Wa.zero_grad();
            Wb.zero_grad();
            Wc.zero_grad();
            {
                Tape<double> tape;
                Tensor<double> u = ops::matmul(Wa, X);
                Tensor<double> v = ops::matmul(Wb, B);
                Tensor<double> p = ops::mul(u, v);
                Tensor<double> y = ops::matmul(Wc, p);
                Tensor<double> loss = ops::mse_loss(y, T);
                tape.backward(loss);
                last_loss = loss.data()[0];
            }

            // Ternarization pressure: d/dw of w^2 (w^2-1)^2, annealed in after
            // an initial free-fit phase.
            const double ramp_start = 0.25 * cfg.steps;
            const double ramp_end = 0.75 * cfg.steps;
            double lam = 0.0;
            if (step > ramp_start)
                lam = cfg.pressure_max *
                      std::min(1.0, (step - ramp_start) / (ramp_end - ramp_start));
            const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
            const double bc1 = 1.0 - std::pow(b1, step), bc2 = 1.0 - std::pow(b2, step);
            auto adam = [&](Tensor<double>& W, AdamBuf& buf) {
                double* w = W.data();
                double* g = W.grad();
                for (std::size_t i = 0; i < W.size(); ++i) {
                    const double gi =
                        g[i] + lam * 2.0 * w[i] * (w[i] * w[i] - 1.0) * (3.0 * w[i] * w[i] - 1.0);
                    buf.m[i] = b1 * buf.m[i] + (1.0 - b1) * gi;
                    buf.v[i] = b2 * buf.v[i] + (1.0 - b2) * gi * gi;
                    w[i] -= cfg.lr * (buf.m[i] / bc1) / (std::sqrt(buf.v[i] / bc2) + eps);
                    w[i] = std::clamp(w[i], -1.0, 1.0);
                }
            };
            adam(Wa, ba);
            adam(Wb, bb);
            adam(Wc, bc);

            if (step >= cfg.round_from && step % cfg.round_every == 0) {
                SpnTriple cand = candidate();
                if (verify_spn_exact(cand, tmpl)) {
                    result.found = true;
                    result.spn = std::move(cand);
                    result.trial = trial;
                    result.step = step;
                    result.final_loss = last_loss;
                    return result;
                }
            }
        }
        SpnTriple cand = candidate();
        if (verify_spn_exact(cand, tmpl)) {
            result.found = true;
            result.spn = std::move(cand);
            result.trial = trial;
            result.step = cfg.steps;
            result.final_loss = last_loss;
            return result;
        }
    }
    return result;
}

}  // namespace stnet
