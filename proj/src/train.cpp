#include "stnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "stnet/spn.hpp"

namespace stnet {

double cosine_lr(int epoch, int total, int warmup, double lr0) {
    check(total >= 1, "cosine_lr: total epochs must be positive");
    check(warmup >= 0 && warmup <= total, "cosine_lr: bad warmup length");
    check(epoch >= 0 && epoch < total, "cosine_lr: epoch out of range");
    check(lr0 > 0.0, "cosine_lr: lr0 must be positive");
    if (epoch < warmup) return lr0 * double(epoch) / double(warmup);
    const int span = total - warmup;
    if (span <= 0) return lr0;
    const double t = double(epoch - warmup) / double(span);
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * t));
}

template <typename T>
void NagOptimizer<T>::step(std::vector<ParamRef<T>>& params, double lr) {
    if (velocity_.empty())
        for (const ParamRef<T>& p : params) velocity_.emplace_back(p.tensor.shape());
    check(velocity_.size() == params.size(),
          "NagOptimizer: parameter set changed mid-phase");
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<T>& w = params[pi].tensor;
        check(velocity_[pi].shape() == w.shape(),
              "NagOptimizer: shape mismatch for " + params[pi].name);
        T* wd = w.data();
        T* gd = w.grad();
        T* vd = velocity_[pi].data();
        const T mu = T(momentum_);
        const T decay = params[pi].decay ? T(weight_decay_) : T(0);
        const T step_lr = T(lr);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const T g = gd[i] + decay * wd[i];
            vd[i] = mu * vd[i] + g;
            wd[i] -= step_lr * (g + mu * vd[i]);
        }
        w.zero_grad();
    }
}

template class NagOptimizer<float>;
template class NagOptimizer<double>;

namespace {

QuantPhase phase_of(const std::string& name) {
    if (name == "FP_TRAIN") return QuantPhase::FULL_PRECISION;
    if (name == "QUANT_ACTIVE") return QuantPhase::QUANT_ACTIVE;
    if (name == "FROZEN") return QuantPhase::FROZEN_TERNARY;
    throw std::invalid_argument("unknown training phase: " + name);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t epoch_seed(std::uint64_t seed, int phase, int epoch) {
    return splitmix64(seed ^ splitmix64(0x51ULL * (std::uint64_t)(phase + 1) +
                                        0x9dULL * (std::uint64_t)(epoch + 1)));
}

}  // namespace

void TrainConfig::validate() const {
    check(!phases.empty(), "TrainConfig: no phases");
    int prev = -1;
    for (const PhaseConfig& p : phases) {
        const int order = static_cast<int>(phase_of(p.name));
        check(order > prev, "TrainConfig: phases must follow FP_TRAIN, QUANT_ACTIVE, FROZEN");
        prev = order;
        check(p.epochs >= 1, "TrainConfig: every phase needs at least one epoch");
        check(p.lr0 > 0.0, "TrainConfig: learning rates must be positive");
    }
    check(batch_size >= 1, "TrainConfig: bad batch size");
    check(warmup_epochs >= 0, "TrainConfig: bad warmup");
    check(momentum >= 0.0 && momentum < 1.0, "TrainConfig: bad momentum");
    check(weight_decay >= 0.0, "TrainConfig: bad weight decay");
    check(distill.lambda >= 0.0 && distill.lambda <= 1.0, "TrainConfig: lambda in [0,1]");
    check(distill.temperature > 0.0, "TrainConfig: temperature must be positive");
    check(phase_index_offset >= 0, "TrainConfig: bad phase index offset");
}

TrainConfig default_train_config(int batch_size) {
    check(batch_size >= 1, "default_train_config: bad batch size");
    const double scale = double(batch_size) / 512.0;  // reference global batch
    TrainConfig cfg;
    cfg.batch_size = batch_size;
    cfg.phases = {{"FP_TRAIN", 20, 0.2 * scale},
                  {"QUANT_ACTIVE", 8, 0.02 * scale},
                  {"FROZEN", 3, 0.002 * scale}};
    return cfg;
}

double evaluate(Network<float>& net, const Dataset& data, int batch_size) {
    check(data.count() > 0, "evaluate: empty dataset");
    check(batch_size >= 1, "evaluate: bad batch size");
    std::mt19937_64 unused(0);
    AugmentFlags no_aug;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.count(); start += batch_size) {
        const std::size_t stop = std::min(data.count(), start + batch_size);
        std::vector<std::size_t> idx(stop - start);
        std::iota(idx.begin(), idx.end(), start);
        Tensor<float> x;
        std::vector<int> y;
        fill_batch(data, idx, no_aug, unused, x, y);
        Tensor<float> logits = net.forward(x, false);
        for (std::size_t b = 0; b < idx.size(); ++b)
            if (ops::argmax_row(logits, b) == y[b]) ++correct;
    }
    return double(correct) / double(data.count());
}

TrainResult train(Network<float>& net, const Dataset& train_set,
                  const Dataset& eval_set, const TrainConfig& cfg,
                  const Network<float>* external_teacher) {
    cfg.validate();
    check(train_set.count() > 0 && eval_set.count() > 0, "train: empty dataset");
    TrainResult result;
    Network<float> teacher;
    bool have_teacher = false;
    if (external_teacher) {
        teacher = external_teacher->clone();
        have_teacher = true;
    }

    for (std::size_t pi = 0; pi < cfg.phases.size(); ++pi) {
        const PhaseConfig& ph = cfg.phases[pi];
        const int abs_pi = cfg.phase_index_offset + int(pi);
        net.set_phase(phase_of(ph.name));
        auto params = net.parameters();
        for (auto& p : params) p.tensor.zero_grad();
        NagOptimizer<float> opt(cfg.momentum, cfg.weight_decay);
        const int warmup = abs_pi == 0 ? std::min(cfg.warmup_epochs, ph.epochs) : 0;

        for (int epoch = 0; epoch < ph.epochs; ++epoch) {
            const double lr = cosine_lr(epoch, ph.epochs, warmup, ph.lr0);
            std::mt19937_64 rng(epoch_seed(cfg.seed, abs_pi, epoch));
            std::vector<std::size_t> order(train_set.count());
            std::iota(order.begin(), order.end(), 0);
            std::shuffle(order.begin(), order.end(), rng);

            double loss_sum = 0.0;
            const bool distill = cfg.distill.enabled && cfg.distill.lambda > 0.0 &&
                                 have_teacher;
            for (std::size_t start = 0; start < order.size();
                 start += std::size_t(cfg.batch_size)) {
                const std::size_t stop =
                    std::min(order.size(), start + std::size_t(cfg.batch_size));
                std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
                Tensor<float> x;
                std::vector<int> y;
                fill_batch(train_set, idx, cfg.augment, rng, x, y);

                Tensor<float> teacher_logits;
                if (distill) teacher_logits = teacher.forward(x, false);

                double batch_loss;
                {
                    Tape<float> tape;
                    Tensor<float> logits = net.forward(x, true);
                    Tensor<float> loss =
                        distill ? ops::distillation_loss(logits, teacher_logits, y,
                                                         float(cfg.distill.temperature),
                                                         float(cfg.distill.lambda))
                                : ops::softmax_cross_entropy(logits, y);
                    batch_loss = loss.data()[0];
                    if (!std::isfinite(batch_loss))
                        throw std::runtime_error(
                            "train: non-finite loss in phase " + ph.name + " epoch " +
                            std::to_string(epoch) + " at sample offset " +
                            std::to_string(start));
                    tape.backward(loss);
                }
                opt.step(params, lr);
                loss_sum += batch_loss * double(idx.size());
            }

            EpochRecord rec;
            rec.phase = ph.name;
            rec.phase_index = abs_pi;
            rec.epoch = epoch;
            rec.lr = lr;
            rec.mean_loss = loss_sum / double(order.size());
            rec.eval_accuracy = evaluate(net, eval_set, cfg.batch_size);
            result.records.push_back(rec);
        }

        if (ph.name == "FP_TRAIN" && cfg.distill.enabled) {
            teacher = net.clone();
            have_teacher = true;
        }
    }
    if (!result.records.empty())
        result.final_eval_accuracy = result.records.back().eval_accuracy;
    return result;
}

// ---- hidden-width sensitivity ------------------------------------------------

namespace {

// Mean squared error of an SPN with explicit (possibly scaled) stage matrices
// against the true matmul, over a fixed set of pairs.
double spn_holdout_mse(const std::vector<double>& wa, const std::vector<double>& wb,
                       const std::vector<double>& wc, int m, int k, int n, int h,
                       const std::vector<double>& apairs,
                       const std::vector<double>& bpairs, std::size_t pairs) {
    const int mk = m * k, kn = k * n, mn = m * n;
    std::vector<double> u(h), v(h), y(mn), truth(mn);
    double acc = 0.0;
    for (std::size_t p = 0; p < pairs; ++p) {
        const double* a = apairs.data() + p * mk;
        const double* b = bpairs.data() + p * kn;
        for (int t = 0; t < h; ++t) {
            double s = 0.0;
            for (int j = 0; j < mk; ++j) s += wa[(std::size_t)t * mk + j] * a[j];
            u[t] = s;
            s = 0.0;
            for (int j = 0; j < kn; ++j) s += wb[(std::size_t)t * kn + j] * b[j];
            v[t] = s;
        }
        for (int o = 0; o < mn; ++o) {
            double s = 0.0;
            for (int t = 0; t < h; ++t) s += wc[(std::size_t)o * h + t] * u[t] * v[t];
            y[o] = s;
        }
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int l = 0; l < k; ++l) s += a[i * k + l] * b[l * n + j];
                truth[i * n + j] = s;
            }
        for (int o = 0; o < mn; ++o) {
            const double d = y[o] - truth[o];
            acc += d * d;
        }
    }
    return acc / double(pairs * (std::size_t)mn);
}

std::int8_t round_ternary(double x) {
    if (x > 0.5) return 1;
    if (x < -0.5) return -1;
    return 0;
}

}  // namespace

std::vector<SensitivityPoint> sensitivity_experiment(const SensitivityConfig& cfg) {
    check(!cfg.h_list.empty(), "sensitivity_experiment: empty h list");
    for (int h : cfg.h_list) check(h >= 1, "sensitivity_experiment: h must be >= 1");
    check(cfg.m >= 1 && cfg.k >= 1 && cfg.n >= 1, "sensitivity_experiment: bad shape");
    check(cfg.num_pairs >= (std::size_t)cfg.batch && cfg.batch >= 1,
          "sensitivity_experiment: bad pair/batch counts");
    check(cfg.fixed_b.empty() || cfg.fixed_b.size() == (std::size_t)cfg.k * cfg.n,
          "sensitivity_experiment: fixed B side has wrong length");
    check(cfg.fp_epochs >= 1 && cfg.q_epochs >= 1, "sensitivity_experiment: bad epochs");
    check(cfg.restarts >= 1, "sensitivity_experiment: bad restart count");

    const int mk = cfg.m * cfg.k, kn = cfg.k * cfg.n, mn = cfg.m * cfg.n;
    std::vector<SensitivityPoint> out;

    for (int h : cfg.h_list) {
        const std::uint64_t hseed =
            cfg.seed + 0x9e3779b97f4a7c15ULL * (std::uint64_t)(h + 1);
        std::uniform_real_distribution<double> uni(-1.0, 1.0);

        // Fixed training set of pairs shared by every restart, and a held-out
        // set drawn independently of how training unfolds.
        std::mt19937_64 pair_rng(hseed);
        std::vector<double> apairs(cfg.num_pairs * (std::size_t)mk);
        std::vector<double> bpairs(cfg.num_pairs * (std::size_t)kn);
        for (double& x : apairs) x = uni(pair_rng);
        if (cfg.fixed_b.empty())
            for (double& x : bpairs) x = uni(pair_rng);
        else
            for (std::size_t p = 0; p < cfg.num_pairs; ++p)
                std::copy(cfg.fixed_b.begin(), cfg.fixed_b.end(),
                          bpairs.begin() + p * (std::size_t)kn);
        const std::size_t holdout = 1000;
        std::mt19937_64 hold_rng(splitmix64(hseed ^ 0x7e57ULL));
        std::vector<double> ha(holdout * (std::size_t)mk), hb(holdout * (std::size_t)kn);
        for (double& x : ha) x = uni(hold_rng);
        if (cfg.fixed_b.empty())
            for (double& x : hb) x = uni(hold_rng);
        else
            for (std::size_t p = 0; p < holdout; ++p)
                std::copy(cfg.fixed_b.begin(), cfg.fixed_b.end(),
                          hb.begin() + p * (std::size_t)kn);

        const std::size_t steps_per_epoch = cfg.num_pairs / (std::size_t)cfg.batch;
        const std::size_t q_steps = steps_per_epoch * (std::size_t)cfg.q_epochs;

        SensitivityPoint point;
        point.h = h;
        point.loss = std::numeric_limits<double>::infinity();

        for (int restart = 0; restart < cfg.restarts && !point.exact; ++restart) {
            std::mt19937_64 rng(
                splitmix64(hseed + 0xda3e39cb94b95bdbULL * (std::uint64_t)restart));
            Tensor<double> Wa({(std::size_t)h, (std::size_t)mk}, true);
            Tensor<double> Wb({(std::size_t)h, (std::size_t)kn}, true);
            Tensor<double> Wc({(std::size_t)mn, (std::size_t)h}, true);
            for (auto* W : {&Wa, &Wb, &Wc})
                for (std::size_t i = 0; i < W->size(); ++i) W->data()[i] = uni(rng);
            std::vector<double> va(Wa.size(), 0.0), vb(Wb.size(), 0.0),
                vc(Wc.size(), 0.0);
            bool solved = false;

            auto run_batch = [&](std::size_t first_pair, bool quantized, double lr,
                                 double lam) {
                Tensor<double> A({(std::size_t)mk, (std::size_t)cfg.batch});
                Tensor<double> B({(std::size_t)kn, (std::size_t)cfg.batch});
                Tensor<double> T({(std::size_t)mn, (std::size_t)cfg.batch});
                for (int col = 0; col < cfg.batch; ++col) {
                    const double* a =
                        apairs.data() + (first_pair + col) * (std::size_t)mk;
                    const double* b =
                        bpairs.data() + (first_pair + col) * (std::size_t)kn;
                    for (int j = 0; j < mk; ++j)
                        A.data()[(std::size_t)j * cfg.batch + col] = a[j];
                    for (int j = 0; j < kn; ++j)
                        B.data()[(std::size_t)j * cfg.batch + col] = b[j];
                    for (int i = 0; i < cfg.m; ++i)
                        for (int j = 0; j < cfg.n; ++j) {
                            double s = 0.0;
                            for (int l = 0; l < cfg.k; ++l)
                                s += a[i * cfg.k + l] * b[l * cfg.n + j];
                            T.data()[(std::size_t)(i * cfg.n + j) * cfg.batch + col] =
                                s;
                        }
                }
                Wa.zero_grad();
                Wb.zero_grad();
                Wc.zero_grad();
                {
                    Tape<double> tape;
                    Tensor<double> u = ops::matmul(Wa, A);
                    Tensor<double> v = ops::matmul(Wb, B);
                    Tensor<double> y = ops::matmul(Wc, ops::mul(u, v));
                    Tensor<double> loss = ops::mse_loss(y, T);
                    tape.backward(loss);
                }
                auto sgd = [&](Tensor<double>& W, std::vector<double>& vel) {
                    double* w = W.data();
                    double* g = W.grad();
                    for (std::size_t i = 0; i < W.size(); ++i) {
                        double gi = g[i];
                        if (quantized)  // anneal masters onto the ternary grid
                            gi += lam * 2.0 * w[i] * (w[i] * w[i] - 1.0) *
                                  (3.0 * w[i] * w[i] - 1.0);
                        vel[i] = cfg.momentum * vel[i] + gi;
                        w[i] -= lr * vel[i];
                        if (quantized) w[i] = std::clamp(w[i], -1.0, 1.0);
                    }
                };
                sgd(Wa, va);
                sgd(Wb, vb);
                sgd(Wc, vc);
            };

            auto try_round = [&]() {
                SpnTriple cand;
                cand.m = cfg.m;
                cand.k = cfg.k;
                cand.n = cfg.n;
                cand.h = h;
                auto quantize = [&](const Tensor<double>& W, int rows, int cols) {
                    TernaryMatrix t;
                    t.rows = rows;
                    t.cols = cols;
                    t.entries.resize(W.size());
                    for (std::size_t i = 0; i < W.size(); ++i)
                        t.entries[i] = round_ternary(W.data()[i]);
                    return t;
                };
                cand.Wa = quantize(Wa, h, mk);
                cand.Wb = quantize(Wb, h, kn);
                cand.Wc = quantize(Wc, mn, h);
                if (!verify_spn_exact(cand)) return;
                solved = true;
                // Freeze the verified pure-ternary weights for the held-out
                // measurement below.
                for (std::size_t i = 0; i < Wa.size(); ++i)
                    Wa.data()[i] = double(cand.Wa.entries[i]);
                for (std::size_t i = 0; i < Wb.size(); ++i)
                    Wb.data()[i] = double(cand.Wb.entries[i]);
                for (std::size_t i = 0; i < Wc.size(); ++i)
                    Wc.data()[i] = double(cand.Wc.entries[i]);
            };

            for (int epoch = 0; epoch < cfg.fp_epochs; ++epoch)
                for (std::size_t s = 0; s < steps_per_epoch; ++s)
                    run_batch(s * (std::size_t)cfg.batch, false, cfg.lr_fp, 0.0);

            std::size_t qstep = 0;
            for (int epoch = 0; epoch < cfg.q_epochs && !solved; ++epoch) {
                const double lr = cosine_lr(epoch, cfg.q_epochs, 0, cfg.lr_q);
                for (std::size_t s = 0; s < steps_per_epoch && !solved; ++s, ++qstep) {
                    const double ramp0 = 0.25 * double(q_steps);
                    const double ramp1 = 0.75 * double(q_steps);
                    double lam = 0.0;
                    if (double(qstep) > ramp0)
                        lam = cfg.pressure_max *
                              std::min(1.0, (double(qstep) - ramp0) / (ramp1 - ramp0));
                    run_batch(s * (std::size_t)cfg.batch, true, lr, lam);
                    if (qstep >= q_steps / 4 && qstep % 100 == 0) try_round();
                }
            }
            if (!solved) try_round();

            // Converged quantized model: pure ternary if verified, otherwise
            // ternary entries times the per-matrix scale.
            std::vector<double> wa(Wa.size()), wb(Wb.size()), wc(Wc.size());
            if (solved) {
                std::copy(Wa.data(), Wa.data() + Wa.size(), wa.begin());
                std::copy(Wb.data(), Wb.data() + Wb.size(), wb.begin());
                std::copy(Wc.data(), Wc.data() + Wc.size(), wc.begin());
            } else {
                auto view = [](const Tensor<double>& W, std::vector<double>& o) {
                    TernaryResult q = ternary_quantize(W.vec());
                    for (std::size_t i = 0; i < o.size(); ++i)
                        o[i] = q.scale * q.entries[i];
                };
                view(Wa, wa);
                view(Wb, wb);
                view(Wc, wc);
            }
            const double loss =
                spn_holdout_mse(wa, wb, wc, cfg.m, cfg.k, cfg.n, h, ha, hb, holdout);
            if (loss < point.loss) {
                point.loss = loss;
                point.exact = solved;
            }
        }
        out.push_back(point);
    }
    return out;
}

// ---- quantization drift ------------------------------------------------------

DriftReport drift_analysis(const Network<float>& before, const Network<float>& after) {
    check(before.layers.size() == after.layers.size(),
          "drift_analysis: layer counts differ");
    check(before.plan.mode == after.plan.mode && before.plan.alpha == after.plan.alpha &&
              before.plan.rho == after.plan.rho,
          "drift_analysis: quantization plans differ");
    DriftReport report;
    std::vector<double> all;
    for (std::size_t li = 0; li < before.layers.size(); ++li) {
        const NetLayer<float>& a = before.layers[li];
        const NetLayer<float>& b = after.layers[li];
        check(a.spec.name == b.spec.name && a.spec.kind == b.spec.kind,
              "drift_analysis: architectures differ at layer " + a.spec.name);
        // Hybrid banks only: layers carrying both a full-precision branch and
        // a strassenified branch.
        if (!(a.has_spn && a.weight.defined())) continue;
        check(a.weight.shape() == b.weight.shape(),
              "drift_analysis: weight shapes differ at layer " + a.spec.name);
        const std::size_t filters = a.weight.dim(0);
        const std::size_t per = a.weight.size() / filters;
        DriftLayer dl;
        dl.layer = a.spec.name;
        for (std::size_t f = 0; f < filters; ++f) {
            double sq = 0.0;
            const float* wa = a.weight.data() + f * per;
            const float* wb = b.weight.data() + f * per;
            for (std::size_t i = 0; i < per; ++i) {
                const double d = double(wa[i]) - double(wb[i]);
                sq += d * d;
            }
            dl.distances.push_back(std::sqrt(sq));
        }
        all.insert(all.end(), dl.distances.begin(), dl.distances.end());
        report.layers.push_back(std::move(dl));
    }

    DriftSummary& s = report.summary;
    if (all.empty()) return report;
    const double n = double(all.size());
    double mean = 0.0;
    for (double d : all) mean += d;
    mean /= n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double d : all) {
        const double c = d - mean;
        m2 += c * c;
        m3 += c * c * c;
        m4 += c * c * c * c;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    s.mean = mean;
    s.stdev = std::sqrt(m2);
    s.skewness = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
    s.excess_kurtosis = m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0;
    s.hist_max = *std::max_element(all.begin(), all.end());
    if (s.hist_max > 0.0)
        for (double d : all) {
            if (d <= 0.0) continue;  // unchanged filters stay out of the histogram
            const auto bin = std::min<std::size_t>(
                31, (std::size_t)std::floor(d / s.hist_max * 32.0));
            ++s.histogram[bin];
        }
    return report;
}

}  // namespace stnet
