#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "stnet/arch.hpp"
#include "stnet/ops.hpp"
#include "stnet/spn.hpp"
#include "stnet/tensor.hpp"
#include "stnet/ternary.hpp"

namespace stnet {

// Named handle on a trainable tensor plus its optimizer policy. `decay` is
// false for tensors that L2 decay would fight: batchnorm scale/shift, biases,
// and any matrix currently being pulled onto the ternary grid.
template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T> tensor;
    bool decay = true;
};

// One architecture layer instantiated for a particular quantization plan.
// A split convolution runs a full-precision branch over the first
// `split.c_fp` output channels and a strassenified unit over the remaining
// `split.c_spn`; either branch may be absent. Normalization applies to the
// concatenated map.
template <typename T>
struct NetLayer {
    LayerSpec spec;
    LayerSplit split;
    bool ternarize = false;  // ternary-everything mode quantizes this layer's weights
    QuantPhase phase = QuantPhase::FULL_PRECISION;

    Tensor<T> weight;  // conv [c_fp,c_in,k,k] / depthwise [C,1,k,k] / dense [out,in]
    Tensor<T> bias;    // dense only
    TernaryMatrix weight_t;    // frozen 2-bit form of `weight` when ternarize
    Tensor<T> weight_frozen;   // scale * entries, materialized for forward

    bool has_spn = false;
    SpnConvUnit<T> spn;

    Tensor<T> gamma, beta;
    ops::BatchNormState<T> bn;
};

template <typename T>
class Network {
  public:
    ArchSpec arch;
    QuantPlan plan;
    QuantPhase phase = QuantPhase::FULL_PRECISION;
    std::vector<NetLayer<T>> layers;

    static Network instantiate(const ArchSpec& a, QuantPlan p, std::uint64_t seed) {
        p.validate();
        p.canonicalize();
        Network net;
        net.arch = a;
        net.plan = p;
        std::mt19937_64 rng(seed);
        for (const LayerSpec& spec : a.layers) net.layers.push_back(net.build_layer(spec, rng));
        return net;
    }

    Tensor<T> forward(const Tensor<T>& x, bool training) {
        check(x.ndim() == 4 && x.dim(1) == (std::size_t)arch.layers.front().c_in &&
                  x.dim(2) == (std::size_t)arch.layers.front().in_h &&
                  x.dim(3) == (std::size_t)arch.layers.front().in_w,
              "Network::forward: input " + x.shape_str() + " does not match the stem");
        Tensor<T> cur = x;
        for (NetLayer<T>& l : layers) cur = layer_forward(l, cur, training);
        return cur;
    }

    // Advances every layer's lifecycle. Order is FULL_PRECISION ->
    // QUANT_ACTIVE -> FROZEN_TERNARY; entering the frozen phase quantizes and
    // folds in place. Re-setting the current phase is a no-op.
    void set_phase(QuantPhase p) {
        if (p == phase) return;
        check(static_cast<int>(p) == static_cast<int>(phase) + 1,
              "Network::set_phase: phases must advance in order");
        for (NetLayer<T>& l : layers) advance_layer(l, p);
        phase = p;
    }

    std::vector<ParamRef<T>> parameters() {
        std::vector<ParamRef<T>> out;
        for (NetLayer<T>& l : layers) collect_params(l, out);
        return out;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (const ParamRef<T>& p : parameters()) n += p.tensor.size();
        return n;
    }

    // Deep copy: no storage shared with the source (used for distillation
    // teachers and drift snapshots).
    Network clone() const {
        Network net;
        net.arch = arch;
        net.plan = plan;
        net.phase = phase;
        net.layers.reserve(layers.size());
        for (const NetLayer<T>& l : layers) {
            NetLayer<T> c;
            c.spec = l.spec;
            c.split = l.split;
            c.ternarize = l.ternarize;
            c.phase = l.phase;
            c.weight = clone_tensor(l.weight);
            c.bias = clone_tensor(l.bias);
            c.weight_t = l.weight_t;
            c.weight_frozen = clone_tensor(l.weight_frozen);
            c.has_spn = l.has_spn;
            if (l.has_spn) c.spn = clone_unit(l.spn);
            c.gamma = clone_tensor(l.gamma);
            c.beta = clone_tensor(l.beta);
            c.bn.running_mean = clone_tensor(l.bn.running_mean);
            c.bn.running_var = clone_tensor(l.bn.running_var);
            net.layers.push_back(std::move(c));
        }
        return net;
    }

  private:
    static Tensor<T> clone_tensor(const Tensor<T>& t) {
        if (!t.defined()) return Tensor<T>();
        Tensor<T> c = t.clone();
        return c;
    }

    static SpnConvUnit<T> clone_unit(const SpnConvUnit<T>& u) {
        SpnConvUnit<T> c = u;  // scalars and TernaryMatrix copy by value
        c.masters = clone_tensor(u.masters);
        c.Wa = clone_tensor(u.Wa);
        c.Wb = clone_tensor(u.Wb);
        c.Wc = clone_tensor(u.Wc);
        c.a_hat = clone_tensor(u.a_hat);
        c.Wb_frozen = clone_tensor(u.Wb_frozen);
        c.Wc_frozen = clone_tensor(u.Wc_frozen);
        return c;
    }

    template <class Rng>
    static Tensor<T> xavier(std::vector<std::size_t> shape, std::size_t fan_in,
                            std::size_t fan_out, Rng& rng) {
        Tensor<T> t(std::move(shape), true);
        const double b = std::sqrt(6.0 / double(fan_in + fan_out));
        std::uniform_real_distribution<double> d(-b, b);
        for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = T(d(rng));
        return t;
    }

    NetLayer<T> build_layer(const LayerSpec& spec, std::mt19937_64& rng) {
        NetLayer<T> l;
        l.spec = spec;
        l.split = plan_split(plan, spec);
        l.ternarize = plan.mode == QuantMode::TWN && spec.kind != LayerKind::GlobalPool;
        const std::size_t k2 = (std::size_t)spec.ksize * spec.ksize;
        switch (spec.kind) {
            case LayerKind::GlobalPool:
                return l;
            case LayerKind::Depthwise:
                l.weight = xavier({(std::size_t)spec.c_out, 1, (std::size_t)spec.ksize,
                                   (std::size_t)spec.ksize},
                                  k2, k2, rng);
                break;
            case LayerKind::Conv:
            case LayerKind::Pointwise:
                if (l.split.c_fp > 0)
                    l.weight = xavier({(std::size_t)l.split.c_fp, (std::size_t)spec.c_in,
                                       (std::size_t)spec.ksize, (std::size_t)spec.ksize},
                                      (std::size_t)spec.c_in * k2,
                                      (std::size_t)l.split.c_fp * k2, rng);
                if (l.split.c_spn > 0) {
                    l.has_spn = true;
                    l.spn.c_in = spec.c_in;
                    l.spn.c_out = l.split.c_spn;
                    l.spn.ksize = spec.ksize;
                    l.spn.stride = spec.stride;
                    l.spn.pad = spec.pad;
                    l.spn.h = l.split.h;
                    l.spn.threshold_factor = plan.threshold_factor;
                    l.spn.init(rng);
                }
                break;
            case LayerKind::Dense:
                if (plan.strassenified()) {
                    l.has_spn = true;
                    l.spn.c_in = spec.c_in;
                    l.spn.c_out = l.split.c_spn;
                    l.spn.ksize = 1;
                    l.spn.stride = 1;
                    l.spn.pad = 0;
                    l.spn.h = l.split.h;
                    l.spn.threshold_factor = plan.threshold_factor;
                    l.spn.init(rng);
                } else {
                    l.weight = xavier({(std::size_t)spec.c_out, (std::size_t)spec.c_in},
                                      (std::size_t)spec.c_in, (std::size_t)spec.c_out, rng);
                }
                l.bias = Tensor<T>({(std::size_t)spec.c_out}, true);
                break;
        }
        if (spec.batch_norm) {
            l.gamma = Tensor<T>({(std::size_t)spec.c_out}, true);
            l.beta = Tensor<T>({(std::size_t)spec.c_out}, true);
            for (std::size_t c = 0; c < l.gamma.size(); ++c) l.gamma.data()[c] = T(1);
            l.bn = ops::BatchNormState<T>((std::size_t)spec.c_out);
        }
        return l;
    }

    // The weight actually convolved: the stored tensor in full precision, its
    // straight-through ternary view mid-quantization, the folded constant
    // once frozen.
    Tensor<T> effective_weight(NetLayer<T>& l) {
        if (!l.ternarize) return l.weight;
        if (l.phase == QuantPhase::QUANT_ACTIVE)
            return ops::ste_ternary(l.weight, plan.threshold_factor);
        if (l.phase == QuantPhase::FROZEN_TERNARY) return l.weight_frozen;
        return l.weight;
    }

    Tensor<T> layer_forward(NetLayer<T>& l, const Tensor<T>& x, bool training) {
        Tensor<T> y;
        switch (l.spec.kind) {
            case LayerKind::GlobalPool:
                return ops::global_avg_pool(x);
            case LayerKind::Depthwise:
                y = ops::depthwise_conv2d(x, effective_weight(l), l.spec.stride, l.spec.pad);
                break;
            case LayerKind::Conv:
            case LayerKind::Pointwise: {
                if (l.split.c_spn == 0) {
                    y = ops::conv2d(x, effective_weight(l), l.spec.stride, l.spec.pad);
                } else if (l.split.c_fp == 0) {
                    y = l.spn.forward(x);
                } else {
                    Tensor<T> fp =
                        ops::conv2d(x, effective_weight(l), l.spec.stride, l.spec.pad);
                    y = ops::concat_channels(fp, l.spn.forward(x));
                }
                break;
            }
            case LayerKind::Dense: {
                if (l.has_spn) {
                    Tensor<T> x4 = ops::reshape(x, {x.dim(0), x.dim(1), 1u, 1u});
                    Tensor<T> y4 = l.spn.forward(x4);
                    Tensor<T> flat = ops::reshape(y4, {y4.dim(0), y4.dim(1)});
                    return ops::add_bias_rows(flat, l.bias);
                }
                return ops::dense(x, effective_weight(l), l.bias);
            }
        }
        if (l.spec.batch_norm) y = ops::batchnorm2d(y, l.gamma, l.beta, l.bn, training);
        return ops::relu(y);
    }

    void advance_layer(NetLayer<T>& l, QuantPhase p) {
        if (p == QuantPhase::FROZEN_TERNARY) {
            if (l.has_spn) l.spn.freeze_and_fold();
            if (l.ternarize && l.weight.defined()) {
                TernaryResult q = ternary_quantize(l.weight.vec(), plan.threshold_factor);
                const int rows = (int)l.weight.dim(0);
                const int cols = (int)(l.weight.size() / l.weight.dim(0));
                l.weight_t = TernaryMatrix{rows, cols, q.entries, q.scale, q.degenerate};
                l.weight_frozen = Tensor<T>(l.weight.shape());
                for (std::size_t i = 0; i < l.weight_frozen.size(); ++i)
                    l.weight_frozen.data()[i] =
                        static_cast<T>(q.scale) * static_cast<T>(q.entries[i]);
                l.weight.set_requires_grad(false);
            }
        } else if (l.has_spn) {
            l.spn.set_phase(p);
        }
        l.phase = p;
    }

    void collect_params(NetLayer<T>& l, std::vector<ParamRef<T>>& out) {
        const std::string base = l.spec.name;
        const bool frozen = l.phase == QuantPhase::FROZEN_TERNARY;
        const bool quant = l.phase == QuantPhase::QUANT_ACTIVE;
        if (l.weight.defined() && !(l.ternarize && frozen))
            out.push_back({base + ".weight", l.weight, !(l.ternarize && quant)});
        if (l.has_spn) {
            if (frozen) {
                out.push_back({base + ".spn.a_hat", l.spn.a_hat, true});
            } else {
                out.push_back({base + ".spn.masters", l.spn.masters, true});
                out.push_back({base + ".spn.Wa", l.spn.Wa, !quant});
                out.push_back({base + ".spn.Wb", l.spn.Wb, !quant});
                out.push_back({base + ".spn.Wc", l.spn.Wc, !quant});
            }
        }
        if (l.bias.defined()) out.push_back({base + ".bias", l.bias, false});
        if (l.gamma.defined()) {
            out.push_back({base + ".bn.gamma", l.gamma, false});
            out.push_back({base + ".bn.beta", l.beta, false});
        }
    }
};

}  // namespace stnet
