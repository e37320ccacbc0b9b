#include "stnet/arch.hpp"

#include <stdexcept>

#include "stnet/kernels.hpp"

namespace stnet {

int scale_channels(int c, double width_multiplier) {
    check(c > 0 && width_multiplier > 0.0, "scale_channels: bad input");
    const int even = 2 * round_count(c * width_multiplier / 2.0);
    return std::max(1, even);
}

namespace {

struct Builder {
    ArchSpec arch;
    int h = 0, w = 0, c = 0;

    void conv(const std::string& name, LayerKind kind, int c_out, int k, int stride,
              int pad, bool bn) {
        LayerSpec l;
        l.name = name;
        l.kind = kind;
        l.c_in = c;
        l.c_out = kind == LayerKind::Depthwise ? c : c_out;
        l.ksize = k;
        l.stride = stride;
        l.pad = pad;
        l.in_h = h;
        l.in_w = w;
        l.out_h = kernels::conv_out_dim(h, k, stride, pad);
        l.out_w = kernels::conv_out_dim(w, k, stride, pad);
        l.batch_norm = bn;
        arch.layers.push_back(l);
        h = l.out_h;
        w = l.out_w;
        c = l.c_out;
    }

    void ds_block(int index, int c_out, int stride) {
        conv("dw" + std::to_string(index), LayerKind::Depthwise, c, 3, stride, 1, true);
        conv("pw" + std::to_string(index), LayerKind::Pointwise, c_out, 1, 1, 0, true);
    }

    void pool_and_classify(int num_classes) {
        LayerSpec pool;
        pool.name = "pool";
        pool.kind = LayerKind::GlobalPool;
        pool.c_in = pool.c_out = c;
        pool.in_h = h;
        pool.in_w = w;
        pool.out_h = pool.out_w = 1;
        arch.layers.push_back(pool);
        h = w = 1;

        LayerSpec fc;
        fc.name = "fc";
        fc.kind = LayerKind::Dense;
        fc.c_in = c;
        fc.c_out = num_classes;
        fc.in_h = fc.in_w = fc.out_h = fc.out_w = 1;
        arch.layers.push_back(fc);
        c = num_classes;
    }
};

}  // namespace

ArchSpec build_mobilenets_v1(double width_multiplier, int resolution, int num_classes) {
    check(resolution > 0 && num_classes > 0, "build_mobilenets_v1: bad input");
    Builder b;
    b.arch.name = "mobilenets-v1";
    b.arch.input_c = 3;
    b.arch.input_h = b.arch.input_w = resolution;
    b.arch.num_classes = num_classes;
    b.h = b.w = resolution;
    b.c = 3;

    auto ch = [&](int full) { return scale_channels(full, width_multiplier); };
    b.conv("stem", LayerKind::Conv, ch(32), 3, 2, 1, true);

    const int block_out[13] = {64,  128, 128, 256, 256, 512, 512,
                               512, 512, 512, 512, 1024, 1024};
    const int block_stride[13] = {1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1};
    for (int i = 0; i < 13; ++i) b.ds_block(i + 1, ch(block_out[i]), block_stride[i]);

    b.pool_and_classify(num_classes);
    return b.arch;
}

ArchSpec build_tinynet(int num_classes) {
    Builder b;
    b.arch.name = "tinynet";
    b.arch.input_c = 3;
    b.arch.input_h = b.arch.input_w = 32;
    b.arch.num_classes = num_classes;
    b.h = b.w = 32;
    b.c = 3;

    b.conv("stem", LayerKind::Conv, 16, 3, 1, 1, true);
    b.ds_block(1, 32, 1);
    b.ds_block(2, 64, 2);
    b.ds_block(3, 64, 2);
    b.pool_and_classify(num_classes);
    return b.arch;
}

const char* quant_mode_name(QuantMode m) {
    switch (m) {
        case QuantMode::FP16: return "fp16";
        case QuantMode::TWN: return "twn";
        case QuantMode::STRASSEN: return "strassen";
        case QuantMode::HYBRID: return "hybrid";
    }
    return "?";
}

QuantMode quant_mode_from_name(const std::string& s) {
    if (s == "fp16") return QuantMode::FP16;
    if (s == "twn") return QuantMode::TWN;
    if (s == "strassen") return QuantMode::STRASSEN;
    if (s == "hybrid") return QuantMode::HYBRID;
    throw std::invalid_argument("unknown quantization mode: " + s);
}

void QuantPlan::validate() const {
    check(alpha >= 0.0 && alpha <= 1.0, "QuantPlan: alpha must lie in [0,1]");
    check(rho > 0.0, "QuantPlan: rho must be positive");
    check(fc_hidden_rho > 0.0, "QuantPlan: fc_hidden_rho must be positive");
    check(threshold_factor > 0.0 && threshold_factor < 1.0,
          "QuantPlan: threshold_factor must lie in (0,1)");
}

void QuantPlan::canonicalize() {
    validate();
    if (mode == QuantMode::HYBRID && alpha >= 1.0) mode = QuantMode::FP16;
    if (mode == QuantMode::HYBRID && alpha <= 0.0) mode = QuantMode::STRASSEN;
    if (mode == QuantMode::STRASSEN) alpha = 0.0;
}

LayerSplit plan_split(const QuantPlan& plan, const LayerSpec& layer) {
    LayerSplit s;
    if (!plan.strassenified()) {
        s.c_fp = layer.c_out;
        return s;
    }
    if (layer.kind == LayerKind::Depthwise || layer.kind == LayerKind::GlobalPool) {
        // Depthwise convolutions stay full precision under strassenified
        // plans; they carry few parameters and no channel mixing.
        s.c_fp = layer.c_out;
        return s;
    }
    if (layer.kind == LayerKind::Dense) {
        s.c_spn = layer.c_out;
        s.h = round_count(plan.fc_hidden_rho * layer.c_out);
        return s;
    }
    const double a = plan.mode == QuantMode::HYBRID ? plan.alpha : 0.0;
    s.c_fp = round_count(a * layer.c_out);
    s.c_spn = layer.c_out - s.c_fp;
    s.h = round_count(plan.rho * s.c_spn);
    if (s.c_spn > 0 && s.h < 1) s.h = 1;
    return s;
}

}  // namespace stnet
