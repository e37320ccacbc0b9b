#pragma once

// Architecture descriptions (layer graphs with resolved shapes) and
// quantization plans (how each layer is to be compressed). These are pure
// data: the cost model prices them and the network module instantiates them.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stnet/tensor.hpp"

namespace stnet {

enum class LayerKind { Conv, Depthwise, Pointwise, GlobalPool, Dense };

struct LayerSpec {
    std::string name;
    LayerKind kind;
    int c_in = 0, c_out = 0;
    int ksize = 1, stride = 1, pad = 0;
    int in_h = 0, in_w = 0;
    int out_h = 0, out_w = 0;
    bool batch_norm = false;  // one folded bias per output channel at inference

    int patch() const { return (kind == LayerKind::Depthwise ? 1 : c_in) * ksize * ksize; }
    std::int64_t positions() const { return std::int64_t(out_h) * out_w; }
};

struct ArchSpec {
    std::string name;
    int input_c = 0, input_h = 0, input_w = 0;
    int num_classes = 0;
    std::vector<LayerSpec> layers;
};

// Channel scaling used by the width multiplier: nearest even count, never
// below one channel.
int scale_channels(int c, double width_multiplier);

// MobileNets-V1: 3x3 stem (stride 2) + 13 depthwise-separable blocks +
// global average pool + classifier. Channel counts scale with the width
// multiplier; spatial shapes follow the input resolution.
ArchSpec build_mobilenets_v1(double width_multiplier, int resolution,
                             int num_classes = 1000);

// Desk-scale network for training experiments: stem + 3 DS blocks on 32x32
// inputs.
ArchSpec build_tinynet(int num_classes = 10);

// ---------------------------------------------------------------------------

enum class QuantMode { FP16, TWN, STRASSEN, HYBRID };

const char* quant_mode_name(QuantMode m);
QuantMode quant_mode_from_name(const std::string& s);

// How to compress a network. alpha is the fraction of each convolution's
// output channels produced by full-precision filters (HYBRID only); rho sets
// the hidden width of every strassenified convolution as h = round(rho *
// spn_channels). The classifier uses a fixed ratio against its own output
// count instead of rho.
struct QuantPlan {
    QuantMode mode = QuantMode::FP16;
    double alpha = 0.0;
    double rho = 1.0;
    double fc_hidden_rho = 0.64;
    double threshold_factor = 0.7;

    // Degenerate hybrids collapse onto the pure modes so equivalent plans
    // take identical code paths: alpha=1 is full precision, alpha=0 is fully
    // strassenified.
    void canonicalize();
    void validate() const;

    bool strassenified() const {
        return mode == QuantMode::STRASSEN || mode == QuantMode::HYBRID;
    }
};

// Half-up rounding used for all channel and hidden-width calculations.
inline int round_count(double x) { return static_cast<int>(std::floor(x + 0.5)); }

// Per-layer split under a plan: full-precision channels, strassenified
// channels, and the hidden width serving the strassenified part.
struct LayerSplit {
    int c_fp = 0;
    int c_spn = 0;
    int h = 0;
};
LayerSplit plan_split(const QuantPlan& plan, const LayerSpec& layer);

}  // namespace stnet
