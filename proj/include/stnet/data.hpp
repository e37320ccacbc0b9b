#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "stnet/tensor.hpp"

namespace stnet {

// Images stored [N, C, H, W] as float; labels are class indices. `mean` and
// `stdev` record the per-channel statistics the images were normalized with
// (empty until normalization).
struct Dataset {
    std::size_t channels = 0, height = 0, width = 0;
    std::vector<float> images;
    std::vector<int> labels;
    std::vector<float> mean, stdev;

    std::size_t count() const { return labels.size(); }
    std::size_t image_size() const { return channels * height * width; }
};

// Per-channel mean and standard deviation over every pixel of the set.
std::pair<std::vector<float>, std::vector<float>> channel_stats(const Dataset& d);

// x <- (x - mean[c]) / stdev[c]; records the stats on the dataset. Throws if
// the dataset was already normalized or stats are degenerate.
void normalize_with(Dataset& d, const std::vector<float>& mean,
                    const std::vector<float>& stdev);

// Class-conditioned Gaussian blobs: each image is unit-variance pixel noise
// plus a centered spatial Gaussian bump whose per-channel amplitudes follow a
// class-specific unit-vector pattern scaled by `separation`, so class means
// sit many noise-sigmas apart, survive spatial pooling, and the set is
// separable for any reasonable classifier.
struct SyntheticSpec {
    int classes = 10;
    std::size_t train_count = 2000;
    std::size_t eval_count = 500;
    std::size_t channels = 3, height = 32, width = 32;
    double separation = 10.0;
};

// Returns {train, eval}, both normalized with the train split's statistics.
std::pair<Dataset, Dataset> generate_synthetic(const SyntheticSpec& spec,
                                               std::uint64_t seed);

// CIFAR-10 binary format: concatenated 3073-byte records, one label byte
// (0..9) followed by 3072 channel-major pixel bytes. Pixels land in [0,1];
// normalization is the caller's separate step. Throws on a file whose size is
// not a whole number of records or on an out-of-range label.
Dataset load_cifar10_binary(const std::vector<std::string>& files);

struct AugmentFlags {
    bool hflip = false;
    bool random_crop = false;
    int crop_pad = 4;
};

// Copies the selected rows into x [batch, C, H, W] (allocated here), applying
// augmentation draws from `rng` in index order so batch assembly is
// deterministic given the generator state.
void fill_batch(const Dataset& d, const std::vector<std::size_t>& idx,
                const AugmentFlags& aug, std::mt19937_64& rng, Tensor<float>& x,
                std::vector<int>& y);

}  // namespace stnet
