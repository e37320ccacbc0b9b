#include "stnet/data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace stnet {

std::pair<std::vector<float>, std::vector<float>> channel_stats(const Dataset& d) {
    check(d.count() > 0, "channel_stats: empty dataset");
    const std::size_t C = d.channels, HW = d.height * d.width, N = d.count();
    std::vector<double> sum(C, 0.0), sq(C, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const float* p = d.images.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
                sum[c] += p[i];
                sq[c] += double(p[i]) * p[i];
            }
        }
    std::vector<float> mean(C), stdev(C);
    const double M = double(N) * HW;
    for (std::size_t c = 0; c < C; ++c) {
        mean[c] = float(sum[c] / M);
        const double var = sq[c] / M - double(mean[c]) * mean[c];
        stdev[c] = float(std::sqrt(std::max(var, 0.0)));
    }
    return {mean, stdev};
}

void normalize_with(Dataset& d, const std::vector<float>& mean,
                    const std::vector<float>& stdev) {
    check(d.mean.empty(), "normalize_with: dataset already normalized");
    check(mean.size() == d.channels && stdev.size() == d.channels,
          "normalize_with: stats do not match channel count");
    for (float s : stdev) check(s > 0.0f, "normalize_with: degenerate stdev");
    const std::size_t C = d.channels, HW = d.height * d.width, N = d.count();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            float* p = d.images.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) p[i] = (p[i] - mean[c]) / stdev[c];
        }
    d.mean = mean;
    d.stdev = stdev;
}

namespace {

Dataset sample_blobs(const SyntheticSpec& spec, std::size_t n, std::mt19937_64& rng) {
    Dataset d;
    d.channels = spec.channels;
    d.height = spec.height;
    d.width = spec.width;
    const std::size_t D = d.image_size();
    check((std::size_t)spec.classes <= d.height * d.width,
          "generate_synthetic: more classes than spatial cells");
    d.images.resize(n * D);
    d.labels.resize(n);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, spec.classes - 1);
    const std::size_t HW = d.height * d.width;

    // Class c's mean is a centered spatial Gaussian bump whose per-channel
    // amplitudes follow a class-specific unit direction scaled by
    // `separation`. Channel patterns survive spatial pooling, so both a
    // nearest-centroid probe and a pooled convolutional stack separate the
    // classes; patterns are deterministic in the class index alone.
    std::vector<double> pattern((std::size_t)spec.classes * d.channels);
    {
        std::mt19937_64 prng(0xb10b5);
        std::normal_distribution<double> g(0.0, 1.0);
        double threshold = 0.8;
        for (int c = 0; c < spec.classes; ++c) {
            double* v = pattern.data() + (std::size_t)c * d.channels;
            for (int attempt = 0;; ++attempt) {
                double norm = 0.0;
                for (std::size_t ch = 0; ch < d.channels; ++ch) {
                    v[ch] = g(prng);
                    norm += v[ch] * v[ch];
                }
                norm = std::sqrt(norm);
                if (norm < 1e-9) continue;
                for (std::size_t ch = 0; ch < d.channels; ++ch) v[ch] /= norm;
                bool far = true;
                for (int p = 0; p < c && far; ++p) {
                    double dist = 0.0;
                    for (std::size_t ch = 0; ch < d.channels; ++ch) {
                        const double dv = v[ch] - pattern[(std::size_t)p * d.channels + ch];
                        dist += dv * dv;
                    }
                    far = std::sqrt(dist) >= threshold;
                }
                if (far) break;
                if (attempt % 200 == 199) threshold *= 0.9;  // dense codes: relax
            }
        }
    }

    const double sigma = std::max(1.0, double(std::min(d.height, d.width)) / 16.0);
    std::vector<double> bump(HW);
    for (std::size_t yy = 0; yy < d.height; ++yy)
        for (std::size_t xx = 0; xx < d.width; ++xx) {
            const double dy = (double(yy) + 0.5 - 0.5 * double(d.height)) / sigma;
            const double dx = (double(xx) + 0.5 - 0.5 * double(d.width)) / sigma;
            bump[yy * d.width + xx] = std::exp(-0.5 * (dy * dy + dx * dx));
        }

    for (std::size_t i = 0; i < n; ++i) {
        const int c = cls(rng);
        d.labels[i] = c;
        float* img = d.images.data() + i * D;
        for (std::size_t j = 0; j < D; ++j) img[j] = float(noise(rng));
        for (std::size_t ch = 0; ch < d.channels; ++ch) {
            const double amp =
                spec.separation * pattern[(std::size_t)c * d.channels + ch];
            for (std::size_t j = 0; j < HW; ++j)
                img[ch * HW + j] += float(amp * bump[j]);
        }
    }
    return d;
}

}  // namespace

std::pair<Dataset, Dataset> generate_synthetic(const SyntheticSpec& spec,
                                               std::uint64_t seed) {
    check(spec.classes >= 2, "generate_synthetic: need at least two classes");
    check(spec.train_count > 0 && spec.eval_count > 0,
          "generate_synthetic: empty split");
    check(spec.separation > 0.0, "generate_synthetic: separation must be positive");
    std::mt19937_64 rng(seed);
    Dataset train = sample_blobs(spec, spec.train_count, rng);
    Dataset eval = sample_blobs(spec, spec.eval_count, rng);
    auto [mean, stdev] = channel_stats(train);
    normalize_with(train, mean, stdev);
    normalize_with(eval, mean, stdev);
    return {std::move(train), std::move(eval)};
}

Dataset load_cifar10_binary(const std::vector<std::string>& files) {
    constexpr std::size_t kRecord = 3073;  // 1 label byte + 32*32*3 pixels
    check(!files.empty(), "load_cifar10_binary: no files given");
    Dataset d;
    d.channels = 3;
    d.height = 32;
    d.width = 32;
    for (const std::string& path : files) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("load_cifar10_binary: cannot open " + path);
        in.seekg(0, std::ios::end);
        const std::streamoff size = in.tellg();
        in.seekg(0, std::ios::beg);
        if (size <= 0 || size % (std::streamoff)kRecord != 0)
            throw std::runtime_error("load_cifar10_binary: " + path +
                                     " is not a whole number of 3073-byte records");
        const std::size_t n = std::size_t(size) / kRecord;
        std::vector<unsigned char> buf(kRecord);
        for (std::size_t i = 0; i < n; ++i) {
            in.read(reinterpret_cast<char*>(buf.data()), kRecord);
            if (!in)
                throw std::runtime_error("load_cifar10_binary: short read in " + path);
            const int label = buf[0];
            if (label > 9)
                throw std::runtime_error("load_cifar10_binary: label out of range in " +
                                         path);
            d.labels.push_back(label);
            const std::size_t base = d.images.size();
            d.images.resize(base + kRecord - 1);
            for (std::size_t j = 0; j < kRecord - 1; ++j)
                d.images[base + j] = float(buf[1 + j]) / 255.0f;
        }
    }
    return d;
}

void fill_batch(const Dataset& d, const std::vector<std::size_t>& idx,
                const AugmentFlags& aug, std::mt19937_64& rng, Tensor<float>& x,
                std::vector<int>& y) {
    check(!idx.empty(), "fill_batch: empty batch");
    const std::size_t C = d.channels, H = d.height, W = d.width;
    x = Tensor<float>({idx.size(), C, H, W});
    y.resize(idx.size());
    std::bernoulli_distribution flip(0.5);
    std::uniform_int_distribution<int> shift(-aug.crop_pad, aug.crop_pad);
    for (std::size_t b = 0; b < idx.size(); ++b) {
        check(idx[b] < d.count(), "fill_batch: index out of range");
        y[b] = d.labels[idx[b]];
        const float* src = d.images.data() + idx[b] * d.image_size();
        float* dst = x.data() + b * d.image_size();
        const bool do_flip = aug.hflip && flip(rng);
        int dy = 0, dx = 0;
        if (aug.random_crop) {
            dy = shift(rng);
            dx = shift(rng);
        }
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    const long si = long(i) + dy;
                    const long sj = long(do_flip ? W - 1 - j : j) + dx;
                    float v = 0.0f;
                    if (si >= 0 && si < long(H) && sj >= 0 && sj < long(W))
                        v = src[(c * H + std::size_t(si)) * W + std::size_t(sj)];
                    dst[(c * H + i) * W + j] = v;
                }
    }
}

}  // namespace stnet
