#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stnet/data.hpp"
#include "stnet/network.hpp"

namespace stnet {

// Linear warmup from 0 over `warmup` epochs, then cosine decay of lr0 to 0
// across the remaining epochs. `epoch` must lie in [0, total).
double cosine_lr(int epoch, int total, int warmup, double lr0);

// Nesterov accelerated gradient with standard L2 weight decay added to the
// gradient (not applied to params whose ParamRef opts out). One velocity
// buffer per parameter tensor, allocated on first step.
template <typename T>
class NagOptimizer {
  public:
    NagOptimizer(double momentum, double weight_decay)
        : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(std::vector<ParamRef<T>>& params, double lr);

    double momentum() const { return momentum_; }
    double weight_decay() const { return weight_decay_; }
    std::vector<Tensor<T>>& velocity() { return velocity_; }

  private:
    double momentum_, weight_decay_;
    std::vector<Tensor<T>> velocity_;
};

struct PhaseConfig {
    std::string name;  // FP_TRAIN | QUANT_ACTIVE | FROZEN
    int epochs = 1;
    double lr0 = 0.1;
};

struct DistillConfig {
    bool enabled = false;
    double temperature = 4.0;
    double lambda = 0.5;
};

struct TrainConfig {
    std::vector<PhaseConfig> phases;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int warmup_epochs = 5;  // applies to the overall first phase only
    int batch_size = 32;
    std::uint64_t seed = 1;
    DistillConfig distill;
    AugmentFlags augment;
    // Index of phases[0] within the full schedule. Zero for a fresh run; a
    // resumed run passes the number of already-completed phases so epoch
    // seeding, warmup, and records continue exactly where the original run
    // would have been.
    int phase_index_offset = 0;

    void validate() const;
};

// Desk-scale defaults: the reference schedule (200, 75, 25 epochs at 0.2,
// 0.02, 0.002 with global batch 512) divided by 10 in length, with learning
// rates scaled linearly by batch size.
TrainConfig default_train_config(int batch_size = 32);

struct EpochRecord {
    std::string phase;
    int phase_index = 0;
    int epoch = 0;
    double lr = 0.0;
    double mean_loss = 0.0;
    double eval_accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> records;
    double final_eval_accuracy = 0.0;
};

// Fraction of correct argmax predictions, eval-mode forward.
double evaluate(Network<float>& net, const Dataset& data, int batch_size = 64);

// Runs the configured phases in order, advancing the network lifecycle at
// each boundary (freeze-and-fold on entering FROZEN) and rebuilding optimizer
// state per phase. When distillation is enabled, the teacher is a snapshot of
// the network at the end of FP_TRAIN; a resumed run whose schedule no longer
// contains FP_TRAIN supplies that snapshot via `teacher`. Deterministic given
// (seed, config, data); throws on a non-finite loss.
TrainResult train(Network<float>& net, const Dataset& train_set,
                  const Dataset& eval_set, const TrainConfig& cfg,
                  const Network<float>* teacher = nullptr);

// ---- hidden-width sensitivity ----------------------------------------------

// Trains one SPN per hidden width h against the m×k * k×n matmul target on
// random pairs (A uniform on [-1,1]; B likewise, or a fixed filter), using
// momentum SGD: one full-precision epoch, then quantization-active epochs
// where a ternarization pressure ramp anneals the stage matrices onto the
// ternary grid, with periodic exact-rounding verification — the same
// anneal-and-round machinery the filter-bank search uses, run over several
// random restarts. Reports each width's converged L2 of the quantized model
// on held-out pairs (exactly 0 when the rounded ternary SPN basis-verifies),
// keeping the best restart.
struct SensitivityConfig {
    std::vector<int> h_list;
    std::size_t num_pairs = 10000;
    int batch = 4;
    double lr_fp = 0.1;
    double lr_q = 0.1;
    double pressure_max = 0.08;
    double momentum = 0.9;
    int fp_epochs = 1;
    int q_epochs = 6;
    int restarts = 8;
    std::uint64_t seed = 1;
    int m = 2, k = 2, n = 2;
    std::vector<double> fixed_b;  // size k*n when set; empty = random B side
};

struct SensitivityPoint {
    int h = 0;
    double loss = 0.0;
    bool exact = false;  // rounded pure-ternary SPN basis-verified
};

std::vector<SensitivityPoint> sensitivity_experiment(const SensitivityConfig& cfg);

// ---- quantization drift -----------------------------------------------------

// Per-filter L2 distance between the full-precision filters of each hybrid
// bank in two snapshots of the same network (typically before/after the
// quantization phases). Histogram: 32 equal bins over (0, max distance];
// unchanged filters (distance exactly 0) are not binned, so identical
// snapshots give an all-zero histogram.
struct DriftLayer {
    std::string layer;
    std::vector<double> distances;
};

struct DriftSummary {
    double mean = 0.0, stdev = 0.0, skewness = 0.0, excess_kurtosis = 0.0;
    double hist_max = 0.0;
    std::array<std::uint64_t, 32> histogram{};
};

struct DriftReport {
    std::vector<DriftLayer> layers;
    DriftSummary summary;
};

DriftReport drift_analysis(const Network<float>& before, const Network<float>& after);

}  // namespace stnet
