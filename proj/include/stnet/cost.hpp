#pragma once

// Analytic cost model: multiplication/addition/MAC counts, model-size
// accounting, and normalized energy / accelerator-throughput estimates for a
// network under a quantization plan.
//
// Counting rules (per layer, P = output positions, q = c_in*k*k):
//   standard conv          macs = P*c_out*q
//   depthwise conv         macs = P*c*k*k      (never strassenified)
//   ternary (TWN) layer    adds = the standard layer's mac count
//   strassenified conv     muls = P*h, adds = P*h*(q + c_spn)
//   hybrid conv            fp part as standard conv + strassen part as above
//   dense                  as conv with P=1; strassenified at a fixed ratio
//                          of its own output width
// Pooling, batchnorm, bias, and activation work is excluded throughout.
//
// Size rules: full-precision weights 16 bits; ternary entries 2 bits;
// folded channel-scale vectors (a_hat) 16 bits; one 16-bit scale per ternary
// matrix; one folded 16-bit batchnorm bias per normalized channel; dense bias
// 16 bits. TWN stores every parameter at 2 bits plus one scale per weight
// matrix.
//
// Energy: e_add = e_mul = 1, e_mac = 5, normalized by the FP16 baseline's
// MAC energy. Throughput: on a fixed silicon budget where a MAC unit costs
// twice an adder, the optimal split gives T = 2*baseline_macs / (2M + A)
// with M = macs + muls and A = adds.

#include <cstdint>
#include <string>
#include <vector>

#include "stnet/arch.hpp"

namespace stnet {

struct LayerCost {
    std::string name;
    std::uint64_t muls = 0, adds = 0, macs = 0;
    std::uint64_t size_bits = 0;
};

struct CostReport {
    std::uint64_t muls = 0, adds = 0, macs = 0;
    std::uint64_t model_size_bits = 0;
    std::uint64_t baseline_macs = 0;  // FP16 MACs of the same architecture
    std::vector<LayerCost> per_layer;

    double size_kb() const { return double(model_size_bits) / 8.0 / 1024.0; }
    double energy_normalized() const;
    double throughput_normalized() const;
};

LayerCost count_layer(const LayerSpec& layer, const QuantPlan& plan);
CostReport count_network(const ArchSpec& arch, QuantPlan plan);
std::uint64_t model_size_bits(const ArchSpec& arch, QuantPlan plan);

double energy_normalized(double muls, double adds, double macs, double baseline_macs);
double throughput_normalized(double muls, double adds, double macs,
                             double baseline_macs);

// One evaluated configuration, for tabular reports.
struct CostRow {
    std::string network;
    QuantPlan plan;
    CostReport report;
};

// Evaluate one plan per row, in input order.
std::vector<CostRow> table_report(const ArchSpec& arch,
                                  const std::vector<QuantPlan>& plans);

// The full published grid for an architecture: fp16, twn, four strassen
// widths, and the seven hybrid (alpha, rho) settings.
std::vector<QuantPlan> standard_table_plans();

// Comma-separated table, fixed column order:
// network,alpha,rho,muls,adds,macs,size_KB,energy,throughput
std::string cost_rows_csv(const std::vector<CostRow>& rows);

// Structured text (JSON): array of row objects mirroring the CSV columns,
// each with a per-layer breakdown.
std::string cost_rows_json(const std::vector<CostRow>& rows);

}  // namespace stnet
