#include "stnet/cost.hpp"

#include <cinttypes>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

namespace stnet {

namespace {

constexpr std::uint64_t kFpBits = 16;
constexpr std::uint64_t kTernaryBits = 2;
constexpr std::uint64_t kFoldedScaleBits = 16;  // a_hat entries
constexpr std::uint64_t kMatrixScaleBits = 16;  // one per ternary matrix

std::uint64_t u64(std::int64_t v) { return static_cast<std::uint64_t>(v); }

}  // namespace

LayerCost count_layer(const LayerSpec& layer, const QuantPlan& plan) {
    LayerCost c;
    c.name = layer.name;
    if (layer.kind == LayerKind::GlobalPool) return c;

    const std::uint64_t P = u64(layer.positions());
    const std::uint64_t q = u64(layer.patch());
    const std::uint64_t dense_macs = P * u64(layer.c_out) * q;
    const std::uint64_t bn_params = layer.batch_norm ? u64(layer.c_out) : 0;

    switch (plan.mode) {
        case QuantMode::FP16: {
            c.macs = dense_macs;
            std::uint64_t params = u64(layer.c_out) * q + bn_params;
            if (layer.kind == LayerKind::Dense) params += u64(layer.c_out);  // bias
            c.size_bits = params * kFpBits;
            return c;
        }
        case QuantMode::TWN: {
            c.adds = dense_macs;
            std::uint64_t params = u64(layer.c_out) * q + bn_params;
            if (layer.kind == LayerKind::Dense) params += u64(layer.c_out);
            c.size_bits = params * kTernaryBits + kMatrixScaleBits;
            return c;
        }
        case QuantMode::STRASSEN:
        case QuantMode::HYBRID: {
            const LayerSplit s = plan_split(plan, layer);
            if (s.c_spn == 0) {
                // Layer stays full precision under this plan (depthwise, or a
                // hybrid split that rounds to all-fp).
                c.macs = dense_macs;
                c.size_bits = (u64(layer.c_out) * q + bn_params) * kFpBits;
                if (layer.kind == LayerKind::Dense)
                    c.size_bits += u64(layer.c_out) * kFpBits;
                return c;
            }
            const std::uint64_t h = u64(s.h);
            c.macs = P * u64(s.c_fp) * q;
            c.muls = P * h;
            c.adds = P * h * (q + u64(s.c_spn));
            c.size_bits = u64(s.c_fp) * q * kFpBits            // fp branch
                          + h * q * kTernaryBits               // Wb
                          + u64(s.c_spn) * h * kTernaryBits    // Wc
                          + h * kFoldedScaleBits               // a_hat
                          + 2 * kMatrixScaleBits               // Wb/Wc scales
                          + bn_params * kFpBits;
            if (layer.kind == LayerKind::Dense) c.size_bits += u64(layer.c_out) * kFpBits;
            return c;
        }
    }
    throw std::logic_error("count_layer: unhandled mode");
}

CostReport count_network(const ArchSpec& arch, QuantPlan plan) {
    plan.canonicalize();
    CostReport r;
    for (const LayerSpec& l : arch.layers) {
        LayerCost c = count_layer(l, plan);
        r.muls += c.muls;
        r.adds += c.adds;
        r.macs += c.macs;
        r.model_size_bits += c.size_bits;
        r.per_layer.push_back(std::move(c));
    }
    if (plan.mode == QuantMode::FP16) {
        r.baseline_macs = r.macs;
    } else {
        QuantPlan base;
        base.mode = QuantMode::FP16;
        for (const LayerSpec& l : arch.layers) r.baseline_macs += count_layer(l, base).macs;
    }
    return r;
}

std::uint64_t model_size_bits(const ArchSpec& arch, QuantPlan plan) {
    return count_network(arch, std::move(plan)).model_size_bits;
}

double energy_normalized(double muls, double adds, double macs, double baseline_macs) {
    check(baseline_macs > 0, "energy_normalized: baseline must be positive");
    return (muls + adds + 5.0 * macs) / (5.0 * baseline_macs);
}

double throughput_normalized(double muls, double adds, double macs,
                             double baseline_macs) {
    check(baseline_macs > 0, "throughput_normalized: baseline must be positive");
    const double M = macs + muls;
    check(M > 0 || adds > 0, "throughput_normalized: empty workload");
    return 2.0 * baseline_macs / (2.0 * M + adds);
}

double CostReport::energy_normalized() const {
    return stnet::energy_normalized(double(muls), double(adds), double(macs),
                                    double(baseline_macs));
}

double CostReport::throughput_normalized() const {
    return stnet::throughput_normalized(double(muls), double(adds), double(macs),
                                        double(baseline_macs));
}

std::vector<CostRow> table_report(const ArchSpec& arch,
                                  const std::vector<QuantPlan>& plans) {
    std::vector<CostRow> rows;
    rows.reserve(plans.size());
    for (QuantPlan p : plans) {
        p.canonicalize();
        CostRow row;
        row.network = arch.name;
        row.plan = p;
        row.report = count_network(arch, p);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<QuantPlan> standard_table_plans() {
    std::vector<QuantPlan> plans;
    QuantPlan p;
    p.mode = QuantMode::FP16;
    plans.push_back(p);
    p.mode = QuantMode::TWN;
    plans.push_back(p);
    for (double rho : {0.5, 0.75, 1.0, 2.0}) {
        QuantPlan st;
        st.mode = QuantMode::STRASSEN;
        st.rho = rho;
        plans.push_back(st);
    }
    const std::pair<double, std::vector<double>> grid[] = {
        {0.25, {1.0, 1.33, 2.0}}, {0.375, {1.0, 1.6, 2.0}}, {0.5, {1.0, 2.0}}};
    for (const auto& [alpha, rhos] : grid)
        for (double rho : rhos) {
            QuantPlan hy;
            hy.mode = QuantMode::HYBRID;
            hy.alpha = alpha;
            hy.rho = rho;
            plans.push_back(hy);
        }
    return plans;
}

namespace {

std::string row_label(const CostRow& row) {
    return row.network + ":" + quant_mode_name(row.plan.mode);
}

}  // namespace

std::string cost_rows_csv(const std::vector<CostRow>& rows) {
    std::string out = "network,alpha,rho,muls,adds,macs,size_KB,energy,throughput\n";
    char buf[256];
    for (const CostRow& r : rows) {
        std::snprintf(buf, sizeof buf,
                      "%s,%.4g,%.4g,%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%.2f,%.4f,%.4f\n",
                      row_label(r).c_str(), r.plan.alpha, r.plan.rho, r.report.muls,
                      r.report.adds, r.report.macs, r.report.size_kb(),
                      r.report.energy_normalized(), r.report.throughput_normalized());
        out += buf;
    }
    return out;
}

std::string cost_rows_json(const std::vector<CostRow>& rows) {
    nlohmann::json arr = nlohmann::json::array();
    for (const CostRow& r : rows) {
        nlohmann::json layers = nlohmann::json::array();
        for (const LayerCost& l : r.report.per_layer)
            layers.push_back({{"name", l.name},
                              {"muls", l.muls},
                              {"adds", l.adds},
                              {"macs", l.macs},
                              {"size_bits", l.size_bits}});
        arr.push_back({{"network", r.network},
                       {"mode", quant_mode_name(r.plan.mode)},
                       {"alpha", r.plan.alpha},
                       {"rho", r.plan.rho},
                       {"muls", r.report.muls},
                       {"adds", r.report.adds},
                       {"macs", r.report.macs},
                       {"size_KB", r.report.size_kb()},
                       {"energy", r.report.energy_normalized()},
                       {"throughput", r.report.throughput_normalized()},
                       {"per_layer", std::move(layers)}});
    }
    return nlohmann::json{{"rows", std::move(arr)}}.dump(2) + "\n";
}

}  // namespace stnet
