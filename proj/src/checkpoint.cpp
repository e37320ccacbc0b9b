#include "stnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace stnet {

namespace {

constexpr char kMagic[8] = {'S', 'T', 'N', 'E', 'T', 'C', 'K', 'P'};

// ---- little-endian primitives -------------------------------------------

void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}

void put_u8(std::string& out, std::uint8_t v) { out.push_back(char(v)); }

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_i32(std::string& out, std::int32_t v) { put_u32(out, std::uint32_t(v)); }

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

void put_str(std::string& out, const std::string& s) {
    put_u64(out, s.size());
    out.append(s);
}

struct Reader {
    const std::uint8_t* p;
    std::size_t left;

    void need(std::size_t n) const {
        if (left < n) throw std::runtime_error("checkpoint: truncated file");
    }
    void take(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, p, n);
        p += n;
        left -= n;
    }
    std::uint8_t u8() {
        need(1);
        std::uint8_t v = *p++;
        --left;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
        p += 4;
        left -= 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
        p += 8;
        left -= 8;
        return v;
    }
    std::int32_t i32() { return std::int32_t(u32()); }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        left -= n;
        return s;
    }
};

// ---- composite payloads ---------------------------------------------------

void put_tensor(std::string& out, const Tensor<float>& t) {
    put_u32(out, std::uint32_t(t.ndim()));
    for (std::size_t d = 0; d < t.ndim(); ++d) put_u64(out, t.dim(d));
    for (std::size_t i = 0; i < t.size(); ++i) put_f32(out, t.data()[i]);
}

// Copies payload data into an already-shaped destination tensor so grad
// bookkeeping set up by instantiation survives the load.
void read_tensor_into(Reader& r, Tensor<float>& dst, const char* what) {
    const std::uint32_t nd = r.u32();
    if (nd != dst.ndim())
        throw std::runtime_error(std::string("checkpoint: rank mismatch for ") + what);
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < nd; ++d) {
        const std::uint64_t dim = r.u64();
        if (dim != dst.dim(d))
            throw std::runtime_error(std::string("checkpoint: shape mismatch for ") +
                                     what);
        n *= dim;
    }
    for (std::size_t i = 0; i < n; ++i) dst.data()[i] = r.f32();
}

Tensor<float> read_tensor(Reader& r, bool requires_grad) {
    const std::uint32_t nd = r.u32();
    std::vector<std::size_t> shape(nd);
    for (std::uint32_t d = 0; d < nd; ++d) shape[d] = r.u64();
    Tensor<float> t(shape, requires_grad);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = r.f32();
    return t;
}

void put_ternary(std::string& out, const TernaryMatrix& m) {
    put_u32(out, std::uint32_t(m.rows));
    put_u32(out, std::uint32_t(m.cols));
    put_f64(out, m.scale);
    put_u8(out, m.degenerate ? 1 : 0);
    const auto packed = pack_ternary(m.entries);
    put_bytes(out, packed.data(), packed.size());
}

TernaryMatrix read_ternary(Reader& r) {
    TernaryMatrix m;
    m.rows = int(r.u32());
    m.cols = int(r.u32());
    m.scale = r.f64();
    m.degenerate = r.u8() != 0;
    const std::size_t count = std::size_t(m.rows) * std::size_t(m.cols);
    const std::size_t nbytes = (count + 3) / 4;
    std::vector<std::uint8_t> bytes(nbytes);
    r.take(bytes.data(), nbytes);
    m.entries = unpack_ternary(bytes, count);
    return m;
}

enum LayerFlags : std::uint32_t {
    kHasWeight = 1u << 0,
    kHasBias = 1u << 1,
    kHasBn = 1u << 2,
    kHasWeightT = 1u << 3,
    kHasSpn = 1u << 4,
    kHasSpnFrozen = 1u << 5,
};

}  // namespace

void save_checkpoint(const std::string& path, const Network<float>& net,
                     const CheckpointMeta& meta) {
    std::string out;
    put_bytes(out, kMagic, 8);
    put_u32(out, kCheckpointVersion);

    // Architecture.
    put_str(out, net.arch.name);
    put_i32(out, net.arch.input_c);
    put_i32(out, net.arch.input_h);
    put_i32(out, net.arch.input_w);
    put_i32(out, net.arch.num_classes);
    put_u64(out, net.arch.layers.size());
    for (const LayerSpec& l : net.arch.layers) {
        put_str(out, l.name);
        put_u32(out, std::uint32_t(l.kind));
        put_i32(out, l.c_in);
        put_i32(out, l.c_out);
        put_i32(out, l.ksize);
        put_i32(out, l.stride);
        put_i32(out, l.pad);
        put_i32(out, l.in_h);
        put_i32(out, l.in_w);
        put_i32(out, l.out_h);
        put_i32(out, l.out_w);
        put_u8(out, l.batch_norm ? 1 : 0);
    }

    // Plan and phase.
    put_u32(out, std::uint32_t(net.plan.mode));
    put_f64(out, net.plan.alpha);
    put_f64(out, net.plan.rho);
    put_f64(out, net.plan.fc_hidden_rho);
    put_f64(out, net.plan.threshold_factor);
    put_u32(out, std::uint32_t(net.phase));

    // Layer tensors.
    put_u64(out, net.layers.size());
    for (const NetLayer<float>& l : net.layers) {
        std::uint32_t flags = 0;
        if (l.weight.defined()) flags |= kHasWeight;
        if (l.bias.defined()) flags |= kHasBias;
        if (l.gamma.defined()) flags |= kHasBn;
        if (!l.weight_t.entries.empty()) flags |= kHasWeightT;
        if (l.has_spn) flags |= kHasSpn;
        if (l.has_spn && l.spn.a_hat.defined()) flags |= kHasSpnFrozen;
        put_u32(out, flags);
        if (flags & kHasWeight) put_tensor(out, l.weight);
        if (flags & kHasBias) put_tensor(out, l.bias);
        if (flags & kHasBn) {
            put_tensor(out, l.gamma);
            put_tensor(out, l.beta);
            put_tensor(out, l.bn.running_mean);
            put_tensor(out, l.bn.running_var);
        }
        if (flags & kHasWeightT) put_ternary(out, l.weight_t);
        if (flags & kHasSpn) {
            put_tensor(out, l.spn.masters);
            put_tensor(out, l.spn.Wa);
            put_tensor(out, l.spn.Wb);
            put_tensor(out, l.spn.Wc);
        }
        if (flags & kHasSpnFrozen) {
            put_ternary(out, l.spn.Wb_t);
            put_ternary(out, l.spn.Wc_t);
            put_tensor(out, l.spn.a_hat);
        }
    }

    // Resume bookkeeping.
    put_u64(out, meta.seed);
    put_u32(out, meta.phase_cursor);
    put_u32(out, meta.epoch_cursor);
    put_u64(out, meta.optimizer_velocity.size());
    for (const auto& v : meta.optimizer_velocity) {
        put_u64(out, v.size());
        for (float x : v) put_f32(out, x);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for write");
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw std::runtime_error("checkpoint: short write to " + path);
}

Network<float> load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    Reader r{reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size()};

    char magic[8];
    r.take(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: not a checkpoint file");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: version mismatch (file has " +
                                 std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion) + ")");

    ArchSpec arch;
    arch.name = r.str();
    arch.input_c = r.i32();
    arch.input_h = r.i32();
    arch.input_w = r.i32();
    arch.num_classes = r.i32();
    const std::uint64_t n_layers = r.u64();
    arch.layers.resize(n_layers);
    for (auto& l : arch.layers) {
        l.name = r.str();
        l.kind = LayerKind(r.u32());
        l.c_in = r.i32();
        l.c_out = r.i32();
        l.ksize = r.i32();
        l.stride = r.i32();
        l.pad = r.i32();
        l.in_h = r.i32();
        l.in_w = r.i32();
        l.out_h = r.i32();
        l.out_w = r.i32();
        l.batch_norm = r.u8() != 0;
    }

    QuantPlan plan;
    plan.mode = QuantMode(r.u32());
    plan.alpha = r.f64();
    plan.rho = r.f64();
    plan.fc_hidden_rho = r.f64();
    plan.threshold_factor = r.f64();
    const QuantPhase phase = QuantPhase(r.u32());

    Network<float> net = Network<float>::instantiate(arch, plan, 0);

    const std::uint64_t n_payload = r.u64();
    if (n_payload != net.layers.size())
        throw std::runtime_error("checkpoint: layer count mismatch");
    net.phase = phase;
    for (NetLayer<float>& l : net.layers) {
        l.phase = phase;
        const std::uint32_t flags = r.u32();
        if (bool(flags & kHasWeight) != l.weight.defined() ||
            bool(flags & kHasBias) != l.bias.defined() ||
            bool(flags & kHasBn) != l.gamma.defined() ||
            bool(flags & kHasSpn) != l.has_spn)
            throw std::runtime_error("checkpoint: layer structure mismatch at " +
                                     l.spec.name);
        if (flags & kHasWeight) read_tensor_into(r, l.weight, "weight");
        if (flags & kHasBias) read_tensor_into(r, l.bias, "bias");
        if (flags & kHasBn) {
            read_tensor_into(r, l.gamma, "gamma");
            read_tensor_into(r, l.beta, "beta");
            read_tensor_into(r, l.bn.running_mean, "running mean");
            read_tensor_into(r, l.bn.running_var, "running variance");
        }
        if (flags & kHasWeightT) {
            l.weight_t = read_ternary(r);
            if (std::size_t(l.weight_t.rows) * std::size_t(l.weight_t.cols) !=
                l.weight.size())
                throw std::runtime_error(
                    "checkpoint: ternary weight size mismatch at " + l.spec.name);
            // Rematerialize the frozen forward weights exactly as the phase
            // transition does.
            l.weight_frozen = Tensor<float>(l.weight.shape());
            for (std::size_t i = 0; i < l.weight_frozen.size(); ++i)
                l.weight_frozen.data()[i] = static_cast<float>(l.weight_t.scale) *
                                            static_cast<float>(l.weight_t.entries[i]);
            l.weight.set_requires_grad(false);
        }
        if (flags & kHasSpn) {
            read_tensor_into(r, l.spn.masters, "spn masters");
            read_tensor_into(r, l.spn.Wa, "spn Wa");
            read_tensor_into(r, l.spn.Wb, "spn Wb");
            read_tensor_into(r, l.spn.Wc, "spn Wc");
            l.spn.phase = phase;
        }
        if (flags & kHasSpnFrozen) {
            if (!l.has_spn)
                throw std::runtime_error("checkpoint: frozen unit without a unit at " +
                                         l.spec.name);
            l.spn.Wb_t = read_ternary(r);
            l.spn.Wc_t = read_ternary(r);
            l.spn.a_hat = read_tensor(r, true);
            if (l.spn.a_hat.ndim() != 1 || l.spn.a_hat.dim(0) != std::size_t(l.spn.h))
                throw std::runtime_error("checkpoint: channel-scale size mismatch at " +
                                         l.spec.name);
            if (l.spn.Wb_t.entries.size() != l.spn.Wb.size() ||
                l.spn.Wc_t.entries.size() != l.spn.Wc.size())
                throw std::runtime_error(
                    "checkpoint: frozen ternary size mismatch at " + l.spec.name);
            l.spn.Wb_frozen = Tensor<float>(
                {(std::size_t)l.spn.h, (std::size_t)l.spn.c_in, (std::size_t)l.spn.ksize,
                 (std::size_t)l.spn.ksize});
            for (std::size_t i = 0; i < l.spn.Wb_frozen.size(); ++i)
                l.spn.Wb_frozen.data()[i] = float(l.spn.Wb_t.entries[i]);
            l.spn.Wc_frozen =
                Tensor<float>({(std::size_t)l.spn.c_out, (std::size_t)l.spn.h, 1u, 1u});
            for (std::size_t i = 0; i < l.spn.Wc_frozen.size(); ++i)
                l.spn.Wc_frozen.data()[i] = float(l.spn.Wc_t.entries[i]);
            l.spn.masters.set_requires_grad(false);
            l.spn.Wa.set_requires_grad(false);
            l.spn.Wb.set_requires_grad(false);
            l.spn.Wc.set_requires_grad(false);
        }
    }

    CheckpointMeta m;
    m.seed = r.u64();
    m.phase_cursor = r.u32();
    m.epoch_cursor = r.u32();
    const std::uint64_t n_vel = r.u64();
    m.optimizer_velocity.resize(n_vel);
    for (auto& v : m.optimizer_velocity) {
        v.resize(r.u64());
        for (float& x : v) x = r.f32();
    }
    if (r.left != 0) throw std::runtime_error("checkpoint: trailing bytes");
    if (meta) *meta = std::move(m);
    return net;
}

}  // namespace stnet
