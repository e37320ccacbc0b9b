// Round-trip and corruption tests for the versioned binary checkpoint format.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "stnet/arch.hpp"
#include "stnet/checkpoint.hpp"
#include "stnet/network.hpp"

using namespace stnet;

namespace {

std::string tmp_path(const std::string& tag) {
    return "/tmp/stnet_ckpt_" + tag + ".bin";
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(bool(f));
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), std::streamsize(bytes.size()));
}

Network<float> make_net(QuantMode mode, double alpha, double rho,
                        std::uint64_t seed) {
    QuantPlan plan;
    plan.mode = mode;
    plan.alpha = alpha;
    plan.rho = rho;
    return Network<float>::instantiate(build_tinynet(10), plan, seed);
}

Tensor<float> random_input(std::uint64_t seed, std::size_t batch = 2) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g(0.f, 1.f);
    Tensor<float> x({batch, 3, 32, 32});
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    return x;
}

bool forward_bitwise_equal(Network<float>& a, Network<float>& b) {
    Tensor<float> x = random_input(99);
    Tensor<float> ya = a.forward(x, /*training=*/false);
    Tensor<float> yb = b.forward(x, /*training=*/false);
    if (ya.size() != yb.size()) return false;
    for (std::size_t i = 0; i < ya.size(); ++i)
        if (ya.data()[i] != yb.data()[i]) return false;
    return true;
}

// Drives a network into the requested phase, running a forward pass in
// between so batchnorm running stats are not all-zero.
void advance_to(Network<float>& net, QuantPhase target) {
    Tensor<float> x = random_input(7);
    net.forward(x, /*training=*/true);
    if (target == QuantPhase::FULL_PRECISION) return;
    net.set_phase(QuantPhase::QUANT_ACTIVE);
    net.forward(x, /*training=*/true);
    if (target == QuantPhase::QUANT_ACTIVE) return;
    net.set_phase(QuantPhase::FROZEN_TERNARY);
}

void roundtrip_case(const char* tag, QuantMode mode, double alpha, double rho,
                    QuantPhase phase) {
    CAPTURE(tag);
    Network<float> net = make_net(mode, alpha, rho, 0x1234);
    advance_to(net, phase);

    CheckpointMeta meta;
    meta.seed = 42;
    meta.phase_cursor = std::uint32_t(phase);
    meta.epoch_cursor = 3;
    meta.optimizer_velocity = {{0.5f, -0.25f}, {}, {1.f, 2.f, 3.f}};

    const std::string p1 = tmp_path(std::string(tag) + "_1");
    const std::string p2 = tmp_path(std::string(tag) + "_2");
    save_checkpoint(p1, net, meta);

    CheckpointMeta got;
    Network<float> loaded = load_checkpoint(p1, &got);

    CHECK(got.seed == meta.seed);
    CHECK(got.phase_cursor == meta.phase_cursor);
    CHECK(got.epoch_cursor == meta.epoch_cursor);
    CHECK(got.optimizer_velocity == meta.optimizer_velocity);
    CHECK(loaded.phase == net.phase);
    CHECK(loaded.layers.size() == net.layers.size());

    // Save the loaded network again: the two files must be byte-identical.
    save_checkpoint(p2, loaded, got);
    CHECK(slurp(p1) == slurp(p2));

    CHECK(forward_bitwise_equal(net, loaded));

    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

}  // namespace

TEST_CASE("ternary packing round-trips and maps codes as documented") {
    const std::vector<std::int8_t> entries = {0, 1, -1, 1, -1, 0, 0, 1, -1};
    const std::vector<std::uint8_t> bytes = pack_ternary(entries);
    CHECK(bytes.size() == 3);  // ceil(9/4)
    // First byte holds entries 0..3, low bits first: 00 | 01<<2 | 10<<4 | 01<<6.
    CHECK(bytes[0] == std::uint8_t(0b01'10'01'00));
    CHECK(bytes[1] == std::uint8_t(0b01'00'00'10));
    CHECK(bytes[2] == std::uint8_t(0b00'00'00'10));
    CHECK(unpack_ternary(bytes, entries.size()) == entries);

    // Empty and exact-multiple lengths.
    CHECK(pack_ternary({}).empty());
    const std::vector<std::int8_t> four = {1, 1, -1, 0};
    CHECK(pack_ternary(four).size() == 1);
    CHECK(unpack_ternary(pack_ternary(four), 4) == four);

    CHECK_THROWS_AS(pack_ternary({0, 2}), std::invalid_argument);
    CHECK_THROWS_AS(pack_ternary({-2}), std::invalid_argument);
    CHECK_THROWS_AS(unpack_ternary(bytes, 5), std::invalid_argument);
}

TEST_CASE("the reserved ternary code 11 is rejected on read") {
    CHECK_THROWS_WITH_AS(unpack_ternary({0b00'00'00'11}, 4),
                         doctest::Contains("invalid code"),
                         std::runtime_error);
    // Nonzero padding bits beyond the entry count are also rejected.
    CHECK_THROWS_WITH_AS(unpack_ternary({0b01'00'00'00}, 3),
                         doctest::Contains("padding"), std::runtime_error);
}

TEST_CASE("checkpoint round-trip is byte- and forward-identical in every mode and phase") {
    roundtrip_case("fp16_fp", QuantMode::FP16, 1.0, 1.0, QuantPhase::FULL_PRECISION);
    roundtrip_case("twn_fp", QuantMode::TWN, 1.0, 1.0, QuantPhase::FULL_PRECISION);
    roundtrip_case("twn_qa", QuantMode::TWN, 1.0, 1.0, QuantPhase::QUANT_ACTIVE);
    roundtrip_case("twn_fz", QuantMode::TWN, 1.0, 1.0, QuantPhase::FROZEN_TERNARY);
    roundtrip_case("st_qa", QuantMode::STRASSEN, 1.0, 1.0, QuantPhase::QUANT_ACTIVE);
    roundtrip_case("st_fz", QuantMode::STRASSEN, 1.0, 1.0, QuantPhase::FROZEN_TERNARY);
    roundtrip_case("hy_qa", QuantMode::HYBRID, 0.5, 1.0, QuantPhase::QUANT_ACTIVE);
    roundtrip_case("hy_fz", QuantMode::HYBRID, 0.5, 1.0, QuantPhase::FROZEN_TERNARY);
}

TEST_CASE("loaded frozen networks expose the same trainable set as frozen originals") {
    Network<float> net = make_net(QuantMode::HYBRID, 0.5, 1.0, 5);
    advance_to(net, QuantPhase::FROZEN_TERNARY);
    const std::string p = tmp_path("trainable");
    save_checkpoint(p, net, {});
    Network<float> loaded = load_checkpoint(p);
    auto a = net.parameters();
    auto b = loaded.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(a[i].decay == b[i].decay);
        CHECK(a[i].tensor.size() == b[i].tensor.size());
    }
    std::remove(p.c_str());
}

TEST_CASE("corrupted checkpoints are rejected with specific errors") {
    Network<float> net = make_net(QuantMode::TWN, 1.0, 1.0, 11);
    advance_to(net, QuantPhase::FROZEN_TERNARY);
    const std::string p = tmp_path("corrupt");
    save_checkpoint(p, net, {});
    const std::string good = slurp(p);

    SUBCASE("bad magic") {
        std::string bad = good;
        bad[0] = 'X';
        spit(p, bad);
        CHECK_THROWS_WITH_AS(load_checkpoint(p),
                             doctest::Contains("not a checkpoint"),
                             std::runtime_error);
    }
    SUBCASE("version mismatch") {
        std::string bad = good;
        bad[8] = char(kCheckpointVersion + 1);
        spit(p, bad);
        CHECK_THROWS_WITH_AS(load_checkpoint(p),
                             doctest::Contains("version mismatch"),
                             std::runtime_error);
    }
    SUBCASE("truncation at every structural boundary") {
        for (std::size_t keep :
             {std::size_t(4), std::size_t(10), good.size() / 2, good.size() - 1}) {
            spit(p, good.substr(0, keep));
            CHECK_THROWS_AS(load_checkpoint(p), std::runtime_error);
        }
    }
    SUBCASE("trailing bytes") {
        spit(p, good + std::string(3, '\0'));
        CHECK_THROWS_WITH_AS(load_checkpoint(p), doctest::Contains("trailing"),
                             std::runtime_error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_WITH_AS(load_checkpoint("/tmp/stnet_ckpt_does_not_exist.bin"),
                             doctest::Contains("cannot open"), std::runtime_error);
    }
    std::remove(p.c_str());
}

TEST_CASE("frozen ternary payloads survive the round trip exactly") {
    Network<float> net = make_net(QuantMode::TWN, 1.0, 1.0, 3);
    advance_to(net, QuantPhase::FROZEN_TERNARY);
    const std::string p = tmp_path("frozen_exact");
    save_checkpoint(p, net, {});
    Network<float> loaded = load_checkpoint(p);
    REQUIRE(loaded.layers.size() == net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& a = net.layers[i];
        const auto& b = loaded.layers[i];
        CHECK(a.weight_t.entries == b.weight_t.entries);
        CHECK(a.weight_t.scale == b.weight_t.scale);
        CHECK(a.weight_t.degenerate == b.weight_t.degenerate);
        if (a.weight_frozen.defined()) {
            REQUIRE(b.weight_frozen.defined());
            CHECK(a.weight_frozen.vec() == b.weight_frozen.vec());
            CHECK_FALSE(b.weight.requires_grad());
        }
    }
    std::remove(p.c_str());
}

TEST_CASE("meta defaults and empty velocity lists round-trip") {
    Network<float> net = make_net(QuantMode::FP16, 1.0, 1.0, 21);
    const std::string p = tmp_path("meta");
    save_checkpoint(p, net, {});
    CheckpointMeta got;
    got.seed = 777;  // must be overwritten
    load_checkpoint(p, &got);
    CHECK(got.seed == 0);
    CHECK(got.phase_cursor == 0);
    CHECK(got.epoch_cursor == 0);
    CHECK(got.optimizer_velocity.empty());
    std::remove(p.c_str());
}
