#pragma once

// Versioned binary snapshots of a network plus the cursors a training run
// needs to resume at a phase boundary. Every multi-byte field is written
// little-endian regardless of host order; full-precision arrays are 32-bit
// floats, ternary matrices are 2-bit packed row-major with their scale.
//
// Round trips are bit-exact: save -> load -> save produces byte-identical
// files, and a loaded network's forward pass matches the saved one bitwise.

#include <cstdint>
#include <string>
#include <vector>

#include "stnet/network.hpp"

namespace stnet {

// Training-resume bookkeeping stored alongside the weights. phase_cursor and
// epoch_cursor name the next phase/epoch to run; together with the shuffle
// seed they pin the remaining trajectory exactly (each epoch derives its own
// generator from (seed, phase, epoch)).
struct CheckpointMeta {
    std::uint64_t seed = 0;
    std::uint32_t phase_cursor = 0;
    std::uint32_t epoch_cursor = 0;
    // Momentum buffers flattened in parameters() order; empty at phase
    // boundaries where the next phase starts its optimizer fresh.
    std::vector<std::vector<float>> optimizer_velocity;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Network<float>& net,
                     const CheckpointMeta& meta);

// Reconstructs the network (architecture, plan, phase, every tensor) and
// fills `meta` when non-null. Throws on bad magic, version mismatch,
// truncation, trailing bytes, or an invalid ternary code.
Network<float> load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

// Ternary matrices are stored with the 2-bit codes implemented by
// pack_ternary/unpack_ternary (ternary.hpp): 00 -> 0, 01 -> +1, 10 -> -1,
// four entries per byte, low bits first; the reserved code 11 is rejected.

}  // namespace stnet
