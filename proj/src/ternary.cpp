#include "stnet/ternary.hpp"

#include <stdexcept>

namespace stnet {

std::vector<std::uint8_t> pack_ternary(const std::vector<std::int8_t>& t) {
    std::vector<std::uint8_t> bytes((t.size() + 3) / 4, 0);
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint8_t code;
        switch (t[i]) {
            case 0: code = 0b00; break;
            case 1: code = 0b01; break;
            case -1: code = 0b10; break;
            default: throw std::invalid_argument("pack_ternary: entry outside {-1,0,+1}");
        }
        bytes[i / 4] |= static_cast<std::uint8_t>(code << (2 * (i % 4)));
    }
    return bytes;
}

std::vector<std::int8_t> unpack_ternary(const std::vector<std::uint8_t>& bytes,
                                        std::size_t count) {
    check(bytes.size() == (count + 3) / 4, "unpack_ternary: byte count mismatch");
    std::vector<std::int8_t> t(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint8_t code = (bytes[i / 4] >> (2 * (i % 4))) & 0b11u;
        switch (code) {
            case 0b00: t[i] = 0; break;
            case 0b01: t[i] = 1; break;
            case 0b10: t[i] = -1; break;
            default: throw std::runtime_error("unpack_ternary: invalid code 11");
        }
    }
    if (count % 4 != 0 && !bytes.empty()) {
        const std::uint8_t tail = static_cast<std::uint8_t>(bytes.back() >> (2 * (count % 4)));
        if (tail != 0) throw std::runtime_error("unpack_ternary: nonzero padding bits");
    }
    return t;
}

}  // namespace stnet
