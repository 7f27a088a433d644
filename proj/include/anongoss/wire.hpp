#pragma once

#include <cstdint>

namespace anongoss {

// First byte of every frame. Frame layouts are public knowledge in the
// threat model; confidentiality lives inside envelopes and ciphertexts.
enum class FrameType : std::uint8_t {
    ShuffleReq = 1,
    ShuffleRep = 2,
    Onion = 3,
    Reply = 4,
    Flood = 5,
    AggReq = 6,
    AggRep = 7,
};

inline constexpr std::uint8_t frame_byte(FrameType t) { return static_cast<std::uint8_t>(t); }

}  // namespace anongoss
