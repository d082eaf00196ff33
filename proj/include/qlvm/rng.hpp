#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace qlvm {

// Deterministic random stream used everywhere a seed appears in the API.
// Wraps mt19937_64 with explicit uniform/normal draws so that sequences do
// not depend on the standard library's distribution implementations, and so
// the full state (including the Box-Muller spare) can be checkpointed.
class RandomStream {
public:
    RandomStream() : RandomStream(0) {}
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    // Uniform on [0, 1): 53 random mantissa bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller, one spare cached.
    double normal();

    // Integer in [0, n), rejection-free enough for shuffles at desk scale.
    std::uint64_t below(std::uint64_t n) { return engine_() % n; }

    std::uint64_t raw() { return engine_(); }

    // State round-trips through a single text line.
    std::string serialize() const;
    static RandomStream deserialize(const std::string& text);

    bool operator==(const RandomStream& other) const {
        return engine_ == other.engine_ && has_spare_ == other.has_spare_ &&
               (!has_spare_ || spare_ == other.spare_);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Derives independent sub-stream seeds from one run seed (splitmix64 step).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream_tag);

}  // namespace qlvm
