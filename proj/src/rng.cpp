#include "qlvm/rng.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace qlvm {

double RandomStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller on (0,1] x [0,1) to keep log() finite.
    double u1 = 1.0 - uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * 3.14159265358979323846 * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::string RandomStream::serialize() const {
    std::ostringstream out;
    out << engine_ << ' ' << (has_spare_ ? 1 : 0);
    if (has_spare_) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%a", spare_);
        out << ' ' << buf;
    }
    return out.str();
}

RandomStream RandomStream::deserialize(const std::string& text) {
    RandomStream rs;
    std::istringstream in(text);
    in >> rs.engine_;
    int flag = 0;
    in >> flag;
    if (in.fail()) throw std::invalid_argument("malformed rng state");
    rs.has_spare_ = flag != 0;
    if (rs.has_spare_) {
        std::string hex;
        in >> hex;
        rs.spare_ = std::strtod(hex.c_str(), nullptr);
    }
    return rs;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream_tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream_tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace qlvm
