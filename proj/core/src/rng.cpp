#include "sanet/rng.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace sanet {

double Rng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(engine_());
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t r;
    do {
        r = engine_();
    } while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::string Rng::state() const {
    std::ostringstream os;
    os << seed_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
    os.precision(17);
    os << std::hexfloat << spare_ << std::defaultfloat << ' ' << engine_;
    return os.str();
}

void Rng::set_state(const std::string& text) {
    std::istringstream is(text);
    int spare_flag = 0;
    std::string spare_text;
    is >> seed_ >> spare_flag >> spare_text >> engine_;
    if (!is) throw std::invalid_argument("Rng::set_state: malformed state");
    has_spare_ = spare_flag != 0;
    spare_ = std::strtod(spare_text.c_str(), nullptr);
}

}  // namespace sanet
