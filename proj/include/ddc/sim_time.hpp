#pragma once

#include <compare>
#include <cstdint>
#include <limits>
#include <string>

namespace ddc {

/// Simulated time in fixed-point microseconds with 0.001us resolution.
/// The raw unit is therefore one nanosecond.
class SimTime {
public:
    using rep = std::int64_t;

    constexpr SimTime() = default;

    static constexpr SimTime from_ns(rep ns) { return SimTime{ns}; }
    static constexpr SimTime from_us(rep us) { return SimTime{us * 1000}; }
    /// Rounds to the nearest nanosecond.
    static SimTime from_us_double(double us);
    static constexpr SimTime max() { return SimTime{std::numeric_limits<rep>::max()}; }

    [[nodiscard]] constexpr rep ns() const { return ns_; }
    [[nodiscard]] constexpr double us() const { return static_cast<double>(ns_) / 1000.0; }

    constexpr auto operator<=>(const SimTime&) const = default;

    constexpr SimTime operator+(SimTime o) const { return SimTime{ns_ + o.ns_}; }
    constexpr SimTime operator-(SimTime o) const { return SimTime{ns_ - o.ns_}; }
    constexpr SimTime& operator+=(SimTime o)
    {
        ns_ += o.ns_;
        return *this;
    }
    constexpr SimTime operator*(rep k) const { return SimTime{ns_ * k}; }
    constexpr SimTime operator/(rep k) const { return SimTime{ns_ / k}; }

    /// "32.500us"
    [[nodiscard]] std::string str() const;

private:
    constexpr explicit SimTime(rep ns) : ns_(ns) {}
    rep ns_ = 0;
};

namespace literals {
constexpr SimTime operator""_us(unsigned long long us) { return SimTime::from_us(static_cast<SimTime::rep>(us)); }
constexpr SimTime operator""_ns(unsigned long long ns) { return SimTime::from_ns(static_cast<SimTime::rep>(ns)); }
}  // namespace literals

}  // namespace ddc
