#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>

namespace ddc {

inline constexpr unsigned kAddressBits = 48;
inline constexpr unsigned kPidBits = 8;
inline constexpr unsigned kPageShift = 12;
inline constexpr std::uint64_t kPageSize = std::uint64_t{1} << kPageShift;
/// Bit position of the PID prefix: the top kPidBits of the 48-bit space.
inline constexpr unsigned kPidShift = kAddressBits - kPidBits;
inline constexpr std::uint64_t kMaxPageNumber = (std::uint64_t{1} << (kPidShift - kPageShift)) - 1;
inline constexpr std::uint32_t kMaxPid = (1u << kPidBits) - 1;

struct ProcessId {
    std::uint32_t value = 0;

    constexpr auto operator<=>(const ProcessId&) const = default;
    [[nodiscard]] std::string str() const { return "P" + std::to_string(value); }
};

/// A PID-prefixed virtual address:
/// (pid << kPidShift) | (page_number << kPageShift) | offset.
class VirtualAddress {
public:
    constexpr VirtualAddress() = default;

    /// Throws std::out_of_range when a field does not fit its bits.
    static VirtualAddress make(ProcessId pid, std::uint64_t page_number, std::uint64_t offset = 0);
    static constexpr VirtualAddress from_raw(std::uint64_t raw) { return VirtualAddress{raw}; }

    [[nodiscard]] constexpr std::uint64_t raw() const { return raw_; }
    [[nodiscard]] constexpr ProcessId pid() const { return ProcessId{static_cast<std::uint32_t>(raw_ >> kPidShift)}; }
    [[nodiscard]] constexpr std::uint64_t page_number() const
    {
        return (raw_ >> kPageShift) & kMaxPageNumber;
    }
    [[nodiscard]] constexpr std::uint64_t offset() const { return raw_ & (kPageSize - 1); }
    [[nodiscard]] constexpr VirtualAddress page_base() const { return VirtualAddress{raw_ & ~(kPageSize - 1)}; }
    [[nodiscard]] constexpr VirtualAddress operator+(std::uint64_t delta) const { return VirtualAddress{raw_ + delta}; }

    constexpr auto operator<=>(const VirtualAddress&) const = default;

    /// "P3:0x2a000"
    [[nodiscard]] std::string str() const;

private:
    constexpr explicit VirtualAddress(std::uint64_t raw) : raw_(raw) {}
    std::uint64_t raw_ = 0;
};

struct FrameId {
    std::uint32_t element = 0;
    std::uint32_t index = 0;

    constexpr auto operator<=>(const FrameId&) const = default;
    [[nodiscard]] std::string str() const { return "M" + std::to_string(element) + ":" + std::to_string(index); }
};

enum Perm : std::uint8_t {
    kPermNone = 0,
    kPermRead = 1,
    kPermWrite = 2,
    kPermRW = kPermRead | kPermWrite,
};

}  // namespace ddc

template <>
struct std::hash<ddc::ProcessId> {
    std::size_t operator()(ddc::ProcessId p) const noexcept { return std::hash<std::uint32_t>{}(p.value); }
};
template <>
struct std::hash<ddc::VirtualAddress> {
    std::size_t operator()(ddc::VirtualAddress v) const noexcept { return std::hash<std::uint64_t>{}(v.raw()); }
};
