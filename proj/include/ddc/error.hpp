#pragma once

#include <stdexcept>
#include <string>
#include <system_error>
#include <type_traits>
#include <utility>
#include <variant>

namespace ddc {

enum class Errc {
    ok = 0,
    // simulator
    unknown_target,
    halted,
    causality,
    // rack MMU
    unknown_process,
    out_of_frames,
    no_reachable_element,
    unmapped_address,
    permission_absent,
    unmapped_page,
    self_grant,
    dst_process_dead,
    not_in_group,
    page_steal_disallowed,
    element_unreachable,
    // compute OS
    process_not_running,
    unknown_member,
    no_group_registered,
    memory_fault,
    // cc-heap
    corrupt_arena,
    unknown_root,
    log_full,
    arena_full,
    root_map_full,
    name_too_long,
    tx_in_progress,
    // paxos
    not_in_configuration,
    preempted,
    no_majority,
    memory_also_failed,
    // shuffle
    invalid_graph,
    job_failed,
    // scenario
    config_invalid,
};

const std::error_category& ddc_category() noexcept;

inline std::error_code make_error_code(Errc e) noexcept
{
    return {static_cast<int>(e), ddc_category()};
}

/// Exception carrying an Errc; thrown by synchronous APIs.
class Error : public std::system_error {
public:
    explicit Error(Errc code) : std::system_error(make_error_code(code)) {}
    Error(Errc code, const std::string& what) : std::system_error(make_error_code(code), what) {}

    [[nodiscard]] Errc errc() const noexcept { return static_cast<Errc>(code().value()); }
};

/// Value-or-error return for queries whose failure is an expected outcome
/// (translation misses, root lookups) rather than a programming error.
template <typename T>
class Result {
public:
    Result(T value) : state_(std::move(value)) {}  // NOLINT(google-explicit-constructor)
    Result(Errc e) : state_(make_error_code(e)) {}  // NOLINT(google-explicit-constructor)
    Result(std::error_code ec) : state_(ec) {}      // NOLINT(google-explicit-constructor)

    [[nodiscard]] bool ok() const noexcept { return std::holds_alternative<T>(state_); }
    explicit operator bool() const noexcept { return ok(); }

    [[nodiscard]] std::error_code error() const noexcept
    {
        return ok() ? std::error_code{} : std::get<std::error_code>(state_);
    }

    [[nodiscard]] const T& value() const&
    {
        if (!ok()) throw std::system_error(std::get<std::error_code>(state_));
        return std::get<T>(state_);
    }
    [[nodiscard]] T&& value() &&
    {
        if (!ok()) throw std::system_error(std::get<std::error_code>(state_));
        return std::get<T>(std::move(state_));
    }
    const T& operator*() const& { return value(); }
    const T* operator->() const { return &value(); }

private:
    std::variant<T, std::error_code> state_;
};

}  // namespace ddc

template <>
struct std::is_error_code_enum<ddc::Errc> : std::true_type {};
