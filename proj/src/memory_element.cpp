#include "ddc/memory_element.hpp"

#include "ddc/error.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace ddc {

std::string_view to_string(FaultKind kind)
{
    switch (kind) {
    case FaultKind::NoEntry: return "no-entry";
    case FaultKind::Permission: return "permission";
    case FaultKind::ElementError: return "element-error";
    case FaultKind::Timeout: return "timeout";
    }
    return "?";
}

VirtualAddress VirtualAddress::make(ProcessId pid, std::uint64_t page_number, std::uint64_t offset)
{
    if (pid.value > kMaxPid) throw std::out_of_range("pid does not fit the reserved address bits");
    if (page_number > kMaxPageNumber) throw std::out_of_range("page number out of range");
    if (offset >= kPageSize) throw std::out_of_range("offset beyond page");
    return VirtualAddress{(std::uint64_t{pid.value} << kPidShift) | (page_number << kPageShift) | offset};
}

std::string VirtualAddress::str() const
{
    char buf[48];
    std::snprintf(buf, sizeof buf, "P%u:0x%llx", pid().value,
                  static_cast<unsigned long long>(raw_ & ((std::uint64_t{1} << kPidShift) - 1)));
    return buf;
}

MemoryElement::MemoryElement(Simulator& sim, std::uint32_t id, std::string name, std::size_t frames,
                             FailureMode mode)
    : sim_(sim), id_(id), name_(std::move(name)), mode_(mode),
      frames_(frames, std::vector<std::byte>(kPageSize, std::byte{0}))
{
    actor_ = sim_.add_actor(name_, [this] { return !failed() || mode_ == FailureMode::Explicit; });
}

std::span<const std::byte> MemoryElement::frame(std::uint32_t index) const
{
    return frames_.at(index);
}

std::optional<AccessResult> MemoryElement::serve(ProcessId pid, VirtualAddress vaddr, AccessOp op,
                                                 std::span<const std::byte> write_data, std::size_t read_len,
                                                 std::string_view requester)
{
    const std::size_t len = op == AccessOp::Write ? write_data.size() : read_len;
    if (vaddr.offset() + len > kPageSize) throw std::invalid_argument("access crosses a page boundary");

    nlohmann::json rec{{"pid", pid.value},
                       {"vaddr", vaddr.raw()},
                       {"op", op == AccessOp::Read ? "read" : "write"},
                       {"len", len},
                       {"requester", requester}};
    auto finish = [&](std::optional<AccessResult> r) {
        rec["outcome"] = !r ? "silent" : r->ok() ? "ok" : std::string(to_string(*r->fault));
        sim_.record(name_, "me_access", std::move(rec));
        return r;
    };

    if (failed()) {
        if (mode_ == FailureMode::Silent) return finish(std::nullopt);
        return finish(AccessResult{FaultKind::ElementError, {}});
    }
    auto it = table_.find(PageKey{pid, vaddr.page_base()});
    if (it == table_.end()) return finish(AccessResult{FaultKind::NoEntry, {}});
    const std::uint8_t need = op == AccessOp::Read ? kPermRead : kPermWrite;
    if ((it->second.perms & need) == 0) return finish(AccessResult{FaultKind::Permission, {}});

    auto& bytes = frames_[it->second.frame_index];
    rec["frame"] = it->second.frame_index;
    AccessResult result;
    if (op == AccessOp::Write) {
        std::copy(write_data.begin(), write_data.end(), bytes.begin() + static_cast<std::ptrdiff_t>(vaddr.offset()));
    } else {
        const auto first = bytes.begin() + static_cast<std::ptrdiff_t>(vaddr.offset());
        result.data.assign(first, first + static_cast<std::ptrdiff_t>(len));
    }
    return finish(std::move(result));
}

bool MemoryElement::apply_mapping_update(const MappingUpdate& update)
{
    if (failed() && mode_ == FailureMode::Silent) return false;
    const PageKey key{update.pid, update.page.page_base()};
    if (update.op == MappingUpdate::Op::Clear) {
        auto it = table_.find(key);
        nlohmann::json rec{{"pid", update.pid.value}, {"page", update.page.raw()}};
        if (it != table_.end()) {
            rec["frame"] = it->second.frame_index;
            table_.erase(it);
        } else {
            rec["absent"] = true;
        }
        sim_.record(name_, "me_clear", std::move(rec));
        return true;
    }
    if (update.frame_index >= frames_.size()) throw Error(Errc::out_of_frames, "frame index beyond capacity");
    if (update.zero_fill && !failed()) std::fill(frames_[update.frame_index].begin(), frames_[update.frame_index].end(), std::byte{0});
    table_[key] = ElementEntry{update.frame_index, update.perms};
    sim_.record(name_, "me_set",
                {{"pid", update.pid.value}, {"page", update.page.raw()}, {"frame", update.frame_index},
                 {"perms", update.perms}});
    return true;
}

void MemoryElement::inject_failure(SimTime at)
{
    // dropped if the element already failed silently, which is the no-op we want
    static_cast<void>(sim_.schedule_at(actor_, std::max(at, sim_.now()), "inject_memory_failure", [this] { fail_now(); }));
}

void MemoryElement::fail_now()
{
    if (failed()) return;
    failed_at_ = sim_.now();
    sim_.record(name_, "memory_failed", {{"mode", mode_ == FailureMode::Silent ? "silent" : "explicit"}});
}

}  // namespace ddc
