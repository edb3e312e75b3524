#include "ssufs/fault.hpp"

#include <array>
#include <utility>

namespace ssufs {

namespace {
constexpr std::array<std::pair<Fault, std::string_view>, 8> kNames = {{
    {Fault::None, "none"},
    {Fault::CommitBeforeInitFence, "commit-before-init-fence"},
    {Fault::ParentLinkAfterCommit, "parent-link-after-commit"},
    {Fault::SizeWithPages, "size-with-pages"},
    {Fault::EarlyLinkDecrement, "early-link-decrement"},
    {Fault::InodeFreeWithBackpointers, "inode-free-with-backpointers"},
    {Fault::RenameSourceClearEarly, "rename-source-clear-early"},
    {Fault::RenameSkipClearFence, "rename-skip-clear-fence"},
}};
}  // namespace

std::string_view fault_name(Fault f) {
  for (const auto& [k, n] : kNames)
    if (k == f) return n;
  return "unknown";
}

std::optional<Fault> parse_fault(std::string_view name) {
  for (const auto& [k, n] : kNames)
    if (n == name) return k;
  return std::nullopt;
}

std::vector<Fault> all_faults() {
  std::vector<Fault> out;
  for (const auto& [k, n] : kNames)
    if (k != Fault::None) out.push_back(k);
  return out;
}

bool fault_injection_available() {
#ifdef SSUFS_FAULT_INJECTION
  return true;
#else
  return false;
#endif
}

}  // namespace ssufs
