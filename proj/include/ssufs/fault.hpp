#pragma once

// Deliberate ordering bugs for testing the crash harness. Only honoured by
// libraries built with SSUFS_FAULT_INJECTION; those paths issue raw device
// stores and bypass the typestate handles entirely.

#include <optional>
#include <string_view>
#include <vector>

namespace ssufs {

enum class Fault {
  None,
  CommitBeforeInitFence,     // create/mkdir: dentry commit shares the init epoch
  ParentLinkAfterCommit,     // mkdir: parent link increment shares the commit epoch
  SizeWithPages,             // write: size update shares the descriptor/data epoch
  EarlyLinkDecrement,        // unlink: link decrement shares the dentry-clear epoch
  InodeFreeWithBackpointers, // unlink: inode zeroing shares the backpointer-clear epoch
  RenameSourceClearEarly,    // rename: source cleared in the commit epoch
  RenameSkipClearFence,      // rename: source clear and pointer clear share an epoch
};

std::string_view fault_name(Fault f);
std::optional<Fault> parse_fault(std::string_view name);
std::vector<Fault> all_faults();  // excluding None

/// True iff this library was built with the injection paths compiled in.
bool fault_injection_available();

}  // namespace ssufs
