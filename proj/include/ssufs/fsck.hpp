#pragma once

// Read-only consistency checker.
//   I1  every reachable inode's link count is legal (>= its true count; at least 1 for files, 2 for directories)
//   I2  no pointer to an uninitialized object (dentry -> inode, rename pointer -> dentry, page -> owner)
//   I3  freed objects reference nothing (a directory page without a live owner holds no entries)
//   I4  rename pointers form no cycles and no dentry is the target of two of them
// Strict mode is for recovered images: exact link counts, no leaked objects,
// no rename pointer left behind.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ssufs {

enum class FsckMode { Crash, Strict };

struct FsckIssue {
  std::string invariant;  // I1 I2 I3 I4 structure leak
  std::string object;     // e.g. "inode 7", "dentry @123456", "page 3"
  std::string detail;
};

struct FsckReport {
  std::vector<FsckIssue> issues;
  std::size_t reachable = 0;
  std::size_t orphan_inodes = 0;
  std::size_t orphan_pages = 0;
  std::size_t orphan_dentries = 0;
  std::size_t link_overcounts = 0;

  bool pass() const { return issues.empty(); }
  bool holds(std::string_view invariant) const;
  /// First failing invariant name, or empty.
  std::string first_failure() const;
  std::string to_string() const;
};

/// Throws layout::GeometryError on a bad superblock.
FsckReport fsck(std::span<const std::uint8_t> image, FsckMode mode = FsckMode::Strict);

}  // namespace ssufs
