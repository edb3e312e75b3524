#pragma once

// DRAM-resident indexes and allocators. Nothing here is persisted; all of it
// is rebuilt from the media at mount.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssufs/image_view.hpp"

namespace ssufs::vol {

struct NameEntry {
  std::uint64_t location = 0;  // byte offset of the DentryRecord
  std::uint64_t ino = 0;
  bool operator==(const NameEntry&) const = default;
};

using DirEntries = std::map<std::string, NameEntry, std::less<>>;

class NameIndex {
 public:
  void add_dir(std::uint64_t dir);
  void erase_dir(std::uint64_t dir);
  bool has_dir(std::uint64_t dir) const { return dirs_.count(dir) != 0; }

  void insert(std::uint64_t dir, std::string_view name, NameEntry e);
  void remove(std::uint64_t dir, std::string_view name);
  std::optional<NameEntry> lookup(std::uint64_t dir, std::string_view name) const;
  const DirEntries& entries(std::uint64_t dir) const;

  const std::map<std::uint64_t, DirEntries>& all() const { return dirs_; }
  bool operator==(const NameIndex&) const = default;

 private:
  std::map<std::uint64_t, DirEntries> dirs_;
};

class PageIndex {
 public:
  /// (file offset, page index) pairs.
  void map_pages(std::uint64_t ino, const std::vector<std::pair<std::uint64_t, std::uint64_t>>& pages);
  void map_dir_page(std::uint64_t ino, std::uint64_t page);
  /// Removes and returns every page of ino.
  std::vector<std::uint64_t> unmap_pages(std::uint64_t ino);

  std::vector<std::pair<std::uint64_t, std::uint64_t>> pages_of(std::uint64_t ino) const;
  std::vector<std::uint64_t> dir_pages_of(std::uint64_t ino) const;
  std::optional<std::uint64_t> page_at(std::uint64_t ino, std::uint64_t file_offset) const;
  std::size_t page_count(std::uint64_t ino) const;

  bool operator==(const PageIndex&) const = default;

 private:
  std::map<std::uint64_t, std::map<std::uint64_t, std::uint64_t>> files_;
  std::map<std::uint64_t, std::set<std::uint64_t>> dirs_;
};

/// Free lists, lowest-first. Internally locked.
class Allocators {
 public:
  Allocators() = default;
  Allocators(const Allocators& other);
  Allocators& operator=(const Allocators& other);

  void reset(std::set<std::uint64_t> free_inodes, std::set<std::uint64_t> free_pages);

  std::uint64_t allocate_ino();
  void free_ino(std::uint64_t ino);
  std::vector<std::uint64_t> allocate_pages(std::size_t n);
  void free_pages(const std::vector<std::uint64_t>& pages);

  std::optional<std::uint64_t> allocate_dentry_slot(std::uint64_t dir);
  void free_dentry_slot(std::uint64_t dir, std::uint64_t location);
  void drop_dir(std::uint64_t dir);

  std::size_t free_inode_count() const;
  std::size_t free_page_count() const;
  bool has_dentry_slot(std::uint64_t dir) const;

  bool operator==(const Allocators& other) const;

 private:
  mutable std::mutex mu_;
  std::set<std::uint64_t> free_inodes_;
  std::set<std::uint64_t> free_pages_;
  std::map<std::uint64_t, std::set<std::uint64_t>> free_slots_;
};

/// Populated only during a recovery mount.
struct RecoveryTables {
  std::map<std::uint64_t, std::uint64_t> observed_links;
  std::set<std::uint64_t> reachable;
  std::vector<std::uint64_t> pending_renames;  // dentry locations with rename_ptr set

  bool empty() const { return observed_links.empty() && reachable.empty() && pending_renames.empty(); }
  void clear() { *this = RecoveryTables{}; }
};

struct VolatileState {
  NameIndex names;
  PageIndex pages;
  Allocators alloc;
  std::map<std::uint64_t, std::uint64_t> dir_parent;  // dir ino -> parent dir ino; root -> root
  RecoveryTables recovery;

  bool is_dir(std::uint64_t ino) const { return dir_parent.count(ino) != 0; }

  /// Structural equality of the indexes and allocators (recovery tables excluded).
  bool operator==(const VolatileState& o) const {
    return names == o.names && pages == o.pages && alloc == o.alloc && dir_parent == o.dir_parent;
  }
};

/// Scan an image and build the indexes. Only logically valid dentries in
/// directories reachable from the root are indexed; only all-zero slots are free.
VolatileState rebuild(const layout::ImageView& view);

}  // namespace ssufs::vol
