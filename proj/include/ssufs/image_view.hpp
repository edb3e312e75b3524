#pragma once

// Read-only decoded view of a device image, shared by rebuild, recovery and
// fsck. Encodes the validity rules of allocation-by-nonzero:
//  - a record is allocated iff any byte is nonzero;
//  - dentries and descriptors are valid iff their inode number is set;
//  - a valid dentry is logically invalid when a committed rename pointer
//    targets it, or when it is superseded by a committed rename destination
//    with the same name in the same directory;
//  - inodes are valid only if reachable from the root.

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "ssufs/layout.hpp"
#include "ssufs/pmem.hpp"

namespace ssufs::layout {

struct DentrySlot {
  std::uint64_t location = 0;
  std::uint64_t page = 0;
  std::uint64_t dir_ino = 0;  // owner of the directory page
  DentryRecord rec;
};

struct Reachability {
  std::set<std::uint64_t> reachable;                 // includes root
  std::map<std::uint64_t, std::uint64_t> parent;     // dir ino -> parent dir ino (root -> root)
  std::map<std::uint64_t, std::uint64_t> true_links; // reachable ino -> link count implied by the tree
};

class ImageView {
 public:
  /// Non-owning view over a full device image; the bytes must outlive the view.
  explicit ImageView(std::span<const std::uint8_t> image);
  /// Owning view of the program-visible contents of a device.
  static ImageView of_device(const pmem::PmDevice& dev);

  ImageView(const ImageView&) = delete;
  ImageView& operator=(const ImageView&) = delete;
  ImageView(ImageView&&) noexcept;
  ImageView& operator=(ImageView&&) = delete;

  const Superblock& superblock() const { return sb_; }
  const Geometry& geometry() const { return geo_; }
  std::span<const std::uint8_t> bytes() const { return bytes_; }

  bool inode_allocated(std::uint64_t ino) const;
  InodeRecord inode(std::uint64_t ino) const;
  bool descriptor_allocated(std::uint64_t page) const;
  PageDescriptor descriptor(std::uint64_t page) const;
  bool dentry_allocated(std::uint64_t location) const;
  DentryRecord dentry(std::uint64_t location) const;

  /// Page is a live directory page: descriptor valid, kind Directory, owner an allocated directory.
  bool is_live_dir_page(std::uint64_t page) const;
  const std::vector<std::uint64_t>& dir_pages_of(std::uint64_t dir_ino) const;
  const std::vector<std::uint64_t>& data_pages_of(std::uint64_t ino) const;

  /// All allocated dentry slots in live directory pages.
  const std::vector<DentrySlot>& allocated_dentries() const { return dentries_; }
  std::vector<DentrySlot> dentries_in(std::uint64_t dir_ino) const;

  bool rename_invalidated(std::uint64_t location) const { return rename_invalid_.count(location) != 0; }
  bool superseded(std::uint64_t location) const { return superseded_.count(location) != 0; }
  bool logically_valid(const DentrySlot& d) const;

  Reachability reachability() const;

 private:
  void index();

  std::vector<std::uint8_t> owned_;
  std::span<const std::uint8_t> bytes_;
  Superblock sb_;
  Geometry geo_;
  std::map<std::uint64_t, std::vector<std::uint64_t>> dir_pages_;
  std::map<std::uint64_t, std::vector<std::uint64_t>> data_pages_;
  std::vector<DentrySlot> dentries_;
  std::set<std::uint64_t> rename_invalid_;
  std::set<std::uint64_t> superseded_;
};

}  // namespace ssufs::layout
