#pragma once

// On-media format. Four regions: superblock, inode table, page-descriptor
// table, data/directory pages. Every record is a plain little-endian struct
// whose mutable fields are single aligned u64 words.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ssufs/pmem.hpp"

namespace ssufs::layout {

static_assert(std::endian::native == std::endian::little, "on-media records are little-endian");

inline constexpr std::uint64_t kMagic = 0x3130305346555353ULL;  // "SSUFS001"
inline constexpr std::uint64_t kPageSize = 4096;
inline constexpr std::uint64_t kInodeSize = 128;
inline constexpr std::uint64_t kDentrySize = 128;
inline constexpr std::uint64_t kDescriptorSize = 24;
inline constexpr std::size_t kNameMax = 110;
inline constexpr std::uint64_t kDentriesPerPage = kPageSize / kDentrySize;
inline constexpr std::uint64_t kDataBytesPerInode = 16384;
inline constexpr std::uint64_t kMinCapacity = 1ULL << 20;
inline constexpr std::uint64_t kRootIno = 1;

inline constexpr std::uint64_t kModeTypeMask = 0170000;
inline constexpr std::uint64_t kModeDir = 0040000;
inline constexpr std::uint64_t kModeFile = 0100000;

enum class PageKind : std::uint64_t { None = 0, Data = 1, Directory = 2 };

struct Superblock {
  std::uint64_t magic = 0;
  std::uint64_t page_size = 0;
  std::uint64_t num_inodes = 0;
  std::uint64_t num_pages = 0;
  std::uint64_t clean_unmount = 0;
  std::uint64_t reserved[507] = {};
};
static_assert(sizeof(Superblock) == kPageSize);

struct InodeRecord {
  std::uint64_t ino = 0;
  std::uint64_t link_count = 0;
  std::uint64_t size = 0;
  std::uint64_t mode = 0;
  std::uint64_t uid = 0;
  std::uint64_t gid = 0;
  std::uint64_t atime = 0;
  std::uint64_t mtime = 0;
  std::uint64_t ctime = 0;
  std::uint64_t reserved[7] = {};

  bool is_dir() const { return (mode & kModeTypeMask) == kModeDir; }
  bool is_file() const { return (mode & kModeTypeMask) == kModeFile; }
  bool operator==(const InodeRecord&) const = default;
};
static_assert(sizeof(InodeRecord) == kInodeSize);

struct DentryRecord {
  char name[kNameMax] = {};
  std::uint8_t reserved[2] = {};
  std::uint64_t ino = 0;
  std::uint64_t rename_ptr = 0;

  std::string_view name_view() const { return {name, strnlen(name, kNameMax)}; }
  bool operator==(const DentryRecord&) const = default;
};
static_assert(sizeof(DentryRecord) == kDentrySize);
static_assert(offsetof(DentryRecord, ino) == 112);
static_assert(offsetof(DentryRecord, rename_ptr) == 120);
static_assert(sizeof(DentryRecord::name) == kNameMax);

struct PageDescriptor {
  std::uint64_t owner_ino = 0;
  std::uint64_t kind = 0;
  std::uint64_t offset = 0;

  bool operator==(const PageDescriptor&) const = default;
};
static_assert(sizeof(PageDescriptor) == kDescriptorSize);

// Byte offsets of the 8-byte fields that are updated in place.
inline constexpr std::uint64_t kInodeLinkCountOff = offsetof(InodeRecord, link_count);
inline constexpr std::uint64_t kInodeSizeOff = offsetof(InodeRecord, size);
inline constexpr std::uint64_t kInodeMtimeOff = offsetof(InodeRecord, mtime);
inline constexpr std::uint64_t kInodeCtimeOff = offsetof(InodeRecord, ctime);
inline constexpr std::uint64_t kDentryInoOff = offsetof(DentryRecord, ino);
inline constexpr std::uint64_t kDentryRenamePtrOff = offsetof(DentryRecord, rename_ptr);
inline constexpr std::uint64_t kDescOwnerOff = offsetof(PageDescriptor, owner_ino);
inline constexpr std::uint64_t kSuperCleanOff = offsetof(Superblock, clean_unmount);

template <class Record>
Record decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(Record)) throw std::invalid_argument("short record");
  Record r;
  std::memcpy(&r, bytes.data(), sizeof(Record));
  return r;
}

template <class Record>
std::span<const std::uint8_t> encode(const Record& r) {
  return {reinterpret_cast<const std::uint8_t*>(&r), sizeof(Record)};
}

/// A record is allocated iff any of its bytes is nonzero.
bool is_allocated(std::span<const std::uint8_t> record);

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Geometry {
  std::uint64_t capacity = 0;
  std::uint64_t num_inodes = 0;   // table slots, slot 0 reserved as null
  std::uint64_t num_pages = 0;
  std::uint64_t inode_table = 0;
  std::uint64_t desc_table = 0;
  std::uint64_t data_base = 0;

  std::uint64_t inode_offset(std::uint64_t ino) const;
  std::uint64_t descriptor_offset(std::uint64_t page) const;
  std::uint64_t page_offset(std::uint64_t page) const;
  std::uint64_t dentry_offset(std::uint64_t page, std::uint64_t slot) const;

  /// Inverse of dentry_offset; throws if the offset is not a dentry slot.
  std::uint64_t page_of(std::uint64_t dentry_location) const;
  bool is_dentry_location(std::uint64_t offset) const;

  bool operator==(const Geometry&) const = default;
};

Geometry compute_geometry(std::uint64_t capacity);

enum class SlotKind { Inode, PageDescriptor, Page, Dentry };

/// index is the inode number / page index; sub is the dentry slot within a page.
std::uint64_t slot_offset(const Geometry& g, SlotKind kind, std::uint64_t index, std::uint64_t sub = 0);

/// Zero the metadata regions, write the superblock and the root directory, persist.
void mkfs(pmem::PmDevice& dev, std::uint64_t timestamp = 0);

Superblock read_superblock(const pmem::PmDevice& dev);
Geometry geometry_of(const Superblock& sb, std::uint64_t capacity);

/// 16-byte header dump used by tooling: magic, then page count and inode count.
std::string describe(const Geometry& g);

}  // namespace ssufs::layout
