#include "ssufs/layout.hpp"

#include <algorithm>
#include <sstream>

namespace ssufs::layout {

bool is_allocated(std::span<const std::uint8_t> record) {
  return std::any_of(record.begin(), record.end(), [](std::uint8_t b) { return b != 0; });
}

namespace {

std::uint64_t round_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

std::uint64_t inodes_for_pages(std::uint64_t pages) {
  return (pages * kPageSize + kDataBytesPerInode - 1) / kDataBytesPerInode;
}

std::uint64_t data_base_for(std::uint64_t pages) {
  const std::uint64_t inode_bytes = inodes_for_pages(pages) * kInodeSize;
  const std::uint64_t desc_bytes = pages * kDescriptorSize;
  return round_up(kPageSize + inode_bytes + desc_bytes, kPageSize);
}

bool fits(std::uint64_t pages, std::uint64_t capacity) {
  return data_base_for(pages) + pages * kPageSize <= capacity;
}

}  // namespace

Geometry compute_geometry(std::uint64_t capacity) {
  if (capacity < kMinCapacity) {
    throw GeometryError("capacity " + std::to_string(capacity) + " is below the 1 MiB minimum");
  }
  // Metadata costs at most ~56 bytes per page, so the estimate is within a
  // handful of pages of the largest fitting count.
  std::uint64_t pages = (capacity - kPageSize) / (kPageSize + kInodeSize / 4 + kDescriptorSize);
  while (fits(pages + 1, capacity)) ++pages;
  while (pages > 0 && !fits(pages, capacity)) --pages;

  Geometry g;
  g.capacity = capacity;
  g.num_pages = pages;
  g.num_inodes = inodes_for_pages(pages);
  g.inode_table = kPageSize;
  g.desc_table = kPageSize + g.num_inodes * kInodeSize;
  g.data_base = data_base_for(pages);
  return g;
}

std::uint64_t Geometry::inode_offset(std::uint64_t ino) const {
  if (ino >= num_inodes) throw std::out_of_range("inode " + std::to_string(ino) + " out of range");
  return inode_table + ino * kInodeSize;
}

std::uint64_t Geometry::descriptor_offset(std::uint64_t page) const {
  if (page >= num_pages) throw std::out_of_range("page " + std::to_string(page) + " out of range");
  return desc_table + page * kDescriptorSize;
}

std::uint64_t Geometry::page_offset(std::uint64_t page) const {
  if (page >= num_pages) throw std::out_of_range("page " + std::to_string(page) + " out of range");
  return data_base + page * kPageSize;
}

std::uint64_t Geometry::dentry_offset(std::uint64_t page, std::uint64_t slot) const {
  if (slot >= kDentriesPerPage) throw std::out_of_range("dentry slot " + std::to_string(slot) + " out of range");
  return page_offset(page) + slot * kDentrySize;
}

bool Geometry::is_dentry_location(std::uint64_t offset) const {
  return offset >= data_base && offset < data_base + num_pages * kPageSize && (offset - data_base) % kDentrySize == 0;
}

std::uint64_t Geometry::page_of(std::uint64_t dentry_location) const {
  if (!is_dentry_location(dentry_location)) {
    throw std::out_of_range("offset " + std::to_string(dentry_location) + " is not a dentry slot");
  }
  return (dentry_location - data_base) / kPageSize;
}

std::uint64_t slot_offset(const Geometry& g, SlotKind kind, std::uint64_t index, std::uint64_t sub) {
  switch (kind) {
    case SlotKind::Inode:
      return g.inode_offset(index);
    case SlotKind::PageDescriptor:
      return g.descriptor_offset(index);
    case SlotKind::Page:
      return g.page_offset(index);
    case SlotKind::Dentry:
      return g.dentry_offset(index, sub);
  }
  throw std::invalid_argument("unknown slot kind");
}

void mkfs(pmem::PmDevice& dev, std::uint64_t timestamp) {
  const Geometry g = compute_geometry(dev.capacity());
  dev.store_zeros(0, g.data_base);

  Superblock sb;
  sb.magic = kMagic;
  sb.page_size = kPageSize;
  sb.num_inodes = g.num_inodes;
  sb.num_pages = g.num_pages;
  sb.clean_unmount = 1;
  dev.store(0, std::span<const std::uint8_t>(encode(sb).data(), 5 * sizeof(std::uint64_t)));

  InodeRecord root;
  root.ino = kRootIno;
  root.link_count = 2;
  root.mode = kModeDir | 0755;
  root.atime = root.mtime = root.ctime = timestamp;
  dev.store(g.inode_offset(kRootIno), encode(root));
  dev.persist_all();
}

Superblock read_superblock(const pmem::PmDevice& dev) {
  if (dev.capacity() < kPageSize) throw GeometryError("image smaller than a superblock");
  const auto bytes = dev.read(0, kPageSize);
  const auto sb = decode<Superblock>(bytes);
  if (sb.magic != kMagic) throw GeometryError("bad magic");
  return sb;
}

Geometry geometry_of(const Superblock& sb, std::uint64_t capacity) {
  Geometry g = compute_geometry(capacity);
  if (g.num_inodes != sb.num_inodes || g.num_pages != sb.num_pages || sb.page_size != kPageSize) {
    throw GeometryError("superblock geometry does not match image size");
  }
  return g;
}

std::string describe(const Geometry& g) {
  std::ostringstream os;
  os << "capacity " << g.capacity << "\n"
     << "inodes " << g.num_inodes << " @" << g.inode_table << "\n"
     << "pages " << g.num_pages << " descriptors @" << g.desc_table << " data @" << g.data_base << "\n";
  return os.str();
}

}  // namespace ssufs::layout
