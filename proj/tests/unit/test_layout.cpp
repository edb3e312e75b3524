#include <random>

#include "doctest.h"
#include "ssufs/layout.hpp"
#include "ssufs/pmem.hpp"

using namespace ssufs::layout;

static_assert(sizeof(DentryRecord) == 128);
static_assert(sizeof(DentryRecord::name) == 110);
static_assert(sizeof(InodeRecord) == 128);
static_assert(kDataBytesPerInode == 16384);

TEST_CASE("geometry matches the brute-force oracle") {
  // Frozen from tools/oracles/geometry_oracle.py.
  struct Row {
    std::uint64_t cap, pages, inodes, desc_table, data_base;
  };
  const Row rows[] = {
      {1048576, 251, 63, 12160, 20480},
      {4194304, 1009, 253, 36480, 61440},
      {134217728, 32325, 8082, 1038592, 1814528},
      {1060921, 254, 64, 12288, 20480},
      {67108864, 16162, 4041, 521344, 909312},
  };
  for (const auto& r : rows) {
    auto g = compute_geometry(r.cap);
    CHECK_MESSAGE(g.num_pages == r.pages, r.cap);
    CHECK_MESSAGE(g.num_inodes == r.inodes, r.cap);
    CHECK_MESSAGE(g.desc_table == r.desc_table, r.cap);
    CHECK_MESSAGE(g.data_base == r.data_base, r.cap);
  }
}

TEST_CASE("one inode per 16 KiB of data, regions disjoint") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    std::uint64_t cap = kMinCapacity + rng() % (1ULL << 30);
    auto g = compute_geometry(cap);
    std::uint64_t data = g.num_pages * kPageSize;
    CHECK(g.num_inodes == (data + kDataBytesPerInode - 1) / kDataBytesPerInode);
    CHECK(g.inode_table + g.num_inodes * kInodeSize <= g.desc_table);
    CHECK(g.desc_table + g.num_pages * kDescriptorSize <= g.data_base);
    CHECK(g.data_base % kPageSize == 0);
    CHECK(g.data_base + data <= cap);
    // one more page would not fit
    std::uint64_t p1 = g.num_pages + 1;
    std::uint64_t i1 = (p1 * kPageSize + kDataBytesPerInode - 1) / kDataBytesPerInode;
    std::uint64_t meta = kPageSize + i1 * kInodeSize + p1 * kDescriptorSize;
    std::uint64_t base = (meta + kPageSize - 1) / kPageSize * kPageSize;
    CHECK(base + p1 * kPageSize > cap);
  }
}

TEST_CASE("too small capacity is rejected") {
  CHECK_THROWS_AS(compute_geometry(kMinCapacity - 1), GeometryError);
}

TEST_CASE("dentry slots and offsets") {
  auto g = compute_geometry(1 << 20);
  auto off = g.dentry_offset(3, 5);
  CHECK(g.is_dentry_location(off));
  CHECK(g.page_of(off) == 3);
  CHECK_FALSE(g.is_dentry_location(off + 1));
  CHECK(slot_offset(g, SlotKind::Inode, 2) == g.inode_offset(2));
  CHECK(g.inode_offset(1) - g.inode_offset(0) == kInodeSize);
}

TEST_CASE("mkfs writes a readable superblock and root") {
  ssufs::pmem::PmDevice dev(1 << 20);
  mkfs(dev);
  CHECK(dev.pending_count() == 0);
  auto sb = read_superblock(dev);
  CHECK(sb.magic == kMagic);
  CHECK(geometry_of(sb, dev.capacity()) == compute_geometry(dev.capacity()));
  auto root = decode<InodeRecord>(dev.read_durable(compute_geometry(dev.capacity()).inode_offset(kRootIno), kInodeSize));
  CHECK((root.mode & kModeTypeMask) == kModeDir);
}
