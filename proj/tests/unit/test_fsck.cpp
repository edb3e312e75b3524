#include <cstring>

#include "doctest.h"
#include "ssufs/crashcheck.hpp"
#include "ssufs/fsck.hpp"
#include "ssufs/fsops.hpp"

using namespace ssufs;
using namespace ssufs::layout;

namespace {

struct Image {
  std::vector<std::uint8_t> bytes;
  Geometry geo;
  std::uint64_t d = 0, e = 0, f = 0;
  std::uint64_t loc_d = 0, loc_e = 0, loc_f = 0;
  std::uint64_t dir_page_d = 0;

  Image() {
    pmem::PmDevice dev(1 << 20);
    mkfs(dev);
    auto fs = Fs::mount(dev);
    d = fs.mkdir("/", "d");
    e = fs.mkdir("/", "e");
    f = fs.create("/d", "f");
    fs.write(f, 0, payload(5000, 1));
    const auto& vs = fs.volatile_state();
    loc_d = vs.names.lookup(kRootIno, "d")->location;
    loc_e = vs.names.lookup(kRootIno, "e")->location;
    loc_f = vs.names.lookup(d, "f")->location;
    dir_page_d = vs.pages.dir_pages_of(d).front();
    geo = fs.geometry();
    fs.unmount();
    bytes = dev.media();
  }

  void put(std::uint64_t off, std::uint64_t v) { std::memcpy(bytes.data() + off, &v, sizeof v); }
};

}  // namespace

TEST_CASE("clean image passes") {
  Image img;
  auto rep = fsck(img.bytes);
  CHECK_MESSAGE(rep.pass(), rep.to_string());
  CHECK(rep.reachable == 4);
}

TEST_CASE("link count below the tree is I1") {
  Image img;
  img.put(img.geo.inode_offset(img.d) + kInodeLinkCountOff, 1);
  auto rep = fsck(img.bytes, FsckMode::Crash);
  CHECK_FALSE(rep.holds("I1"));
}

TEST_CASE("link over-count fails strict only") {
  Image img;
  img.put(img.geo.inode_offset(img.f) + kInodeLinkCountOff, 2);
  CHECK_FALSE(fsck(img.bytes).holds("I1"));
  auto crash = fsck(img.bytes, FsckMode::Crash);
  CHECK(crash.pass());
  CHECK(crash.link_overcounts == 1);
}

TEST_CASE("entry naming a free inode is I2") {
  Image img;
  std::memset(img.bytes.data() + img.geo.inode_offset(img.f), 0, kInodeSize);
  auto rep = fsck(img.bytes, FsckMode::Crash);
  CHECK_FALSE(rep.holds("I2"));
}

TEST_CASE("entries in a freed directory's page are I3") {
  Image img;
  std::memset(img.bytes.data() + img.geo.inode_offset(img.d), 0, kInodeSize);
  CHECK_FALSE(fsck(img.bytes, FsckMode::Crash).holds("I3"));
}

TEST_CASE("rename pointer cycle is I4") {
  Image img;
  img.put(img.loc_d + kDentryRenamePtrOff, img.loc_e);
  img.put(img.loc_e + kDentryRenamePtrOff, img.loc_d);
  CHECK_FALSE(fsck(img.bytes, FsckMode::Crash).holds("I4"));
}

TEST_CASE("leftover rename pointer fails strict only") {
  Image img;
  auto free_slot = img.geo.dentry_offset(img.dir_page_d, 5);
  DentryRecord r;
  std::memcpy(r.name, "g", 1);
  r.ino = 0;
  r.rename_ptr = img.loc_f;
  std::memcpy(img.bytes.data() + free_slot, &r, sizeof r);
  CHECK(fsck(img.bytes, FsckMode::Crash).holds("I4"));
  CHECK_FALSE(fsck(img.bytes).holds("I4"));
}

TEST_CASE("size beyond the mapped pages is a structure failure") {
  Image img;
  img.put(img.geo.inode_offset(img.f) + kInodeSizeOff, 20000);
  CHECK_FALSE(fsck(img.bytes, FsckMode::Crash).holds("structure"));
}

TEST_CASE("orphan inode is a leak in strict mode") {
  Image img;
  InodeRecord r;
  r.ino = img.geo.num_inodes - 1;
  r.link_count = 1;
  r.mode = kModeFile | 0644;
  std::memcpy(img.bytes.data() + img.geo.inode_offset(r.ino), &r, sizeof r);
  auto crash = fsck(img.bytes, FsckMode::Crash);
  CHECK(crash.pass());
  CHECK(crash.orphan_inodes == 1);
  auto strict = fsck(img.bytes);
  CHECK_FALSE(strict.holds("leak"));
  CHECK(strict.first_failure().find("leak") != std::string::npos);
}

TEST_CASE("duplicate names are a structure failure") {
  Image img;
  std::memcpy(img.bytes.data() + img.loc_e, "d", 2);
  CHECK_FALSE(fsck(img.bytes).holds("structure"));
}
