#include "doctest.h"

#include "ssufs/crashcheck.hpp"
#include "ssufs/fsck.hpp"
#include "ssufs/fsops.hpp"

using namespace ssufs;

namespace {

struct Fixture {
  pmem::PmDevice dev{1 << 20};
  Fixture() { layout::mkfs(dev); }
};

}  // namespace

TEST_CASE("mkdir on a fresh file system") {
  Fixture f;
  auto fs = Fs::mount(f.dev);
  const auto a = fs.mkdir("/", "a");
  CHECK(fs.last_op_fences() == 4);  // root's first directory page
  CHECK(fs.stat(layout::kRootIno).links == 3);
  CHECK(fs.stat(a).links == 2);
  fs.mkdir("/", "b");
  CHECK(fs.last_op_fences() == 2);
  CHECK(fs.lookup("/a") == a);
  CHECK(fsck(f.dev.media()).pass());
}

TEST_CASE("smoke: mixed operations then remount") {
  Fixture f;
  {
    auto fs = Fs::mount(f.dev);
    fs.mkdir("/", "d");
    const auto x = fs.create("/d", "x");
    std::vector<std::uint8_t> data(5000, 7);
    fs.write(x, 0, data);
    CHECK(fs.stat(x).size == 5000);
    fs.write(x, 100, std::vector<std::uint8_t>(10, 9));
    fs.rename("/d", "x", "/", "y");
    fs.mkdir("/", "e");
    fs.rename("/", "d", "/e", "d2");
    fs.create("/", "z");
    fs.rename("/", "z", "/", "y");
    fs.unlink("/", "y");
    fs.rmdir("/e", "d2");
    INFO(fs.dump_tree());
    CHECK(fsck(f.dev.media()).pass());
    fs.unmount();
  }
  auto fs = Fs::mount(f.dev);
  CHECK_FALSE(fs.recovery_report().ran);
  CHECK(fs.lookup("/e") != 0);
}

TEST_CASE("crash test smoke") {
  const auto w = Workload::parse("mkdir /a\ncreate /a/f\nwrite /a/f 0 5000 3\nrename /a/f /g\nunlink /g\nrmdir /a\n", "smoke");
  CrashOptions o;
  o.cap = 256;
  const auto v = run_crash_test(w, o);
  for (const auto& fl : v.failures) MESSAGE(fl.to_record());
  MESSAGE(v.summary());
  CHECK(v.pass());
}
