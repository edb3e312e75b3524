#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ssufs/crashcheck.hpp"
#include "ssufs/fsck.hpp"
#include "ssufs/fsops.hpp"

using namespace ssufs;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(SSUFS_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("shell script and library calls give identical images") {
  const auto dir = fs::temp_directory_path() / "ssufs_cli_test";
  fs::create_directories(dir);
  const auto image = (dir / "shell.img").string();
  const auto script = (dir / "script.txt").string();
  {
    std::ofstream out(script);
    out << "mkdir d\ntouch d/f\nwrite d/f 5000\nwrite d/f 100 0 7\nmkdir e\nmv d/f e/g\ntouch h\nrm h\nsync e/g\n";
  }
  REQUIRE(run("mkfs --image " + image + " --size 1048576 --force") == 0);
  REQUIRE(run("shell --image " + image + " --script " + script + " --persist") == 0);
  CHECK(run("fsck --image " + image) == 0);

  pmem::PmDevice dev(1 << 20);
  layout::mkfs(dev);
  {
    auto fsys = Fs::mount(dev);
    auto w = Workload::parse(
        "mkdir /d\ncreate /d/f\nwrite /d/f 0 5000 1\nwrite /d/f 0 100 7\nmkdir /e\nrename /d/f /e/g\n"
        "create /h\nunlink /h\nfsync /e/g\n");
    for (const auto& op : w.ops) apply(fsys, op);
    fsys.unmount();
  }
  const auto shell = pmem::PmDevice::load(image);
  CHECK(shell.media() == dev.media());
  fs::remove_all(dir);
}

TEST_CASE("cli exit codes") {
  const auto dir = fs::temp_directory_path() / "ssufs_cli_codes";
  fs::create_directories(dir);
  const auto image = (dir / "x.img").string();
  CHECK(run("mkfs --image " + image + " --size 1048576 --force") == 0);
  CHECK(run("mkfs --image " + image + " --size 1048576") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("modelcheck --ops 2 --objects 8 --steps 24") == 0);
  CHECK(run("modelcheck --ops 2 --objects 8 --steps 24 --disable-rename-recovery --invariants reappear") == 2);
  fs::remove_all(dir);
}
