#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ssufs/crashcheck.hpp"
#include "ssufs/errors.hpp"
#include "ssufs/fsck.hpp"
#include "ssufs/fsops.hpp"
#include "ssufs/image_view.hpp"

using namespace ssufs;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("workload text round trip") {
  auto w = Workload::parse("mkdir /d\ncreate /d/f\nwrite /d/f 0 100 3\nrename /d/f /g\nfsync /g\nunlink /g\nrmdir /d\n");
  REQUIRE(w.ops.size() == 7);
  CHECK(w.ops[2].kind == Op::Kind::Write);
  CHECK(w.ops[2].len == 100);
  CHECK(w.ops[3].path2 == "/g");
  CHECK(Workload::parse(w.to_string()) == w);
  CHECK_THROWS(Op::parse("frobnicate /x"));
}

TEST_CASE("generator is deterministic") {
  auto a = generate_workloads("mixed", 5, 11, 40);
  auto b = generate_workloads("mixed", 5, 11, 40);
  CHECK(a == b);
  CHECK(generate_workloads("mixed", 5, 12, 40) != a);
  CHECK_THROWS(generate_workloads("nonsense", 1, 1));
}

TEST_CASE("rename-heavy workloads are at least half renames") {
  for (const auto& w : generate_workloads("rename-heavy", 20, 5, 60)) {
    std::size_t renames = 0;
    for (const auto& op : w.ops) renames += op.kind == Op::Kind::Rename;
    CHECK_MESSAGE(renames * 2 >= w.ops.size(), w.name);
  }
}

TEST_CASE("generated workloads replay without errors") {
  for (const auto& w : generate_workloads("mixed", 10, 3, 80)) {
    pmem::PmDevice dev(4 << 20);
    layout::mkfs(dev);
    auto fs = Fs::mount(dev);
    for (const auto& op : w.ops) CHECK_NOTHROW(apply(fs, op));
    CHECK(fsck(dev.media()).pass());
  }
}

TEST_CASE("fence counts match the golden table") {
  auto golden = parse_fence_table(slurp(std::string(SSUFS_TEST_DATA) + "/golden/fence_counts.txt"));
  REQUIRE(golden.size() == fence_scenarios().size());
  for (std::size_t i = 0; i < golden.size(); ++i) {
    const auto& s = fence_scenarios()[i];
    CHECK(golden[i].first == s.name);
    CHECK_MESSAGE(measure_fences(s) == golden[i].second, s.name);
  }
}

TEST_CASE("no redundant flushes") {
  pmem::PmDevice dev(1 << 20);
  layout::mkfs(dev);
  auto fs = Fs::mount(dev);
  auto w = generate_workloads("rename-heavy", 1, 9, 60).front();
  for (const auto& op : w.ops) {
    apply(fs, op);
    CHECK_MESSAGE(fs.last_op_redundant_flushes() == 0, op.to_string());
  }
}

TEST_CASE("every completed call is durable with no further events") {
  pmem::PmDevice dev(4 << 20);
  layout::mkfs(dev);
  auto fs = Fs::mount(dev);
  auto w = generate_workloads("mixed", 1, 2024, 200).front();
  REQUIRE(w.ops.size() == 200);
  for (std::size_t i = 0; i < w.ops.size(); ++i) {
    apply(fs, w.ops[i]);
    auto crashed = pmem::PmDevice::from_image(dev.media());
    auto after = Fs::mount(crashed);
    CHECK_MESSAGE(after.dump_tree() == fs.dump_tree(), "op " << i << ": " << w.ops[i].to_string());
  }
}

TEST_CASE("fsync emits no device events") {
  pmem::PmDevice dev(1 << 20);
  layout::mkfs(dev);
  auto fs = Fs::mount(dev);
  auto f = fs.create("/", "f");
  fs.write(f, 0, payload(5000, 1));
  dev.trace().clear();
  dev.set_recording(true);
  fs.fsync(f);
  dev.set_recording(false);
  CHECK(dev.trace().size() == 0);
  CHECK(dev.pending_count() == 0);
}

TEST_CASE("online index equals the rebuilt index") {
  std::size_t checked = 0;
  for (const auto& w : generate_workloads("mixed", 100, 77, 1000)) {
    pmem::PmDevice dev(16 << 20);
    layout::mkfs(dev);
    auto fs = Fs::mount(dev);
    for (std::size_t i = 0; i < w.ops.size(); ++i) {
      apply(fs, w.ops[i]);
      if ((i + 1) % 250 == 0) {
        auto rebuilt = vol::rebuild(layout::ImageView::of_device(dev));
        const bool same = rebuilt == fs.volatile_state();
        CHECK_MESSAGE(same, w.name << " after op " << i);
        ++checked;
      }
    }
  }
  CHECK(checked == 400);
}

TEST_CASE("crash test on a small workload") {
  auto w = Workload::parse("mkdir /d\ncreate /d/f\nwrite /d/f 0 5000 1\nrename /d/f /g\nunlink /g\nrmdir /d\n");
  CrashOptions o;
  o.cap = 512;
  auto v = run_crash_test(w, o);
  CHECK(v.pass());
  CHECK(v.op_errors.empty());
  CHECK(v.states > 0);
}
