// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 if any fail.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>

#include "CLI11.hpp"
#include "ssufs/crashcheck.hpp"
#include "ssufs/fault.hpp"
#include "ssufs/fsck.hpp"
#include "ssufs/fsops.hpp"
#include "ssufs/image_view.hpp"
#include "ssufs/layout.hpp"
#include "ssufs/model.hpp"

using namespace ssufs;
namespace fs = std::filesystem;

static_assert(sizeof(layout::DentryRecord) == 128);
static_assert(sizeof(layout::DentryRecord::name) == 110);
static_assert(layout::kDataBytesPerInode == 16 * 1024);

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt_secs(double s) {
  std::ostringstream os;
  os.precision(1);
  os << std::fixed << s << "s";
  return os.str();
}

// Runs a shell command, returns (exit status, combined output).
std::pair<int, std::string> capture(const std::string& cmd) {
  std::string out;
  FILE* p = popen((cmd + " 2>&1").c_str(), "r");
  if (p == nullptr) return {-1, ""};
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
  const int rc = pclose(p);
  return {WIFEXITED(rc) ? WEXITSTATUS(rc) : -1, out};
}

std::string strip_ns(std::string s) {
  return std::regex_replace(s, std::regex("ssufs::"), "");
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

Outcome compile_fail() {
  const auto start = Clock::now();
  const fs::path dir = SSUFS_COMPILE_FAIL_DIR;
  const std::string cxx = std::string(SSUFS_CXX) + " -std=c++20 -fsyntax-only -I" + SSUFS_INCLUDE_DIR + " ";
  std::size_t rejected = 0, programs = 0;
  std::vector<std::string> problems;
  std::set<std::string> names;
  for (const auto& f : sorted_files(dir, ".cpp")) {
    const auto name = f.stem().string();
    const auto [rc, out] = capture(cxx + f.string());
    if (name == "control") {
      if (rc != 0) problems.push_back("control does not compile");
      continue;
    }
    ++programs;
    names.insert(name);
    std::ifstream in(f);
    std::string line, expect;
    while (std::getline(in, line))
      if (auto pos = line.find("// expect: "); pos != std::string::npos) expect = line.substr(pos + 11);
    if (rc == 0) {
      problems.push_back(name + " compiled");
    } else if (expect.empty() || strip_ns(out).find(strip_ns(expect)) == std::string::npos) {
      problems.push_back(name + " failed without the expected type mismatch");
    } else {
      ++rejected;
    }
  }
  for (const char* need : {"commit_uninitialized_inode", "size_missing_fence", "early_link_decrement"})
    if (names.count(need) == 0) problems.push_back(std::string("missing ") + need);
  const double secs = since(start);
  if (secs >= 120) problems.push_back("took " + fmt_secs(secs));
  std::ostringstream d;
  d << rejected << "/" << programs << " programs rejected with the expected type mismatch, control compiles, "
    << fmt_secs(secs);
  for (const auto& p : problems) d << "; " << p;
  return {problems.empty() && rejected >= 8, d.str()};
}

Outcome crash_suites() {
  const auto start = Clock::now();
  CrashOptions opts;
  opts.cap = 4096;
  opts.seed = 1;
  std::size_t suites = 0, states = 0, failures = 0;
  std::ostringstream d;
  for (const auto& f : sorted_files(fs::path(SSUFS_TEST_DATA) / "workloads", ".wl")) {
    const auto v = run_crash_test(Workload::load(f.string()), opts);
    ++suites;
    states += v.states;
    failures += v.failures.size() + v.op_errors.size();
    if (!v.pass()) d << f.stem().string() << ": " << v.failures.front().to_record() << "; ";
    if (!v.op_errors.empty()) d << f.stem().string() << ": " << v.op_errors.front() << "; ";
  }
  const double secs = since(start);
  d << suites << " suites, " << states << " crash states, " << failures << " failures, cap 4096, " << fmt_secs(secs);
  return {suites == 9 && failures == 0 && secs < 600, d.str()};
}

Outcome mutations() {
  std::string suites;
  for (const auto& f : sorted_files(fs::path(SSUFS_TEST_DATA) / "workloads", ".wl")) suites += " --workload " + f.string();
  const auto repro = (fs::temp_directory_path() / "ssufs-acceptance-repro.txt").string();
  std::size_t detected = 0, total = 0;
  std::ostringstream d;
  for (auto f : all_faults()) {
    ++total;
    const auto [rc, out] = capture(std::string(SSUFS_FAULT_CLI) + " crashtest --cap 512 --seed 1 --fault " +
                                   std::string(fault_name(f)) + " --reproducer " + repro + suites);
    std::size_t failures = 0;
    static const std::regex re("failures=([0-9]+)");
    for (auto it = std::sregex_iterator(out.begin(), out.end(), re); it != std::sregex_iterator(); ++it)
      failures += std::stoul((*it)[1]);
    if (rc == 2 && failures > 0) ++detected;
    d << fault_name(f) << "=" << failures << " ";
  }
  fs::remove(repro);
  d << "(" << detected << "/" << total << " faults detected)";
  return {detected >= 5 && detected == total, d.str()};
}

Outcome model_check(bool nightly) {
  const auto start = Clock::now();
  std::ostringstream d;
  const model::Bounds b = nightly ? model::Bounds{2, 10, 30} : model::Bounds{2, 8, 24};
  const auto ok = model::check(b);
  d << b.max_ops << "/" << b.pool << "/" << b.max_steps << " " << model::verdict_name(ok.verdict) << " (" << ok.states
    << " states)";
  bool pass = ok.verdict == model::Verdict::Pass;
  if (!nightly) {
    model::Toggles t;
    t.rename_recovery = false;
    const auto cx = model::check(b, t, model::kReappear);
    const bool found = cx.verdict == model::Verdict::Counterexample && cx.violation.find("reappear") == 0;
    bool replays = false;
    if (found) {
      std::vector<std::string> labels;
      for (const auto& s : cx.trace) labels.push_back(s.label);
      replays = model::replay(b, t, labels, model::kReappear) == cx.violation;
    }
    d << "; without rename recovery: " << model::verdict_name(cx.verdict) << " in " << cx.trace.size() << " steps ("
      << cx.violation << ")";
    pass = pass && found && replays;
  }
  const double secs = since(start);
  d << "; " << fmt_secs(secs);
  return {pass && secs < 900, d.str()};
}

Outcome rebuild_equivalence() {
  std::size_t compared = 0, mismatches = 0, errors = 0;
  std::string first;
  for (const auto& w : generate_workloads("mixed", 100, 20261016, 1000)) {
    pmem::PmDevice dev(16 << 20);
    layout::mkfs(dev);
    auto fsys = Fs::mount(dev);
    for (std::size_t i = 0; i < w.ops.size(); ++i) {
      try {
        apply(fsys, w.ops[i]);
      } catch (const std::exception& e) {
        if (errors++ == 0) first = w.name + " op " + std::to_string(i) + ": " + e.what();
      }
      if ((i + 1) % 100 != 0) continue;
      ++compared;
      if (!(vol::rebuild(layout::ImageView::of_device(dev)) == fsys.volatile_state())) {
        if (mismatches++ == 0 && first.empty()) first = w.name + " after op " + std::to_string(i);
      }
    }
  }
  std::ostringstream d;
  d << "100 workloads x 1000 ops, " << compared << " comparisons, " << mismatches << " mismatches, " << errors
    << " op errors";
  if (!first.empty()) d << "; first: " << first;
  return {mismatches == 0 && errors == 0 && compared == 1000, d.str()};
}

Outcome durability() {
  pmem::PmDevice dev(4 << 20);
  layout::mkfs(dev);
  auto fsys = Fs::mount(dev);
  const auto w = generate_workloads("mixed", 1, 200, 200).front();
  std::size_t visible = 0;
  std::string first;
  for (std::size_t i = 0; i < w.ops.size(); ++i) {
    apply(fsys, w.ops[i]);
    // A crash right now, with no further device events: only media survives.
    auto crashed = pmem::PmDevice::from_image(dev.media());
    auto after = Fs::mount(crashed);
    if (dev.pending_count() == 0 && after.dump_tree() == fsys.dump_tree())
      ++visible;
    else if (first.empty())
      first = "op " + std::to_string(i) + " " + w.ops[i].to_string();
  }
  const auto f = fsys.create("/", "fsync-target");
  fsys.write(f, 0, payload(3000, 5));
  dev.trace().clear();
  dev.set_recording(true);
  fsys.fsync(f);
  dev.set_recording(false);
  const auto fsync_events = dev.trace().size();
  std::ostringstream d;
  d << visible << "/" << w.ops.size() << " calls durable at return, fsync events=" << fsync_events;
  if (!first.empty()) d << "; first lost: " << first;
  return {visible == w.ops.size() && w.ops.size() == 200 && fsync_events == 0, d.str()};
}

Outcome layout_constants() {
  // Frozen from tools/oracles/geometry_oracle.py.
  struct Row {
    std::uint64_t cap, pages, inodes, data_base;
  };
  const Row oracle[] = {{1048576, 251, 63, 20480},
                        {4194304, 1009, 253, 61440},
                        {134217728, 32325, 8082, 1814528},
                        {1060921, 254, 64, 20480},
                        {67108864, 16162, 4041, 909312}};
  std::size_t bad = 0;
  for (const auto& r : oracle) {
    const auto g = layout::compute_geometry(r.cap);
    bad += g.num_pages != r.pages || g.num_inodes != r.inodes || g.data_base != r.data_base;
  }
  std::mt19937_64 rng(16384);
  std::size_t samples = 0;
  for (; samples < 2000; ++samples) {
    const std::uint64_t cap = layout::kMinCapacity + rng() % (std::uint64_t{4} << 30);
    const auto g = layout::compute_geometry(cap);
    const std::uint64_t data = g.num_pages * layout::kPageSize;
    bad += g.num_inodes != (data + layout::kDataBytesPerInode - 1) / layout::kDataBytesPerInode;
    bad += g.data_base + data > cap;
  }
  std::ostringstream d;
  d << "dentry " << sizeof(layout::DentryRecord) << " B, name " << layout::kNameMax << " B, " << samples
    << " sampled capacities + 5 oracle rows, " << bad << " mismatches";
  return {bad == 0, d.str()};
}

Outcome fence_economy() {
  std::ifstream in(fs::path(SSUFS_TEST_DATA) / "golden" / "fence_counts.txt");
  std::stringstream ss;
  ss << in.rdbuf();
  const auto golden = parse_fence_table(ss.str());
  std::map<std::string, std::size_t> want(golden.begin(), golden.end());
  std::size_t bad = 0;
  std::ostringstream d;
  for (const auto& s : fence_scenarios()) {
    const auto got = measure_fences(s);
    auto it = want.find(s.name);
    if (it == want.end() || it->second != got) {
      ++bad;
      d << s.name << "=" << got << " (want " << (it == want.end() ? std::string("?") : std::to_string(it->second))
        << ") ";
    }
  }
  const bool mkdir2 = want.count("mkdir") && want["mkdir"] == 2;
  d << fence_scenarios().size() << " scenarios, " << bad << " mismatches, mkdir=" << (want.count("mkdir") ? want["mkdir"] : 0);
  return {bad == 0 && mkdir2 && want.size() == fence_scenarios().size(), d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssufs acceptance checks"};
  std::vector<int> only;
  bool nightly = false;
  app.add_option("--criterion", only, "criteria to run (default: all)")->check(CLI::Range(1, 8));
  app.add_flag("--nightly", nightly, "model check at the nightly bounds");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"compile-fail suite", compile_fail},
      {"crash enumeration", crash_suites},
      {"mutation sensitivity", mutations},
      {"model checker", [&] { return model_check(nightly); }},
      {"rebuild equivalence", rebuild_equivalence},
      {"synchronous durability", durability},
      {"layout constants", layout_constants},
      {"fence economy", fence_economy},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
