// ssufs command-line front end.
//
// Exit codes: 0 ok, 1 usage, 2 consistency failure, 3 internal error.
// Errors are reported as one line on stderr: "error: kind=<k> msg=<text>".

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "CLI11.hpp"
#include "ssufs/crashcheck.hpp"
#include "ssufs/fault.hpp"
#include "ssufs/fsck.hpp"
#include "ssufs/fsops.hpp"
#include "ssufs/layout.hpp"
#include "ssufs/model.hpp"
#include "ssufs/pmem.hpp"

namespace fs = std::filesystem;
using namespace ssufs;

namespace {

constexpr int kOk = 0, kUsage = 1, kInconsistent = 2, kInternal = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int report(const char* kind, const std::string& msg, int code) {
  std::string one_line = msg;
  std::replace(one_line.begin(), one_line.end(), '\n', ' ');
  std::cerr << "error: kind=" << kind << " msg=" << one_line << "\n";
  return code;
}

pmem::PmDevice load_image(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("no such image: " + path);
  return pmem::PmDevice::load(path);
}

Fault fault_option(const std::string& name) {
  if (name.empty()) return Fault::None;
  const auto f = parse_fault(name);
  if (!f) throw UsageError("unknown fault: " + name);
  if (*f != Fault::None && !fault_injection_available())
    throw UsageError("fault injection needs the ssufs-fault build");
  return *f;
}

// ---------------------------------------------------------------------------

int cmd_mkfs(const std::string& image, std::uint64_t size, bool force) {
  if (fs::exists(image) && !force) throw UsageError("image exists (use --force): " + image);
  pmem::PmDevice dev(size);
  layout::mkfs(dev);
  dev.save(image);
  const auto geo = layout::compute_geometry(size);
  std::cout << "mkfs: " << image << " size=" << size << " inodes=" << geo.num_inodes << " pages=" << geo.num_pages
            << "\n";
  return kOk;
}

// Shell commands map onto workload operations so that a script and the
// equivalent library calls produce identical images.
class Shell {
 public:
  explicit Shell(Fs& fs) : fs_(fs) {}

  static std::string absolute(const std::string& p) { return p.empty() || p[0] != '/' ? "/" + p : p; }

  // Returns false on "quit".
  bool run(const std::string& line, std::ostream& out) {
    std::istringstream is(line);
    std::string cmd;
    if (!(is >> cmd) || cmd[0] == '#') return true;
    std::vector<std::string> args;
    for (std::string a; is >> a;) args.push_back(a);
    auto need = [&](std::size_t n) {
      if (args.size() < n) throw UsageError(cmd + ": missing argument");
    };
    if (cmd == "quit" || cmd == "exit") return false;
    if (cmd == "ls") {
      const auto ino = fs_.lookup(args.empty() ? "/" : absolute(args[0]));
      for (const auto& e : fs_.readdir(ino))
        if (e.name != "." && e.name != "..") out << e.name << (fs_.stat(e.ino).is_dir ? "/" : "") << "\n";
    } else if (cmd == "mkdir") {
      need(1);
      apply(fs_, Op{Op::Kind::Mkdir, absolute(args[0])});
    } else if (cmd == "touch") {
      need(1);
      apply(fs_, Op{Op::Kind::Create, absolute(args[0])});
    } else if (cmd == "write") {
      // write PATH LEN [OFFSET [SEED]]; OFFSET defaults to the end of the file.
      need(2);
      Op op{Op::Kind::Write, absolute(args[0])};
      op.len = std::stoull(args[1]);
      op.offset = args.size() > 2 ? std::stoull(args[2]) : fs_.stat(fs_.lookup(op.path)).size;
      op.seed = args.size() > 3 ? std::stoull(args[3]) : 1;
      apply(fs_, op);
    } else if (cmd == "cat") {
      need(1);
      const auto ino = fs_.lookup(absolute(args[0]));
      const auto data = fs_.read(ino, 0, fs_.stat(ino).size);
      out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
      out << "\n";
    } else if (cmd == "rm") {
      need(1);
      apply(fs_, Op{Op::Kind::Unlink, absolute(args[0])});
    } else if (cmd == "rmdir") {
      need(1);
      apply(fs_, Op{Op::Kind::Rmdir, absolute(args[0])});
    } else if (cmd == "mv") {
      need(2);
      Op op{Op::Kind::Rename, absolute(args[0])};
      op.path2 = absolute(args[1]);
      apply(fs_, op);
    } else if (cmd == "stat") {
      need(1);
      const auto st = fs_.stat(fs_.lookup(absolute(args[0])));
      out << "ino=" << st.ino << " type=" << (st.is_dir ? "dir" : "file") << " size=" << st.size
          << " links=" << st.links << " mode=" << std::oct << st.mode << std::dec << " mtime=" << st.mtime << "\n";
    } else if (cmd == "sync") {
      need(1);
      apply(fs_, Op{Op::Kind::Fsync, absolute(args[0])});
    } else if (cmd == "tree") {
      out << fs_.dump_tree();
    } else {
      throw UsageError("unknown shell command: " + cmd);
    }
    return true;
  }

 private:
  Fs& fs_;
};

int cmd_shell(const std::string& image, const std::string& script, const std::string& workload, bool persist) {
  auto dev = load_image(image);
  int rc = kOk;
  {
    auto fsys = Fs::mount(dev);
    if (fsys.recovery_report().ran) std::cerr << "recovered: " << fsys.recovery_report().summary() << "\n";
    Shell sh(fsys);
    auto one = [&](const std::string& line) {
      try {
        return sh.run(line, std::cout);
      } catch (const FsError& e) {
        std::cerr << "error: kind=fs msg=" << e.what() << "\n";
        rc = kInconsistent;
        return true;
      }
    };
    if (!workload.empty()) {
      for (const auto& op : Workload::load(workload).ops) apply(fsys, op);
    } else if (!script.empty()) {
      std::ifstream in(script);
      if (!in) throw UsageError("cannot read script: " + script);
      for (std::string line; std::getline(in, line);)
        if (!one(line)) break;
    } else {
      const bool tty = isatty(0);
      for (std::string line;;) {
        if (tty) std::cout << "ssufs> " << std::flush;
        if (!std::getline(std::cin, line) || !one(line)) break;
      }
      rc = kOk;  // interactive errors are already reported per command
    }
    fsys.unmount();
  }
  if (persist) dev.save(image);
  return rc;
}

int cmd_fsck(const std::string& image, bool repair) {
  auto dev = load_image(image);
  const auto view = layout::ImageView::of_device(dev);
  const bool clean = view.superblock().clean_unmount != 0;
  if (!repair) {
    const auto rep = fsck(dev.media(), clean ? FsckMode::Strict : FsckMode::Crash);
    std::cout << (clean ? "clean" : "dirty") << " image\n" << rep.to_string();
    if (!rep.pass()) return kInconsistent;
    return clean ? kOk : kInconsistent;
  }
  RecoveryReport recovered;
  {
    auto fsys = Fs::mount(dev);
    recovered = fsys.recovery_report();
    fsys.unmount();
  }
  dev.save(image);
  std::cout << "recovery: " << (recovered.ran ? recovered.summary() : std::string("not needed")) << "\n";
  const auto rep = fsck(dev.media(), FsckMode::Strict);
  std::cout << rep.to_string();
  return rep.pass() ? kOk : kInconsistent;
}

struct BenchStats {
  std::vector<double> ns;
};

int cmd_bench(const std::string& image, std::uint64_t size, const std::string& op, int iters, int threads) {
  static const std::vector<std::string> kOps = {"create",  "mkdir",  "rename", "append1k",
                                                "append16k", "read1k", "read16k", "unlink"};
  if (std::find(kOps.begin(), kOps.end(), op) == kOps.end()) throw UsageError("unknown bench op: " + op);
  if (iters <= 0 || threads <= 0) throw UsageError("--iters and --threads must be positive");
  pmem::PmDevice dev = !image.empty() && fs::exists(image) ? pmem::PmDevice::load(image) : pmem::PmDevice(size);
  if (image.empty() || !fs::exists(image)) layout::mkfs(dev);
  auto fsys = Fs::mount(dev);

  // Each worker owns a directory; setup is excluded from timing.
  std::vector<BenchStats> stats(static_cast<std::size_t>(threads));
  const auto data1k = payload(1024, 7), data16k = payload(16384, 7);
  for (int t = 0; t < threads; ++t) fsys.mkdir("/", "w" + std::to_string(t));
  auto name = [](int i) { return "f" + std::to_string(i); };
  auto setup = [&](const std::string& dir) {
    const bool needs_files = op != "create" && op != "mkdir";
    for (int i = 0; i < iters && needs_files; ++i) {
      const auto ino = fsys.create(dir, name(i));
      if (op == "read1k") fsys.write(ino, 0, data1k);
      if (op == "read16k") fsys.write(ino, 0, data16k);
    }
  };
  for (int t = 0; t < threads; ++t) setup("/w" + std::to_string(t));

  dev.set_recording(true);
  auto worker = [&](int t) {
    const std::string dir = "/w" + std::to_string(t);
    auto& st = stats[static_cast<std::size_t>(t)];
    for (int i = 0; i < iters; ++i) {
      const auto start = std::chrono::steady_clock::now();
      if (op == "create") fsys.create(dir, name(i));
      else if (op == "mkdir") fsys.mkdir(dir, name(i));
      else if (op == "rename") fsys.rename(dir, name(i), dir, "r" + std::to_string(i));
      else if (op == "append1k") fsys.write(fsys.lookup(dir + "/" + name(i)), 0, data1k);
      else if (op == "append16k") fsys.write(fsys.lookup(dir + "/" + name(i)), 0, data16k);
      else if (op == "read1k") (void)fsys.read(fsys.lookup(dir + "/" + name(i)), 0, 1024);
      else if (op == "read16k") (void)fsys.read(fsys.lookup(dir + "/" + name(i)), 0, 16384);
      else if (op == "unlink") fsys.unlink(dir, name(i));
      st.ns.push_back(std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - start).count());
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  dev.set_recording(false);

  std::vector<double> all;
  for (const auto& s : stats) all.insert(all.end(), s.ns.begin(), s.ns.end());
  double sum = 0;
  for (double v : all) sum += v;
  const auto n = static_cast<double>(all.size());
  const auto& trace = dev.trace();
  std::cout << "op=" << op << " iters=" << all.size() << " threads=" << threads << " mean_ns=" << sum / n
            << " min_ns=" << *std::min_element(all.begin(), all.end())
            << " max_ns=" << *std::max_element(all.begin(), all.end())
            << " fences_per_op=" << static_cast<double>(trace.count(pmem::TraceEvent::Kind::Fence)) / n
            << " flushes_per_op=" << static_cast<double>(trace.count(pmem::TraceEvent::Kind::Flush)) / n << "\n";
  fsys.unmount();
  if (!image.empty()) dev.save(image);
  return kOk;
}

int cmd_crashtest(const std::vector<std::string>& workloads, const std::string& gen, std::size_t count,
                  std::size_t ops_per, std::uint64_t seed, std::size_t cap, const std::string& fault,
                  const std::string& repro) {
  std::vector<Workload> ws;
  for (const auto& path : workloads) ws.push_back(Workload::load(path));
  if (!gen.empty()) {
    auto g = generate_workloads(gen, count, seed, ops_per);
    ws.insert(ws.end(), g.begin(), g.end());
  }
  if (ws.empty()) throw UsageError("crashtest needs --workload or --gen");
  CrashOptions opts;
  opts.cap = cap;
  opts.seed = seed;
  opts.fault = fault_option(fault);
  bool failed = false;
  std::ofstream out;
  for (const auto& w : ws) {
    const auto v = run_crash_test(w, opts);
    std::cout << w.name << ": " << v.summary() << "\n";
    if (v.pass()) continue;
    failed = true;
    if (!out.is_open()) out.open(repro);
    out << "# workload " << w.name << "\n" << w.to_string();
    for (const auto& f : v.failures) {
      out << "# " << f.to_record() << "\n";
      std::cout << "  " << f.to_record() << "\n";
    }
  }
  if (failed) {
    std::cout << "reproducer: " << repro << "\n";
    return kInconsistent;
  }
  return kOk;
}

int cmd_modelcheck(int ops, int objects, int steps, bool no_rename_recovery, bool no_recovery, bool no_pointers,
                   const std::string& invariants, const std::string& trace_path) {
  model::Bounds b;
  b.max_ops = ops;
  b.pool = objects;
  b.max_steps = steps;
  model::Toggles t;
  t.rename_recovery = !no_rename_recovery;
  t.recovery = !no_recovery;
  t.rename_pointers = !no_pointers;
  const auto inv = invariants.empty() ? model::kAllInvariants : model::parse_invariants(invariants);
  const auto start = std::chrono::steady_clock::now();
  const auto r = model::check(b, t, inv);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "modelcheck ops=" << ops << " objects=" << objects << " steps=" << steps
            << " verdict=" << model::verdict_name(r.verdict) << " states=" << r.states << " seconds=" << secs << "\n";
  if (r.verdict == model::Verdict::Counterexample) {
    std::cout << "violation: " << r.violation << "\n";
    std::ofstream(trace_path) << model::print_trace(r);
    std::cout << "trace: " << trace_path << "\n";
    return kInconsistent;
  }
  return r.verdict == model::Verdict::Pass ? kOk : kInternal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssufs: persistent-memory file system with Synchronous Soft Updates"};
  app.require_subcommand(1);

  std::string image, script, workload_file, op = "create", gen, fault, repro = "crash-repro.txt",
                                            trace = "model-trace.txt", invariants;
  std::uint64_t size = 64ULL << 20, seed = 1;
  bool force = false, persist = false, repair = false, no_rr = false, no_rec = false, no_rp = false;
  int iters = 1000, threads = 1, ops = 2, objects = 8, steps = 24;
  std::size_t cap = 4096, count = 10, ops_per = 24;
  std::vector<std::string> workloads;

  auto* mkfs = app.add_subcommand("mkfs", "create an empty image");
  mkfs->add_option("--image", image, "image path")->required();
  mkfs->add_option("--size", size, "capacity in bytes");
  mkfs->add_flag("--force", force, "overwrite an existing image");

  auto* shell = app.add_subcommand("shell", "run commands against an image");
  shell->add_option("--image", image, "image path")->required();
  shell->add_option("--script", script, "file of shell commands");
  shell->add_option("--workload", workload_file, "operation log to replay");
  shell->add_flag("--persist", persist, "write the image back on exit");

  auto* fsck_cmd = app.add_subcommand("fsck", "check an image");
  fsck_cmd->add_option("--image", image, "image path")->required();
  fsck_cmd->add_flag("--repair", repair, "recover and write the image back");

  auto* bench = app.add_subcommand("bench", "latency of one operation");
  bench->add_option("--image", image, "image path (fresh in-memory device if absent)");
  bench->add_option("--size", size, "capacity of a fresh device");
  bench->add_option("--op", op, "create|mkdir|rename|append1k|append16k|read1k|read16k|unlink");
  bench->add_option("--iters", iters, "operations per worker");
  bench->add_option("--threads", threads, "workers, each in its own directory");

  auto* crash = app.add_subcommand("crashtest", "enumerate crash states of workloads");
  crash->add_option("--workload", workloads, "workload file (repeatable)");
  crash->add_option("--gen", gen, "generate workloads: mixed|rename-heavy");
  crash->add_option("--count", count, "generated workloads");
  crash->add_option("--ops", ops_per, "operations per generated workload");
  crash->add_option("--seed", seed, "seed for generation and sampling");
  crash->add_option("--cap", cap, "crash states per fence epoch");
  crash->add_option("--fault", fault, "fault to inject (ssufs-fault build)");
  crash->add_option("--reproducer", repro, "where failing workloads are written");

  auto* mc = app.add_subcommand("modelcheck", "bounded check of the abstract model");
  mc->add_option("--ops", ops, "system calls per trace");
  mc->add_option("--objects", objects, "persistent objects");
  mc->add_option("--steps", steps, "transitions per trace");
  mc->add_flag("--disable-rename-recovery", no_rr, "drop rename completion and rollback");
  mc->add_flag("--disable-recovery", no_rec, "drop orphan sweep and link repair");
  mc->add_flag("--disable-rename-pointers", no_rp, "rename without a rename pointer");
  mc->add_option("--invariants", invariants, "comma list: I1,I2,I3,I4,size,reappear,all");
  mc->add_option("--trace", trace, "counterexample output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report("usage", e.what(), kUsage);
  }

  try {
    if (*mkfs) return cmd_mkfs(image, size, force);
    if (*shell) return cmd_shell(image, script, workload_file, persist);
    if (*fsck_cmd) return cmd_fsck(image, repair);
    if (*bench) return cmd_bench(image, size, op, iters, threads);
    if (*crash) return cmd_crashtest(workloads, gen, count, ops_per, seed, cap, fault, repro);
    if (*mc) return cmd_modelcheck(ops, objects, steps, no_rr, no_rec, no_rp, invariants, trace);
  } catch (const UsageError& e) {
    return report("usage", e.what(), kUsage);
  } catch (const std::invalid_argument& e) {
    return report("usage", e.what(), kUsage);
  } catch (const FsError& e) {
    return report("fs", e.what(), kInconsistent);
  } catch (const CorruptionError& e) {
    return report("corruption", e.what(), kInconsistent);
  } catch (const std::exception& e) {
    return report("internal", e.what(), kInternal);
  }
  return kUsage;
}
