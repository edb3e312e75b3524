#include "ssufs/crashcheck.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "ssufs/fsck.hpp"
#include "ssufs/layout.hpp"

namespace ssufs {

namespace {

const std::map<Op::Kind, std::string_view> kOpNames = {
    {Op::Kind::Mkdir, "mkdir"},   {Op::Kind::Create, "create"}, {Op::Kind::Write, "write"},
    {Op::Kind::Unlink, "unlink"}, {Op::Kind::Rmdir, "rmdir"},   {Op::Kind::Rename, "rename"},
    {Op::Kind::Fsync, "fsync"},
};

std::uint64_t parse_u64(const std::string& s, std::string_view line) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("bad number in workload line: " + std::string(line));
  }
}

}  // namespace

std::string Op::to_string() const {
  std::ostringstream os;
  os << kOpNames.at(kind) << ' ' << path;
  if (kind == Kind::Rename) os << ' ' << path2;
  if (kind == Kind::Write) os << ' ' << offset << ' ' << len << ' ' << seed;
  return os.str();
}

Op Op::parse(std::string_view line) {
  std::istringstream is{std::string(line)};
  std::string verb;
  is >> verb;
  Op op;
  auto it = std::find_if(kOpNames.begin(), kOpNames.end(), [&](const auto& kv) { return kv.second == verb; });
  if (it == kOpNames.end()) throw std::invalid_argument("unknown workload operation: " + std::string(line));
  op.kind = it->first;
  if (!(is >> op.path)) throw std::invalid_argument("missing path: " + std::string(line));
  if (op.kind == Kind::Rename && !(is >> op.path2)) throw std::invalid_argument("missing destination: " + std::string(line));
  if (op.kind == Kind::Write) {
    std::string a, b, c;
    if (!(is >> a >> b >> c)) throw std::invalid_argument("write needs OFFSET LEN SEED: " + std::string(line));
    op.offset = parse_u64(a, line);
    op.len = parse_u64(b, line);
    op.seed = parse_u64(c, line);
  }
  std::string extra;
  if (is >> extra) throw std::invalid_argument("trailing tokens: " + std::string(line));
  return op;
}

std::string Workload::to_string() const {
  std::string out;
  for (const auto& op : ops) out += op.to_string() + '\n';
  return out;
}

Workload Workload::parse(std::string_view text, std::string name) {
  Workload w;
  w.name = std::move(name);
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    w.ops.push_back(Op::parse(std::string_view(line).substr(first)));
  }
  return w;
}

Workload Workload::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open workload " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto name = path.substr(path.find_last_of('/') + 1);
  return parse(ss.str(), name);
}

std::vector<std::uint8_t> payload(std::uint64_t len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> out(len);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng() % 251 + 1);
  return out;
}

void apply(Fs& fs, const Op& op) {
  switch (op.kind) {
    case Op::Kind::Mkdir: {
      auto [p, n] = split_path(op.path);
      fs.mkdir(p, n);
      break;
    }
    case Op::Kind::Create: {
      auto [p, n] = split_path(op.path);
      fs.create(p, n);
      break;
    }
    case Op::Kind::Write:
      fs.write(fs.lookup(op.path), op.offset, payload(op.len, op.seed));
      break;
    case Op::Kind::Unlink: {
      auto [p, n] = split_path(op.path);
      fs.unlink(p, n);
      break;
    }
    case Op::Kind::Rmdir: {
      auto [p, n] = split_path(op.path);
      fs.rmdir(p, n);
      break;
    }
    case Op::Kind::Rename: {
      auto [sp, sn] = split_path(op.path);
      auto [dp, dn] = split_path(op.path2);
      fs.rename(sp, sn, dp, dn);
      break;
    }
    case Op::Kind::Fsync:
      fs.fsync(fs.lookup(op.path));
      break;
  }
}

std::string CrashFailure::to_record() const {
  std::ostringstream os;
  os << "workload=" << workload << " op=" << op_index << " epoch=" << epoch << " subset=" << subset
     << " invariant=" << invariant << " detail=\"" << detail << '"';
  return os.str();
}

std::string CrashVerdict::summary() const {
  std::ostringstream os;
  os << (pass() ? "PASS" : "FAIL") << " ops=" << ops << " crash_points=" << crash_points << " states=" << states
     << " distinct=" << distinct_states << " failures=" << failures.size();
  return os.str();
}

namespace {

struct TreeLine {
  std::string path;
  std::string ino, kind, size, links, digest;
};

std::vector<TreeLine> parse_tree(const std::string& dump) {
  std::vector<TreeLine> out;
  std::istringstream is(dump);
  TreeLine t;
  while (is >> t.path >> t.ino >> t.kind >> t.size >> t.links >> t.digest) out.push_back(t);
  return out;
}

// Exact match, except that the file targeted by a write may show either the
// old or the new size and any contents (data writes are not atomic).
bool tree_matches(const std::string& got, const std::string& want, const std::string& relaxed_path,
                  const std::string& alt_size) {
  if (got == want) return true;
  if (relaxed_path.empty()) return false;
  const auto g = parse_tree(got);
  const auto w = parse_tree(want);
  if (g.size() != w.size()) return false;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& a = g[i];
    const auto& b = w[i];
    if (a.path != b.path || a.ino != b.ino || a.kind != b.kind || a.links != b.links) return false;
    if (a.path == relaxed_path) {
      if (a.size != b.size && a.size != alt_size) return false;
    } else if (a.size != b.size || a.digest != b.digest) {
      return false;
    }
  }
  return true;
}

std::string size_of(const std::string& dump, const std::string& path) {
  for (const auto& t : parse_tree(dump))
    if (t.path == path) return t.size;
  return {};
}

std::optional<std::uint64_t> try_lookup(const Fs& fs, const std::string& path) {
  try {
    return fs.lookup(path);
  } catch (const FsError& e) {
    if (e.code() == Errc::NoEntry || e.code() == Errc::NotDir) return std::nullopt;
    throw;
  }
}

struct Reference {
  std::vector<std::string> pre, post;
  std::vector<std::optional<std::uint64_t>> moved;  // rename source inode
  std::vector<bool> failed;
};

}  // namespace

CrashVerdict run_crash_test(const Workload& w, const CrashOptions& opts) {
  CrashVerdict verdict;
  verdict.ops = w.ops.size();
  FsOptions fs_opts;
  fs_opts.fault = opts.fault;

  // Reference run: the tree before and after each operation.
  Reference ref;
  {
    pmem::PmDevice dev(opts.device_size);
    layout::mkfs(dev);
    auto fs = Fs::mount(dev, fs_opts);
    for (std::size_t i = 0; i < w.ops.size(); ++i) {
      const auto& op = w.ops[i];
      ref.pre.push_back(fs.dump_tree());
      ref.moved.push_back(op.kind == Op::Kind::Rename ? try_lookup(fs, op.path) : std::nullopt);
      bool failed = false;
      try {
        apply(fs, op);
      } catch (const FsError& e) {
        failed = true;
        verdict.op_errors.push_back(std::to_string(i) + ": " + op.to_string() + ": " + e.what());
      }
      ref.failed.push_back(failed);
      ref.post.push_back(fs.dump_tree());
    }
  }

  std::unordered_set<std::string> seen;
  std::size_t current = 0;
  bool active = false;

  auto fail = [&](std::uint64_t epoch, const std::string& subset, std::string inv, std::string detail) {
    if (verdict.failures.size() >= opts.max_failures) return;
    verdict.failures.push_back({w.name, current, epoch, subset, std::move(inv), std::move(detail)});
  };

  auto check = [&](const pmem::CrashState& cs, std::uint64_t epoch, bool at_end) {
    ++verdict.states;
    std::string key = std::to_string(current) + (at_end ? "e" : "f");
    key += std::to_string(std::hash<std::string_view>{}(
        std::string_view(reinterpret_cast<const char*>(cs.image.data()), cs.image.size())));
    if (!seen.insert(key).second) return;
    ++verdict.distinct_states;

    const auto& op = w.ops[current];
    const auto pre = fsck(cs.image, FsckMode::Crash);
    if (!pre.pass()) {
      fail(epoch, cs.description, "pre-recovery " + pre.first_failure(), pre.issues.front().object + ": " + pre.issues.front().detail);
      return;
    }
    pmem::PmDevice dev = pmem::PmDevice::from_image(cs.image);
    std::string tree;
    std::optional<std::uint64_t> src_ino, dst_ino;
    try {
      auto fs = Fs::mount(dev);
      tree = fs.dump_tree();
      if (op.kind == Op::Kind::Rename) {
        src_ino = try_lookup(fs, op.path);
        dst_ino = try_lookup(fs, op.path2);
      }
    } catch (const std::exception& e) {
      fail(epoch, cs.description, "recovery", e.what());
      return;
    }
    const auto post = fsck(dev.media(), FsckMode::Strict);
    if (!post.pass()) {
      fail(epoch, cs.description, post.first_failure(), post.issues.front().object + ": " + post.issues.front().detail);
      return;
    }
    if (op.kind == Op::Kind::Rename && !ref.failed[current] && ref.moved[current]) {
      const auto moved = *ref.moved[current];
      const bool src_ok = src_ino && *src_ino == moved;
      const bool dst_ok = dst_ino && *dst_ino == moved;
      if (src_ok == dst_ok) {
        fail(epoch, cs.description, "rename-xor",
             std::string("source ") + (src_ok ? "resolves" : "missing") + ", destination " + (dst_ok ? "resolves" : "missing"));
        return;
      }
    }
    const std::string relaxed = op.kind == Op::Kind::Write && !at_end ? op.path : std::string();
    const bool ok_post = tree_matches(tree, ref.post[current], relaxed, size_of(ref.pre[current], op.path));
    const bool ok_pre = !at_end && tree_matches(tree, ref.pre[current], relaxed, size_of(ref.post[current], op.path));
    if (!ok_post && !ok_pre) {
      fail(epoch, cs.description, at_end ? "durability" : "atomicity",
           "recovered tree matches neither the state before nor after the operation");
    }
  };

  pmem::PmDevice dev(opts.device_size);
  layout::mkfs(dev);
  if (opts.fence_points) {
    dev.set_fence_hook([&](const pmem::PmDevice& d) {
      if (!active) return;
      ++verdict.crash_points;
      const auto epoch = d.epoch();
      d.for_each_crash_state(opts.cap, opts.seed ^ (epoch * 0x9e3779b97f4a7c15ULL),
                             [&](const pmem::CrashState& cs) { check(cs, epoch, false); });
    });
  }
  auto fs = Fs::mount(dev, fs_opts);
  for (current = 0; current < w.ops.size(); ++current) {
    active = true;
    try {
      apply(fs, w.ops[current]);
    } catch (const FsError&) {
    }
    active = false;
    // Crash immediately after the call returns, with no further events.
    ++verdict.crash_points;
    dev.for_each_crash_state(opts.cap, opts.seed, [&](const pmem::CrashState& cs) { check(cs, dev.epoch(), true); });
  }
  return verdict;
}

// -- generator ----------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 8> kNames = {"a", "b", "c", "d", "e", "f", "g", "h"};
constexpr std::size_t kMaxDepth = 4;
constexpr std::size_t kMaxObjects = 40;
constexpr std::uint64_t kMaxPages = 120;

struct Namespace {
  std::set<std::string> dirs{"/"};
  std::map<std::string, std::uint64_t> files;  // path -> size

  static std::size_t depth(const std::string& p) {
    return p == "/" ? 0 : static_cast<std::size_t>(std::count(p.begin(), p.end(), '/'));
  }
  static std::string join(const std::string& dir, std::string_view name) {
    return (dir == "/" ? "/" : dir + "/") + std::string(name);
  }
  static std::string parent(const std::string& p) {
    const auto i = p.find_last_of('/');
    return i == 0 ? "/" : p.substr(0, i);
  }
  static bool under(const std::string& p, const std::string& dir) {
    return p.size() > dir.size() && p.compare(0, dir.size(), dir) == 0 && p[dir.size()] == '/';
  }
  bool exists(const std::string& p) const { return dirs.count(p) != 0 || files.count(p) != 0; }
  bool empty_dir(const std::string& d) const {
    for (const auto& x : dirs)
      if (under(x, d)) return false;
    for (const auto& [f, s] : files)
      if (under(f, d)) return false;
    return true;
  }
  std::size_t subtree_height(const std::string& d) const {
    std::size_t h = 0;
    const auto base = depth(d);
    for (const auto& x : dirs)
      if (under(x, d)) h = std::max(h, depth(x) - base);
    for (const auto& [f, s] : files)
      if (under(f, d)) h = std::max(h, depth(f) - base);
    return h;
  }
  std::uint64_t pages() const {
    std::uint64_t n = dirs.size();
    for (const auto& [f, s] : files) n += (s + layout::kPageSize - 1) / layout::kPageSize;
    return n;
  }
  std::size_t objects() const { return dirs.size() + files.size(); }
};

template <class C>
auto pick(std::mt19937_64& rng, const C& c) {
  auto it = c.begin();
  std::advance(it, std::uniform_int_distribution<std::size_t>(0, c.size() - 1)(rng));
  return *it;
}

std::optional<Op> gen_rename(std::mt19937_64& rng, Namespace& ns) {
  std::vector<std::string> sources;
  for (const auto& d : ns.dirs)
    if (d != "/") sources.push_back(d);
  for (const auto& [f, s] : ns.files) sources.push_back(f);
  if (sources.empty()) return std::nullopt;
  for (int attempt = 0; attempt < 16; ++attempt) {
    const auto src = pick(rng, sources);
    const bool is_dir = ns.dirs.count(src) != 0;
    const auto dir = pick(rng, ns.dirs);
    const auto dst = Namespace::join(dir, pick(rng, kNames));
    if (dst == src || Namespace::depth(dst) > kMaxDepth) continue;
    if (is_dir && (dst == src || Namespace::under(dst, src) || dir == src)) continue;
    if (is_dir && Namespace::depth(dst) + ns.subtree_height(src) > kMaxDepth) continue;
    if (ns.exists(dst)) {
      const bool dst_dir = ns.dirs.count(dst) != 0;
      if (dst_dir != is_dir) continue;
      if (dst_dir && !ns.empty_dir(dst)) continue;
      if (dst_dir) {
        ns.dirs.erase(dst);
      } else {
        ns.files.erase(dst);
      }
    }
    if (is_dir) {
      std::set<std::string> dirs;
      for (const auto& d : ns.dirs) dirs.insert(d == src ? dst : Namespace::under(d, src) ? dst + d.substr(src.size()) : d);
      std::map<std::string, std::uint64_t> files;
      for (const auto& [f, s] : ns.files) files[Namespace::under(f, src) ? dst + f.substr(src.size()) : f] = s;
      ns.dirs = std::move(dirs);
      ns.files = std::move(files);
    } else {
      const auto size = ns.files.at(src);
      ns.files.erase(src);
      ns.files[dst] = size;
    }
    Op op;
    op.kind = Op::Kind::Rename;
    op.path = src;
    op.path2 = dst;
    return op;
  }
  return std::nullopt;
}

std::optional<Op> gen_other(std::mt19937_64& rng, Namespace& ns) {
  const int choice = std::uniform_int_distribution<int>(0, 9)(rng);
  Op op;
  if (choice <= 2 || ns.files.empty()) {
    // create or mkdir
    if (ns.objects() >= kMaxObjects || ns.pages() >= kMaxPages) return std::nullopt;
    const auto dir = pick(rng, ns.dirs);
    if (Namespace::depth(dir) >= kMaxDepth) return std::nullopt;
    const auto path = Namespace::join(dir, pick(rng, kNames));
    if (ns.exists(path)) return std::nullopt;
    const bool mk = choice == 0 || (choice == 1 && Namespace::depth(path) < kMaxDepth);
    op.kind = mk ? Op::Kind::Mkdir : Op::Kind::Create;
    op.path = path;
    if (mk) {
      ns.dirs.insert(path);
    } else {
      ns.files[path] = 0;
    }
    return op;
  }
  if (choice <= 5) {
    const auto [path, size] = pick(rng, ns.files);
    op.kind = Op::Kind::Write;
    op.path = path;
    const bool grow = ns.pages() < kMaxPages && (size == 0 || (rng() & 1u));
    if (grow) {
      op.offset = size + (rng() % 4 == 0 ? std::uniform_int_distribution<std::uint64_t>(1, 5000)(rng) : 0);
      op.len = std::uniform_int_distribution<std::uint64_t>(1, 9000)(rng);
    } else {
      if (size == 0) return std::nullopt;
      op.offset = std::uniform_int_distribution<std::uint64_t>(0, size - 1)(rng);
      op.len = std::uniform_int_distribution<std::uint64_t>(1, size - op.offset)(rng);
    }
    op.seed = rng();
    ns.files[path] = std::max(size, op.offset + op.len);
    return op;
  }
  if (choice <= 7) {
    const auto [path, size] = pick(rng, ns.files);
    op.kind = Op::Kind::Unlink;
    op.path = path;
    ns.files.erase(path);
    return op;
  }
  if (choice == 8) {
    std::vector<std::string> empties;
    for (const auto& d : ns.dirs)
      if (d != "/" && ns.empty_dir(d)) empties.push_back(d);
    if (empties.empty()) return std::nullopt;
    op.kind = Op::Kind::Rmdir;
    op.path = pick(rng, empties);
    ns.dirs.erase(op.path);
    return op;
  }
  op.kind = Op::Kind::Fsync;
  op.path = pick(rng, ns.files).first;
  return op;
}

}  // namespace

std::vector<Workload> generate_workloads(std::string_view profile, std::size_t n, std::uint64_t seed,
                                         std::size_t ops_per_workload) {
  const bool rename_heavy = profile == "rename-heavy";
  if (!rename_heavy && profile != "mixed") throw std::invalid_argument("unknown workload profile: " + std::string(profile));
  std::mt19937_64 rng(seed);
  std::vector<Workload> out;
  for (std::size_t k = 0; k < n; ++k) {
    Workload w;
    w.name = std::string(profile) + "-" + std::to_string(seed) + "-" + std::to_string(k);
    Namespace ns;
    std::size_t renames = 0;
    std::size_t guard = 0;
    while (w.ops.size() < ops_per_workload && guard++ < ops_per_workload * 64) {
      std::optional<Op> op;
      const bool want_rename =
          rename_heavy ? renames * 2 <= w.ops.size() : std::uniform_int_distribution<int>(0, 5)(rng) == 0;
      if (want_rename) op = gen_rename(rng, ns);
      if (!op && (!rename_heavy || renames * 2 > w.ops.size() || ns.objects() < 3)) op = gen_other(rng, ns);
      if (!op) continue;
      if (op->kind == Op::Kind::Rename) ++renames;
      w.ops.push_back(*op);
    }
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace ssufs

namespace ssufs {

const std::vector<FenceScenario>& fence_scenarios() {
  static const std::vector<FenceScenario> kScenarios = {
      {"create", "create /warm", "create /f"},
      {"mkdir", "create /warm", "mkdir /d"},
      {"create-new-dir-page", "mkdir /d", "create /d/f"},
      {"append", "create /f", "write /f 0 1024 1"},
      {"append-16k", "create /f", "write /f 0 16384 1"},
      {"append-partial-page", "create /f\nwrite /f 0 100 1", "write /f 100 100 2"},
      {"overwrite", "create /f\nwrite /f 0 8192 1", "write /f 4096 100 2"},
      {"fsync", "create /f\nwrite /f 0 100 1", "fsync /f"},
      {"unlink-empty", "create /f", "unlink /f"},
      {"unlink-with-pages", "create /f\nwrite /f 0 8192 1", "unlink /f"},
      {"rmdir-never-populated", "mkdir /d", "rmdir /d"},
      {"rmdir-emptied", "mkdir /d\ncreate /d/f\nunlink /d/f", "rmdir /d"},
      {"rename-same-dir", "create /f", "rename /f /g"},
      {"rename-cross-dir-file", "mkdir /d\ncreate /d/x\ncreate /f", "rename /f /d/g"},
      {"rename-cross-dir-dir", "mkdir /d\ncreate /d/x\nmkdir /s", "rename /s /d/s"},
      {"rename-overwrite-empty-file", "create /f\ncreate /g", "rename /f /g"},
      {"rename-overwrite-file-with-pages", "create /f\ncreate /g\nwrite /g 0 4096 1", "rename /f /g"},
      {"rename-overwrite-dir", "mkdir /a\nmkdir /b", "rename /a /b"},
  };
  return kScenarios;
}

std::size_t measure_fences(const FenceScenario& s) {
  pmem::PmDevice dev(1 << 20);
  layout::mkfs(dev);
  auto fs = Fs::mount(dev);
  for (const auto& op : Workload::parse(s.setup, s.name).ops) apply(fs, op);
  const auto measured = Workload::parse(s.measured, s.name);
  if (measured.ops.size() != 1) throw std::invalid_argument("fence scenario must measure one operation");
  dev.trace().clear();
  dev.set_recording(true);
  apply(fs, measured.ops.front());
  dev.set_recording(false);
  return dev.trace().count(pmem::TraceEvent::Kind::Fence);
}

std::vector<std::pair<std::string, std::size_t>> parse_fence_table(std::string_view text) {
  std::vector<std::pair<std::string, std::size_t>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string name;
    std::size_t n = 0;
    if (!(ls >> name >> n)) throw std::invalid_argument("bad fence table line: " + line);
    out.emplace_back(name, n);
  }
  return out;
}

}  // namespace ssufs
