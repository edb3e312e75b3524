#include "ssufs/model.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "ssufs/typestate.hpp"

namespace ssufs::model {

namespace {

enum Tag : std::uint8_t {
  TNone,
  TFree,
  TInit,
  TAlloc,
  TCommitted,
  TIncLink,
  TDecLink,
  TPointerSet,
  TRenaming,
  TClearedIno,
  TDealloc,
  TWritten,
  TClearedBackptrs,
  TUnmapPages,
  TLive,
  TKeep = 255,
};

const char* tag_name(std::uint8_t t) {
  static const char* kNames[] = {"-",       "Free",     "Init",       "Alloc",   "Committed",
                                 "IncLink", "DecLink",  "PointerSet", "Renaming", "ClearedIno",
                                 "Dealloc", "Written",  "ClearedBackptrs", "UnmapPages", "Live"};
  return t < std::size(kNames) ? kNames[t] : "?";
}

enum PState : std::uint8_t { Clean, Dirty, InFlight };
constexpr std::uint8_t kAnyPs = 0b111;
constexpr std::uint8_t kCleanPs = 1 << Clean;
constexpr std::uint8_t kNotInFlight = (1 << Clean) | (1 << Dirty);

enum Kind : std::uint8_t { KNone, KCreate, KMkdir, KWrite, KUnlink, KRmdir, KRename };
const char* kind_name(std::uint8_t k) {
  static const char* kNames[] = {"-", "create", "mkdir", "write", "unlink", "rmdir", "rename"};
  return kNames[k];
}

// Field positions.
constexpr int kKind = 0, kLinks = 1, kSized = 2;      // inode
constexpr int kDir = 0, kName = 1, kIno = 2, kRp = 3;  // dentry
constexpr int kOwner = 0, kPageKind = 1;               // page
constexpr std::uint8_t kFile = 1, kDirectory = 2;

constexpr std::uint8_t kVolFree = 1, kVolVisible = 2;

struct Obj {
  std::array<std::uint8_t, 4> d{};  // durable
  std::array<std::uint8_t, 4> v{};  // cached
  std::uint8_t ps = Clean;
  std::uint8_t tag = TNone;
  std::uint8_t holder = 0;  // op slot + 1
  std::uint8_t vol = 0;
};

// Arguments are object indices + 1 (0 = none), except names and flags.
// create/mkdir: P I E name | write: I G | unlink/rmdir: P E I G name
// rename: SP S DP name M N OE V G flags src-name
struct MOp {
  std::uint8_t kind = KNone;
  std::uint8_t pc = 0;
  std::array<std::uint8_t, 12> a{};
};

enum RenameFlag : std::uint8_t { kIncNew = 1, kDecNew = 2, kDecOld = 4 };

struct State {
  std::vector<Obj> o;
  std::vector<MOp> ops;
  std::uint8_t started = 0;
  std::uint8_t crashed = 0;
  std::uint8_t phase = 0;  // recovery progress while crashed

  std::string key() const {
    std::string k;
    k.reserve(o.size() * 12 + ops.size() * 12 + 3);
    for (const auto& x : o) {
      k.append(reinterpret_cast<const char*>(x.d.data()), 4);
      k.append(reinterpret_cast<const char*>(x.v.data()), 4);
      k.push_back(static_cast<char>(x.ps));
      k.push_back(static_cast<char>(x.tag));
      k.push_back(static_cast<char>(x.holder));
      k.push_back(static_cast<char>(x.vol));
    }
    for (const auto& op : ops) {
      k.push_back(static_cast<char>(op.kind));
      k.push_back(static_cast<char>(op.pc));
      k.append(reinterpret_cast<const char*>(op.a.data()), op.a.size());
    }
    k.push_back(static_cast<char>(started));
    k.push_back(static_cast<char>(crashed));
    k.push_back(static_cast<char>(phase));
    return k;
  }
};

struct Pool {
  int ni = 0, nd = 0, np = 0;
  int total() const { return ni + nd + np; }
  bool is_inode(int g) const { return g < ni; }
  bool is_dentry(int g) const { return g >= ni && g < ni + nd; }
  bool is_page(int g) const { return g >= ni + nd; }
  int dentry(int j) const { return ni + j; }
  int page(int k) const { return ni + nd + k; }
};

bool zero(const std::array<std::uint8_t, 4>& f) { return f == std::array<std::uint8_t, 4>{}; }

struct Req {
  int obj;
  std::uint8_t tag;
  std::uint8_t ps;
};

struct Eff {
  enum Mode { Set, Add, Zero, Touch, TagOnly };
  int obj;
  Mode mode;
  int field = 0;
  int val = 0;
  std::uint8_t tag = TKeep;
};

struct Step {
  std::string name;
  std::vector<Req> req;
  std::vector<Eff> eff;
  enum { Plain, Flush, Fence } special = Plain;
};

char name_char(std::uint8_t n) { return static_cast<char>('a' + n - 1); }

// ---------------------------------------------------------------------------
// Programs. Each mirrors the fence groups of the corresponding Fs operation.

class ProgramBuilder {
 public:
  void step(std::string name, std::vector<Req> req, std::vector<Eff> eff) {
    for (const auto& e : eff)
      if (e.mode != Eff::TagOnly) dirty_ = true;
    steps_.push_back(Step{std::move(name), std::move(req), std::move(eff)});
  }
  /// Flush and fence the group, if it changed anything.
  void persist() {
    if (!dirty_) return;
    steps_.push_back(Step{"flush", {}, {}, Step::Flush});
    steps_.push_back(Step{"fence", {}, {}, Step::Fence});
    dirty_ = false;
  }
  std::vector<Step> take() { return std::move(steps_); }

 private:
  std::vector<Step> steps_;
  bool dirty_ = false;
};

std::vector<Step> program(const MOp& op, const Toggles& t) {
  ProgramBuilder b;
  auto g = [&](int i) { return static_cast<int>(op.a[i]) - 1; };
  switch (op.kind) {
    case KCreate:
    case KMkdir: {
      const int P = g(0), I = g(1), E = g(2);
      const bool dir = op.kind == KMkdir;
      b.step("acquire_free_inode", {{I, TNone, kAnyPs}}, {{I, Eff::TagOnly, 0, 0, TFree}});
      b.step("acquire_free_dentry", {{E, TNone, kAnyPs}}, {{E, Eff::TagOnly, 0, 0, TFree}});
      b.step("init_inode", {{I, TFree, kCleanPs}},
             {{I, Eff::Set, kKind, dir ? kDirectory : kFile, TInit}, {I, Eff::Set, kLinks, dir ? 2 : 1, TInit}});
      b.step("set_name", {{E, TFree, kCleanPs}},
             {{E, Eff::Set, kDir, P + 1, TAlloc}, {E, Eff::Set, kName, op.a[3], TAlloc}});
      if (dir) b.step("inc_link", {{P, TCommitted, kCleanPs}}, {{P, Eff::Add, kLinks, 1, TIncLink}});
      b.persist();
      b.step("commit_dentry", {{E, TAlloc, kCleanPs}, {I, TInit, kCleanPs}, {P, dir ? TIncLink : TCommitted, kCleanPs}},
             {{E, Eff::Set, kIno, I + 1, TCommitted}, {I, Eff::TagOnly, 0, 0, TCommitted}});
      b.persist();
      break;
    }
    case KWrite: {
      const int I = g(0), G = g(1);
      b.step("alloc_pages", {{G, TFree, kCleanPs}, {I, TCommitted, kCleanPs}},
             {{G, Eff::Set, kOwner, I + 1, TAlloc}, {G, Eff::Set, kPageKind, 1, TAlloc}});
      b.step("write_pages", {{G, TAlloc, kNotInFlight}}, {{G, Eff::Touch, 0, 0, TWritten}});
      b.persist();
      b.step("set_size", {{G, TWritten, kCleanPs}, {I, TCommitted, kCleanPs}}, {{I, Eff::Set, kSized, 1, TKeep}});
      b.persist();
      break;
    }
    case KUnlink:
    case KRmdir: {
      const int P = g(0), E = g(1), I = g(2), G = g(3);
      b.step("clear_ino", {{E, TCommitted, kCleanPs}}, {{E, Eff::Set, kIno, 0, TClearedIno}});
      b.persist();
      b.step("dec_link", {{I, TCommitted, kCleanPs}, {E, TClearedIno, kCleanPs}}, {{I, Eff::Add, kLinks, -1, TDecLink}});
      if (op.kind == KRmdir)
        b.step("dec_link", {{P, TCommitted, kCleanPs}, {E, TClearedIno, kCleanPs}}, {{P, Eff::Add, kLinks, -1, TDecLink}});
      b.step("dealloc_dentry", {{E, TClearedIno, kCleanPs}}, {{E, Eff::Zero, 0, 0, TDealloc}});
      b.persist();
      b.step("unmap_pages", {{I, TDecLink, kCleanPs}}, {{I, Eff::TagOnly, 0, 0, TUnmapPages}});
      if (G >= 0) {
        b.step("clear_backpointers", {{G, TLive, kCleanPs}, {I, TUnmapPages, kCleanPs}},
               {{G, Eff::Set, kOwner, 0, TClearedBackptrs}});
        b.persist();
        b.step("dealloc_pages", {{G, TClearedBackptrs, kCleanPs}}, {{G, Eff::Zero, 0, 0, TDealloc}});
        b.persist();
      }
      std::vector<Req> req{{I, TUnmapPages, kCleanPs}};
      if (G >= 0) req.push_back({G, TDealloc, kCleanPs});
      b.step("dealloc_inode", req, {{I, Eff::Zero, 0, 0, TDealloc}});
      b.persist();
      break;
    }
    case KRename: {
      const int SP = g(0), S = g(1), DP = g(2), M = g(4), N = g(5), OE = g(6), V = g(7), G = g(8);
      const std::uint8_t name = op.a[3], flags = op.a[9];
      const bool rp = t.rename_pointers;
      b.step("acquire_free_dentry", {{N, TNone, kAnyPs}}, {{N, Eff::TagOnly, 0, 0, TFree}});
      b.step("set_name", {{N, TFree, kCleanPs}}, {{N, Eff::Set, kDir, DP + 1, TAlloc}, {N, Eff::Set, kName, name, TAlloc}});
      if (!rp && (flags & kIncNew)) b.step("inc_link", {{DP, TCommitted, kCleanPs}}, {{DP, Eff::Add, kLinks, 1, TIncLink}});
      b.persist();
      std::uint8_t before_commit = TAlloc;
      if (rp) {
        b.step("set_rename_pointer", {{N, TAlloc, kCleanPs}, {S, TCommitted, kCleanPs}},
               {{N, Eff::Set, kRp, S + 1, TPointerSet}});
        if (flags & kIncNew) b.step("inc_link", {{DP, TCommitted, kCleanPs}}, {{DP, Eff::Add, kLinks, 1, TIncLink}});
        b.persist();
        before_commit = TPointerSet;
      }
      std::vector<Req> creq{{N, before_commit, kCleanPs}, {M, TCommitted, kCleanPs}};
      if (flags & kIncNew) creq.push_back({DP, TIncLink, kCleanPs});
      b.step("commit_rename", creq, {{N, Eff::Set, kIno, M + 1, TRenaming}});
      b.persist();
      b.step("clear_ino", {{S, TCommitted, kCleanPs}, {N, TRenaming, kCleanPs}}, {{S, Eff::Set, kIno, 0, TClearedIno}});
      if (OE >= 0)
        b.step("clear_ino", {{OE, TCommitted, kCleanPs}, {N, TRenaming, kCleanPs}}, {{OE, Eff::Set, kIno, 0, TClearedIno}});
      b.persist();
      if (rp) {
        b.step("clear_rename_pointer", {{N, TRenaming, kCleanPs}, {S, TClearedIno, kCleanPs}},
               {{N, Eff::Set, kRp, 0, TCommitted}});
      }
      if (V >= 0)
        b.step("dec_link", {{V, TCommitted, kCleanPs}, {OE, TClearedIno, kCleanPs}}, {{V, Eff::Add, kLinks, -1, TDecLink}});
      if (flags & kDecOld)
        b.step("dec_link", {{SP, TCommitted, kCleanPs}, {S, TClearedIno, kCleanPs}}, {{SP, Eff::Add, kLinks, -1, TDecLink}});
      if (flags & kDecNew)
        b.step("dec_link", {{DP, TCommitted, kCleanPs}, {OE, TClearedIno, kCleanPs}}, {{DP, Eff::Add, kLinks, -1, TDecLink}});
      b.persist();
      b.step("dealloc_dentry", {{S, TClearedIno, kCleanPs}}, {{S, Eff::Zero, 0, 0, TDealloc}});
      if (OE >= 0) b.step("dealloc_dentry", {{OE, TClearedIno, kCleanPs}}, {{OE, Eff::Zero, 0, 0, TDealloc}});
      if (V >= 0) b.step("unmap_pages", {{V, TDecLink, kCleanPs}}, {{V, Eff::TagOnly, 0, 0, TUnmapPages}});
      if (G >= 0)
        b.step("clear_backpointers", {{G, TLive, kCleanPs}, {V, TUnmapPages, kCleanPs}},
               {{G, Eff::Set, kOwner, 0, TClearedBackptrs}});
      b.persist();
      if (G >= 0) {
        b.step("dealloc_pages", {{G, TClearedBackptrs, kCleanPs}}, {{G, Eff::Zero, 0, 0, TDealloc}});
        b.persist();
      }
      if (V >= 0) {
        std::vector<Req> req{{V, TUnmapPages, kCleanPs}};
        if (G >= 0) req.push_back({G, TDealloc, kCleanPs});
        b.step("dealloc_inode", req, {{V, Eff::Zero, 0, 0, TDealloc}});
        b.persist();
      }
      break;
    }
    default:
      throw std::logic_error("model: program of an idle slot");
  }
  return b.take();
}

// ---------------------------------------------------------------------------
// Durable-state analysis shared by invariants, recovery and mount.

struct Analysis {
  std::vector<bool> valid;      // per dentry: logically valid
  std::vector<bool> reachable;  // per inode
  std::vector<int> true_links;  // per inode
};

class Checker {
 public:
  Checker(const Bounds& b, const Toggles& t, unsigned inv) : bounds_(b), toggles_(t), inv_(inv) {
    const auto s = pool_split(b.pool);
    pool_ = Pool{s[0], s[1], s[2]};
  }

  State initial() const {
    State s;
    s.o.resize(static_cast<std::size_t>(pool_.total()));
    s.ops.resize(static_cast<std::size_t>(std::max(1, bounds_.max_ops)));
    auto set = [&](int g, int f, std::uint8_t val) { s.o[g].d[f] = s.o[g].v[f] = val; };
    set(0, kKind, kDirectory);
    set(0, kLinks, 2);
    if (pool_.ni >= 2 && pool_.nd >= 1) {
      set(1, kKind, kFile);
      set(1, kLinks, 1);
      const int e = pool_.dentry(0);
      set(e, kDir, 1);
      set(e, kName, 1);
      set(e, kIno, 2);
    }
    mount_volatile(s);
    return s;
  }

  Analysis analyze(const State& s, bool durable) const {
    auto f = [&](int g) -> const std::array<std::uint8_t, 4>& { return durable ? s.o[g].d : s.o[g].v; };
    Analysis a;
    a.valid.assign(pool_.nd, false);
    a.reachable.assign(pool_.ni, false);
    a.true_links.assign(pool_.ni, 0);
    std::vector<bool> invalidated(pool_.nd, false);
    for (int j = 0; j < pool_.nd; ++j) {
      const auto& x = f(pool_.dentry(j));
      if (x[kRp] == 0 || x[kIno] == 0) continue;
      const int src = x[kRp] - 1;
      if (pool_.is_dentry(src)) invalidated[src - pool_.ni] = true;
      for (int k = 0; k < pool_.nd; ++k) {
        const auto& y = f(pool_.dentry(k));
        if (k != j && y[kIno] != 0 && y[kDir] == x[kDir] && y[kName] == x[kName]) invalidated[k] = true;
      }
    }
    for (int j = 0; j < pool_.nd; ++j) a.valid[j] = f(pool_.dentry(j))[kIno] != 0 && !invalidated[j];

    a.reachable[0] = true;
    for (bool grew = true; grew;) {
      grew = false;
      for (int j = 0; j < pool_.nd; ++j) {
        if (!a.valid[j]) continue;
        const auto& x = f(pool_.dentry(j));
        const int dir = x[kDir] - 1, ino = x[kIno] - 1;
        if (dir < 0 || !pool_.is_inode(dir) || !a.reachable[dir] || !pool_.is_inode(ino)) continue;
        if (!a.reachable[ino]) a.reachable[ino] = grew = true;
      }
    }
    a.true_links[0] = 2;
    for (int j = 0; j < pool_.nd; ++j) {
      if (!a.valid[j]) continue;
      const auto& x = f(pool_.dentry(j));
      const int dir = x[kDir] - 1, ino = x[kIno] - 1;
      if (dir < 0 || !pool_.is_inode(dir) || !a.reachable[dir] || !pool_.is_inode(ino)) continue;
      a.true_links[ino] += 1;
      if (f(ino)[kKind] == kDirectory) {
        a.true_links[ino] += 1;  // "."
        a.true_links[dir] += 1;  // ".."
      }
    }
    return a;
  }

  // "" if every invariant holds on the durable state.
  std::string violation(const State& s) const {
    // Sanity: one holder and one typestate per object, pending effects only under an op.
    for (int g = 0; g < pool_.total(); ++g) {
      const auto& x = s.o[g];
      if (x.holder == 0 && (x.tag != TNone || x.ps != Clean)) return "sanity: " + obj_name(g) + " changed without a holder";
      if (x.holder != 0 && (x.holder > s.ops.size() || s.ops[x.holder - 1].kind == KNone))
        return "sanity: " + obj_name(g) + " held by an idle slot";
    }
    const auto a = analyze(s, true);
    auto D = [&](int g) -> const std::array<std::uint8_t, 4>& { return s.o[g].d; };
    auto inode_ok = [&](int ref) { return ref > 0 && pool_.is_inode(ref - 1) && D(ref - 1)[kKind] != 0; };

    for (int i = 0; i < pool_.ni && (inv_ & kI1); ++i) {
      if (!a.reachable[i] || D(i)[kKind] == 0) continue;
      const int floor = D(i)[kKind] == kDirectory ? 2 : 1;
      const int links = D(i)[kLinks];
      if (links < a.true_links[i] || links < floor)
        return "I1: " + obj_name(i) + " link count " + std::to_string(links) + " below " +
               std::to_string(std::max(floor, a.true_links[i]));
    }
    for (int j = 0; j < pool_.nd; ++j) {
      const int g = pool_.dentry(j);
      const auto& x = D(g);
      if ((inv_ & kI2) && x[kIno] != 0 && !inode_ok(x[kIno])) return "I2: " + obj_name(g) + " names uninitialized " + obj_name(x[kIno] - 1);
      if ((inv_ & kI2) && x[kRp] != 0 && (!pool_.is_dentry(x[kRp] - 1) || zero(D(x[kRp] - 1))))
        return "I2: " + obj_name(g) + " rename pointer to an unallocated dentry";
      if ((inv_ & kI3) && !zero(x) && !inode_ok(x[kDir]) && (x[kIno] != 0 || x[kRp] != 0))
        return "I3: " + obj_name(g) + " keeps pointers inside a freed directory";
    }
    for (int k = 0; k < pool_.np; ++k) {
      const int g = pool_.page(k);
      if ((inv_ & kI2) && D(g)[kOwner] != 0 && !inode_ok(D(g)[kOwner])) return "I2: " + obj_name(g) + " backpointer to uninitialized inode";
    }
    std::vector<int> targeted(pool_.nd, 0);
    for (int j = 0; j < pool_.nd && (inv_ & kI4); ++j) {
      const auto rp = D(pool_.dentry(j))[kRp];
      if (rp == 0) continue;
      if (++targeted[rp - 1 - pool_.ni] > 1) return "I4: " + obj_name(rp - 1) + " is the target of two rename pointers";
      int cur = rp - 1, hops = 0;
      while (cur >= 0 && pool_.is_dentry(cur) && hops <= pool_.nd) {
        if (cur == pool_.dentry(j)) return "I4: rename pointer cycle through " + obj_name(cur);
        cur = static_cast<int>(D(cur)[kRp]) - 1;
        ++hops;
      }
    }
    for (int i = 0; i < pool_.ni && (inv_ & kSize); ++i) {
      if (!a.reachable[i] || D(i)[kSized] == 0) continue;
      bool covered = false;
      for (int k = 0; k < pool_.np; ++k) covered |= D(pool_.page(k))[kOwner] == i + 1 && D(pool_.page(k))[kPageKind] == 1;
      if (!covered) return "size: " + obj_name(i) + " size not covered by its pages";
    }
    return {};
  }

  // Transition property: an entry hidden by a rename pointer must not turn
  // valid again while its own bytes stay the same.
  std::string reappeared(const State& before, const State& after) const {
    if (!(inv_ & kReappear)) return {};
    const auto a = analyze(before, true);
    const auto b = analyze(after, true);
    for (int j = 0; j < pool_.nd; ++j) {
      const int g = pool_.dentry(j);
      if (before.o[g].d[kIno] != 0 && !a.valid[j] && b.valid[j] && before.o[g].d == after.o[g].d)
        return "reappear: " + obj_name(g) + " was hidden by a rename and became valid again";
    }
    return {};
  }

  struct Succ {
    std::string label;
    std::string transition;
    State state;
  };

  std::vector<Succ> successors(const State& s) const {
    std::vector<Succ> out;
    if (s.crashed) {
      recovery_successors(s, out);
      crash_successors(s, out);
      return out;
    }
    for (std::size_t slot = 0; slot < s.ops.size(); ++slot) {
      if (s.ops[slot].kind == KNone) continue;
      const auto prog = program(s.ops[slot], toggles_);
      const auto& st = prog.at(s.ops[slot].pc);
      State n = s;
      if (!apply_step(n, slot, prog)) {
        out.push_back({"op" + std::to_string(slot + 1) + " stuck at " + st.name, "stuck", s});
        continue;
      }
      out.push_back({"op" + std::to_string(slot + 1) + " " + describe(s, s.ops[slot]) + ": " + st.name, st.name,
                     std::move(n)});
    }
    if (s.started < bounds_.max_ops) {
      const auto free_slot = std::find_if(s.ops.begin(), s.ops.end(), [](const MOp& op) { return op.kind == KNone; });
      if (free_slot != s.ops.end()) {
        const auto slot = static_cast<std::size_t>(free_slot - s.ops.begin());
        for (const auto& op : candidates(s)) {
          State n = s;
          n.ops[slot] = op;
          ++n.started;
          lock(n, slot);
          const auto prog = program(op, toggles_);
          const auto first = prog.front().name;
          if (!apply_step(n, slot, prog)) throw std::logic_error("model: first step disabled");
          out.push_back({"op" + std::to_string(slot + 1) + " " + describe(s, op) + ": " + first, first, std::move(n)});
        }
      }
    }
    crash_successors(s, out);
    return out;
  }

  std::string render(const State& s) const {
    std::ostringstream os;
    auto fields = [&](int g, const std::array<std::uint8_t, 4>& f) {
      std::ostringstream o;
      if (zero(f)) return std::string("0");
      if (pool_.is_inode(g)) {
        o << (f[kKind] == kDirectory ? "dir" : f[kKind] == kFile ? "file" : "?") << " links=" << int(f[kLinks]);
        if (f[kSized]) o << " sized";
      } else if (pool_.is_dentry(g)) {
        o << (f[kDir] ? obj_name(f[kDir] - 1) : "-") << "/" << (f[kName] ? std::string(1, name_char(f[kName])) : "?")
          << " -> " << (f[kIno] ? obj_name(f[kIno] - 1) : "0");
        if (f[kRp]) o << " rp=" << obj_name(f[kRp] - 1);
      } else {
        o << "owner=" << (f[kOwner] ? obj_name(f[kOwner] - 1) : "0") << " kind=" << int(f[kPageKind]);
      }
      return o.str();
    };
    for (int g = 0; g < pool_.total(); ++g) {
      const auto& x = s.o[g];
      if (zero(x.d) && zero(x.v) && x.holder == 0) continue;
      os << "  " << obj_name(g) << ": " << fields(g, x.d);
      if (x.v != x.d) os << "  [cached " << fields(g, x.v) << "]";
      if (x.holder) os << "  op" << int(x.holder) << " " << tag_name(x.tag) << "/" << (x.ps == Clean ? "Clean" : x.ps == Dirty ? "Dirty" : "InFlight");
      if (x.vol & kVolVisible) os << "  indexed";
      os << "\n";
    }
    if (s.crashed) os << "  crashed (recovery phase " << int(s.phase) << ")\n";
    return os.str();
  }

  std::string obj_name(int g) const {
    if (pool_.is_inode(g)) return "inode" + std::to_string(g);
    if (pool_.is_dentry(g)) return "dentry" + std::to_string(g - pool_.ni);
    return "page" + std::to_string(g - pool_.ni - pool_.nd);
  }

  const Bounds& bounds() const { return bounds_; }

 private:
  bool satisfied(const State& s, std::size_t slot, const Step& st) const {
    const auto holder = static_cast<std::uint8_t>(slot + 1);
    for (const auto& r : st.req) {
      const auto& x = s.o[r.obj];
      if (x.holder != holder || x.tag != r.tag || ((1 << x.ps) & r.ps) == 0) return false;
    }
    if (st.special == Step::Flush || st.special == Step::Fence) {
      const auto want = st.special == Step::Flush ? Dirty : InFlight;
      bool any = false;
      for (const auto& x : s.o) any |= x.holder == holder && x.ps == want;
      if (!any) return false;
      if (st.special == Step::Fence)
        for (const auto& x : s.o)
          if (x.holder == holder && x.ps == Dirty) return false;
    }
    return true;
  }

  bool apply_step(State& s, std::size_t slot, const std::vector<Step>& prog) const {
    auto& op = s.ops[slot];
    const auto& st = prog[op.pc];
    if (!satisfied(s, slot, st)) return false;
    const auto holder = static_cast<std::uint8_t>(slot + 1);
    if (st.special == Step::Flush) {
      for (auto& x : s.o)
        if (x.holder == holder && x.ps == Dirty) x.ps = InFlight;
    } else if (st.special == Step::Fence) {
      for (auto& x : s.o)
        if (x.holder == holder && x.ps == InFlight) {
          x.ps = Clean;
          x.d = x.v;
        }
    }
    for (const auto& e : st.eff) {
      auto& x = s.o[e.obj];
      switch (e.mode) {
        case Eff::Set: x.v[e.field] = static_cast<std::uint8_t>(e.val); break;
        case Eff::Add: x.v[e.field] = static_cast<std::uint8_t>(x.v[e.field] + e.val); break;
        case Eff::Zero: x.v = {}; break;
        case Eff::Touch:
        case Eff::TagOnly: break;
      }
      if (e.mode != Eff::TagOnly) x.ps = Dirty;
      if (e.tag != TKeep) x.tag = e.tag;
    }
    if (++op.pc == prog.size()) finish(s, slot);
    return true;
  }

  void lock(State& s, std::size_t slot) const {
    const auto& op = s.ops[slot];
    const auto holder = static_cast<std::uint8_t>(slot + 1);
    auto hold = [&](int ref, std::uint8_t tag) {
      if (ref == 0) return;
      auto& x = s.o[ref - 1];
      x.holder = holder;
      x.tag = tag;
    };
    auto take = [&](int ref, std::uint8_t tag) {
      if (ref == 0) return;
      hold(ref, tag);
      s.o[ref - 1].vol &= static_cast<std::uint8_t>(~kVolFree);
    };
    switch (op.kind) {
      case KCreate:
      case KMkdir:
        hold(op.a[0], TCommitted);
        take(op.a[1], TNone);
        take(op.a[2], TNone);
        break;
      case KWrite:
        hold(op.a[0], TCommitted);
        take(op.a[1], TFree);
        break;
      case KUnlink:
      case KRmdir:
        hold(op.a[0], TCommitted);
        hold(op.a[1], TCommitted);
        hold(op.a[2], TCommitted);
        hold(op.a[3], TLive);
        break;
      case KRename:
        hold(op.a[0], TCommitted);
        hold(op.a[1], TCommitted);
        hold(op.a[2], TCommitted);
        hold(op.a[4], TCommitted);
        take(op.a[5], TNone);
        hold(op.a[6], TCommitted);
        hold(op.a[7], TCommitted);
        hold(op.a[8], TLive);
        break;
      default:
        break;
    }
  }

  // Operation end: index updates happen only after everything is durable.
  void finish(State& s, std::size_t slot) const {
    auto& op = s.ops[slot];
    auto vis = [&](int ref, bool on) {
      if (ref == 0) return;
      auto& v = s.o[ref - 1].vol;
      v = on ? (v | kVolVisible) : (v & static_cast<std::uint8_t>(~kVolVisible));
    };
    auto release = [&](int ref) {
      if (ref != 0) s.o[ref - 1].vol = kVolFree;
    };
    switch (op.kind) {
      case KCreate:
      case KMkdir: vis(op.a[2], true); break;
      case KUnlink:
      case KRmdir:
        release(op.a[1]);
        release(op.a[2]);
        release(op.a[3]);
        break;
      case KRename:
        release(op.a[1]);
        vis(op.a[5], true);
        release(op.a[6]);
        release(op.a[7]);
        release(op.a[8]);
        break;
      default: break;
    }
    const auto holder = static_cast<std::uint8_t>(slot + 1);
    for (auto& x : s.o) {
      if (x.holder != holder) continue;
      x.holder = 0;
      x.tag = TNone;
    }
    op = MOp{};
  }

  // Volatile view of the namespace.
  std::vector<int> visible(const State& s) const {
    std::vector<int> out;
    for (int j = 0; j < pool_.nd; ++j)
      if (s.o[pool_.dentry(j)].vol & kVolVisible) out.push_back(pool_.dentry(j));
    return out;
  }

  std::string path_of(const State& s, int ino) const {
    if (ino == 0) return "";
    for (int e : visible(s)) {
      const auto& v = s.o[e].v;
      if (v[kIno] == ino + 1) return path_of(s, v[kDir] - 1) + "/" + name_char(v[kName]);
    }
    return "/?" + std::to_string(ino);
  }

  std::string describe(const State& s, const MOp& op) const {
    auto g = [&](int i) { return static_cast<int>(op.a[i]) - 1; };
    auto child = [&](int dir, std::uint8_t name) { return path_of(s, dir) + "/" + name_char(name); };
    std::string d = kind_name(op.kind);
    switch (op.kind) {
      case KCreate:
      case KMkdir: return d + " " + child(g(0), op.a[3]);
      case KWrite: return d + " " + path_of(s, g(0));
      case KUnlink:
      case KRmdir: return d + " " + child(g(0), op.a[4]);
      case KRename: return d + " " + child(g(0), op.a[10]) + " " + child(g(2), op.a[3]);
      default: return d;
    }
  }

  int lowest_free(const State& s, int first, int count) const {
    for (int g = first; g < first + count; ++g)
      if ((s.o[g].vol & kVolFree) && s.o[g].holder == 0) return g;
    return -1;
  }

  std::vector<MOp> candidates(const State& s) const {
    std::vector<MOp> out;
    const auto vis = visible(s);
    auto V = [&](int g) -> const std::array<std::uint8_t, 4>& { return s.o[g].v; };
    auto held = [&](int g) { return g >= 0 && s.o[g].holder != 0; };
    std::vector<int> dirs{0};
    for (int e : vis)
      if (V(V(e)[kIno] - 1)[kKind] == kDirectory) dirs.push_back(V(e)[kIno] - 1);
    std::sort(dirs.begin(), dirs.end());
    auto lookup = [&](int dir, std::uint8_t name) {
      for (int e : vis)
        if (V(e)[kDir] == dir + 1 && V(e)[kName] == name) return e;
      return -1;
    };
    auto empty_dir = [&](int dir) {
      return std::none_of(vis.begin(), vis.end(), [&](int e) { return V(e)[kDir] == dir + 1; });
    };
    auto page_of = [&](int ino) {
      for (int k = 0; k < pool_.np; ++k)
        if (V(pool_.page(k))[kOwner] == ino + 1) return pool_.page(k);
      return -1;
    };
    auto parent_of = [&](int dir) {
      for (int e : vis)
        if (V(e)[kIno] == dir + 1) return V(e)[kDir] - 1;
      return 0;
    };
    auto r = [](int g) { return static_cast<std::uint8_t>(g + 1); };
    constexpr std::uint8_t kNames = 2;

    const int free_ino = lowest_free(s, 0, pool_.ni);
    const int free_dentry = lowest_free(s, pool_.ni, pool_.nd);
    const int free_page = lowest_free(s, pool_.ni + pool_.nd, pool_.np);

    for (std::uint8_t kind : {KCreate, KMkdir}) {
      if (free_ino < 0 || free_dentry < 0) break;
      for (int p : dirs) {
        if (held(p)) continue;
        for (std::uint8_t n = 1; n <= kNames; ++n) {
          if (lookup(p, n) >= 0) continue;
          MOp op{kind, 0, {}};
          op.a = {r(p), r(free_ino), r(free_dentry), n};
          out.push_back(op);
        }
      }
    }
    for (int e : vis) {
      const int ino = V(e)[kIno] - 1;
      if (V(ino)[kKind] != kFile || V(ino)[kSized] || held(ino) || free_page < 0) continue;
      MOp op{KWrite, 0, {}};
      op.a = {r(ino), r(free_page)};
      out.push_back(op);
    }
    for (int e : vis) {
      const int p = V(e)[kDir] - 1, ino = V(e)[kIno] - 1;
      const bool dir = V(ino)[kKind] == kDirectory;
      if (held(p) || held(e) || held(ino)) continue;
      if (dir && !empty_dir(ino)) continue;
      const int pg = dir ? -1 : page_of(ino);
      if (held(pg)) continue;
      MOp op{dir ? KRmdir : KUnlink, 0, {}};
      op.a = {r(p), r(e), r(ino), static_cast<std::uint8_t>(pg + 1), V(e)[kName]};
      out.push_back(op);
    }
    if (free_dentry >= 0) {
      for (int sdent : vis) {
        const int sp = V(sdent)[kDir] - 1, m = V(sdent)[kIno] - 1;
        const bool mdir = V(m)[kKind] == kDirectory;
        if (held(sp) || held(sdent) || held(m)) continue;
        for (int dp : dirs) {
          if (held(dp)) continue;
          if (mdir) {
            bool under = false;
            for (int x = dp;; x = parent_of(x)) {
              if (x == m) under = true;
              if (x == 0 || under) break;
            }
            if (under) continue;
          }
          for (std::uint8_t n = 1; n <= kNames; ++n) {
            if (dp == sp && n == V(sdent)[kName]) continue;
            const int old = lookup(dp, n);
            int victim = -1, pg = -1;
            bool old_dir = false;
            if (old >= 0) {
              victim = V(old)[kIno] - 1;
              old_dir = V(victim)[kKind] == kDirectory;
              if (old_dir != mdir) continue;
              if (old_dir && !empty_dir(victim)) continue;
              if (held(old) || held(victim)) continue;
              pg = old_dir ? -1 : page_of(victim);
              if (held(pg)) continue;
            }
            const bool cross = dp != sp;
            std::uint8_t flags = 0;
            if (mdir && cross && !old_dir) flags |= kIncNew;
            if (old_dir && !cross) flags |= kDecNew;
            if (mdir && cross) flags |= kDecOld;
            MOp op{KRename, 0, {}};
            op.a = {r(sp), r(sdent), r(dp), n, r(m), r(free_dentry), static_cast<std::uint8_t>(old + 1),
                    static_cast<std::uint8_t>(victim + 1), static_cast<std::uint8_t>(pg + 1), flags, V(sdent)[kName]};
            out.push_back(op);
          }
        }
      }
    }
    return out;
  }

  void crash_successors(const State& s, std::vector<Succ>& out) const {
    if (s.crashed && s.phase == 0) return;  // nothing has changed since the last crash
    std::vector<int> pending;
    for (int g = 0; g < pool_.total(); ++g)
      if (s.o[g].ps != Clean) pending.push_back(g);
    const std::size_t n = std::size_t{1} << pending.size();
    for (std::size_t mask = 0; mask < n; ++mask) {
      State c = s;
      std::string bits;
      for (std::size_t i = 0; i < pending.size(); ++i) {
        auto& x = c.o[pending[i]];
        if (mask & (std::size_t{1} << i)) x.d = x.v;
        bits += (mask & (std::size_t{1} << i)) ? '1' : '0';
      }
      for (auto& x : c.o) {
        x.v = x.d;
        x.ps = Clean;
        x.tag = TNone;
        x.holder = 0;
        x.vol = 0;
      }
      for (auto& op : c.ops) op = MOp{};
      c.crashed = 1;
      c.phase = 0;
      std::string label = "crash";
      if (!pending.empty()) {
        label += " keep=";
        for (std::size_t i = 0; i < pending.size(); ++i) label += (i ? "," : "") + obj_name(pending[i]) + ":" + bits[i];
      }
      out.push_back({label, "crash", std::move(c)});
    }
  }

  void recovery_successors(const State& s, std::vector<Succ>& out) const {
    auto D = [&](int g) -> const std::array<std::uint8_t, 4>& { return s.o[g].d; };
    auto write = [](State& n, int g, std::array<std::uint8_t, 4> f) { n.o[g].d = n.o[g].v = f; };
    bool pending_rename = false;
    for (int j = 0; j < pool_.nd; ++j) pending_rename |= D(pool_.dentry(j))[kRp] != 0;

    if (toggles_.rename_recovery && s.phase == 0) {
      for (int j = 0; j < pool_.nd; ++j) {
        const int dst = pool_.dentry(j);
        const auto x = D(dst);
        if (x[kRp] == 0) continue;
        State n = s;
        if (x[kIno] != 0) {
          write(n, x[kRp] - 1, {});
          for (int k = 0; k < pool_.nd; ++k) {
            const int y = pool_.dentry(k);
            if (y != dst && D(y)[kIno] != 0 && D(y)[kDir] == x[kDir] && D(y)[kName] == x[kName]) write(n, y, {});
          }
          auto cleared = x;
          cleared[kRp] = 0;
          write(n, dst, cleared);
          out.push_back({"recover_complete_rename " + obj_name(dst), "recover_complete_rename", std::move(n)});
        } else {
          write(n, dst, {});
          out.push_back({"recover_rollback_rename " + obj_name(dst), "recover_rollback_rename", std::move(n)});
        }
      }
    }
    const bool renames_done = !toggles_.rename_recovery || !pending_rename;
    if (toggles_.recovery && s.phase == 0 && renames_done) {
      State n = s;
      const auto a = analyze(s, true);
      for (int j = 0; j < pool_.nd; ++j) {
        const int g = pool_.dentry(j);
        const auto& x = D(g);
        if (zero(x)) continue;
        const int dir = x[kDir] - 1, ino = x[kIno] - 1;
        const bool dir_ok = dir >= 0 && pool_.is_inode(dir) && a.reachable[dir];
        const bool ino_ok = ino >= 0 && pool_.is_inode(ino) && a.reachable[ino];
        if (!toggles_.rename_recovery && (x[kRp] != 0 || rp_target(s, g))) continue;  // leaks only
        if (!(dir_ok && ino_ok && a.valid[j])) write(n, g, {});
      }
      for (int i = 0; i < pool_.ni; ++i)
        if (!zero(D(i)) && !a.reachable[i]) write(n, i, {});
      for (int k = 0; k < pool_.np; ++k) {
        const int g = pool_.page(k);
        if (zero(D(g))) continue;
        const int owner = D(g)[kOwner] - 1;
        const bool keep = owner >= 0 && pool_.is_inode(owner) && a.reachable[owner] && D(owner)[kKind] == kFile &&
                          D(owner)[kSized] != 0 && D(g)[kPageKind] == 1;
        if (!keep) write(n, g, {});
      }
      n.phase = 1;
      out.push_back({"recover_sweep_orphans", "recover_sweep_orphans", std::move(n)});
    }
    if (toggles_.recovery && s.phase == 1) {
      State n = s;
      const auto a = analyze(s, true);
      for (int i = 0; i < pool_.ni; ++i) {
        if (!a.reachable[i] || zero(D(i))) continue;
        if (D(i)[kLinks] > a.true_links[i]) {
          auto f = D(i);
          f[kLinks] = static_cast<std::uint8_t>(a.true_links[i]);
          write(n, i, f);
        }
      }
      n.phase = 2;
      out.push_back({"recover_repair_links", "recover_repair_links", std::move(n)});
    }
    const bool ready = toggles_.recovery ? s.phase == 2 : renames_done;
    if (ready) {
      State n = s;
      mount_volatile(n);
      n.crashed = 0;
      n.phase = 0;
      out.push_back({"mount", "mount", std::move(n)});
    }
  }

  bool rp_target(const State& s, int g) const {
    for (int j = 0; j < pool_.nd; ++j)
      if (s.o[pool_.dentry(j)].d[kRp] == g + 1) return true;
    return false;
  }

  // Rebuilds the volatile index and allocators from durable values.
  void mount_volatile(State& s) const {
    const auto a = analyze(s, true);
    for (int g = 0; g < pool_.total(); ++g) s.o[g].vol = zero(s.o[g].d) ? kVolFree : 0;
    for (int j = 0; j < pool_.nd; ++j) {
      const int g = pool_.dentry(j);
      const int dir = s.o[g].d[kDir] - 1;
      if (a.valid[j] && dir >= 0 && pool_.is_inode(dir) && a.reachable[dir]) s.o[g].vol |= kVolVisible;
    }
  }

  Bounds bounds_;
  Toggles toggles_;
  unsigned inv_;
  Pool pool_;
};

}  // namespace

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Pass: return "Pass";
    case Verdict::Counterexample: return "Counterexample";
    case Verdict::BoundExceeded: return "BoundExceeded";
  }
  return "?";
}

std::array<int, 3> pool_split(int pool) {
  if (pool < 1) throw std::invalid_argument("model pool must be positive");
  const int pages = pool >= 6 ? 1 : 0;
  const int rem = pool - pages;
  const int inodes = std::max(1, rem / 2);
  return {inodes, rem - inodes, pages};
}

unsigned parse_invariants(std::string_view list) {
  unsigned out = 0;
  std::string item;
  auto flush = [&] {
    if (item.empty()) return;
    for (auto& ch : item) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (item == "all") out |= kAllInvariants;
    else if (item == "i1") out |= kI1;
    else if (item == "i2") out |= kI2;
    else if (item == "i3") out |= kI3;
    else if (item == "i4") out |= kI4;
    else if (item == "size") out |= kSize;
    else if (item == "reappear") out |= kReappear;
    else throw std::invalid_argument("unknown invariant: " + item);
    item.clear();
  };
  for (char ch : list) {
    if (ch == ',' || ch == ' ') flush();
    else item.push_back(ch);
  }
  flush();
  return out;
}

Result check(const Bounds& bounds, const Toggles& toggles, unsigned invariants) {
  if (bounds.max_ops < 0 || bounds.max_steps < 0) throw std::invalid_argument("model bounds must be non-negative");
  Checker c(bounds, toggles, invariants);
  Result res;
  const State init = c.initial();
  res.initial_state = c.render(init);

  struct Node {
    std::uint32_t parent;
    std::string label;
    std::string transition;
  };
  std::vector<Node> nodes;
  std::vector<State> states;
  std::unordered_map<std::string, std::uint32_t> seen;
  std::deque<std::pair<std::uint32_t, int>> frontier;

  auto found = [&](std::uint32_t idx, std::string why) {
    res.verdict = Verdict::Counterexample;
    res.violation = std::move(why);
    std::vector<std::uint32_t> chain;
    for (auto i = idx; i != 0; i = nodes[i].parent) chain.push_back(i);
    std::reverse(chain.begin(), chain.end());
    for (auto i : chain) res.trace.push_back({nodes[i].label, nodes[i].transition, c.render(states[i])});
  };

  nodes.push_back({0, "", ""});
  states.push_back(init);
  seen.emplace(init.key(), 0);
  if (auto v = c.violation(init); !v.empty()) {
    found(0, v);
    res.states = 1;
    return res;
  }
  frontier.emplace_back(0, 0);
  while (!frontier.empty()) {
    const auto [idx, depth] = frontier.front();
    frontier.pop_front();
    res.depth = std::max(res.depth, depth);
    if (depth >= bounds.max_steps) continue;
    auto succ = c.successors(states[idx]);
    for (auto& s : succ) {
      res.transitions_seen.insert(s.transition);
      if (s.transition == "stuck") {
        nodes.push_back({idx, s.label, s.transition});
        states.push_back(s.state);
        found(static_cast<std::uint32_t>(nodes.size() - 1), "sanity: " + s.label);
        res.states = seen.size();
        return res;
      }
      auto key = s.state.key();
      if (seen.count(key)) continue;
      const auto id = static_cast<std::uint32_t>(nodes.size());
      seen.emplace(std::move(key), id);
      nodes.push_back({idx, std::move(s.label), s.transition});
      states.push_back(std::move(s.state));
      auto v = c.reappeared(states[idx], states[id]);
      if (v.empty()) v = c.violation(states[id]);
      if (!v.empty()) {
        found(id, v);
        res.states = seen.size();
        return res;
      }
      if (seen.size() > bounds.max_states) {
        res.verdict = Verdict::BoundExceeded;
        res.states = seen.size();
        return res;
      }
      frontier.emplace_back(id, depth + 1);
    }
  }
  res.states = seen.size();
  return res;
}

std::string replay(const Bounds& bounds, const Toggles& toggles, const std::vector<std::string>& labels,
                   unsigned invariants) {
  Checker c(bounds, toggles, invariants);
  State s = c.initial();
  std::string last_transition;
  for (const auto& label : labels) {
    auto succ = c.successors(s);
    auto it = std::find_if(succ.begin(), succ.end(), [&](const auto& x) { return x.label == label; });
    if (it == succ.end()) throw std::invalid_argument("replay: no successor labelled '" + label + "'");
    last_transition = c.reappeared(s, it->state);
    s = std::move(it->state);
  }
  return last_transition.empty() ? c.violation(s) : last_transition;
}

std::string print_trace(const Result& r) {
  std::ostringstream os;
  os << "verdict: " << verdict_name(r.verdict) << "\n";
  os << "states: " << r.states << "\n";
  if (r.verdict != Verdict::Counterexample) return os.str();
  os << "violation: " << r.violation << "\n";
  os << "initial:\n" << r.initial_state;
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    os << "step " << (i + 1) << ": " << r.trace[i].label << "\n" << r.trace[i].state;
  }
  return os.str();
}

std::set<std::string> transition_labels() {
  std::set<std::string> out;
  // Every program step name, collected from representative programs.
  Toggles t;
  auto collect = [&](const MOp& op, const Toggles& tg) {
    for (const auto& st : program(op, tg)) out.insert(st.name);
  };
  // Rename operands: SP S DP name M N OE V G flags src-name.
  MOp mk{KMkdir, 0, {1, 2, 3, 1}};
  MOp wr{KWrite, 0, {2, 4}};
  MOp rm{KRmdir, 0, {1, 3, 2, 0}};
  MOp ul{KUnlink, 0, {1, 3, 2, 4}};
  MOp rn{KRename, 0, {1, 3, 1, 2, 2, 5, 6, 3, 4, kIncNew | kDecNew | kDecOld, 1}};
  for (const auto& op : {mk, wr, rm, ul, rn}) collect(op, t);
  for (auto l : kModelOnlyLabels) out.insert(std::string(l));
  return out;
}

}  // namespace ssufs::model
