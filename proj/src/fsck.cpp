#include "ssufs/fsck.hpp"

#include <map>
#include <set>
#include <sstream>

#include "ssufs/image_view.hpp"

namespace ssufs {

using namespace layout;

bool FsckReport::holds(std::string_view invariant) const {
  for (const auto& i : issues)
    if (i.invariant == invariant) return false;
  return true;
}

std::string FsckReport::first_failure() const { return issues.empty() ? std::string() : issues.front().invariant; }

std::string FsckReport::to_string() const {
  std::ostringstream os;
  os << (pass() ? "PASS" : "FAIL") << " reachable=" << reachable << " orphan_inodes=" << orphan_inodes
     << " orphan_pages=" << orphan_pages << " orphan_dentries=" << orphan_dentries
     << " link_overcounts=" << link_overcounts << '\n';
  for (const auto& i : issues) os << i.invariant << ' ' << i.object << ": " << i.detail << '\n';
  return os.str();
}

namespace {

std::string dentry_name(std::uint64_t loc) { return "dentry @" + std::to_string(loc); }

bool valid_name(const DentryRecord& r) {
  const auto n = r.name_view();
  if (n.empty() || n == "." || n == "..") return false;
  return n.find('/') == std::string_view::npos;
}

}  // namespace

FsckReport fsck(std::span<const std::uint8_t> image, FsckMode mode) {
  const ImageView view(image);
  const Geometry& g = view.geometry();
  FsckReport rep;
  auto issue = [&](std::string inv, std::string obj, std::string detail) {
    rep.issues.push_back({std::move(inv), std::move(obj), std::move(detail)});
  };
  auto inode_valid = [&](std::uint64_t ino) {
    if (ino == 0 || ino >= g.num_inodes) return false;
    const auto r = view.inode(ino);
    return r.ino == ino && (r.is_dir() || r.is_file());
  };

  if (!inode_valid(kRootIno) || !view.inode(kRootIno).is_dir()) issue("I2", "inode 1", "root directory missing");

  // I2: dentries, rename pointers, descriptors.
  std::map<std::uint64_t, std::vector<std::uint64_t>> rp_sources;  // target -> sources
  for (const auto& d : view.allocated_dentries()) {
    if (d.rec.ino != 0 && !inode_valid(d.rec.ino)) {
      issue("I2", dentry_name(d.location), "names uninitialized inode " + std::to_string(d.rec.ino));
    }
    if (d.rec.rename_ptr != 0) {
      const auto t = d.rec.rename_ptr;
      if (!g.is_dentry_location(t) || !view.is_live_dir_page(g.page_of(t)) || !view.dentry_allocated(t)) {
        issue("I2", dentry_name(d.location), "rename pointer to unallocated dentry " + std::to_string(t));
      }
      rp_sources[t].push_back(d.location);
    }
    if (!valid_name(d.rec) && (d.rec.ino != 0 || d.rec.rename_ptr != 0)) {
      issue("structure", dentry_name(d.location), "invalid name");
    }
  }
  for (std::uint64_t p = 0; p < g.num_pages; ++p) {
    if (!view.descriptor_allocated(p)) continue;
    const auto d = view.descriptor(p);
    if (d.owner_ino == 0) continue;
    if (!inode_valid(d.owner_ino)) {
      issue("I2", "page " + std::to_string(p), "backpointer to uninitialized inode " + std::to_string(d.owner_ino));
      continue;
    }
    const auto owner = view.inode(d.owner_ino);
    const bool dir_page = d.kind == static_cast<std::uint64_t>(PageKind::Directory);
    const bool data_page = d.kind == static_cast<std::uint64_t>(PageKind::Data);
    // A descriptor torn mid-allocation is harmless until a size or dentry
    // commit makes it visible; recovery sweeps it.
    if (mode == FsckMode::Strict &&
        ((dir_page && !owner.is_dir()) || (data_page && !owner.is_file()) || (!dir_page && !data_page))) {
      issue("structure", "page " + std::to_string(p), "page kind does not match its owner");
    }
  }

  // I3: directory pages without a live owner must hold no entries.
  for (std::uint64_t p = 0; p < g.num_pages; ++p) {
    if (!view.descriptor_allocated(p)) continue;
    const auto d = view.descriptor(p);
    if (d.kind != static_cast<std::uint64_t>(PageKind::Directory) || view.is_live_dir_page(p)) continue;
    for (std::uint64_t s = 0; s < kDentriesPerPage; ++s) {
      const auto loc = g.dentry_offset(p, s);
      const auto r = view.dentry(loc);
      if (r.ino != 0 || r.rename_ptr != 0) issue("I3", dentry_name(loc), "entry left in a freed directory page");
    }
  }

  // I4: at most one pointer per target, no cycles.
  for (const auto& [t, srcs] : rp_sources) {
    if (srcs.size() > 1) issue("I4", dentry_name(t), "target of " + std::to_string(srcs.size()) + " rename pointers");
  }
  for (const auto& [t, srcs] : rp_sources) {
    for (auto start : srcs) {
      std::set<std::uint64_t> seen{start};
      std::uint64_t cur = t;
      while (cur != 0 && g.is_dentry_location(cur)) {
        if (!seen.insert(cur).second) {
          issue("I4", dentry_name(start), "rename pointer cycle");
          break;
        }
        cur = view.dentry(cur).rename_ptr;
      }
    }
  }

  // I1 and structure over the reachable tree.
  const auto reach = view.reachability();
  rep.reachable = reach.reachable.size();
  for (const auto& [ino, truth] : reach.true_links) {
    if (!inode_valid(ino)) continue;
    const auto r = view.inode(ino);
    const std::uint64_t floor = r.is_dir() ? 2 : 1;
    if (r.link_count < truth || r.link_count < floor) {
      issue("I1", "inode " + std::to_string(ino),
            "link count " + std::to_string(r.link_count) + " below " + std::to_string(std::max(truth, floor)));
    } else if (r.link_count > truth) {
      ++rep.link_overcounts;
      if (mode == FsckMode::Strict) {
        issue("I1", "inode " + std::to_string(ino),
              "link count " + std::to_string(r.link_count) + " exceeds " + std::to_string(truth));
      }
    }
    if (r.is_file()) {
      std::set<std::uint64_t> offsets;
      for (auto p : view.data_pages_of(ino)) {
        if (!offsets.insert(view.descriptor(p).offset).second && mode == FsckMode::Strict) {
          issue("structure", "inode " + std::to_string(ino), "file offset mapped twice");
        }
      }
      for (std::uint64_t off = 0; off < r.size; off += kPageSize) {
        if (offsets.count(off) == 0) {
          issue("structure", "inode " + std::to_string(ino),
                "size " + std::to_string(r.size) + " not covered at offset " + std::to_string(off));
          break;
        }
      }
    }
  }
  std::map<std::uint64_t, std::set<std::string>> names;
  for (const auto& d : view.allocated_dentries()) {
    if (!view.logically_valid(d) || reach.reachable.count(d.dir_ino) == 0) continue;
    if (!names[d.dir_ino].insert(std::string(d.rec.name_view())).second) {
      issue("structure", dentry_name(d.location), "duplicate name in directory " + std::to_string(d.dir_ino));
    }
  }

  // Leaks: allocated objects that recovery should have reclaimed.
  for (std::uint64_t ino = 1; ino < g.num_inodes; ++ino) {
    if (view.inode_allocated(ino) && reach.reachable.count(ino) == 0) {
      ++rep.orphan_inodes;
      if (mode == FsckMode::Strict) issue("leak", "inode " + std::to_string(ino), "allocated but unreachable");
    }
  }
  for (std::uint64_t p = 0; p < g.num_pages; ++p) {
    if (!view.descriptor_allocated(p)) continue;
    const auto d = view.descriptor(p);
    bool live = d.owner_ino != 0 && reach.reachable.count(d.owner_ino) != 0;
    if (live && d.kind == static_cast<std::uint64_t>(PageKind::Data)) {
      const auto r = view.inode(d.owner_ino);
      live = d.offset < (r.size + kPageSize - 1) / kPageSize * kPageSize;
    }
    if (!live) {
      ++rep.orphan_pages;
      if (mode == FsckMode::Strict) issue("leak", "page " + std::to_string(p), "allocated but not reachable");
    }
  }
  for (const auto& d : view.allocated_dentries()) {
    const bool live = view.logically_valid(d) && reach.reachable.count(d.dir_ino) != 0;
    if (!live) {
      ++rep.orphan_dentries;
      if (mode == FsckMode::Strict) issue("leak", dentry_name(d.location), "allocated but not a live name");
    }
    if (mode == FsckMode::Strict && d.rec.rename_ptr != 0) {
      issue("I4", dentry_name(d.location), "rename pointer left after recovery");
    }
  }
  return rep;
}

}  // namespace ssufs
