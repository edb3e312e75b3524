#include "ssufs/fsops.hpp"

#include <algorithm>
#include <sstream>

#include "ssufs/image_view.hpp"

namespace ssufs {

using layout::kPageSize;

namespace {

std::uint64_t round_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<std::string_view> components(std::string_view path) {
  if (path.empty() || path.front() != '/') throw FsError(Errc::Invalid, "path must be absolute: " + std::string(path));
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    std::size_t j = i;
    while (j < path.size() && path[j] != '/') ++j;
    if (j > i) out.push_back(path.substr(i, j - i));
    i = j;
  }
  return out;
}

// Last steps of unlink/rmdir and of an overwriting rename's victim: the
// inode's pages lose their backpointers, are freed, then the inode is zeroed.
void tear_down(OpToken& tok, const vol::VolatileState& vs, Inode<Clean, UnmapPages>&& inode, bool directory) {
  const auto ino = inode.ino();
  auto pages = directory ? acquire_dir_pages(tok, ino, vs.pages.dir_pages_of(ino))
                         : acquire_pages(tok, ino, vs.pages.pages_of(ino));
  auto freed = std::move(pages).clear_backpointers().flush().fence().dealloc_pages().flush().fence();
  std::move(inode).dealloc_inode(freed).flush().fence();
}

bool unlinked(const layout::InodeRecord& rec) { return rec.link_count <= (rec.is_dir() ? 1u : 0u); }

#ifdef SSUFS_FAULT_INJECTION
// Raw device access for the injected bugs.
class Raw {
 public:
  explicit Raw(OpToken& tok) : tok_(tok) {}
  void u64(std::uint64_t off, std::uint64_t v) {
    tok_.device().store_u64(off, v);
    dirty_.add(off, 8);
  }
  void bytes(std::uint64_t off, std::span<const std::uint8_t> b) {
    tok_.device().store(off, b);
    dirty_.add(off, b.size());
  }
  void zeros(std::uint64_t off, std::size_t n) {
    const std::vector<std::uint8_t> z(n, 0);
    bytes(off, z);
  }
  void flush() {
    tok_.flush_lines(dirty_.lines());
    dirty_.clear();
  }
  void fence() {
    flush();
    tok_.fence();
  }

 private:
  OpToken& tok_;
  detail::DirtySet dirty_;
};
#endif

}  // namespace

std::string RecoveryReport::summary() const {
  std::ostringstream os;
  os << "renames_completed=" << renames_completed << " renames_rolled_back=" << renames_rolled_back
     << " orphan_inodes=" << orphan_inodes << " orphan_pages=" << orphan_pages
     << " orphan_dentries=" << orphan_dentries << " links_repaired=" << links_repaired;
  return os.str();
}

std::pair<std::string, std::string> split_path(std::string_view path) {
  const auto parts = components(path);
  if (parts.empty()) throw FsError(Errc::Invalid, "path has no final component");
  std::string parent;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) parent += "/" + std::string(parts[i]);
  if (parent.empty()) parent = "/";
  return {parent, std::string(parts.back())};
}

Fs::Fs(pmem::PmDevice& dev, FsOptions opts) : dev_(&dev), opts_(std::move(opts)) {}

Fs::Fs(Fs&& o) noexcept
    : dev_(std::exchange(o.dev_, nullptr)),
      opts_(std::move(o.opts_)),
      geo_(o.geo_),
      vs_(std::move(o.vs_)),
      registry_(std::move(o.registry_)),
      report_(o.report_),
      logical_time_(o.logical_time_),
      last_fences_(o.last_fences_),
      last_redundant_(o.last_redundant_),
      mu_(std::move(o.mu_)) {}

Fs::~Fs() {
  // Dropping a mounted Fs without unmount leaves the image dirty, like a crash.
  if (dev_ != nullptr) dev_->release_mount();
}

Fs Fs::mount(pmem::PmDevice& dev, FsOptions opts) {
  if (opts.fault != Fault::None && !fault_injection_available()) {
    throw std::invalid_argument("fault injection is not compiled into this build");
  }
  const auto sb = layout::read_superblock(dev);
  if (!dev.try_claim_mount()) throw FsError(Errc::Busy, "device already mounted");
  Fs fs(dev, std::move(opts));
  try {
    fs.geo_ = layout::geometry_of(sb, dev.capacity());
    if (sb.clean_unmount == 1) {
      fs.vs_ = vol::rebuild(layout::ImageView::of_device(dev));
    } else if (fs.opts_.recover) {
      fs.recover();
    } else {
      fs.vs_ = vol::rebuild(layout::ImageView::of_device(dev));
    }
    OpToken tok(dev, fs.geo_, *fs.registry_, "mount");
    if (sb.clean_unmount != 0) {
      dev.store_u64(layout::kSuperCleanOff, 0);
      tok.flush_lines({layout::kSuperCleanOff / pmem::kLineSize});
      tok.fence();
    }
    tok.finish();
  } catch (...) {
    dev.release_mount();
    fs.dev_ = nullptr;
    throw;
  }
  return fs;
}

void Fs::unmount() {
  std::lock_guard lk(*mu_);
  require_mounted();
  {
    OpToken tok(*dev_, geo_, *registry_, "unmount");
    dev_->store_u64(layout::kSuperCleanOff, 1);
    tok.flush_lines({layout::kSuperCleanOff / pmem::kLineSize});
    tok.fence();
    tok.finish();
  }
  dev_->release_mount();
  dev_ = nullptr;
  vs_ = vol::VolatileState{};
}

void Fs::require_mounted() const {
  if (dev_ == nullptr) throw FsError(Errc::Invalid, "file system is not mounted");
}

std::uint64_t Fs::now() { return opts_.clock ? opts_.clock() : ++logical_time_; }

void Fs::finish(OpToken& tok) {
  last_fences_ = tok.fences();
  last_redundant_ = tok.redundant_flushes();
  tok.finish();
}

// -- lookup -------------------------------------------------------------------

std::uint64_t Fs::lookup(std::string_view path) const {
  std::lock_guard lk(*mu_);
  require_mounted();
  std::uint64_t cur = layout::kRootIno;
  for (auto c : components(path)) {
    if (!vs_.is_dir(cur)) throw FsError(Errc::NotDir, std::string(path));
    if (c == ".") continue;
    if (c == "..") {
      cur = vs_.dir_parent.at(cur);
      continue;
    }
    auto e = vs_.names.lookup(cur, c);
    if (!e) throw FsError(Errc::NoEntry, std::string(path));
    cur = e->ino;
  }
  return cur;
}

std::uint64_t Fs::resolve_dir(std::string_view path) const {
  std::uint64_t cur = layout::kRootIno;
  for (auto c : components(path)) {
    if (c == ".") continue;
    if (c == "..") {
      cur = vs_.dir_parent.at(cur);
      continue;
    }
    auto e = vs_.names.lookup(cur, c);
    if (!e) throw FsError(Errc::NoEntry, std::string(path));
    if (!vs_.is_dir(e->ino)) throw FsError(Errc::NotDir, std::string(path));
    cur = e->ino;
  }
  return cur;
}

std::vector<DirEntry> Fs::readdir(std::uint64_t ino) const {
  std::lock_guard lk(*mu_);
  require_mounted();
  if (!vs_.is_dir(ino)) {
    if (ino != 0 && ino < geo_.num_inodes && dev_->read_u64(geo_.inode_offset(ino)) == ino) {
      throw FsError(Errc::NotDir, std::to_string(ino));
    }
    throw FsError(Errc::NoEntry, std::to_string(ino));
  }
  // "." and ".." are not stored durably.
  std::vector<DirEntry> out{{".", ino}, {"..", vs_.dir_parent.at(ino)}};
  for (const auto& [name, e] : vs_.names.entries(ino)) out.push_back({name, e.ino});
  return out;
}

Stat Fs::stat(std::uint64_t ino) const {
  std::lock_guard lk(*mu_);
  require_mounted();
  if (ino == 0 || ino >= geo_.num_inodes) throw FsError(Errc::NoEntry, std::to_string(ino));
  const auto rec = layout::decode<layout::InodeRecord>(dev_->read(geo_.inode_offset(ino), layout::kInodeSize));
  if (rec.ino != ino) throw FsError(Errc::NoEntry, std::to_string(ino));
  return Stat{ino, rec.is_dir(), rec.size, rec.link_count, rec.mode, rec.mtime};
}

std::vector<std::uint8_t> Fs::read(std::uint64_t ino, std::uint64_t offset, std::size_t len) const {
  const auto st = stat(ino);
  if (st.is_dir) throw FsError(Errc::IsDir, std::to_string(ino));
  std::lock_guard lk(*mu_);
  if (offset >= st.size) return {};
  const std::uint64_t end = std::min<std::uint64_t>(st.size, offset + len);
  std::vector<std::uint8_t> out(end - offset, 0);
  for (std::uint64_t pos = offset; pos < end;) {
    const std::uint64_t page_off = pos / kPageSize * kPageSize;
    const std::uint64_t n = std::min(end, page_off + kPageSize) - pos;
    if (auto p = vs_.pages.page_at(ino, page_off)) {
      dev_->read_into(geo_.page_offset(*p) + (pos - page_off),
                      std::span<std::uint8_t>(out.data() + (pos - offset), n));
    }
    pos += n;
  }
  return out;
}

void Fs::fsync(std::uint64_t) {
  // Every call is already durable on return.
}

// -- create / mkdir -----------------------------------------------------------

std::uint64_t Fs::create(std::string_view parent, std::string_view name, std::uint64_t perm) {
  return make_node(parent, name, perm, false);
}

std::uint64_t Fs::mkdir(std::string_view parent, std::string_view name, std::uint64_t perm) {
  return make_node(parent, name, perm, true);
}

std::uint64_t Fs::make_node(std::string_view parent_path, std::string_view name, std::uint64_t perm, bool directory) {
  std::lock_guard lk(*mu_);
  require_mounted();
  detail::validate_name(name);
  const auto pino = resolve_dir(parent_path);
  if (vs_.names.lookup(pino, name)) throw FsError(Errc::Exists, std::string(name));

  OpToken tok(*dev_, geo_, *registry_, directory ? "mkdir" : "create");
  auto parent = acquire_inode(tok, pino);
  auto inode = acquire_free_inode(tok, vs_.alloc);
  const std::uint64_t ino = inode.ino();
  std::optional<Dentry<Clean, Free>> slot;
  try {
    slot.emplace(acquire_free_dentry(tok, parent, vs_));
  } catch (...) {
    vs_.alloc.free_ino(ino);
    throw;
  }
  const std::uint64_t loc = slot->location();
  const InodeAttrs attrs{directory, perm, 0, 0, now()};

#ifdef SSUFS_FAULT_INJECTION
  if (opts_.fault == Fault::CommitBeforeInitFence || (directory && opts_.fault == Fault::ParentLinkAfterCommit)) {
    Raw raw(tok);
    layout::InodeRecord r{};
    r.ino = ino;
    r.link_count = directory ? 2 : 1;
    r.mode = (directory ? layout::kModeDir : layout::kModeFile) | (perm & 07777);
    r.atime = r.mtime = r.ctime = attrs.now;
    raw.bytes(geo_.inode_offset(ino), layout::encode(r).first(72));
    layout::DentryRecord d{};
    std::copy(name.begin(), name.end(), d.name);
    raw.bytes(loc, layout::encode(d).first((name.size() + 7) / 8 * 8));
    const auto plinks = parent.record().link_count;
    if (opts_.fault == Fault::ParentLinkAfterCommit) {
      raw.fence();
      raw.u64(geo_.inode_offset(pino) + layout::kInodeLinkCountOff, plinks + 1);
      raw.u64(loc + layout::kDentryInoOff, ino);
      raw.fence();
    } else {
      if (directory) raw.u64(geo_.inode_offset(pino) + layout::kInodeLinkCountOff, plinks + 1);
      raw.u64(loc + layout::kDentryInoOff, ino);
      raw.fence();
    }
    slot.reset();
  } else
#endif
  if (directory) {
    auto i1 = std::move(inode).init_inode(attrs).flush();
    auto d1 = std::move(*slot).set_name(name).flush();
    auto p1 = std::move(parent).inc_link().flush();
    auto [i2, d2, p2] = fence_all(std::move(i1), std::move(d1), std::move(p1));
    auto [d3, i3] = std::move(d2).commit_dentry(std::move(i2), p2);
    std::move(d3).flush().fence();
  } else {
    auto i1 = std::move(inode).init_inode(attrs).flush();
    auto d1 = std::move(*slot).set_name(name).flush();
    auto [i2, d2] = fence_all(std::move(i1), std::move(d1));
    auto [d3, i3] = std::move(d2).commit_dentry(std::move(i2), parent);
    std::move(d3).flush().fence();
  }
  finish(tok);

  vs_.names.insert(pino, name, vol::NameEntry{loc, ino});
  if (directory) {
    vs_.names.add_dir(ino);
    vs_.dir_parent[ino] = pino;
  }
  return ino;
}

// -- write --------------------------------------------------------------------

std::size_t Fs::write(std::uint64_t ino, std::uint64_t offset, std::span<const std::uint8_t> data) {
  std::lock_guard lk(*mu_);
  require_mounted();
  if (vs_.is_dir(ino)) throw FsError(Errc::IsDir, std::to_string(ino));
  if (ino == 0 || ino >= geo_.num_inodes || dev_->read_u64(geo_.inode_offset(ino)) != ino) {
    throw FsError(Errc::NoEntry, std::to_string(ino));
  }
  if (data.empty()) return 0;
  const std::uint64_t max_size = geo_.num_pages * kPageSize;
  if (offset > max_size || data.size() > max_size - offset) throw FsError(Errc::Invalid, "write beyond maximum file size");

  OpToken tok(*dev_, geo_, *registry_, "write");
  auto inode = acquire_inode(tok, ino);
  const std::uint64_t size = inode.record().size;
  const std::uint64_t end = offset + data.size();
  const std::uint64_t have = vs_.pages.page_count(ino) * kPageSize;

  // Existing pages are overwritten in place; a gap between the old size and
  // the write offset is zero-filled so that holes read back as zeros.
  const std::uint64_t wlo = std::min(offset, size);
  const std::uint64_t whi = std::min(end, have);
  std::optional<PageRange<Dirty, Written>> old_w;
  if (wlo < whi) {
    const std::uint64_t first = wlo / kPageSize * kPageSize;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> pages;
    for (std::uint64_t p = first; p < whi; p += kPageSize) pages.emplace_back(p, *vs_.pages.page_at(ino, p));
    std::vector<std::uint8_t> buf(whi - wlo, 0);
    if (whi > offset) {
      const std::uint64_t from = std::max(wlo, offset);
      std::copy(data.begin() + (from - offset), data.begin() + (whi - offset), buf.begin() + (from - wlo));
    }
    old_w.emplace(acquire_pages(tok, ino, pages).write_pages(buf, wlo - first));
  }

  std::optional<PageRange<Dirty, Written>> new_w;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> mapped;
  if (end > have) {
    const std::size_t n = (end - have + kPageSize - 1) / kPageSize;
    const std::uint64_t nlo = std::max(offset, have);
    auto fresh = alloc_pages(tok, vs_.alloc, inode, n, have);
    for (std::size_t i = 0; i < n; ++i) mapped.emplace_back(fresh.offsets()[i], fresh.pages()[i]);
#ifdef SSUFS_FAULT_INJECTION
    if (opts_.fault == Fault::SizeWithPages) {
      // Descriptors, data and size all drain in a single epoch.
      auto wf = std::move(fresh).write_pages(data.subspan(nlo - offset), nlo - have).flush();
      std::optional<PageRange<InFlight, Written>> of;
      if (old_w) of.emplace(std::move(*old_w).flush());
      Raw raw(tok);
      raw.u64(geo_.inode_offset(ino) + layout::kInodeSizeOff, std::max(size, end));
      raw.flush();
      fence_all(std::move(wf), std::move(of));
      finish(tok);
      vs_.pages.map_pages(ino, mapped);
      return data.size();
    }
#endif
    new_w.emplace(std::move(fresh).write_pages(data.subspan(nlo - offset), nlo - have));
  }

  std::optional<PageRange<InFlight, Written>> old_f;
  std::optional<PageRange<InFlight, Written>> new_f;
  if (old_w) old_f.emplace(std::move(*old_w).flush());
  if (new_w) new_f.emplace(std::move(*new_w).flush());
  auto [old_c, new_c] = fence_all(std::move(old_f), std::move(new_f));
  if (end > size) std::move(inode).set_size(end, new_c ? *new_c : *old_c).flush().fence();
  finish(tok);

  vs_.pages.map_pages(ino, mapped);
  return data.size();
}

// -- unlink / rmdir -----------------------------------------------------------

void Fs::unlink(std::string_view parent, std::string_view name) { remove_node(parent, name, false); }

void Fs::rmdir(std::string_view parent, std::string_view name) { remove_node(parent, name, true); }

void Fs::remove_node(std::string_view parent_path, std::string_view name, bool directory) {
  std::lock_guard lk(*mu_);
  require_mounted();
  const auto pino = resolve_dir(parent_path);
  const auto entry = vs_.names.lookup(pino, name);
  if (!entry) throw FsError(Errc::NoEntry, std::string(name));
  const std::uint64_t ino = entry->ino;
  const bool is_dir = vs_.is_dir(ino);
  if (directory && !is_dir) throw FsError(Errc::NotDir, std::string(name));
  if (!directory && is_dir) throw FsError(Errc::IsDir, std::string(name));
  if (directory && !vs_.names.entries(ino).empty()) throw FsError(Errc::NotEmpty, std::string(name));

  OpToken tok(*dev_, geo_, *registry_, directory ? "rmdir" : "unlink");
  auto parent = acquire_inode(tok, pino);
  auto target = acquire_inode(tok, ino);
  bool freed = false;

#ifdef SSUFS_FAULT_INJECTION
  if (!directory && (opts_.fault == Fault::EarlyLinkDecrement || opts_.fault == Fault::InodeFreeWithBackpointers)) {
    Raw raw(tok);
    const auto links = target.record().link_count;
    const bool early_dec = opts_.fault == Fault::EarlyLinkDecrement;
    raw.u64(entry->location + layout::kDentryInoOff, 0);
    if (early_dec) raw.u64(geo_.inode_offset(ino) + layout::kInodeLinkCountOff, links - 1);
    raw.fence();
    if (!early_dec) raw.u64(geo_.inode_offset(ino) + layout::kInodeLinkCountOff, links - 1);
    raw.zeros(entry->location, layout::kDentrySize);
    raw.fence();
    if (links == 1) {
      for (const auto& [off, p] : vs_.pages.pages_of(ino)) raw.u64(geo_.descriptor_offset(p) + layout::kDescOwnerOff, 0);
      if (early_dec) {
        raw.fence();
      } else {
        raw.zeros(geo_.inode_offset(ino), layout::kInodeSize);
        raw.fence();
      }
      for (const auto& [off, p] : vs_.pages.pages_of(ino)) raw.zeros(geo_.descriptor_offset(p), layout::kDescriptorSize);
      raw.fence();
      if (early_dec) {
        raw.zeros(geo_.inode_offset(ino), layout::kInodeSize);
        raw.fence();
      }
      freed = true;
    }
  } else
#endif
  {
    auto d = acquire_dentry(tok, entry->location).clear_ino().flush().fence();
    auto t = std::move(target).dec_link(d).flush();
    std::optional<Inode<InFlight, DecLink>> p;
    if (directory) p.emplace(std::move(parent).dec_link(d).flush());
    auto dd = std::move(d).dealloc_dentry().flush();
    auto [t2, p2, dd2] = fence_all(std::move(t), std::move(p), std::move(dd));
    if (unlinked(t2.record())) {
      tear_down(tok, vs_, std::move(t2).unmap_pages(), directory);
      freed = true;
    }
  }
  finish(tok);

  vs_.names.remove(pino, name);
  vs_.alloc.free_dentry_slot(pino, entry->location);
  if (directory) {
    vs_.names.erase_dir(ino);
    vs_.alloc.drop_dir(ino);
    vs_.dir_parent.erase(ino);
  }
  const auto pages = vs_.pages.unmap_pages(ino);
  if (freed) {
    vs_.alloc.free_pages(pages);
    vs_.alloc.free_ino(ino);
  }
}

// -- rename -------------------------------------------------------------------

void Fs::rename(std::string_view src_parent, std::string_view src_name, std::string_view dst_parent,
                std::string_view dst_name) {
  std::lock_guard lk(*mu_);
  require_mounted();
  detail::validate_name(dst_name);
  const auto spino = resolve_dir(src_parent);
  const auto dpino = resolve_dir(dst_parent);
  const auto src = vs_.names.lookup(spino, src_name);
  if (!src) throw FsError(Errc::NoEntry, std::string(src_name));
  if (spino == dpino && src_name == dst_name) return;

  const bool moved_is_dir = vs_.is_dir(src->ino);
  if (moved_is_dir) {
    for (std::uint64_t x = dpino;; x = vs_.dir_parent.at(x)) {
      if (x == src->ino) throw FsError(Errc::Invalid, "cannot move a directory beneath itself");
      if (x == layout::kRootIno) break;
    }
  }
  const auto old = vs_.names.lookup(dpino, dst_name);
  const bool old_is_dir = old && vs_.is_dir(old->ino);
  if (old) {
    if (moved_is_dir && !old_is_dir) throw FsError(Errc::NotDir, std::string(dst_name));
    if (!moved_is_dir && old_is_dir) throw FsError(Errc::IsDir, std::string(dst_name));
    if (old_is_dir && !vs_.names.entries(old->ino).empty()) throw FsError(Errc::NotEmpty, std::string(dst_name));
  }
  const bool cross = spino != dpino;
  const bool inc_new_parent = moved_is_dir && cross && !old_is_dir;
  const bool dec_new_parent = old_is_dir && !cross;
  const bool dec_old_parent = moved_is_dir && cross;

  OpToken tok(*dev_, geo_, *registry_, "rename");
  auto sp = acquire_inode(tok, spino);
  std::optional<Inode<Clean, Committed>> dp;
  if (cross) dp.emplace(acquire_inode(tok, dpino));
  auto moved = acquire_inode(tok, src->ino);
  std::optional<Inode<Clean, Committed>> victim;
  if (old) victim.emplace(acquire_inode(tok, old->ino));
  auto slot = acquire_free_dentry(tok, cross ? *dp : sp, vs_);
  auto srcd = acquire_dentry(tok, src->location);
  std::optional<Dentry<Clean, Committed>> oldd;
  if (old) oldd.emplace(acquire_dentry(tok, old->location));

  // (1) destination slot gets its name
  auto dst1 = std::move(slot).set_name(dst_name).flush().fence();
  const std::uint64_t dst_loc = dst1.location();

  // (2) rename pointer, plus the new parent's link for a directory changing parents
  auto dst2f = std::move(dst1).set_rename_pointer(srcd).flush();
  std::optional<Dentry<Clean, Renaming>> dst3;
  std::optional<Inode<Clean, IncLink>> dinc;
  if (inc_new_parent) {
    auto [dst2, pinc] = fence_all(std::move(dst2f), std::move(*dp).inc_link().flush());
    dinc.emplace(std::move(pinc));
    // (3) atomic point
    dst3.emplace(std::move(dst2).commit_rename(moved, *dinc).flush().fence());
  } else {
    auto dst2 = std::move(dst2f).fence();
#ifdef SSUFS_FAULT_INJECTION
    if (opts_.fault == Fault::RenameSourceClearEarly && !old) {
      Raw raw(tok);
      raw.u64(dst_loc + layout::kDentryInoOff, src->ino);
      raw.u64(src->location + layout::kDentryInoOff, 0);
      raw.fence();
      raw.u64(dst_loc + layout::kDentryRenamePtrOff, 0);
      raw.fence();
      raw.zeros(src->location, layout::kDentrySize);
      raw.fence();
      finish(tok);
      vs_.names.remove(spino, src_name);
      vs_.names.insert(dpino, dst_name, vol::NameEntry{dst_loc, src->ino});
      vs_.alloc.free_dentry_slot(spino, src->location);
      if (moved_is_dir) vs_.dir_parent[src->ino] = dpino;
      return;
    }
#endif
    if (moved_is_dir && cross) {
      dst3.emplace(std::move(dst2).commit_rename(moved, *oldd).flush().fence());
    } else {
      dst3.emplace(std::move(dst2).commit_rename(moved).flush().fence());
    }
  }

  // (4) source (and a superseded destination) lose their inode numbers
  auto src4 = std::move(srcd).clear_ino(*dst3).flush();
  std::optional<Dentry<InFlight, ClearedIno>> old4;
  if (oldd) old4.emplace(std::move(*oldd).clear_ino(*dst3).flush());
#ifdef SSUFS_FAULT_INJECTION
  std::optional<Dentry<Clean, ClearedIno>> src_early;
  if (opts_.fault == Fault::RenameSkipClearFence && !old4) {
    // No fence between the source clear and the pointer clear.
    Raw raw(tok);
    raw.u64(dst_loc + layout::kDentryRenamePtrOff, 0);
    raw.flush();
    auto src_c = std::move(src4).fence();
    src_early.emplace(std::move(src_c));
  }
  if (src_early) {
    std::optional<Inode<InFlight, DecLink>> parent5;
    if (dec_old_parent) parent5.emplace(std::move(sp).dec_link(*src_early).flush());
    fence_all(std::move(parent5));
    std::move(*src_early).dealloc_dentry().flush().fence();
    dst3.reset();
    finish(tok);
    vs_.names.remove(spino, src_name);
    vs_.names.insert(dpino, dst_name, vol::NameEntry{dst_loc, src->ino});
    vs_.alloc.free_dentry_slot(spino, src->location);
    if (moved_is_dir) vs_.dir_parent[src->ino] = dpino;
    return;
  }
#endif
  auto [src_c, old_c] = fence_all(std::move(src4), std::move(old4));

  // (5) pointer cleared; deferred link decrements
  auto dst5 = std::move(*dst3).clear_rename_pointer(src_c).flush();
  std::optional<Inode<InFlight, DecLink>> victim5;
  if (victim) victim5.emplace(std::move(*victim).dec_link(*old_c).flush());
  std::optional<Inode<InFlight, DecLink>> parent5;
  if (dec_old_parent) {
    parent5.emplace(std::move(sp).dec_link(src_c).flush());
  } else if (dec_new_parent) {
    parent5.emplace(std::move(sp).dec_link(*old_c).flush());
  }
  auto [dst_done, victim_c, parent_c] = fence_all(std::move(dst5), std::move(victim5), std::move(parent5));

  // (6) source slot freed; the replaced inode, if now unlinked, starts its teardown
  auto src6 = std::move(src_c).dealloc_dentry().flush();
  std::optional<Dentry<InFlight, Dealloc>> old6;
  if (old_c) old6.emplace(std::move(*old_c).dealloc_dentry().flush());
  std::optional<Inode<Clean, UnmapPages>> dead;
  std::optional<PageRange<InFlight, ClearedBackptrs>> dead_pages;
  if (victim_c && unlinked(victim_c->record())) {
    dead.emplace(std::move(*victim_c).unmap_pages());
    auto pages = old_is_dir ? acquire_dir_pages(tok, old->ino, vs_.pages.dir_pages_of(old->ino))
                            : acquire_pages(tok, old->ino, vs_.pages.pages_of(old->ino));
    dead_pages.emplace(std::move(pages).clear_backpointers().flush());
  }
  auto [src_gone, old_gone, dead_cleared] = fence_all(std::move(src6), std::move(old6), std::move(dead_pages));
  if (dead) {
    auto freed = std::move(*dead_cleared).dealloc_pages().flush().fence();
    std::move(*dead).dealloc_inode(freed).flush().fence();
  }
  finish(tok);

  vs_.names.remove(spino, src_name);
  if (old) {
    vs_.names.remove(dpino, dst_name);
    vs_.alloc.free_dentry_slot(dpino, old->location);
  }
  vs_.names.insert(dpino, dst_name, vol::NameEntry{dst_loc, src->ino});
  vs_.alloc.free_dentry_slot(spino, src->location);
  if (moved_is_dir) vs_.dir_parent[src->ino] = dpino;
  if (old) {
    if (old_is_dir) {
      vs_.names.erase_dir(old->ino);
      vs_.alloc.drop_dir(old->ino);
      vs_.dir_parent.erase(old->ino);
    }
    const auto pages = vs_.pages.unmap_pages(old->ino);
    if (dead) {
      vs_.alloc.free_pages(pages);
      vs_.alloc.free_ino(old->ino);
    }
  }
}

// -- recovery -----------------------------------------------------------------

void Fs::recover() {
  report_ = RecoveryReport{};
  report_.ran = true;
  recover_renames();
  sweep_orphans();
  repair_links();
  vs_ = vol::rebuild(layout::ImageView::of_device(*dev_));
}

void Fs::recover_renames() {
  const auto view = layout::ImageView::of_device(*dev_);
  std::vector<layout::DentrySlot> pending;
  for (const auto& d : view.allocated_dentries())
    if (d.rec.rename_ptr != 0) pending.push_back(d);

  for (const auto& p : pending) {
    OpToken tok(*dev_, geo_, *registry_, "recover");
    if (p.rec.ino == 0) {
      // Never reached the atomic point: roll back by freeing the destination.
      acquire_cleared_dentry(tok, p.location).dealloc_dentry().flush().fence();
      ++report_.renames_rolled_back;
      tok.finish();
      continue;
    }
    const std::uint64_t src_loc = p.rec.rename_ptr;
    auto dst = acquire_renaming_dentry(tok, p.location);
    const bool src_ok = geo_.is_dentry_location(src_loc) && src_loc != p.location;

    std::vector<Dentry<InFlight, ClearedIno>> clearing;
    bool src_cleared_here = false;
    if (src_ok && dev_->read_u64(src_loc + layout::kDentryInoOff) != 0) {
      clearing.push_back(acquire_dentry(tok, src_loc).clear_ino(dst).flush());
      src_cleared_here = true;
    }
    for (const auto& e : view.allocated_dentries()) {
      if (e.location == p.location || e.location == src_loc || e.dir_ino != p.dir_ino) continue;
      if (e.rec.name_view() != p.rec.name_view()) continue;
      if (dev_->read_u64(e.location + layout::kDentryInoOff) == 0) continue;
      clearing.push_back(acquire_dentry(tok, e.location).clear_ino(dst).flush());
    }
    auto cleared = fence_all(tok, std::move(clearing));

    std::optional<Dentry<Clean, ClearedIno>> src_witness;
    if (src_ok && !src_cleared_here) src_witness.emplace(acquire_cleared_dentry(tok, src_loc));
    const Dentry<Clean, ClearedIno>* witness = src_witness ? &*src_witness : nullptr;
    for (const auto& c : cleared)
      if (c.location() == src_loc) witness = &c;

    if (witness != nullptr) {
      std::move(dst).clear_rename_pointer(*witness).flush().fence();
    } else {
      // The pointer does not name a dentry slot; drop it.
      dev_->store_u64(p.location + layout::kDentryRenamePtrOff, 0);
      tok.flush_lines({(p.location + layout::kDentryRenamePtrOff) / pmem::kLineSize});
      tok.fence();
    }

    std::vector<Dentry<InFlight, Dealloc>> freeing;
    for (auto& c : cleared) freeing.push_back(std::move(c).dealloc_dentry().flush());
    if (src_witness && view.dentry_allocated(src_loc)) freeing.push_back(std::move(*src_witness).dealloc_dentry().flush());
    fence_all(tok, std::move(freeing));
    ++report_.renames_completed;
    tok.finish();
  }
}

void Fs::sweep_orphans() {
  const auto view = layout::ImageView::of_device(*dev_);
  const auto reach = view.reachability();
  OpToken tok(*dev_, geo_, *registry_, "recover");

  // Dentries: anything not a logically valid name inside a reachable directory.
  std::vector<Dentry<InFlight, ClearedIno>> clearing;
  std::vector<std::uint64_t> uncommitted;
  for (const auto& d : view.allocated_dentries()) {
    const bool keep = reach.reachable.count(d.dir_ino) != 0 && view.logically_valid(d) &&
                      reach.reachable.count(d.rec.ino) != 0;
    if (keep) continue;
    if (d.rec.ino != 0) {
      clearing.push_back(acquire_dentry(tok, d.location).clear_ino().flush());
    } else {
      uncommitted.push_back(d.location);
    }
  }
  report_.orphan_dentries += clearing.size() + uncommitted.size();
  auto cleared = fence_all(tok, std::move(clearing));
  std::vector<Dentry<InFlight, Dealloc>> freeing;
  for (auto& c : cleared) freeing.push_back(std::move(c).dealloc_dentry().flush());
  for (auto loc : uncommitted) freeing.push_back(acquire_cleared_dentry(tok, loc).dealloc_dentry().flush());
  fence_all(tok, std::move(freeing));

  // Pages: orphan owners, wrong kinds, and data beyond the file size.
  std::map<std::uint64_t, std::vector<std::uint64_t>> by_orphan;
  std::vector<std::uint64_t> misc;
  std::map<std::uint64_t, std::set<std::uint64_t>> seen_offsets;
  for (std::uint64_t p = 0; p < geo_.num_pages; ++p) {
    if (!view.descriptor_allocated(p)) continue;
    const auto d = view.descriptor(p);
    bool keep = false;
    if (d.owner_ino != 0 && d.owner_ino < geo_.num_inodes && reach.reachable.count(d.owner_ino) != 0) {
      const auto rec = view.inode(d.owner_ino);
      if (d.kind == static_cast<std::uint64_t>(layout::PageKind::Directory)) {
        keep = rec.is_dir() && d.offset == 0;
      } else if (d.kind == static_cast<std::uint64_t>(layout::PageKind::Data)) {
        keep = rec.is_file() && d.offset % kPageSize == 0 && d.offset < round_up(rec.size, kPageSize) &&
               seen_offsets[d.owner_ino].insert(d.offset).second;
      }
    }
    if (keep) continue;
    const bool orphan_owner = d.owner_ino != 0 && d.owner_ino < geo_.num_inodes && view.inode_allocated(d.owner_ino) &&
                              reach.reachable.count(d.owner_ino) == 0;
    (orphan_owner ? by_orphan[d.owner_ino] : misc).push_back(p);
  }
  std::vector<std::uint64_t> orphans;
  for (std::uint64_t ino = 1; ino < geo_.num_inodes; ++ino)
    if (view.inode_allocated(ino) && reach.reachable.count(ino) == 0) orphans.push_back(ino);
  report_.orphan_inodes += orphans.size();

  std::vector<Inode<Clean, UnmapPages>> dead;
  std::vector<PageRange<InFlight, ClearedBackptrs>> clr;
  for (auto ino : orphans) {
    dead.push_back(acquire_orphan_inode(tok, ino));
    auto pages = by_orphan[ino];
    report_.orphan_pages += pages.size();
    clr.push_back(acquire_orphan_pages(tok, ino, std::move(pages)).clear_backpointers().flush());
  }
  for (const auto& [owner, pages] : by_orphan) {
    if (std::find(orphans.begin(), orphans.end(), owner) == orphans.end()) misc.insert(misc.end(), pages.begin(), pages.end());
  }
  if (!misc.empty()) {
    report_.orphan_pages += misc.size();
    clr.push_back(acquire_orphan_pages(tok, 0, misc).clear_backpointers().flush());
  }
  const bool any_pages = std::any_of(clr.begin(), clr.end(), [](const auto& r) { return !r.empty(); });
  std::vector<PageRange<Clean, ClearedBackptrs>> cleared_pages;
  if (any_pages) {
    cleared_pages = fence_all(tok, std::move(clr));
  } else {
    for (auto& r : clr) cleared_pages.push_back(std::move(r).fence());
  }
  std::vector<PageRange<InFlight, Dealloc>> dl;
  for (auto& r : cleared_pages) dl.push_back(std::move(r).dealloc_pages().flush());
  std::vector<PageRange<Clean, Dealloc>> gone;
  if (any_pages) {
    gone = fence_all(tok, std::move(dl));
  } else {
    for (auto& r : dl) gone.push_back(std::move(r).fence());
  }
  std::vector<Inode<InFlight, Dealloc>> freed;
  for (std::size_t k = 0; k < dead.size(); ++k) freed.push_back(std::move(dead[k]).dealloc_inode(gone[k]).flush());
  fence_all(tok, std::move(freed));
  tok.finish();
}

void Fs::repair_links() {
  const auto view = layout::ImageView::of_device(*dev_);
  const auto reach = view.reachability();
  OpToken tok(*dev_, geo_, *registry_, "recover");
  for (const auto& [ino, count] : reach.true_links) {
    if (view.inode(ino).link_count <= count) continue;
    // One fence per repaired inode.
    acquire_inode(tok, ino).repair_link_count(count).flush().fence();
    ++report_.links_repaired;
  }
  tok.finish();
}

// -- inspection ---------------------------------------------------------------

std::string Fs::dump_tree() const {
  std::lock_guard lk(*mu_);
  require_mounted();
  std::ostringstream os;
  auto emit = [&](const std::string& path, std::uint64_t ino) {
    const auto rec = layout::decode<layout::InodeRecord>(dev_->read(geo_.inode_offset(ino), layout::kInodeSize));
    std::uint64_t digest = 0;
    if (rec.is_file()) {
      std::vector<std::uint8_t> content(rec.size, 0);
      for (std::uint64_t pos = 0; pos < rec.size; pos += kPageSize) {
        if (auto p = vs_.pages.page_at(ino, pos)) {
          const std::size_t n = std::min<std::uint64_t>(kPageSize, rec.size - pos);
          dev_->read_into(geo_.page_offset(*p), std::span<std::uint8_t>(content.data() + pos, n));
        }
      }
      digest = fnv1a(content);
    }
    os << path << ' ' << ino << ' ' << (rec.is_dir() ? 'd' : 'f') << ' ' << rec.size << ' ' << rec.link_count << ' '
       << std::hex << digest << std::dec << '\n';
  };
  std::vector<std::pair<std::string, std::uint64_t>> stack{{"/", layout::kRootIno}};
  while (!stack.empty()) {
    auto [path, ino] = stack.back();
    stack.pop_back();
    emit(path, ino);
    if (!vs_.is_dir(ino)) continue;
    const auto& entries = vs_.names.entries(ino);
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
      stack.emplace_back((path == "/" ? "/" : path + "/") + it->first, it->second.ino);
    }
  }
  return os.str();
}

}  // namespace ssufs
