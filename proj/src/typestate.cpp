#include "ssufs/typestate.hpp"

#include <algorithm>

namespace ssufs {

void HandleRegistry::claim(const ObjectKey& k) {
  std::lock_guard lk(mu_);
  if (!live_.insert(k).second) {
    throw std::logic_error("a live handle already exists for object " + std::to_string(k.id));
  }
}

void HandleRegistry::release(const ObjectKey& k) {
  std::lock_guard lk(mu_);
  live_.erase(k);
}

bool HandleRegistry::held(const ObjectKey& k) const {
  std::lock_guard lk(mu_);
  return live_.count(k) != 0;
}

std::size_t HandleRegistry::live() const {
  std::lock_guard lk(mu_);
  return live_.size();
}

OpToken::OpToken(pmem::PmDevice& dev, const layout::Geometry& geo, HandleRegistry& reg, std::string label)
    : dev_(&dev), geo_(&geo), reg_(&reg), label_(std::move(label)) {
  dev_->mark("begin:" + label_);
}

OpToken::~OpToken() {
  if (!finished_) dev_->mark("end:" + label_);
}

void OpToken::finish() {
  if (finished_) return;
  finished_ = true;
  dev_->mark("end:" + label_);
  if (!dropped_.empty()) {
    std::string msg = "operation " + label_ + " dropped handles before they were durable:";
    for (const auto& d : dropped_) msg += " " + d;
    throw std::logic_error(msg);
  }
}

void OpToken::flush_lines(const std::set<std::uint64_t>& lines) {
  for (auto line : lines) {
    if (!flushed_this_epoch_.insert(line).second) ++redundant_flushes_;
    dev_->flush(line * pmem::kLineSize, pmem::kLineSize);
    ++flushes_;
  }
}

void OpToken::fence() {
  dev_->fence();
  flushed_this_epoch_.clear();
  ++fences_;
}

void OpToken::note_unpersisted_drop(std::string what) { dropped_.push_back(std::move(what)); }

namespace detail {

Claim::Claim(HandleRegistry& reg, std::vector<ObjectKey> keys) : keys_(std::move(keys)) {
  std::size_t done = 0;
  try {
    for (; done < keys_.size(); ++done) reg.claim(keys_[done]);
  } catch (...) {
    for (std::size_t i = 0; i < done; ++i) reg.release(keys_[i]);
    throw;
  }
  reg_ = &reg;
}

Claim::~Claim() {
  if (reg_ == nullptr) return;
  for (const auto& k : keys_) reg_->release(k);
}

void DirtySet::add(std::uint64_t offset, std::uint64_t len) {
  if (len != 0) ranges_.emplace_back(offset, len);
}

std::set<std::uint64_t> DirtySet::lines() const {
  std::set<std::uint64_t> out;
  for (const auto& [off, len] : ranges_) {
    for (std::uint64_t l = off / pmem::kLineSize; l <= (off + len - 1) / pmem::kLineSize; ++l) out.insert(l);
  }
  return out;
}

void require_live(const Claim& c, const char* transition) {
  if (!c.valid()) throw std::logic_error(std::string("use of a consumed handle in ") + transition);
}

void store_u64(OpToken& tok, DirtySet& dirty, std::uint64_t offset, std::uint64_t value) {
  tok.device().store_u64(offset, value);
  dirty.add(offset, sizeof value);
}

void store_bytes(OpToken& tok, DirtySet& dirty, std::uint64_t offset, std::span<const std::uint8_t> bytes) {
  // Short payloads may cross a word; the device only accepts that for long stores.
  const std::size_t head = pmem::kChunkSize - offset % pmem::kChunkSize;
  if (bytes.size() <= pmem::kChunkSize && bytes.size() > head) {
    tok.device().store(offset, bytes.first(head));
    tok.device().store(offset + head, bytes.subspan(head));
  } else {
    tok.device().store(offset, bytes);
  }
  dirty.add(offset, bytes.size());
}

void validate_name(std::string_view name) {
  if (name.empty() || name == "." || name == "..") throw FsError(Errc::Invalid, "invalid name");
  if (name.find('/') != std::string_view::npos || name.find('\0') != std::string_view::npos) {
    throw FsError(Errc::Invalid, "invalid character in name");
  }
  if (name.size() > layout::kNameMax) throw FsError(Errc::NameTooLong, std::string(name.substr(0, 16)) + "...");
}

Inode<Clean, Free> Access::make_free_inode(OpToken& tok, std::uint64_t ino, const layout::InodeRecord& rec) {
  Claim c(tok.registry(), {{ObjectKey::Kind::Inode, ino}});
  return Inode<Clean, Free>(&tok, std::move(c), ino, rec);
}

Inode<Clean, Committed> Access::make_inode(OpToken& tok, std::uint64_t ino, const layout::InodeRecord& rec) {
  Claim c(tok.registry(), {{ObjectKey::Kind::Inode, ino}});
  return Inode<Clean, Committed>(&tok, std::move(c), ino, rec);
}

Dentry<Clean, Free> Access::make_free_dentry(OpToken& tok, std::uint64_t location, std::uint64_t dir) {
  Claim c(tok.registry(), {{ObjectKey::Kind::Dentry, location}});
  return Dentry<Clean, Free>(&tok, std::move(c), location, dir, layout::DentryRecord{});
}

Dentry<Clean, Committed> Access::make_dentry(OpToken& tok, std::uint64_t location, std::uint64_t dir,
                                             const layout::DentryRecord& rec) {
  Claim c(tok.registry(), {{ObjectKey::Kind::Dentry, location}});
  return Dentry<Clean, Committed>(&tok, std::move(c), location, dir, rec);
}

PageRange<Clean, Free> Access::make_free_pages(OpToken& tok, std::vector<std::uint64_t> pages) {
  std::vector<ObjectKey> keys;
  for (auto p : pages) keys.push_back({ObjectKey::Kind::Page, p});
  Claim c(tok.registry(), std::move(keys));
  return PageRange<Clean, Free>(&tok, std::move(c), 0, std::move(pages), {}, true);
}

Dentry<Clean, Renaming> Access::make_renaming_dentry(OpToken& tok, std::uint64_t location, std::uint64_t dir,
                                                     const layout::DentryRecord& rec) {
  Claim c(tok.registry(), {{ObjectKey::Kind::Dentry, location}});
  return Dentry<Clean, Renaming>(&tok, std::move(c), location, dir, rec);
}

Dentry<Clean, ClearedIno> Access::make_cleared_dentry(OpToken& tok, std::uint64_t location, std::uint64_t dir,
                                                      const layout::DentryRecord& rec) {
  Claim c(tok.registry(), {{ObjectKey::Kind::Dentry, location}});
  return Dentry<Clean, ClearedIno>(&tok, std::move(c), location, dir, rec);
}

Inode<Clean, UnmapPages> Access::make_orphan_inode(OpToken& tok, std::uint64_t ino, const layout::InodeRecord& rec) {
  Claim c(tok.registry(), {{ObjectKey::Kind::Inode, ino}});
  return Inode<Clean, UnmapPages>(&tok, std::move(c), ino, rec);
}

PageRange<Clean, Live> Access::make_live_pages(OpToken& tok, std::uint64_t owner, std::vector<std::uint64_t> pages,
                                               std::vector<std::uint64_t> offsets) {
  std::vector<ObjectKey> keys;
  for (auto p : pages) keys.push_back({ObjectKey::Kind::Page, p});
  Claim c(tok.registry(), std::move(keys));
  return PageRange<Clean, Live>(&tok, std::move(c), owner, std::move(pages), std::move(offsets), false);
}

}  // namespace detail

namespace {

layout::InodeRecord read_inode(OpToken& tok, std::uint64_t ino) {
  if (ino == 0 || ino >= tok.geometry().num_inodes) throw CorruptionError("inode number out of range: " + std::to_string(ino));
  std::array<std::uint8_t, layout::kInodeSize> buf{};
  tok.device().read_into(tok.geometry().inode_offset(ino), buf);
  return layout::decode<layout::InodeRecord>(buf);
}

}  // namespace

Inode<Clean, Free> acquire_free_inode(OpToken& tok, vol::Allocators& alloc) {
  const auto ino = alloc.allocate_ino();
  const auto rec = read_inode(tok, ino);
  if (rec.ino != 0 || rec.link_count != 0 || rec.mode != 0) {
    throw CorruptionError("allocator returned an in-use inode " + std::to_string(ino));
  }
  return detail::Access::make_free_inode(tok, ino, rec);
}

Inode<Clean, Committed> acquire_inode(OpToken& tok, std::uint64_t ino) {
  const auto rec = read_inode(tok, ino);
  if (rec.ino != ino) throw CorruptionError("inode " + std::to_string(ino) + " is not allocated");
  return detail::Access::make_inode(tok, ino, rec);
}

namespace {

std::pair<layout::DentryRecord, std::uint64_t> read_dentry(OpToken& tok, std::uint64_t location) {
  const auto& g = tok.geometry();
  if (!g.is_dentry_location(location)) throw CorruptionError("not a dentry location: " + std::to_string(location));
  std::array<std::uint8_t, layout::kDentrySize> buf{};
  tok.device().read_into(location, buf);
  const auto dir = tok.device().read_u64(g.descriptor_offset(g.page_of(location)) + layout::kDescOwnerOff);
  return {layout::decode<layout::DentryRecord>(buf), dir};
}

}  // namespace

Dentry<Clean, Committed> acquire_dentry(OpToken& tok, std::uint64_t location) {
  const auto [rec, dir] = read_dentry(tok, location);
  if (rec.ino == 0) throw CorruptionError("dentry at " + std::to_string(location) + " is not committed");
  return detail::Access::make_dentry(tok, location, dir, rec);
}

Dentry<Clean, Renaming> acquire_renaming_dentry(OpToken& tok, std::uint64_t location) {
  const auto [rec, dir] = read_dentry(tok, location);
  if (rec.ino == 0 || rec.rename_ptr == 0) throw CorruptionError("dentry is not a committed rename destination");
  return detail::Access::make_renaming_dentry(tok, location, dir, rec);
}

Dentry<Clean, ClearedIno> acquire_cleared_dentry(OpToken& tok, std::uint64_t location) {
  const auto [rec, dir] = read_dentry(tok, location);
  if (rec.ino != 0) throw CorruptionError("dentry still names an inode");
  return detail::Access::make_cleared_dentry(tok, location, dir, rec);
}

Inode<Clean, UnmapPages> acquire_orphan_inode(OpToken& tok, std::uint64_t ino) {
  if (ino == 0 || ino >= tok.geometry().num_inodes) throw CorruptionError("inode number out of range");
  std::array<std::uint8_t, layout::kInodeSize> buf{};
  tok.device().read_into(tok.geometry().inode_offset(ino), buf);
  return detail::Access::make_orphan_inode(tok, ino, layout::decode<layout::InodeRecord>(buf));
}

PageRange<Clean, Live> acquire_orphan_pages(OpToken& tok, std::uint64_t owner, std::vector<std::uint64_t> pages) {
  std::vector<std::uint64_t> offs(pages.size(), 0);
  return detail::Access::make_live_pages(tok, owner, std::move(pages), std::move(offs));
}

PageRange<Clean, Free> acquire_free_pages(OpToken& tok, vol::Allocators& alloc, std::size_t n) {
  auto pages = alloc.allocate_pages(n);
  return detail::Access::make_free_pages(tok, std::move(pages));
}

PageRange<Clean, Live> acquire_pages(OpToken& tok, std::uint64_t owner,
                                     const std::vector<std::pair<std::uint64_t, std::uint64_t>>& pages) {
  std::vector<std::uint64_t> ps;
  std::vector<std::uint64_t> offs;
  const auto& g = tok.geometry();
  for (const auto& [off, p] : pages) {
    std::array<std::uint8_t, layout::kDescriptorSize> buf{};
    tok.device().read_into(g.descriptor_offset(p), buf);
    const auto d = layout::decode<layout::PageDescriptor>(buf);
    if (d.owner_ino != owner || d.offset != off) {
      throw CorruptionError("page " + std::to_string(p) + " is not owned by inode " + std::to_string(owner));
    }
    offs.push_back(off);
    ps.push_back(p);
  }
  return detail::Access::make_live_pages(tok, owner, std::move(ps), std::move(offs));
}

PageRange<Clean, Live> acquire_dir_pages(OpToken& tok, std::uint64_t dir, const std::vector<std::uint64_t>& pages) {
  const auto& g = tok.geometry();
  for (auto p : pages) {
    const auto owner = tok.device().read_u64(g.descriptor_offset(p) + layout::kDescOwnerOff);
    if (owner != dir) throw CorruptionError("directory page " + std::to_string(p) + " has the wrong owner");
  }
  return detail::Access::make_live_pages(tok, dir, pages, std::vector<std::uint64_t>(pages.size(), 0));
}

}  // namespace ssufs
