#include "ssufs/volatile_state.hpp"

#include <stdexcept>

#include "ssufs/errors.hpp"

namespace ssufs::vol {

namespace {
const DirEntries kEmptyDir;
}

void NameIndex::add_dir(std::uint64_t dir) { dirs_.try_emplace(dir); }

void NameIndex::erase_dir(std::uint64_t dir) {
  auto it = dirs_.find(dir);
  if (it == dirs_.end()) throw std::logic_error("erase of unknown directory " + std::to_string(dir));
  if (!it->second.empty()) throw std::logic_error("erase of non-empty directory " + std::to_string(dir));
  dirs_.erase(it);
}

void NameIndex::insert(std::uint64_t dir, std::string_view name, NameEntry e) {
  auto& entries = dirs_[dir];
  if (!entries.emplace(std::string(name), e).second) {
    throw std::logic_error("duplicate name index entry: " + std::string(name));
  }
}

void NameIndex::remove(std::uint64_t dir, std::string_view name) {
  auto it = dirs_.find(dir);
  if (it == dirs_.end()) throw std::logic_error("remove from unknown directory");
  auto e = it->second.find(name);
  if (e == it->second.end()) throw std::logic_error("remove of missing name: " + std::string(name));
  it->second.erase(e);
}

std::optional<NameEntry> NameIndex::lookup(std::uint64_t dir, std::string_view name) const {
  auto it = dirs_.find(dir);
  if (it == dirs_.end()) return std::nullopt;
  auto e = it->second.find(name);
  if (e == it->second.end()) return std::nullopt;
  return e->second;
}

const DirEntries& NameIndex::entries(std::uint64_t dir) const {
  auto it = dirs_.find(dir);
  return it == dirs_.end() ? kEmptyDir : it->second;
}

void PageIndex::map_pages(std::uint64_t ino, const std::vector<std::pair<std::uint64_t, std::uint64_t>>& pages) {
  if (pages.empty()) return;
  auto& m = files_[ino];
  for (const auto& [off, page] : pages) {
    if (!m.emplace(off, page).second) throw std::logic_error("file offset mapped twice");
  }
}

void PageIndex::map_dir_page(std::uint64_t ino, std::uint64_t page) {
  if (!dirs_[ino].insert(page).second) throw std::logic_error("directory page mapped twice");
}

std::vector<std::uint64_t> PageIndex::unmap_pages(std::uint64_t ino) {
  std::vector<std::uint64_t> out;
  if (auto it = files_.find(ino); it != files_.end()) {
    for (const auto& [off, page] : it->second) out.push_back(page);
    files_.erase(it);
  }
  if (auto it = dirs_.find(ino); it != dirs_.end()) {
    out.insert(out.end(), it->second.begin(), it->second.end());
    dirs_.erase(it);
  }
  return out;
}

std::vector<std::pair<std::uint64_t, std::uint64_t>> PageIndex::pages_of(std::uint64_t ino) const {
  auto it = files_.find(ino);
  if (it == files_.end()) return {};
  return {it->second.begin(), it->second.end()};
}

std::vector<std::uint64_t> PageIndex::dir_pages_of(std::uint64_t ino) const {
  auto it = dirs_.find(ino);
  if (it == dirs_.end()) return {};
  return {it->second.begin(), it->second.end()};
}

std::optional<std::uint64_t> PageIndex::page_at(std::uint64_t ino, std::uint64_t file_offset) const {
  auto it = files_.find(ino);
  if (it == files_.end()) return std::nullopt;
  auto p = it->second.find(file_offset);
  if (p == it->second.end()) return std::nullopt;
  return p->second;
}

std::size_t PageIndex::page_count(std::uint64_t ino) const {
  std::size_t n = 0;
  if (auto it = files_.find(ino); it != files_.end()) n += it->second.size();
  if (auto it = dirs_.find(ino); it != dirs_.end()) n += it->second.size();
  return n;
}

Allocators::Allocators(const Allocators& other) {
  std::lock_guard lk(other.mu_);
  free_inodes_ = other.free_inodes_;
  free_pages_ = other.free_pages_;
  free_slots_ = other.free_slots_;
}

Allocators& Allocators::operator=(const Allocators& other) {
  if (this == &other) return *this;
  std::scoped_lock lk(mu_, other.mu_);
  free_inodes_ = other.free_inodes_;
  free_pages_ = other.free_pages_;
  free_slots_ = other.free_slots_;
  return *this;
}

void Allocators::reset(std::set<std::uint64_t> free_inodes, std::set<std::uint64_t> free_pages) {
  std::lock_guard lk(mu_);
  free_inodes_ = std::move(free_inodes);
  free_pages_ = std::move(free_pages);
  free_slots_.clear();
}

std::uint64_t Allocators::allocate_ino() {
  std::lock_guard lk(mu_);
  if (free_inodes_.empty()) throw FsError(Errc::NoSpace, "inode table full");
  const auto ino = *free_inodes_.begin();
  free_inodes_.erase(free_inodes_.begin());
  return ino;
}

void Allocators::free_ino(std::uint64_t ino) {
  std::lock_guard lk(mu_);
  if (!free_inodes_.insert(ino).second) throw std::logic_error("double free of inode " + std::to_string(ino));
}

std::vector<std::uint64_t> Allocators::allocate_pages(std::size_t n) {
  std::lock_guard lk(mu_);
  if (free_pages_.size() < n) throw FsError(Errc::NoSpace, "out of pages");
  std::vector<std::uint64_t> out;
  out.reserve(n);
  auto it = free_pages_.begin();
  for (std::size_t i = 0; i < n; ++i) out.push_back(*it++);
  free_pages_.erase(free_pages_.begin(), it);
  return out;
}

void Allocators::free_pages(const std::vector<std::uint64_t>& pages) {
  std::lock_guard lk(mu_);
  for (auto p : pages)
    if (!free_pages_.insert(p).second) throw std::logic_error("double free of page " + std::to_string(p));
}

std::optional<std::uint64_t> Allocators::allocate_dentry_slot(std::uint64_t dir) {
  std::lock_guard lk(mu_);
  auto it = free_slots_.find(dir);
  if (it == free_slots_.end() || it->second.empty()) return std::nullopt;
  const auto loc = *it->second.begin();
  it->second.erase(it->second.begin());
  return loc;
}

void Allocators::free_dentry_slot(std::uint64_t dir, std::uint64_t location) {
  std::lock_guard lk(mu_);
  if (!free_slots_[dir].insert(location).second) throw std::logic_error("double free of dentry slot");
}

void Allocators::drop_dir(std::uint64_t dir) {
  std::lock_guard lk(mu_);
  free_slots_.erase(dir);
}

std::size_t Allocators::free_inode_count() const {
  std::lock_guard lk(mu_);
  return free_inodes_.size();
}

std::size_t Allocators::free_page_count() const {
  std::lock_guard lk(mu_);
  return free_pages_.size();
}

bool Allocators::has_dentry_slot(std::uint64_t dir) const {
  std::lock_guard lk(mu_);
  auto it = free_slots_.find(dir);
  return it != free_slots_.end() && !it->second.empty();
}

bool Allocators::operator==(const Allocators& other) const {
  if (this == &other) return true;
  std::scoped_lock lk(mu_, other.mu_);
  auto non_empty = [](const std::map<std::uint64_t, std::set<std::uint64_t>>& m) {
    std::map<std::uint64_t, std::set<std::uint64_t>> out;
    for (const auto& [k, v] : m)
      if (!v.empty()) out.emplace(k, v);
    return out;
  };
  return free_inodes_ == other.free_inodes_ && free_pages_ == other.free_pages_ &&
         non_empty(free_slots_) == non_empty(other.free_slots_);
}

VolatileState rebuild(const layout::ImageView& view) {
  using namespace layout;
  const Geometry& g = view.geometry();
  const Reachability reach = view.reachability();

  VolatileState st;
  std::set<std::uint64_t> free_inodes;
  for (std::uint64_t ino = 1; ino < g.num_inodes; ++ino)
    if (!view.inode_allocated(ino)) free_inodes.insert(ino);
  std::set<std::uint64_t> free_pages;
  for (std::uint64_t p = 0; p < g.num_pages; ++p)
    if (!view.descriptor_allocated(p)) free_pages.insert(p);
  st.alloc.reset(std::move(free_inodes), std::move(free_pages));

  for (auto ino : reach.reachable) {
    const auto rec = view.inode(ino);
    if (rec.is_dir()) {
      st.names.add_dir(ino);
      st.dir_parent[ino] = reach.parent.at(ino);
      for (auto p : view.dir_pages_of(ino)) {
        st.pages.map_dir_page(ino, p);
        for (std::uint64_t s = 0; s < kDentriesPerPage; ++s) {
          const auto loc = g.dentry_offset(p, s);
          if (!view.dentry_allocated(loc)) st.alloc.free_dentry_slot(ino, loc);
        }
      }
    } else {
      std::vector<std::pair<std::uint64_t, std::uint64_t>> pages;
      for (auto p : view.data_pages_of(ino)) pages.emplace_back(view.descriptor(p).offset, p);
      st.pages.map_pages(ino, pages);
    }
  }
  for (const auto& d : view.allocated_dentries()) {
    if (!view.logically_valid(d) || reach.reachable.count(d.dir_ino) == 0) continue;
    if (reach.reachable.count(d.rec.ino) == 0) continue;
    st.names.insert(d.dir_ino, d.rec.name_view(), NameEntry{d.location, d.rec.ino});
  }
  return st;
}

}  // namespace ssufs::vol
