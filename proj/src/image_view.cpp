#include "ssufs/image_view.hpp"

#include <algorithm>
#include <deque>

namespace ssufs::layout {

namespace {
const std::vector<std::uint64_t> kNoPages;
}

ImageView::ImageView(std::span<const std::uint8_t> image) : bytes_(image) {
  if (bytes_.size() < kPageSize) throw GeometryError("image smaller than a superblock");
  sb_ = decode<Superblock>(bytes_.first(kPageSize));
  if (sb_.magic != kMagic) throw GeometryError("bad magic");
  geo_ = geometry_of(sb_, bytes_.size());
  index();
}

ImageView::ImageView(ImageView&& other) noexcept = default;

ImageView ImageView::of_device(const pmem::PmDevice& dev) {
  auto bytes = dev.read(0, dev.capacity());
  // The span must point into the owned buffer, which survives the move below.
  ImageView v(std::span<const std::uint8_t>(bytes.data(), bytes.size()));
  v.owned_ = std::move(bytes);
  v.bytes_ = std::span<const std::uint8_t>(v.owned_.data(), v.owned_.size());
  return v;
}

bool ImageView::inode_allocated(std::uint64_t ino) const {
  return is_allocated(bytes_.subspan(geo_.inode_offset(ino), kInodeSize));
}

InodeRecord ImageView::inode(std::uint64_t ino) const {
  return decode<InodeRecord>(bytes_.subspan(geo_.inode_offset(ino), kInodeSize));
}

bool ImageView::descriptor_allocated(std::uint64_t page) const {
  return is_allocated(bytes_.subspan(geo_.descriptor_offset(page), kDescriptorSize));
}

PageDescriptor ImageView::descriptor(std::uint64_t page) const {
  return decode<PageDescriptor>(bytes_.subspan(geo_.descriptor_offset(page), kDescriptorSize));
}

bool ImageView::dentry_allocated(std::uint64_t location) const {
  return is_allocated(bytes_.subspan(location, kDentrySize));
}

DentryRecord ImageView::dentry(std::uint64_t location) const {
  return decode<DentryRecord>(bytes_.subspan(location, kDentrySize));
}

bool ImageView::is_live_dir_page(std::uint64_t page) const {
  const auto d = descriptor(page);
  if (d.owner_ino == 0 || d.kind != static_cast<std::uint64_t>(PageKind::Directory)) return false;
  if (d.owner_ino >= geo_.num_inodes || !inode_allocated(d.owner_ino)) return false;
  return inode(d.owner_ino).is_dir();
}

const std::vector<std::uint64_t>& ImageView::dir_pages_of(std::uint64_t dir_ino) const {
  auto it = dir_pages_.find(dir_ino);
  return it == dir_pages_.end() ? kNoPages : it->second;
}

const std::vector<std::uint64_t>& ImageView::data_pages_of(std::uint64_t ino) const {
  auto it = data_pages_.find(ino);
  return it == data_pages_.end() ? kNoPages : it->second;
}

std::vector<DentrySlot> ImageView::dentries_in(std::uint64_t dir_ino) const {
  std::vector<DentrySlot> out;
  for (const auto& d : dentries_)
    if (d.dir_ino == dir_ino) out.push_back(d);
  return out;
}

bool ImageView::logically_valid(const DentrySlot& d) const {
  return d.rec.ino != 0 && !rename_invalidated(d.location) && !superseded(d.location);
}

void ImageView::index() {
  for (std::uint64_t p = 0; p < geo_.num_pages; ++p) {
    if (!descriptor_allocated(p)) continue;
    const auto d = descriptor(p);
    if (d.owner_ino == 0 || d.owner_ino >= geo_.num_inodes) continue;
    if (d.kind == static_cast<std::uint64_t>(PageKind::Directory)) {
      if (is_live_dir_page(p)) dir_pages_[d.owner_ino].push_back(p);
    } else if (d.kind == static_cast<std::uint64_t>(PageKind::Data)) {
      data_pages_[d.owner_ino].push_back(p);
    }
  }
  for (const auto& [dir, pages] : dir_pages_) {
    for (auto p : pages) {
      for (std::uint64_t s = 0; s < kDentriesPerPage; ++s) {
        const std::uint64_t loc = geo_.dentry_offset(p, s);
        if (!dentry_allocated(loc)) continue;
        dentries_.push_back(DentrySlot{loc, p, dir, dentry(loc)});
      }
    }
  }
  // Committed rename destinations logically invalidate their source and any
  // same-named entry they replace.
  for (const auto& n : dentries_) {
    if (n.rec.rename_ptr == 0 || n.rec.ino == 0) continue;
    rename_invalid_.insert(n.rec.rename_ptr);
    for (const auto& e : dentries_) {
      if (e.location != n.location && e.dir_ino == n.dir_ino && e.rec.ino != 0 &&
          e.rec.name_view() == n.rec.name_view()) {
        superseded_.insert(e.location);
      }
    }
  }
}

Reachability ImageView::reachability() const {
  Reachability r;
  if (!inode_allocated(kRootIno) || !inode(kRootIno).is_dir()) return r;
  std::map<std::uint64_t, std::vector<const DentrySlot*>> by_dir;
  for (const auto& d : dentries_)
    if (logically_valid(d)) by_dir[d.dir_ino].push_back(&d);

  std::deque<std::uint64_t> queue{kRootIno};
  r.reachable.insert(kRootIno);
  r.parent[kRootIno] = kRootIno;
  r.true_links[kRootIno] = 2;
  while (!queue.empty()) {
    const std::uint64_t dir = queue.front();
    queue.pop_front();
    for (const auto* d : by_dir[dir]) {
      const std::uint64_t child = d->rec.ino;
      if (child >= geo_.num_inodes || !inode_allocated(child)) continue;
      const auto rec = inode(child);
      if (rec.is_dir()) {
        ++r.true_links[dir];
        if (r.reachable.insert(child).second) {
          r.parent[child] = dir;
          r.true_links[child] += 2;
          queue.push_back(child);
        } else {
          ++r.true_links[child];  // a second name for a directory; fsck reports it
        }
      } else {
        r.reachable.insert(child);
        ++r.true_links[child];
      }
    }
  }
  return r;
}

}  // namespace ssufs::layout
