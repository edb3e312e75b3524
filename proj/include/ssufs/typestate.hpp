#pragma once

// Exclusive-possession handles to durable objects. Each handle's type carries
// a persistence state (Dirty / InFlight / Clean) and an operational state.
// Every transition is an rvalue-qualified member that consumes the handle and
// returns one with the next type; a transition that is not declared for the
// current (persistence, operational) pair simply does not exist, so issuing
// updates in an illegal order does not compile.
//
// Transition bodies are trusted code: they perform the stores, and
// flush()/fence() issue the device write-back and store fence.

#include <array>
#include <concepts>
#include <cstdint>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

#include "ssufs/errors.hpp"
#include "ssufs/layout.hpp"
#include "ssufs/pmem.hpp"
#include "ssufs/volatile_state.hpp"

namespace ssufs {

// Persistence typestates.
struct Dirty {};
struct InFlight {};
struct Clean {};

// Operational typestates.
struct Free {};
struct Init {};
struct Committed {};
struct IncLink {};
struct DecLink {};
struct UnmapPages {};
struct Dealloc {};
struct Alloc {};
struct RenamePointerSet {};
struct Renaming {};
struct ClearedIno {};
struct Written {};
struct Live {};
struct ClearedBackptrs {};
struct Zeroed {};

template <class P>
concept PersistenceState = std::same_as<P, Dirty> || std::same_as<P, InFlight> || std::same_as<P, Clean>;

/// Durable-update transitions, name for name with the model checker's labels.
inline constexpr std::array<std::string_view, 21> kTransitionNames = {
    "acquire_free_inode", "init_inode",         "flush",           "fence",
    "acquire_free_dentry", "set_name",          "commit_dentry",   "inc_link",
    "dec_link",           "set_rename_pointer", "commit_rename",   "clear_ino",
    "clear_rename_pointer", "dealloc_dentry",   "alloc_pages",     "write_pages",
    "set_size",           "clear_backpointers", "dealloc_pages",   "unmap_pages",
    "dealloc_inode"};

/// Sub-steps of acquire_free_dentry that prepare a fresh directory page.
inline constexpr std::array<std::string_view, 3> kDirectoryPageSteps = {"zero_pages", "alloc_dir_page", "mark_live"};

struct ObjectKey {
  enum class Kind : std::uint8_t { Inode, Dentry, Page };
  Kind kind;
  std::uint64_t id;
  auto operator<=>(const ObjectKey&) const = default;
};

/// Runtime half of handle linearity: at most one live handle per durable object.
class HandleRegistry {
 public:
  void claim(const ObjectKey& k);
  void release(const ObjectKey& k);
  bool held(const ObjectKey& k) const;
  std::size_t live() const;

 private:
  mutable std::mutex mu_;
  std::set<ObjectKey> live_;
};

/// One per system call. Brackets the call's device events with trace markers
/// and owns the store-fence accounting.
class OpToken {
 public:
  OpToken(pmem::PmDevice& dev, const layout::Geometry& geo, HandleRegistry& reg, std::string label);
  OpToken(const OpToken&) = delete;
  OpToken& operator=(const OpToken&) = delete;
  ~OpToken();

  /// Ends the operation. Throws if a handle was dropped before its updates were durable.
  void finish();

  pmem::PmDevice& device() { return *dev_; }
  const layout::Geometry& geometry() const { return *geo_; }
  HandleRegistry& registry() { return *reg_; }
  const std::string& label() const { return label_; }

  void flush_lines(const std::set<std::uint64_t>& lines);
  void fence();

  std::size_t fences() const { return fences_; }
  std::size_t flushes() const { return flushes_; }
  /// Lines flushed twice without an intervening fence.
  std::size_t redundant_flushes() const { return redundant_flushes_; }

  void note_unpersisted_drop(std::string what);

 private:
  pmem::PmDevice* dev_;
  const layout::Geometry* geo_;
  HandleRegistry* reg_;
  std::string label_;
  std::set<std::uint64_t> flushed_this_epoch_;
  std::size_t fences_ = 0;
  std::size_t flushes_ = 0;
  std::size_t redundant_flushes_ = 0;
  std::vector<std::string> dropped_;
  bool finished_ = false;
};

template <class P, class S>
class Inode;
template <class P, class S>
class Dentry;
template <class P, class S>
class PageRange;

namespace detail {

class Claim {
 public:
  Claim() = default;
  Claim(HandleRegistry& reg, std::vector<ObjectKey> keys);
  Claim(Claim&& o) noexcept : reg_(std::exchange(o.reg_, nullptr)), keys_(std::move(o.keys_)) {}
  Claim& operator=(Claim&&) = delete;
  Claim(const Claim&) = delete;
  ~Claim();

  bool valid() const { return reg_ != nullptr; }

 private:
  HandleRegistry* reg_ = nullptr;
  std::vector<ObjectKey> keys_;
};

/// Byte ranges stored since the last flush.
class DirtySet {
 public:
  void add(std::uint64_t offset, std::uint64_t len);
  std::set<std::uint64_t> lines() const;
  bool empty() const { return ranges_.empty(); }
  void clear() { ranges_.clear(); }

 private:
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges_;
};

void require_live(const Claim& c, const char* transition);
void store_u64(OpToken& tok, DirtySet& dirty, std::uint64_t offset, std::uint64_t value);
void store_bytes(OpToken& tok, DirtySet& dirty, std::uint64_t offset, std::span<const std::uint8_t> bytes);
void validate_name(std::string_view name);

template <class H>
struct Fenced;
template <class S>
struct Fenced<Inode<InFlight, S>> {
  using type = Inode<Clean, S>;
  using op_state = S;
};
template <class S>
struct Fenced<Dentry<InFlight, S>> {
  using type = Dentry<Clean, S>;
  using op_state = S;
};
template <class S>
struct Fenced<PageRange<InFlight, S>> {
  using type = PageRange<Clean, S>;
  using op_state = S;
};

template <class H>
struct Fenced<std::optional<H>> {
  using type = std::optional<typename Fenced<H>::type>;
};

struct Access;

}  // namespace detail

struct InodeAttrs {
  bool directory = false;
  std::uint64_t perm = 0644;
  std::uint64_t uid = 0;
  std::uint64_t gid = 0;
  std::uint64_t now = 0;
};

// ---------------------------------------------------------------------------

template <class P, class S>
class Inode {
  static_assert(PersistenceState<P>);
  static constexpr bool kClean = std::same_as<P, Clean>;
  static constexpr bool kCleanFree = kClean && std::same_as<S, Free>;
  static constexpr bool kCleanCommitted = kClean && std::same_as<S, Committed>;
  static constexpr bool kCleanDecLink = kClean && std::same_as<S, DecLink>;
  static constexpr bool kCleanUnmap = kClean && std::same_as<S, UnmapPages>;

 public:
  Inode(Inode&&) noexcept = default;
  Inode& operator=(Inode&&) = delete;
  ~Inode() {
    if (claim_.valid() && !kClean) tok_->note_unpersisted_drop("inode " + std::to_string(ino_));
  }

  std::uint64_t ino() const { return ino_; }
  std::uint64_t location() const { return tok_->geometry().inode_offset(ino_); }
  const layout::InodeRecord& record() const { return rec_; }
  bool is_dir() const { return rec_.is_dir(); }

  Inode<Dirty, Init> init_inode(const InodeAttrs& attrs) && requires kCleanFree;
  Inode<Dirty, IncLink> inc_link() && requires kCleanCommitted;
  Inode<Dirty, DecLink> dec_link(const Dentry<Clean, ClearedIno>& unlinked) && requires kCleanCommitted;
  Inode<Dirty, Committed> set_size(std::uint64_t new_size, const PageRange<Clean, Written>& written) &&
      requires kCleanCommitted;
  Inode<Clean, UnmapPages> unmap_pages() && requires kCleanDecLink;
  Inode<Dirty, Dealloc> dealloc_inode(const PageRange<Clean, Dealloc>& unmapped) && requires kCleanUnmap;
  /// Recovery only: lower an over-estimated link count to the value implied by the tree.
  Inode<Dirty, Committed> repair_link_count(std::uint64_t true_count) && requires kCleanCommitted;

  Inode<InFlight, S> flush() && requires std::same_as<P, Dirty>;
  Inode<Clean, S> fence() && requires std::same_as<P, InFlight>;

 private:
  template <class, class>
  friend class Inode;
  template <class, class>
  friend class Dentry;
  template <class, class>
  friend class PageRange;
  friend struct detail::Access;

  Inode(OpToken* tok, detail::Claim claim, std::uint64_t ino, layout::InodeRecord rec, detail::DirtySet dirty = {})
      : tok_(tok), claim_(std::move(claim)), ino_(ino), rec_(rec), dirty_(std::move(dirty)) {}

  template <class P2, class S2>
  Inode<P2, S2> retag() && {
    return Inode<P2, S2>(tok_, std::move(claim_), ino_, rec_, std::move(dirty_));
  }

  OpToken* tok_;
  detail::Claim claim_;
  std::uint64_t ino_;
  layout::InodeRecord rec_;
  detail::DirtySet dirty_;
};

// ---------------------------------------------------------------------------

template <class P, class S>
class Dentry {
  static_assert(PersistenceState<P>);
  static constexpr bool kClean = std::same_as<P, Clean>;
  static constexpr bool kCleanFree = kClean && std::same_as<S, Free>;
  static constexpr bool kCleanAlloc = kClean && std::same_as<S, Alloc>;
  static constexpr bool kCleanCommitted = kClean && std::same_as<S, Committed>;
  static constexpr bool kCleanPointerSet = kClean && std::same_as<S, RenamePointerSet>;
  static constexpr bool kCleanRenaming = kClean && std::same_as<S, Renaming>;
  static constexpr bool kCleanCleared = kClean && std::same_as<S, ClearedIno>;

 public:
  Dentry(Dentry&&) noexcept = default;
  Dentry& operator=(Dentry&&) = delete;
  ~Dentry() {
    if (claim_.valid() && !kClean) tok_->note_unpersisted_drop("dentry @" + std::to_string(location_));
  }

  std::uint64_t location() const { return location_; }
  std::uint64_t dir_ino() const { return dir_ino_; }
  const layout::DentryRecord& record() const { return rec_; }
  std::string_view name() const { return rec_.name_view(); }

  Dentry<Dirty, Alloc> set_name(std::string_view name) && requires kCleanFree;

  std::pair<Dentry<Dirty, Committed>, Inode<Clean, Committed>> commit_dentry(
      Inode<Clean, Init>&& inode, const Inode<Clean, IncLink>& parent) && requires kCleanAlloc;
  std::pair<Dentry<Dirty, Committed>, Inode<Clean, Committed>> commit_dentry(
      Inode<Clean, Init>&& inode, const Inode<Clean, Committed>& parent) && requires kCleanAlloc;

  Dentry<Dirty, RenamePointerSet> set_rename_pointer(const Dentry<Clean, Committed>& src) && requires kCleanAlloc;
  Dentry<Dirty, Renaming> commit_rename(const Inode<Clean, Committed>& moved) && requires kCleanPointerSet;
  Dentry<Dirty, Renaming> commit_rename(const Inode<Clean, Committed>& moved,
                                        const Inode<Clean, IncLink>& new_parent) && requires kCleanPointerSet;
  /// Directory moved across directories over an empty directory: the replaced
  /// entry's parent link is inherited, so no increment is needed.
  Dentry<Dirty, Renaming> commit_rename(const Inode<Clean, Committed>& moved,
                                        const Dentry<Clean, Committed>& replaced) && requires kCleanPointerSet;

  Dentry<Dirty, ClearedIno> clear_ino() && requires kCleanCommitted;
  /// Rename source or superseded destination: only after the rename's atomic point is durable.
  Dentry<Dirty, ClearedIno> clear_ino(const Dentry<Clean, Renaming>& dst) && requires kCleanCommitted;

  Dentry<Dirty, Committed> clear_rename_pointer(const Dentry<Clean, ClearedIno>& src) && requires kCleanRenaming;
  Dentry<Dirty, Dealloc> dealloc_dentry() && requires kCleanCleared;

  Dentry<InFlight, S> flush() && requires std::same_as<P, Dirty>;
  Dentry<Clean, S> fence() && requires std::same_as<P, InFlight>;

 private:
  template <class, class>
  friend class Inode;
  template <class, class>
  friend class Dentry;
  friend struct detail::Access;

  Dentry(OpToken* tok, detail::Claim claim, std::uint64_t location, std::uint64_t dir_ino, layout::DentryRecord rec,
         detail::DirtySet dirty = {})
      : tok_(tok), claim_(std::move(claim)), location_(location), dir_ino_(dir_ino), rec_(rec),
        dirty_(std::move(dirty)) {}

  template <class P2, class S2>
  Dentry<P2, S2> retag() && {
    return Dentry<P2, S2>(tok_, std::move(claim_), location_, dir_ino_, rec_, std::move(dirty_));
  }

  OpToken* tok_;
  detail::Claim claim_;
  std::uint64_t location_;
  std::uint64_t dir_ino_;
  layout::DentryRecord rec_;
  detail::DirtySet dirty_;
};

// ---------------------------------------------------------------------------

/// One typestate for a whole set of pages; every transition applies to all of them.
template <class P, class S>
class PageRange {
  static_assert(PersistenceState<P>);
  static constexpr bool kClean = std::same_as<P, Clean>;
  static constexpr bool kCleanFree = kClean && std::same_as<S, Free>;
  static constexpr bool kCleanZeroed = kClean && std::same_as<S, Zeroed>;
  static constexpr bool kCleanAlloc = kClean && std::same_as<S, Alloc>;
  static constexpr bool kWritable =
      (std::same_as<S, Alloc> && !std::same_as<P, InFlight>) || (kClean && std::same_as<S, Live>);
  static constexpr bool kMapped = kClean && (std::same_as<S, Live> || std::same_as<S, Written>);
  static constexpr bool kCleanCleared = kClean && std::same_as<S, ClearedBackptrs>;

 public:
  PageRange(PageRange&&) noexcept = default;
  PageRange& operator=(PageRange&&) = delete;
  ~PageRange() {
    if (claim_.valid() && !kClean) tok_->note_unpersisted_drop("page range of inode " + std::to_string(owner_));
  }

  std::uint64_t owner() const { return owner_; }
  const std::vector<std::uint64_t>& pages() const { return pages_; }
  /// File offset of each page (parallel to pages()).
  const std::vector<std::uint64_t>& offsets() const { return offsets_; }
  bool empty() const { return pages_.empty(); }

  PageRange<Dirty, Zeroed> zero_pages() && requires kCleanFree;
  template <class OS>
  PageRange<Dirty, Alloc> alloc_dir_page(const Inode<Clean, OS>& dir) && requires kCleanZeroed;
  template <class OS>
  PageRange<Dirty, Alloc> alloc_pages(const Inode<Clean, OS>& owner, std::uint64_t start_offset) &&
      requires kCleanFree;
  PageRange<Clean, Live> mark_live() && requires kCleanAlloc;

  /// Writes data at byte position pos of the range (pages in file order). Fresh
  /// pages are zero-filled outside the written bytes.
  PageRange<Dirty, Written> write_pages(std::span<const std::uint8_t> data, std::uint64_t pos) && requires kWritable;

  PageRange<Dirty, ClearedBackptrs> clear_backpointers() && requires kMapped;
  PageRange<Dirty, Dealloc> dealloc_pages() && requires kCleanCleared;

  PageRange<InFlight, S> flush() && requires std::same_as<P, Dirty>;
  PageRange<Clean, S> fence() && requires std::same_as<P, InFlight>;

 private:
  template <class, class>
  friend class Inode;
  template <class, class>
  friend class PageRange;
  friend struct detail::Access;

  PageRange(OpToken* tok, detail::Claim claim, std::uint64_t owner, std::vector<std::uint64_t> pages,
            std::vector<std::uint64_t> offsets, bool fresh, detail::DirtySet dirty = {})
      : tok_(tok), claim_(std::move(claim)), owner_(owner), pages_(std::move(pages)), offsets_(std::move(offsets)),
        fresh_(fresh), dirty_(std::move(dirty)) {}

  template <class P2, class S2>
  PageRange<P2, S2> retag() && {
    return PageRange<P2, S2>(tok_, std::move(claim_), owner_, std::move(pages_), std::move(offsets_), fresh_,
                             std::move(dirty_));
  }

  OpToken* tok_;
  detail::Claim claim_;
  std::uint64_t owner_;
  std::vector<std::uint64_t> pages_;
  std::vector<std::uint64_t> offsets_;
  bool fresh_;
  detail::DirtySet dirty_;
};

// ---------------------------------------------------------------------------
// Acquisition.

Inode<Clean, Free> acquire_free_inode(OpToken& tok, vol::Allocators& alloc);
Inode<Clean, Committed> acquire_inode(OpToken& tok, std::uint64_t ino);
Dentry<Clean, Committed> acquire_dentry(OpToken& tok, std::uint64_t location);
PageRange<Clean, Free> acquire_free_pages(OpToken& tok, vol::Allocators& alloc, std::size_t n);
/// Existing data pages of a file, given as (file offset, page) pairs in file order.
PageRange<Clean, Live> acquire_pages(OpToken& tok, std::uint64_t owner,
                                     const std::vector<std::pair<std::uint64_t, std::uint64_t>>& pages);
/// Existing directory pages of a directory.
PageRange<Clean, Live> acquire_dir_pages(OpToken& tok, std::uint64_t dir, const std::vector<std::uint64_t>& pages);

// Recovery-time acquisition of objects left mid-lifecycle by a crash.

/// A committed rename destination whose rename pointer is still set.
Dentry<Clean, Renaming> acquire_renaming_dentry(OpToken& tok, std::uint64_t location);
/// An allocated dentry whose inode number is zero (uncommitted or already cleared).
Dentry<Clean, ClearedIno> acquire_cleared_dentry(OpToken& tok, std::uint64_t location);
/// An allocated inode that is unreachable from the root.
Inode<Clean, UnmapPages> acquire_orphan_inode(OpToken& tok, std::uint64_t ino);
/// Pages to be swept; owner is the orphan inode they belong to, or 0.
PageRange<Clean, Live> acquire_orphan_pages(OpToken& tok, std::uint64_t owner, std::vector<std::uint64_t> pages);

/// A free 128-byte slot in one of the parent's directory pages. When none is
/// free a fresh page is zeroed and then attached to the parent (each step
/// fenced) and its slots are handed to the allocator.
template <class S>
  requires std::same_as<S, Committed> || std::same_as<S, IncLink>
Dentry<Clean, Free> acquire_free_dentry(OpToken& tok, const Inode<Clean, S>& parent, vol::VolatileState& vs);

/// Composite of acquire_free_pages and alloc_pages.
template <class OS>
  requires std::same_as<OS, Init> || std::same_as<OS, Committed>
PageRange<Dirty, Alloc> alloc_pages(OpToken& tok, vol::Allocators& alloc, const Inode<Clean, OS>& owner, std::size_t n,
                                    std::uint64_t start_offset) {
  return acquire_free_pages(tok, alloc, n).alloc_pages(owner, start_offset);
}

/// Issues one store fence for several in-flight handles. Empty optionals are passed through.
template <class... H>
auto fence_all(H&&... handles) -> std::tuple<typename detail::Fenced<std::remove_cvref_t<H>>::type...>;

/// One store fence for a batch of same-typed in-flight handles.
template <class H>
std::vector<typename detail::Fenced<H>::type> fence_all(OpToken& tok, std::vector<H>&& handles);

// ---------------------------------------------------------------------------
// Implementation.

namespace detail {

struct Access {
  template <class H>
  static OpToken& token(const H& h) {
    return *h.tok_;
  }
  template <class H>
  static OpToken* token_of(const H& h) {
    return h.tok_;
  }
  template <class H>
  static OpToken* token_of(const std::optional<H>& h) {
    return h ? h->tok_ : nullptr;
  }
  template <class H>
  static const Claim& claim(const H& h) {
    return h.claim_;
  }
  template <class H>
  static std::set<std::uint64_t> dirty_lines(const H& h) {
    return h.dirty_.lines();
  }
  template <class H>
  static typename Fenced<std::remove_cvref_t<H>>::type fenced(H&& h) {
    return std::move(h).template retag<Clean, typename Fenced<std::remove_cvref_t<H>>::op_state>();
  }
  template <class H>
  static std::optional<typename Fenced<H>::type> fenced(std::optional<H>&& h) {
    if (!h) return std::nullopt;
    return fenced(std::move(*h));
  }
  template <class H>
  static void check_live(const H& h) {
    require_live(h.claim_, "fence_all");
  }
  template <class H>
  static void check_live(const std::optional<H>& h) {
    if (h) require_live(h->claim_, "fence_all");
  }
  template <class H>
  static bool page_range_empty(const H&) {
    return false;
  }
  template <class P, class S>
  static bool page_range_empty(const PageRange<P, S>& r) {
    return r.pages_.empty();
  }

  static Inode<Clean, Free> make_free_inode(OpToken& tok, std::uint64_t ino, const layout::InodeRecord& rec);
  static Inode<Clean, Committed> make_inode(OpToken& tok, std::uint64_t ino, const layout::InodeRecord& rec);
  static Dentry<Clean, Free> make_free_dentry(OpToken& tok, std::uint64_t location, std::uint64_t dir);
  static Dentry<Clean, Committed> make_dentry(OpToken& tok, std::uint64_t location, std::uint64_t dir,
                                              const layout::DentryRecord& rec);
  static PageRange<Clean, Free> make_free_pages(OpToken& tok, std::vector<std::uint64_t> pages);
  static Dentry<Clean, Renaming> make_renaming_dentry(OpToken& tok, std::uint64_t location, std::uint64_t dir,
                                                      const layout::DentryRecord& rec);
  static Dentry<Clean, ClearedIno> make_cleared_dentry(OpToken& tok, std::uint64_t location, std::uint64_t dir,
                                                       const layout::DentryRecord& rec);
  static Inode<Clean, UnmapPages> make_orphan_inode(OpToken& tok, std::uint64_t ino, const layout::InodeRecord& rec);
  static PageRange<Clean, Live> make_live_pages(OpToken& tok, std::uint64_t owner, std::vector<std::uint64_t> pages,
                                                std::vector<std::uint64_t> offsets);
};

}  // namespace detail

// -- Inode ------------------------------------------------------------------

template <class P, class S>
Inode<Dirty, Init> Inode<P, S>::init_inode(const InodeAttrs& a) && requires kCleanFree {
  detail::require_live(claim_, "init_inode");
  layout::InodeRecord r;
  r.ino = ino_;
  r.link_count = a.directory ? 2 : 1;
  r.size = 0;
  r.mode = (a.directory ? layout::kModeDir : layout::kModeFile) | (a.perm & 07777);
  r.uid = a.uid;
  r.gid = a.gid;
  r.atime = r.mtime = r.ctime = a.now;
  rec_ = r;
  // The fields set here are not visible until a dentry points at the inode,
  // so they go out as one unordered bulk store.
  const auto bytes = layout::encode(rec_);
  detail::store_bytes(*tok_, dirty_, location(), bytes.first(9 * sizeof(std::uint64_t)));
  return std::move(*this).template retag<Dirty, Init>();
}

template <class P, class S>
Inode<Dirty, IncLink> Inode<P, S>::inc_link() && requires kCleanCommitted {
  detail::require_live(claim_, "inc_link");
  rec_.link_count += 1;
  detail::store_u64(*tok_, dirty_, location() + layout::kInodeLinkCountOff, rec_.link_count);
  return std::move(*this).template retag<Dirty, IncLink>();
}

template <class P, class S>
Inode<Dirty, DecLink> Inode<P, S>::dec_link(const Dentry<Clean, ClearedIno>& unlinked) && requires kCleanCommitted {
  detail::require_live(claim_, "dec_link");
  detail::require_live(unlinked.claim_, "dec_link witness");
  if (rec_.link_count == 0) throw CorruptionError("link count underflow on inode " + std::to_string(ino_));
  rec_.link_count -= 1;
  detail::store_u64(*tok_, dirty_, location() + layout::kInodeLinkCountOff, rec_.link_count);
  return std::move(*this).template retag<Dirty, DecLink>();
}

template <class P, class S>
Inode<Dirty, Committed> Inode<P, S>::set_size(std::uint64_t new_size, const PageRange<Clean, Written>& written) &&
    requires kCleanCommitted {
  detail::require_live(claim_, "set_size");
  detail::require_live(written.claim_, "set_size witness");
  if (written.owner() != ino_) throw std::logic_error("set_size witness belongs to another inode");
  rec_.size = new_size;
  detail::store_u64(*tok_, dirty_, location() + layout::kInodeSizeOff, new_size);
  return std::move(*this).template retag<Dirty, Committed>();
}

template <class P, class S>
Inode<Clean, UnmapPages> Inode<P, S>::unmap_pages() && requires kCleanDecLink {
  detail::require_live(claim_, "unmap_pages");
  const std::uint64_t floor = rec_.is_dir() ? 1 : 0;
  if (rec_.link_count > floor) throw std::logic_error("unmap_pages on a still-linked inode");
  return std::move(*this).template retag<Clean, UnmapPages>();
}

template <class P, class S>
Inode<Dirty, Dealloc> Inode<P, S>::dealloc_inode(const PageRange<Clean, Dealloc>& unmapped) && requires kCleanUnmap {
  detail::require_live(claim_, "dealloc_inode");
  detail::require_live(unmapped.claim_, "dealloc_inode witness");
  if (unmapped.owner() != ino_) throw std::logic_error("dealloc_inode witness belongs to another inode");
  rec_ = layout::InodeRecord{};
  const std::array<std::uint8_t, layout::kInodeSize> zeros{};
  detail::store_bytes(*tok_, dirty_, location(), zeros);
  return std::move(*this).template retag<Dirty, Dealloc>();
}

template <class P, class S>
Inode<Dirty, Committed> Inode<P, S>::repair_link_count(std::uint64_t true_count) && requires kCleanCommitted {
  detail::require_live(claim_, "repair_link_count");
  if (true_count > rec_.link_count) throw std::logic_error("link repair may only lower a link count");
  rec_.link_count = true_count;
  detail::store_u64(*tok_, dirty_, location() + layout::kInodeLinkCountOff, true_count);
  return std::move(*this).template retag<Dirty, Committed>();
}

template <class P, class S>
Inode<InFlight, S> Inode<P, S>::flush() && requires std::same_as<P, Dirty> {
  detail::require_live(claim_, "flush");
  tok_->flush_lines(dirty_.lines());
  dirty_.clear();
  return std::move(*this).template retag<InFlight, S>();
}

template <class P, class S>
Inode<Clean, S> Inode<P, S>::fence() && requires std::same_as<P, InFlight> {
  detail::require_live(claim_, "fence");
  tok_->fence();
  return std::move(*this).template retag<Clean, S>();
}

// -- Dentry -----------------------------------------------------------------

template <class P, class S>
Dentry<Dirty, Alloc> Dentry<P, S>::set_name(std::string_view name) && requires kCleanFree {
  detail::require_live(claim_, "set_name");
  detail::validate_name(name);
  rec_ = layout::DentryRecord{};
  std::copy(name.begin(), name.end(), rec_.name);
  const auto bytes = layout::encode(rec_);
  const std::size_t padded = (name.size() + 7) / 8 * 8;
  detail::store_bytes(*tok_, dirty_, location_, bytes.first(padded));
  return std::move(*this).template retag<Dirty, Alloc>();
}

template <class P, class S>
std::pair<Dentry<Dirty, Committed>, Inode<Clean, Committed>> Dentry<P, S>::commit_dentry(
    Inode<Clean, Init>&& inode, const Inode<Clean, IncLink>& parent) && requires kCleanAlloc {
  detail::require_live(claim_, "commit_dentry");
  detail::require_live(inode.claim_, "commit_dentry inode");
  detail::require_live(parent.claim_, "commit_dentry parent");
  if (parent.ino() != dir_ino_) throw std::logic_error("commit_dentry parent does not own the dentry");
  rec_.ino = inode.ino();
  detail::store_u64(*tok_, dirty_, location_ + layout::kDentryInoOff, rec_.ino);
  return {std::move(*this).template retag<Dirty, Committed>(), std::move(inode).template retag<Clean, Committed>()};
}

template <class P, class S>
std::pair<Dentry<Dirty, Committed>, Inode<Clean, Committed>> Dentry<P, S>::commit_dentry(
    Inode<Clean, Init>&& inode, const Inode<Clean, Committed>& parent) && requires kCleanAlloc {
  detail::require_live(claim_, "commit_dentry");
  detail::require_live(inode.claim_, "commit_dentry inode");
  detail::require_live(parent.claim_, "commit_dentry parent");
  if (parent.ino() != dir_ino_) throw std::logic_error("commit_dentry parent does not own the dentry");
  if (inode.is_dir()) throw std::logic_error("committing a directory requires the parent's durable link increment");
  rec_.ino = inode.ino();
  detail::store_u64(*tok_, dirty_, location_ + layout::kDentryInoOff, rec_.ino);
  return {std::move(*this).template retag<Dirty, Committed>(), std::move(inode).template retag<Clean, Committed>()};
}

template <class P, class S>
Dentry<Dirty, RenamePointerSet> Dentry<P, S>::set_rename_pointer(const Dentry<Clean, Committed>& src) &&
    requires kCleanAlloc {
  detail::require_live(claim_, "set_rename_pointer");
  detail::require_live(src.claim_, "set_rename_pointer source");
  rec_.rename_ptr = src.location();
  detail::store_u64(*tok_, dirty_, location_ + layout::kDentryRenamePtrOff, rec_.rename_ptr);
  return std::move(*this).template retag<Dirty, RenamePointerSet>();
}

template <class P, class S>
Dentry<Dirty, Renaming> Dentry<P, S>::commit_rename(const Inode<Clean, Committed>& moved) &&
    requires kCleanPointerSet {
  detail::require_live(claim_, "commit_rename");
  detail::require_live(moved.claim_, "commit_rename inode");
  const auto src_ino = tok_->device().read_u64(rec_.rename_ptr + layout::kDentryInoOff);
  if (src_ino != moved.ino()) throw std::logic_error("commit_rename: moved inode is not the source's inode");
  if (moved.is_dir()) {
    const auto src_page = tok_->geometry().page_of(rec_.rename_ptr);
    const auto src_dir = tok_->device().read_u64(tok_->geometry().descriptor_offset(src_page));
    if (src_dir != dir_ino_)
      throw std::logic_error("cross-directory rename of a directory needs the new parent's link");
  }
  rec_.ino = moved.ino();
  detail::store_u64(*tok_, dirty_, location_ + layout::kDentryInoOff, rec_.ino);
  return std::move(*this).template retag<Dirty, Renaming>();
}

template <class P, class S>
Dentry<Dirty, Renaming> Dentry<P, S>::commit_rename(const Inode<Clean, Committed>& moved,
                                                    const Inode<Clean, IncLink>& new_parent) &&
    requires kCleanPointerSet {
  detail::require_live(claim_, "commit_rename");
  detail::require_live(moved.claim_, "commit_rename inode");
  detail::require_live(new_parent.claim_, "commit_rename parent");
  if (new_parent.ino() != dir_ino_) throw std::logic_error("commit_rename parent does not own the dentry");
  const auto src_ino = tok_->device().read_u64(rec_.rename_ptr + layout::kDentryInoOff);
  if (src_ino != moved.ino()) throw std::logic_error("commit_rename: moved inode is not the source's inode");
  rec_.ino = moved.ino();
  detail::store_u64(*tok_, dirty_, location_ + layout::kDentryInoOff, rec_.ino);
  return std::move(*this).template retag<Dirty, Renaming>();
}

template <class P, class S>
Dentry<Dirty, Renaming> Dentry<P, S>::commit_rename(const Inode<Clean, Committed>& moved,
                                                    const Dentry<Clean, Committed>& replaced) &&
    requires kCleanPointerSet {
  detail::require_live(claim_, "commit_rename");
  detail::require_live(moved.claim_, "commit_rename inode");
  detail::require_live(replaced.claim_, "commit_rename replaced");
  if (replaced.dir_ino() != dir_ino_ || replaced.name() != name())
    throw std::logic_error("commit_rename: replaced entry is not the destination name");
  const auto victim = layout::decode<layout::InodeRecord>(
      tok_->device().read(tok_->geometry().inode_offset(replaced.record().ino), sizeof(layout::InodeRecord)));
  if (!moved.is_dir() || !victim.is_dir()) throw std::logic_error("commit_rename: only a directory inherits a link");
  const auto src_ino = tok_->device().read_u64(rec_.rename_ptr + layout::kDentryInoOff);
  if (src_ino != moved.ino()) throw std::logic_error("commit_rename: moved inode is not the source's inode");
  rec_.ino = moved.ino();
  detail::store_u64(*tok_, dirty_, location_ + layout::kDentryInoOff, rec_.ino);
  return std::move(*this).template retag<Dirty, Renaming>();
}

template <class P, class S>
Dentry<Dirty, ClearedIno> Dentry<P, S>::clear_ino() && requires kCleanCommitted {
  detail::require_live(claim_, "clear_ino");
  rec_.ino = 0;
  detail::store_u64(*tok_, dirty_, location_ + layout::kDentryInoOff, 0);
  return std::move(*this).template retag<Dirty, ClearedIno>();
}

template <class P, class S>
Dentry<Dirty, ClearedIno> Dentry<P, S>::clear_ino(const Dentry<Clean, Renaming>& dst) && requires kCleanCommitted {
  detail::require_live(claim_, "clear_ino");
  detail::require_live(dst.claim_, "clear_ino witness");
  const bool is_source = dst.record().rename_ptr == location_;
  const bool superseded = dst.dir_ino() == dir_ino_ && dst.name() == name() && dst.location() != location_;
  if (!is_source && !superseded) throw std::logic_error("clear_ino: dentry is not part of this rename");
  rec_.ino = 0;
  detail::store_u64(*tok_, dirty_, location_ + layout::kDentryInoOff, 0);
  return std::move(*this).template retag<Dirty, ClearedIno>();
}

template <class P, class S>
Dentry<Dirty, Committed> Dentry<P, S>::clear_rename_pointer(const Dentry<Clean, ClearedIno>& src) &&
    requires kCleanRenaming {
  detail::require_live(claim_, "clear_rename_pointer");
  detail::require_live(src.claim_, "clear_rename_pointer witness");
  if (rec_.rename_ptr != src.location()) throw std::logic_error("clear_rename_pointer: witness is not the source");
  rec_.rename_ptr = 0;
  detail::store_u64(*tok_, dirty_, location_ + layout::kDentryRenamePtrOff, 0);
  return std::move(*this).template retag<Dirty, Committed>();
}

template <class P, class S>
Dentry<Dirty, Dealloc> Dentry<P, S>::dealloc_dentry() && requires kCleanCleared {
  detail::require_live(claim_, "dealloc_dentry");
  rec_ = layout::DentryRecord{};
  const std::array<std::uint8_t, layout::kDentrySize> zeros{};
  detail::store_bytes(*tok_, dirty_, location_, zeros);
  return std::move(*this).template retag<Dirty, Dealloc>();
}

template <class P, class S>
Dentry<InFlight, S> Dentry<P, S>::flush() && requires std::same_as<P, Dirty> {
  detail::require_live(claim_, "flush");
  tok_->flush_lines(dirty_.lines());
  dirty_.clear();
  return std::move(*this).template retag<InFlight, S>();
}

template <class P, class S>
Dentry<Clean, S> Dentry<P, S>::fence() && requires std::same_as<P, InFlight> {
  detail::require_live(claim_, "fence");
  tok_->fence();
  return std::move(*this).template retag<Clean, S>();
}

// -- PageRange --------------------------------------------------------------

template <class P, class S>
PageRange<Dirty, Zeroed> PageRange<P, S>::zero_pages() && requires kCleanFree {
  detail::require_live(claim_, "zero_pages");
  const std::vector<std::uint8_t> zeros(layout::kPageSize, 0);
  for (auto p : pages_) detail::store_bytes(*tok_, dirty_, tok_->geometry().page_offset(p), zeros);
  return std::move(*this).template retag<Dirty, Zeroed>();
}

template <class P, class S>
template <class OS>
PageRange<Dirty, Alloc> PageRange<P, S>::alloc_dir_page(const Inode<Clean, OS>& dir) && requires kCleanZeroed {
  detail::require_live(claim_, "alloc_dir_page");
  detail::require_live(dir.claim_, "alloc_dir_page owner");
  if (!dir.is_dir()) throw FsError(Errc::NotDir, "directory page for a non-directory");
  owner_ = dir.ino();
  for (auto p : pages_) {
    const layout::PageDescriptor d{owner_, static_cast<std::uint64_t>(layout::PageKind::Directory), 0};
    detail::store_bytes(*tok_, dirty_, tok_->geometry().descriptor_offset(p), layout::encode(d));
  }
  offsets_.assign(pages_.size(), 0);
  return std::move(*this).template retag<Dirty, Alloc>();
}

template <class P, class S>
template <class OS>
PageRange<Dirty, Alloc> PageRange<P, S>::alloc_pages(const Inode<Clean, OS>& owner, std::uint64_t start_offset) &&
    requires kCleanFree {
  static_assert(std::same_as<OS, Init> || std::same_as<OS, Committed>,
                "pages can only be attached to an initialized inode");
  detail::require_live(claim_, "alloc_pages");
  detail::require_live(owner.claim_, "alloc_pages owner");
  if (start_offset % layout::kPageSize != 0) throw std::invalid_argument("page-unaligned file offset");
  owner_ = owner.ino();
  offsets_.clear();
  for (std::size_t i = 0; i < pages_.size(); ++i) {
    const std::uint64_t off = start_offset + i * layout::kPageSize;
    offsets_.push_back(off);
    const layout::PageDescriptor d{owner_, static_cast<std::uint64_t>(layout::PageKind::Data), off};
    detail::store_bytes(*tok_, dirty_, tok_->geometry().descriptor_offset(pages_[i]), layout::encode(d));
  }
  fresh_ = true;
  return std::move(*this).template retag<Dirty, Alloc>();
}

template <class P, class S>
PageRange<Clean, Live> PageRange<P, S>::mark_live() && requires kCleanAlloc {
  detail::require_live(claim_, "mark_live");
  return std::move(*this).template retag<Clean, Live>();
}

template <class P, class S>
PageRange<Dirty, Written> PageRange<P, S>::write_pages(std::span<const std::uint8_t> data, std::uint64_t pos) &&
    requires kWritable {
  detail::require_live(claim_, "write_pages");
  const std::uint64_t span_bytes = pages_.size() * layout::kPageSize;
  if (pos > span_bytes || data.size() > span_bytes - pos) throw std::out_of_range("write past the end of the range");
  for (std::size_t i = 1; i < offsets_.size(); ++i) {
    if (offsets_[i] != offsets_[i - 1] + layout::kPageSize) throw std::logic_error("write_pages on a non-contiguous range");
  }
  const std::uint64_t end = pos + data.size();
  for (std::size_t i = 0; i < pages_.size(); ++i) {
    const std::uint64_t lo = i * layout::kPageSize;
    const std::uint64_t hi = lo + layout::kPageSize;
    const std::uint64_t base = tok_->geometry().page_offset(pages_[i]);
    const std::uint64_t wlo = std::max(lo, pos);
    const std::uint64_t whi = std::min(hi, end);
    if (fresh_) {
      std::vector<std::uint8_t> page(layout::kPageSize, 0);
      if (wlo < whi) std::copy(data.begin() + (wlo - pos), data.begin() + (whi - pos), page.begin() + (wlo - lo));
      detail::store_bytes(*tok_, dirty_, base, page);
    } else if (wlo < whi) {
      detail::store_bytes(*tok_, dirty_, base + (wlo - lo), data.subspan(wlo - pos, whi - wlo));
    }
  }
  return std::move(*this).template retag<Dirty, Written>();
}

template <class P, class S>
PageRange<Dirty, ClearedBackptrs> PageRange<P, S>::clear_backpointers() && requires kMapped {
  detail::require_live(claim_, "clear_backpointers");
  for (auto p : pages_)
    detail::store_u64(*tok_, dirty_, tok_->geometry().descriptor_offset(p) + layout::kDescOwnerOff, 0);
  return std::move(*this).template retag<Dirty, ClearedBackptrs>();
}

template <class P, class S>
PageRange<Dirty, Dealloc> PageRange<P, S>::dealloc_pages() && requires kCleanCleared {
  detail::require_live(claim_, "dealloc_pages");
  const std::array<std::uint8_t, layout::kDescriptorSize> zeros{};
  for (auto p : pages_) detail::store_bytes(*tok_, dirty_, tok_->geometry().descriptor_offset(p), zeros);
  return std::move(*this).template retag<Dirty, Dealloc>();
}

template <class P, class S>
PageRange<InFlight, S> PageRange<P, S>::flush() && requires std::same_as<P, Dirty> {
  detail::require_live(claim_, "flush");
  tok_->flush_lines(dirty_.lines());
  dirty_.clear();
  return std::move(*this).template retag<InFlight, S>();
}

template <class P, class S>
PageRange<Clean, S> PageRange<P, S>::fence() && requires std::same_as<P, InFlight> {
  detail::require_live(claim_, "fence");
  if (!pages_.empty()) tok_->fence();
  return std::move(*this).template retag<Clean, S>();
}

// -- free functions ---------------------------------------------------------

template <class S>
  requires std::same_as<S, Committed> || std::same_as<S, IncLink>
Dentry<Clean, Free> acquire_free_dentry(OpToken& tok, const Inode<Clean, S>& parent, vol::VolatileState& vs) {
  detail::require_live(detail::Access::claim(parent), "acquire_free_dentry parent");
  if (!parent.is_dir()) throw FsError(Errc::NotDir, "parent inode " + std::to_string(parent.ino()) + " is not a directory");
  auto slot = vs.alloc.allocate_dentry_slot(parent.ino());
  if (!slot) {
    auto page = acquire_free_pages(tok, vs.alloc, 1).zero_pages().flush().fence();
    auto live = std::move(page).alloc_dir_page(parent).flush().fence().mark_live();
    const auto p = live.pages().front();
    vs.pages.map_dir_page(parent.ino(), p);
    for (std::uint64_t s = 0; s < layout::kDentriesPerPage; ++s)
      vs.alloc.free_dentry_slot(parent.ino(), tok.geometry().dentry_offset(p, s));
    slot = vs.alloc.allocate_dentry_slot(parent.ino());
  }
  return detail::Access::make_free_dentry(tok, *slot, parent.ino());
}

template <class... H>
auto fence_all(H&&... handles) -> std::tuple<typename detail::Fenced<std::remove_cvref_t<H>>::type...> {
  static_assert(sizeof...(H) > 0, "fence_all needs at least one handle");
  static_assert((std::is_rvalue_reference_v<H&&> && ...), "fence_all consumes its handles");
  OpToken* tok = nullptr;
  ((tok = tok != nullptr ? tok : detail::Access::token_of(handles)), ...);
  (detail::Access::check_live(handles), ...);
  if (tok != nullptr) tok->fence();
  return std::tuple<typename detail::Fenced<std::remove_cvref_t<H>>::type...>(
      detail::Access::fenced(std::move(handles))...);
}

template <class H>
std::vector<typename detail::Fenced<H>::type> fence_all(OpToken& tok, std::vector<H>&& handles) {
  for (const auto& h : handles) detail::Access::check_live(h);
  if (!handles.empty()) tok.fence();
  std::vector<typename detail::Fenced<H>::type> out;
  out.reserve(handles.size());
  for (auto& h : handles) out.push_back(detail::Access::fenced(std::move(h)));
  handles.clear();
  return out;
}

}  // namespace ssufs
