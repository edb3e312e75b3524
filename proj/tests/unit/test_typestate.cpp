#include "doctest.h"
#include "ssufs/errors.hpp"
#include "ssufs/fsck.hpp"
#include "ssufs/image_view.hpp"
#include "ssufs/typestate.hpp"

using namespace ssufs;

// Transitions that exist only on the right state.
template <class H>
concept CanInit = requires(H h) { std::move(h).init_inode(InodeAttrs{}); };
template <class H>
concept CanFlush = requires(H h) { std::move(h).flush(); };
template <class H>
concept CanFence = requires(H h) { std::move(h).fence(); };
template <class H>
concept CanClearIno = requires(H h) { std::move(h).clear_ino(); };
template <class H>
concept CanDeallocDentry = requires(H h) { std::move(h).dealloc_dentry(); };
template <class H>
concept CanUnmap = requires(H h) { std::move(h).unmap_pages(); };

static_assert(CanInit<Inode<Clean, Free>>);
static_assert(!CanInit<Inode<Clean, Committed>>);
static_assert(!CanInit<Inode<Dirty, Free>>);
static_assert(CanFlush<Inode<Dirty, Init>>);
static_assert(!CanFlush<Inode<Clean, Init>>);
static_assert(CanFence<Inode<InFlight, Init>>);
static_assert(!CanFence<Inode<Dirty, Init>>);
static_assert(CanClearIno<Dentry<Clean, Committed>>);
static_assert(!CanClearIno<Dentry<Dirty, Committed>>);
static_assert(!CanClearIno<Dentry<Clean, Alloc>>);
static_assert(CanDeallocDentry<Dentry<Clean, ClearedIno>>);
static_assert(!CanDeallocDentry<Dentry<Clean, Committed>>);
static_assert(CanUnmap<Inode<Clean, DecLink>>);
static_assert(!CanUnmap<Inode<Clean, Committed>>);
// Lvalue handles cannot transition.
template <class H>
concept CanInitLvalue = requires(H& h) { h.init_inode(InodeAttrs{}); };
static_assert(!CanInitLvalue<Inode<Clean, Free>>);

namespace {

struct Env {
  pmem::PmDevice dev{1 << 20};
  layout::Geometry geo;
  vol::VolatileState vs;
  HandleRegistry reg;
  Env() {
    layout::mkfs(dev);
    geo = layout::compute_geometry(dev.capacity());
    vs = vol::rebuild(layout::ImageView::of_device(dev));
  }
};

}  // namespace

TEST_CASE("create by hand through the handles") {
  Env e;
  OpToken tok(e.dev, e.geo, e.reg, "create /x");
  InodeAttrs attrs;
  auto ino = acquire_free_inode(tok, e.vs.alloc).init_inode(attrs).flush().fence();
  auto parent = acquire_inode(tok, layout::kRootIno);
  auto slot = acquire_free_dentry(tok, parent, e.vs);
  auto named = std::move(slot).set_name("x").flush().fence();
  auto [d, committed] = std::move(named).commit_dentry(std::move(ino), parent);
  auto done = std::move(d).flush().fence();
  CHECK(committed.record().link_count == 1);
  CHECK_NOTHROW(tok.finish());
  CHECK(tok.fences() == 5);  // 2 for the root's first directory page
  CHECK(tok.redundant_flushes() == 0);
  CHECK(fsck(e.dev.media()).pass());
}

TEST_CASE("one live handle per object") {
  Env e;
  OpToken tok(e.dev, e.geo, e.reg, "t");
  auto a = acquire_inode(tok, layout::kRootIno);
  CHECK_THROWS_AS(acquire_inode(tok, layout::kRootIno), std::logic_error);
}

TEST_CASE("a consumed handle cannot be used again") {
  Env e;
  OpToken tok(e.dev, e.geo, e.reg, "t");
  auto f = acquire_free_inode(tok, e.vs.alloc);
  auto g = std::move(f).init_inode({}).flush().fence();
  CHECK_THROWS_AS(std::move(f).init_inode({}), std::logic_error);  // NOLINT(bugprone-use-after-move)
  (void)g;
}

TEST_CASE("dropping a dirty handle fails the operation") {
  Env e;
  OpToken tok(e.dev, e.geo, e.reg, "t");
  {
    auto dirty = acquire_free_inode(tok, e.vs.alloc).init_inode({});
  }
  CHECK_THROWS_AS(tok.finish(), std::logic_error);
}

TEST_CASE("redundant flushes are counted") {
  Env e;
  OpToken tok(e.dev, e.geo, e.reg, "t");
  tok.flush_lines({3});
  tok.flush_lines({3});
  CHECK(tok.redundant_flushes() == 1);
  tok.fence();
  tok.flush_lines({3});
  CHECK(tok.redundant_flushes() == 1);
  CHECK(tok.fences() == 1);
  tok.finish();
}

TEST_CASE("names are validated") {
  Env e;
  OpToken tok(e.dev, e.geo, e.reg, "t");
  auto parent = acquire_inode(tok, layout::kRootIno);
  CHECK_THROWS_AS(acquire_free_dentry(tok, parent, e.vs).set_name(std::string(111, 'n')), FsError);
  CHECK_THROWS_AS(acquire_free_dentry(tok, parent, e.vs).set_name("a/b"), FsError);
  CHECK_NOTHROW(acquire_free_dentry(tok, parent, e.vs).set_name(std::string(110, 'n')).flush().fence());
}
