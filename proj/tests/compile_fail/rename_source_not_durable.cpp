// Rename pointer aimed at a source entry whose own commit is not yet durable.
// expect: Dentry<ssufs::Dirty, ssufs::Committed>
#include "ssufs/typestate.hpp"

using namespace ssufs;

void create_then_rename(OpToken& tok, vol::VolatileState& vs) {
  auto inode = acquire_free_inode(tok, vs.alloc).init_inode({}).flush().fence();
  auto parent = acquire_inode(tok, 1);
  auto d = acquire_free_dentry(tok, parent, vs).set_name("f").flush().fence();
  auto [src, committed] = std::move(d).commit_dentry(std::move(inode), parent);
  auto dst = acquire_free_dentry(tok, parent, vs).set_name("g").flush().fence();
  auto ptr = std::move(dst).set_rename_pointer(src).flush().fence();
  (void)ptr;
}
