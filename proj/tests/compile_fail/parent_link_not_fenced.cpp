// mkdir commits the entry before the parent's link increment is durable.
// expect: Inode<ssufs::Dirty, ssufs::IncLink>
#include "ssufs/typestate.hpp"

using namespace ssufs;

void make_dir(OpToken& tok, vol::VolatileState& vs) {
  auto inode = acquire_free_inode(tok, vs.alloc).init_inode({.directory = true}).flush().fence();
  auto parent = acquire_inode(tok, 1).inc_link();
  auto d = acquire_free_dentry(tok, acquire_inode(tok, 1), vs).set_name("d").flush().fence();
  auto [dentry, committed] = std::move(d).commit_dentry(std::move(inode), parent);
  std::move(dentry).flush().fence();
}
