// Rename clears the source entry before the destination commit is durable.
// expect: Dentry<ssufs::Dirty, ssufs::Renaming>
#include "ssufs/typestate.hpp"

using namespace ssufs;

void rename_file(OpToken& tok, vol::VolatileState& vs, std::uint64_t src_loc, std::uint64_t ino) {
  auto src = acquire_dentry(tok, src_loc);
  auto moved = acquire_inode(tok, ino);
  auto parent = acquire_inode(tok, 1);
  auto dst = acquire_free_dentry(tok, parent, vs).set_name("g").flush().fence();
  auto ptr = std::move(dst).set_rename_pointer(src).flush().fence();
  auto renaming = std::move(ptr).commit_rename(moved);
  auto cleared = std::move(src).clear_ino(renaming).flush().fence();
  (void)cleared;
}
