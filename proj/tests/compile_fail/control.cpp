// Correct orderings for every scenario in this directory. Must compile.
#include "ssufs/typestate.hpp"

using namespace ssufs;

void create_file(OpToken& tok, vol::VolatileState& vs) {
  auto inode = acquire_free_inode(tok, vs.alloc).init_inode({}).flush().fence();
  auto parent = acquire_inode(tok, 1);
  auto d = acquire_free_dentry(tok, parent, vs).set_name("f").flush().fence();
  auto [dentry, committed] = std::move(d).commit_dentry(std::move(inode), parent);
  std::move(dentry).flush().fence();
}

void make_dir(OpToken& tok, vol::VolatileState& vs) {
  auto inode = acquire_free_inode(tok, vs.alloc).init_inode({.directory = true}).flush().fence();
  auto parent = acquire_inode(tok, 1).inc_link().flush().fence();
  auto d = acquire_free_dentry(tok, parent, vs).set_name("d").flush().fence();
  auto [dentry, committed] = std::move(d).commit_dentry(std::move(inode), parent);
  std::move(dentry).flush().fence();
}

void append(OpToken& tok, vol::VolatileState& vs, std::span<const std::uint8_t> data) {
  auto inode = acquire_inode(tok, 2);
  auto written = alloc_pages(tok, vs.alloc, inode, 1, 0).write_pages(data, 0).flush().fence();
  std::move(inode).set_size(data.size(), written).flush().fence();
}

void unlink_file(OpToken& tok, std::uint64_t loc, std::uint64_t ino) {
  auto cleared = acquire_dentry(tok, loc).clear_ino().flush().fence();
  auto dec = acquire_inode(tok, ino).dec_link(cleared).flush().fence();
  auto unmapped = std::move(dec).unmap_pages();
  auto freed = acquire_pages(tok, ino, {}).clear_backpointers().flush().fence().dealloc_pages().flush().fence();
  std::move(unmapped).dealloc_inode(freed).flush().fence();
  std::move(cleared).dealloc_dentry().flush().fence();
}

void rename_file(OpToken& tok, vol::VolatileState& vs, std::uint64_t src_loc, std::uint64_t ino) {
  auto src = acquire_dentry(tok, src_loc);
  auto moved = acquire_inode(tok, ino);
  auto parent = acquire_inode(tok, 1);
  auto dst = acquire_free_dentry(tok, parent, vs).set_name("g").flush().fence();
  auto ptr = std::move(dst).set_rename_pointer(src).flush().fence();
  auto renaming = std::move(ptr).commit_rename(moved).flush().fence();
  auto cleared = std::move(src).clear_ino(renaming).flush().fence();
  std::move(renaming).clear_rename_pointer(cleared).flush().fence();
  std::move(cleared).dealloc_dentry().flush().fence();
}
