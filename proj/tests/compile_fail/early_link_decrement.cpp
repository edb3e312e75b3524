// unlink decrements the link count while the entry clear is still unflushed.
// expect: Dentry<ssufs::Dirty, ssufs::ClearedIno>
#include "ssufs/typestate.hpp"

using namespace ssufs;

void unlink_file(OpToken& tok, std::uint64_t loc, std::uint64_t ino) {
  auto cleared = acquire_dentry(tok, loc).clear_ino();
  auto dec = acquire_inode(tok, ino).dec_link(cleared).flush().fence();
  (void)dec;
}
