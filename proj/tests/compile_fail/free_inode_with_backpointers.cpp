// Inode freed while its pages still point back at it.
// expect: PageRange<ssufs::Clean, ssufs::ClearedBackptrs>
#include "ssufs/typestate.hpp"

using namespace ssufs;

void unlink_file(OpToken& tok, std::uint64_t loc, std::uint64_t ino) {
  auto cleared = acquire_dentry(tok, loc).clear_ino().flush().fence();
  auto unmapped = acquire_inode(tok, ino).dec_link(cleared).flush().fence().unmap_pages();
  auto pages = acquire_pages(tok, ino, {}).clear_backpointers().flush().fence();
  std::move(unmapped).dealloc_inode(pages).flush().fence();
}
