// Inode freed while its pages' deallocation is still in flight.
// expect: PageRange<ssufs::InFlight, ssufs::Dealloc>
#include "ssufs/typestate.hpp"

using namespace ssufs;

void unlink_file(OpToken& tok, std::uint64_t loc, std::uint64_t ino) {
  auto cleared = acquire_dentry(tok, loc).clear_ino().flush().fence();
  auto unmapped = acquire_inode(tok, ino).dec_link(cleared).flush().fence().unmap_pages();
  auto freed = acquire_pages(tok, ino, {}).clear_backpointers().flush().fence().dealloc_pages().flush();
  std::move(unmapped).dealloc_inode(freed).flush().fence();
}
