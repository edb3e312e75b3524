// Size update backed by pages that were allocated but never written.
// expect: PageRange<ssufs::Clean, ssufs::Alloc>
#include "ssufs/typestate.hpp"

using namespace ssufs;

void append(OpToken& tok, vol::VolatileState& vs, std::span<const std::uint8_t> data) {
  auto inode = acquire_inode(tok, 2);
  auto pages = alloc_pages(tok, vs.alloc, inode, 1, 0).flush().fence();
  std::move(inode).set_size(data.size(), pages).flush().fence();
}
