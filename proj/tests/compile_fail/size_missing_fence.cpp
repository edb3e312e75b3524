// Size update issued before the written pages are fenced.
// expect: PageRange<ssufs::InFlight, ssufs::Written>
#include "ssufs/typestate.hpp"

using namespace ssufs;

void append(OpToken& tok, vol::VolatileState& vs, std::span<const std::uint8_t> data) {
  auto inode = acquire_inode(tok, 2);
  auto written = alloc_pages(tok, vs.alloc, inode, 1, 0).write_pages(data, 0).flush();
  std::move(inode).set_size(data.size(), written).flush().fence();
}
