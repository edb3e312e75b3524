// Dentry committed while the inode initialization is still in flight.
// expect: Inode<ssufs::InFlight, ssufs::Init>
#include "ssufs/typestate.hpp"

using namespace ssufs;

void create_file(OpToken& tok, vol::VolatileState& vs) {
  auto inode = acquire_free_inode(tok, vs.alloc).init_inode({}).flush();
  auto parent = acquire_inode(tok, 1);
  auto d = acquire_free_dentry(tok, parent, vs).set_name("f").flush().fence();
  auto [dentry, committed] = std::move(d).commit_dentry(std::move(inode), parent);
  std::move(dentry).flush().fence();
}
