#pragma once

// System-call level operations. Every durable update goes through typestate
// handles bound to an OpToken; every call is durable when it returns.

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssufs/errors.hpp"
#include "ssufs/fault.hpp"
#include "ssufs/layout.hpp"
#include "ssufs/pmem.hpp"
#include "ssufs/typestate.hpp"
#include "ssufs/volatile_state.hpp"

namespace ssufs {

struct FsOptions {
  /// Timestamp source. Defaults to a logical counter so that images are reproducible.
  std::function<std::uint64_t()> clock;
  Fault fault = Fault::None;
  /// Recovery on a dirty mount. Disabling it is only useful for experiments.
  bool recover = true;
};

struct RecoveryReport {
  bool ran = false;
  std::size_t renames_completed = 0;
  std::size_t renames_rolled_back = 0;
  std::size_t orphan_inodes = 0;
  std::size_t orphan_pages = 0;
  std::size_t orphan_dentries = 0;
  std::size_t links_repaired = 0;

  std::string summary() const;
};

struct Stat {
  std::uint64_t ino = 0;
  bool is_dir = false;
  std::uint64_t size = 0;
  std::uint64_t links = 0;
  std::uint64_t mode = 0;
  std::uint64_t mtime = 0;
};

struct DirEntry {
  std::string name;
  std::uint64_t ino = 0;
  bool operator==(const DirEntry&) const = default;
};

/// Splits "/a/b/c" into ("/a/b", "c").
std::pair<std::string, std::string> split_path(std::string_view path);

class Fs {
 public:
  /// Mounts the device. A clean image is indexed directly; a dirty one is
  /// recovered first. Throws FsError(Busy) if the device is already mounted.
  static Fs mount(pmem::PmDevice& dev, FsOptions opts = {});

  Fs(Fs&& o) noexcept;
  Fs& operator=(Fs&&) = delete;
  Fs(const Fs&) = delete;
  ~Fs();

  /// Marks the image clean and drops the volatile state.
  void unmount();
  bool mounted() const { return dev_ != nullptr; }

  std::uint64_t create(std::string_view parent, std::string_view name, std::uint64_t perm = 0644);
  std::uint64_t mkdir(std::string_view parent, std::string_view name, std::uint64_t perm = 0755);
  std::size_t write(std::uint64_t ino, std::uint64_t offset, std::span<const std::uint8_t> data);
  std::vector<std::uint8_t> read(std::uint64_t ino, std::uint64_t offset, std::size_t len) const;
  std::uint64_t lookup(std::string_view path) const;
  std::vector<DirEntry> readdir(std::uint64_t ino) const;
  Stat stat(std::uint64_t ino) const;
  void unlink(std::string_view parent, std::string_view name);
  void rmdir(std::string_view parent, std::string_view name);
  void rename(std::string_view src_parent, std::string_view src_name, std::string_view dst_parent,
              std::string_view dst_name);
  void fsync(std::uint64_t ino);

  /// One line per reachable object: "path ino kind size links digest", sorted by path.
  std::string dump_tree() const;

  const vol::VolatileState& volatile_state() const { return vs_; }
  const RecoveryReport& recovery_report() const { return report_; }
  const layout::Geometry& geometry() const { return geo_; }
  pmem::PmDevice& device() { return *dev_; }
  std::size_t last_op_fences() const { return last_fences_; }
  std::size_t last_op_redundant_flushes() const { return last_redundant_; }

 private:
  Fs(pmem::PmDevice& dev, FsOptions opts);

  void recover();
  void recover_renames();
  void sweep_orphans();
  void repair_links();

  std::uint64_t resolve_dir(std::string_view path) const;
  std::uint64_t make_node(std::string_view parent, std::string_view name, std::uint64_t perm, bool directory);
  void remove_node(std::string_view parent, std::string_view name, bool directory);
  void finish(OpToken& tok);
  std::uint64_t now();
  void require_mounted() const;

  pmem::PmDevice* dev_;
  FsOptions opts_;
  layout::Geometry geo_;
  vol::VolatileState vs_;
  std::unique_ptr<HandleRegistry> registry_ = std::make_unique<HandleRegistry>();
  RecoveryReport report_;
  std::uint64_t logical_time_ = 0;
  std::size_t last_fences_ = 0;
  std::size_t last_redundant_ = 0;
  // Coarse per-filesystem lock held for the full duration of each call.
  mutable std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
};

}  // namespace ssufs
