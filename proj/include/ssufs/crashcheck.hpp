#pragma once

// Workload replay and crash-state enumeration.
//
// Workload scripts are line oriented, one operation per line:
//   mkdir PATH | create PATH | write PATH OFFSET LEN SEED | unlink PATH
//   rmdir PATH | rename SRC DST | fsync PATH
// Blank lines and lines starting with '#' are ignored.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ssufs/fault.hpp"
#include "ssufs/fsops.hpp"

namespace ssufs {

struct Op {
  enum class Kind { Mkdir, Create, Write, Unlink, Rmdir, Rename, Fsync };
  Kind kind = Kind::Mkdir;
  std::string path;
  std::string path2;  // rename destination
  std::uint64_t offset = 0;
  std::uint64_t len = 0;
  std::uint64_t seed = 0;

  std::string to_string() const;
  static Op parse(std::string_view line);
  bool operator==(const Op&) const = default;
};

struct Workload {
  std::string name;
  std::vector<Op> ops;

  std::string to_string() const;
  static Workload parse(std::string_view text, std::string name = "inline");
  static Workload load(const std::string& path);
  bool operator==(const Workload&) const = default;
};

/// Deterministic payload for write operations.
std::vector<std::uint8_t> payload(std::uint64_t len, std::uint64_t seed);

/// Applies one operation through the syscall API.
void apply(Fs& fs, const Op& op);

struct CrashOptions {
  std::size_t cap = 4096;  // crash states per epoch
  std::uint64_t seed = 1;
  std::size_t device_size = 1 << 20;
  Fault fault = Fault::None;
  bool fence_points = true;   // enumerate at every fence, not only at operation end
  std::size_t max_failures = 16;
};

struct CrashFailure {
  std::string workload;
  std::size_t op_index = 0;
  std::uint64_t epoch = 0;
  std::string subset;
  std::string invariant;
  std::string detail;

  /// "workload=W op=N epoch=E subset=B invariant=I detail=..."
  std::string to_record() const;
};

struct CrashVerdict {
  std::size_t ops = 0;
  std::size_t crash_points = 0;
  std::size_t states = 0;
  std::size_t distinct_states = 0;
  std::vector<CrashFailure> failures;
  std::vector<std::string> op_errors;  // operations that failed in the reference run

  bool pass() const { return failures.empty(); }
  std::string summary() const;
};

CrashVerdict run_crash_test(const Workload& w, const CrashOptions& opts = {});

/// Random valid workloads over a namespace of at most 8 names and depth 4.
/// profile is "mixed" or "rename-heavy" (at least half the operations are renames).
std::vector<Workload> generate_workloads(std::string_view profile, std::size_t n, std::uint64_t seed,
                                         std::size_t ops_per_workload = 24);

}  // namespace ssufs

namespace ssufs {

struct FenceScenario {
  std::string name;
  std::string setup;    // workload script run first
  std::string measured; // single operation whose fences are counted
};

/// Canonical scenarios for the per-operation fence table.
const std::vector<FenceScenario>& fence_scenarios();

/// Runs a scenario on a fresh 1 MiB device and returns the fences issued by
/// its measured operation.
std::size_t measure_fences(const FenceScenario& s);

/// "name count" lines; '#' comments allowed.
std::vector<std::pair<std::string, std::size_t>> parse_fence_table(std::string_view text);

}  // namespace ssufs
