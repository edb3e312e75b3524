#pragma once

// Explicit-state bounded checker for the abstract Synchronous Soft Updates
// transition system.
//
// The model keeps a fixed pool of inodes, dentries and data pages. Every
// object carries a durable value, a cached value, a persistence state
// (Clean/Dirty/InFlight), an operational tag and the id of the operation that
// holds it. System calls run as programs of typestate transitions, one step
// at a time, and may interleave. A crash keeps any subset of the pending
// (non-Clean) objects' cached values. Recovery runs as separate transitions.
//
// Invariants are evaluated on the durable values after every step.

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace ssufs::model {

struct Bounds {
  int max_ops = 2;     // system calls per trace; they may overlap
  int pool = 8;        // persistent objects
  int max_steps = 24;  // transitions per trace
  std::size_t max_states = 20'000'000;
};

struct Toggles {
  bool recovery = true;         // orphan sweep, link repair
  bool rename_recovery = true;  // complete or roll back interrupted renames
  bool rename_pointers = true;  // rename through a pointer-carrying destination
};

/// Labels that exist only in the model (crash and recovery).
inline constexpr std::array<std::string_view, 6> kModelOnlyLabels = {
    "crash",
    "recover_complete_rename",
    "recover_rollback_rename",
    "recover_sweep_orphans",
    "recover_repair_links",
    "mount",
};

/// Properties checked after every step. Sanity checks always run.
enum Invariant : unsigned {
  kI1 = 1,        // legal link counts
  kI2 = 2,        // no pointers to uninitialized objects
  kI3 = 4,        // freed objects hold no pointers
  kI4 = 8,        // rename pointers: no cycles, one per target
  kSize = 16,     // a file's size is covered by its pages
  kReappear = 32, // a hidden directory entry never becomes valid again without being written
  kAllInvariants = 63,
};

/// Parses "I1,I2,reappear" (case-insensitive; "all" for every invariant).
unsigned parse_invariants(std::string_view list);

enum class Verdict { Pass, Counterexample, BoundExceeded };
std::string_view verdict_name(Verdict v);

struct TraceStep {
  std::string label;       // "op1 rename /a /b: commit_rename"
  std::string transition;  // "commit_rename"
  std::string state;       // rendering of the state after the step
};

struct Result {
  Verdict verdict = Verdict::Pass;
  std::size_t states = 0;
  int depth = 0;                   // deepest BFS level explored
  std::string violation;           // invariant and object, for a counterexample
  std::string initial_state;
  std::vector<TraceStep> trace;    // empty unless Counterexample
  std::set<std::string> transitions_seen;
};

/// Object pool split: (inodes, dentries, pages).
std::array<int, 3> pool_split(int pool);

Result check(const Bounds& bounds, const Toggles& toggles = {}, unsigned invariants = kAllInvariants);

/// Replays the labels of a trace from the initial state and returns the
/// violation found at its end ("" if none). Throws std::invalid_argument if a
/// label does not match any successor.
std::string replay(const Bounds& bounds, const Toggles& toggles, const std::vector<std::string>& labels,
                   unsigned invariants = kAllInvariants);

std::string print_trace(const Result& r);

/// Every transition name the model can emit.
std::set<std::string> transition_labels();

}  // namespace ssufs::model
