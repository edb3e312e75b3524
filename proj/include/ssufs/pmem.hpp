#pragma once

// Simulated byte-addressable persistent memory.
//
// Stores land in a volatile cache-line layer as 8-byte chunks. flush() marks
// the chunks of the covered 64-byte lines as written back; fence() applies
// every flushed chunk to the durable media. A crash may persist any subset of
// the chunks that have not been applied yet, which is strictly more permissive
// than real x86 hardware.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssufs::pmem {

inline constexpr std::size_t kLineSize = 64;
inline constexpr std::size_t kChunkSize = 8;

class AddressError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct TraceEvent {
  enum class Kind { Store, Flush, Fence, Mark };

  Kind kind = Kind::Mark;
  std::uint64_t offset = 0;        // Store: byte offset
  std::vector<std::uint8_t> bytes; // Store: payload
  std::uint64_t line = 0;          // Flush: cache-line index
  std::string label;               // Mark

  static TraceEvent store(std::uint64_t off, std::span<const std::uint8_t> data);
  static TraceEvent flush(std::uint64_t line);
  static TraceEvent fence();
  static TraceEvent mark(std::string label);
};

/// Ordered record of device events, with operation markers.
class PersistTrace {
 public:
  void append(TraceEvent ev) { events_.push_back(std::move(ev)); }
  void clear() { events_.clear(); }

  const std::vector<TraceEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }

  std::size_t count(TraceEvent::Kind kind) const;

  /// Events strictly between "MARK begin:<label>" and the matching
  /// "MARK end:<label>" of the n-th occurrence of that operation.
  std::vector<TraceEvent> operation(const std::string& label, std::size_t nth = 0) const;

  /// True iff begin/end markers nest properly.
  bool markers_balanced() const;

  /// Line-oriented text: STORE off len hex / FLUSH line / FENCE / MARK label.
  std::string dump() const;
  static PersistTrace parse(const std::string& text);

 private:
  std::vector<TraceEvent> events_;
};

struct PendingChunk {
  std::uint64_t offset = 0;  // absolute byte offset, within one 8-byte word
  std::uint8_t len = 0;
  std::array<std::uint8_t, kChunkSize> data{};
  std::uint64_t seq = 0;     // global issue order
  bool flushed = false;
};

struct CrashState {
  std::vector<std::uint8_t> image;
  std::string description;  // per pending chunk in issue order: '1' persisted, '0' lost, '-' inert
};

class PmDevice {
 public:
  explicit PmDevice(std::size_t capacity);

  static PmDevice from_image(std::vector<std::uint8_t> image);
  static PmDevice load(const std::string& path);
  void save(const std::string& path) const;

  std::size_t capacity() const { return media_.size(); }

  void store(std::uint64_t offset, std::span<const std::uint8_t> data);
  void store_u64(std::uint64_t offset, std::uint64_t value);
  void store_zeros(std::uint64_t offset, std::size_t len);
  void flush(std::uint64_t offset, std::size_t len);
  void fence();
  void persist_all();

  /// Program-visible bytes: media overlaid with pending chunks, latest wins.
  std::vector<std::uint8_t> read(std::uint64_t offset, std::size_t len) const;
  void read_into(std::uint64_t offset, std::span<std::uint8_t> out) const;
  std::uint64_t read_u64(std::uint64_t offset) const;

  /// Durable bytes only.
  std::vector<std::uint8_t> read_durable(std::uint64_t offset, std::size_t len) const;
  const std::vector<std::uint8_t>& media() const { return media_; }

  std::size_t pending_count() const;
  std::vector<PendingChunk> pending_chunks() const;  // issue order
  std::uint64_t epoch() const { return epoch_; }

  /// Every subset of pending chunks applied over media (issue order). When the
  /// subset count exceeds cap, a seeded sample of cap subsets that always
  /// contains the empty and the full subset. Chunks that cannot change the
  /// image (same bytes as media, no other pending chunk in their word) are
  /// left out of the subset space and shown as '-' in the description.
  std::vector<CrashState> enumerate_crash_states(std::size_t cap, std::uint64_t seed = 0) const;
  std::size_t for_each_crash_state(std::size_t cap, std::uint64_t seed,
                                   const std::function<void(const CrashState&)>& visit) const;

  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }
  PersistTrace& trace() { return trace_; }
  const PersistTrace& trace() const { return trace_; }
  void mark(std::string label);

  /// Called at the start of every fence, before any chunk is applied.
  void set_fence_hook(std::function<void(const PmDevice&)> hook) { fence_hook_ = std::move(hook); }

  bool try_claim_mount();
  void release_mount() { mounted_ = false; }
  bool mounted() const { return mounted_; }

 private:
  void check_range(std::uint64_t offset, std::size_t len) const;
  void add_chunk(std::uint64_t offset, const std::uint8_t* src, std::size_t len);
  void apply_subset(std::vector<std::uint8_t>& image, const std::vector<const PendingChunk*>& order,
                    const std::vector<bool>& take) const;

  std::vector<std::uint8_t> media_;
  std::map<std::uint64_t, std::vector<PendingChunk>> pending_;  // by line
  std::uint64_t next_seq_ = 0;
  std::uint64_t epoch_ = 0;
  bool recording_ = false;
  bool mounted_ = false;
  PersistTrace trace_;
  std::function<void(const PmDevice&)> fence_hook_;
};

}  // namespace ssufs::pmem
