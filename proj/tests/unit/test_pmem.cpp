#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "ssufs/pmem.hpp"

using namespace ssufs::pmem;

namespace {

// Reference model: every store split into words, kept pending until a fence
// follows a flush of its line. A crash applies any subset in issue order.
struct RefDevice {
  std::vector<std::uint8_t> media;
  struct Piece {
    std::uint64_t off;
    std::vector<std::uint8_t> bytes;
    bool flushed = false;
  };
  std::vector<Piece> pending;

  explicit RefDevice(std::size_t cap) : media(cap, 0) {}

  void store(std::uint64_t off, const std::vector<std::uint8_t>& data) {
    std::size_t i = 0;
    while (i < data.size()) {
      std::uint64_t a = off + i;
      std::size_t n = std::min<std::size_t>(kChunkSize - a % kChunkSize, data.size() - i);
      pending.push_back({a, {data.begin() + i, data.begin() + i + n}});
      i += n;
    }
  }
  void flush(std::uint64_t off, std::size_t len) {
    std::uint64_t lo = off / kLineSize, hi = (off + len - 1) / kLineSize;
    for (auto& p : pending)
      if (p.off / kLineSize >= lo && p.off / kLineSize <= hi) p.flushed = true;
  }
  void fence() {
    std::vector<Piece> keep;
    for (auto& p : pending) {
      if (p.flushed)
        std::copy(p.bytes.begin(), p.bytes.end(), media.begin() + p.off);
      else
        keep.push_back(p);
    }
    pending = keep;
  }
  std::set<std::vector<std::uint8_t>> crash_images() const {
    std::set<std::vector<std::uint8_t>> out;
    std::size_t n = pending.size();
    for (std::uint64_t mask = 0; mask < (1ULL << n); ++mask) {
      auto img = media;
      for (std::size_t i = 0; i < n; ++i)
        if (mask >> i & 1) std::copy(pending[i].bytes.begin(), pending[i].bytes.end(), img.begin() + pending[i].off);
      out.insert(img);
    }
    return out;
  }
};

}  // namespace

TEST_CASE("crash states match a brute-force replay") {
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    std::mt19937_64 rng(seed);
    PmDevice dev(256);
    RefDevice ref(256);
    int ops = 3 + static_cast<int>(rng() % 8);
    for (int k = 0; k < ops; ++k) {
      switch (rng() % 4) {
        case 0:
        case 1: {
          std::uint64_t off = rng() % 240;
          std::size_t len = 1 + rng() % 12;
          if (len <= kChunkSize && off % kChunkSize + len > kChunkSize) off -= off % kChunkSize;
          std::vector<std::uint8_t> data(len);
          for (auto& b : data) b = static_cast<std::uint8_t>(rng() % 3);  // small alphabet so values repeat
          dev.store(off, data);
          ref.store(off, data);
          break;
        }
        case 2: {
          std::uint64_t off = rng() % 256;
          dev.flush(off, 1);
          ref.flush(off, 1);
          break;
        }
        case 3:
          dev.fence();
          ref.fence();
          break;
      }
      if (ref.pending.size() > 14) {
        dev.flush(0, 256);
        ref.flush(0, 256);
        dev.fence();
        ref.fence();
      }
    }
    CHECK(dev.media() == ref.media);
    std::set<std::vector<std::uint8_t>> got;
    for (auto& cs : dev.enumerate_crash_states(1 << 16)) got.insert(cs.image);
    CHECK_MESSAGE(got == ref.crash_images(), "seed " << seed);
  }
}

TEST_CASE("unflushed stores survive a fence as pending") {
  PmDevice dev(4096);
  dev.store_u64(0, 7);
  dev.store_u64(64, 9);
  dev.flush(0, 8);
  dev.fence();
  CHECK(dev.read_durable(0, 1)[0] == 7);
  CHECK(dev.read_durable(64, 1)[0] == 0);
  CHECK(dev.read_u64(64) == 9);
  CHECK(dev.pending_count() == 1);
  auto states = dev.enumerate_crash_states(16);
  CHECK(states.size() == 2);
}

TEST_CASE("inert chunks are pruned") {
  PmDevice dev(128);
  dev.store_u64(0, 0);  // same as media
  dev.store_u64(8, 5);
  auto states = dev.enumerate_crash_states(16);
  REQUIRE(states.size() == 2);
  for (auto& s : states) CHECK(s.description[0] == '-');
}

TEST_CASE("sampling is deterministic and keeps the extremes") {
  PmDevice dev(4096);
  for (int i = 0; i < 20; ++i) dev.store_u64(static_cast<std::uint64_t>(i) * 8, static_cast<std::uint64_t>(i) + 1);
  auto a = dev.enumerate_crash_states(64, 42);
  auto b = dev.enumerate_crash_states(64, 42);
  REQUIRE(a.size() == 64);
  REQUIRE(b.size() == 64);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].description == b[i].description);
  std::set<std::string> descs;
  for (auto& s : a) descs.insert(s.description);
  CHECK(descs.size() == 64);
  CHECK(descs.count(std::string(20, '0')) == 1);
  CHECK(descs.count(std::string(20, '1')) == 1);
  auto c = dev.enumerate_crash_states(64, 43);
  std::set<std::string> other;
  for (auto& s : c) other.insert(s.description);
  CHECK(other != descs);
}

TEST_CASE("trace dump and parse round trip") {
  PmDevice dev(4096);
  dev.set_recording(true);
  dev.mark("begin:op");
  std::vector<std::uint8_t> bytes{1, 2, 3, 4, 5};
  dev.store(96, bytes);
  dev.flush(96, 5);
  dev.fence();
  dev.mark("end:op");
  auto text = dev.trace().dump();
  auto back = PersistTrace::parse(text);
  CHECK(back.dump() == text);
  CHECK(back.count(TraceEvent::Kind::Fence) == 1);
  CHECK(back.markers_balanced());
  auto inner = back.operation("op");
  CHECK(inner.size() == dev.trace().operation("op").size());
  CHECK(inner.front().kind == TraceEvent::Kind::Store);
}

TEST_CASE("out of range access throws") {
  PmDevice dev(128);
  CHECK_THROWS_AS(dev.store_u64(124, 1), AddressError);
  CHECK_THROWS_AS(dev.read(120, 16), AddressError);
  std::vector<std::uint8_t> four(4, 1);
  CHECK_THROWS_AS(dev.store(6, four), std::invalid_argument);  // word-straddling small store
}
