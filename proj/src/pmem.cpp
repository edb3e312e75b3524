#include "ssufs/pmem.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace ssufs::pmem {

TraceEvent TraceEvent::store(std::uint64_t off, std::span<const std::uint8_t> data) {
  TraceEvent ev;
  ev.kind = Kind::Store;
  ev.offset = off;
  ev.bytes.assign(data.begin(), data.end());
  return ev;
}

TraceEvent TraceEvent::flush(std::uint64_t line) {
  TraceEvent ev;
  ev.kind = Kind::Flush;
  ev.line = line;
  return ev;
}

TraceEvent TraceEvent::fence() {
  TraceEvent ev;
  ev.kind = Kind::Fence;
  return ev;
}

TraceEvent TraceEvent::mark(std::string label) {
  TraceEvent ev;
  ev.kind = Kind::Mark;
  ev.label = std::move(label);
  return ev;
}

std::size_t PersistTrace::count(TraceEvent::Kind kind) const {
  return static_cast<std::size_t>(
      std::count_if(events_.begin(), events_.end(), [&](const TraceEvent& e) { return e.kind == kind; }));
}

std::vector<TraceEvent> PersistTrace::operation(const std::string& label, std::size_t nth) const {
  const std::string begin = "begin:" + label;
  const std::string end = "end:" + label;
  std::size_t seen = 0;
  for (std::size_t i = 0; i < events_.size(); ++i) {
    if (events_[i].kind != TraceEvent::Kind::Mark || events_[i].label != begin) continue;
    if (seen++ != nth) continue;
    std::vector<TraceEvent> out;
    int depth = 0;
    for (std::size_t j = i + 1; j < events_.size(); ++j) {
      const auto& e = events_[j];
      if (e.kind == TraceEvent::Kind::Mark) {
        if (e.label == begin) ++depth;
        if (e.label == end) {
          if (depth == 0) return out;
          --depth;
        }
      }
      out.push_back(e);
    }
    throw std::logic_error("unterminated operation marker: " + label);
  }
  throw std::out_of_range("no such operation in trace: " + label);
}

bool PersistTrace::markers_balanced() const {
  std::vector<std::string> stack;
  for (const auto& e : events_) {
    if (e.kind != TraceEvent::Kind::Mark) continue;
    if (e.label.rfind("begin:", 0) == 0) {
      stack.push_back(e.label.substr(6));
    } else if (e.label.rfind("end:", 0) == 0) {
      if (stack.empty() || stack.back() != e.label.substr(4)) return false;
      stack.pop_back();
    }
  }
  return stack.empty();
}

std::string PersistTrace::dump() const {
  std::ostringstream os;
  for (const auto& e : events_) {
    switch (e.kind) {
      case TraceEvent::Kind::Store: {
        os << "STORE " << e.offset << ' ' << e.bytes.size() << ' ';
        os << std::hex << std::setfill('0');
        for (auto b : e.bytes) os << std::setw(2) << static_cast<unsigned>(b);
        os << std::dec << '\n';
        break;
      }
      case TraceEvent::Kind::Flush:
        os << "FLUSH " << e.line << '\n';
        break;
      case TraceEvent::Kind::Fence:
        os << "FENCE\n";
        break;
      case TraceEvent::Kind::Mark:
        os << "MARK " << e.label << '\n';
        break;
    }
  }
  return os.str();
}

PersistTrace PersistTrace::parse(const std::string& text) {
  PersistTrace t;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "STORE") {
      std::uint64_t off = 0;
      std::size_t len = 0;
      std::string hex;
      ls >> off >> len >> hex;
      if (hex.size() != 2 * len) throw std::invalid_argument("bad STORE payload: " + line);
      std::vector<std::uint8_t> bytes(len);
      for (std::size_t i = 0; i < len; ++i) bytes[i] = static_cast<std::uint8_t>(std::stoul(hex.substr(2 * i, 2), nullptr, 16));
      t.append(TraceEvent::store(off, bytes));
    } else if (kw == "FLUSH") {
      std::uint64_t l = 0;
      ls >> l;
      t.append(TraceEvent::flush(l));
    } else if (kw == "FENCE") {
      t.append(TraceEvent::fence());
    } else if (kw == "MARK") {
      std::string label;
      ls >> label;
      t.append(TraceEvent::mark(label));
    } else {
      throw std::invalid_argument("bad trace line: " + line);
    }
  }
  return t;
}

PmDevice::PmDevice(std::size_t capacity) : media_(capacity, 0) {}

PmDevice PmDevice::from_image(std::vector<std::uint8_t> image) {
  PmDevice dev(0);
  dev.media_ = std::move(image);
  return dev;
}

PmDevice PmDevice::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_image(std::move(bytes));
}

void PmDevice::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out.write(reinterpret_cast<const char*>(media_.data()), static_cast<std::streamsize>(media_.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

void PmDevice::check_range(std::uint64_t offset, std::size_t len) const {
  if (offset > media_.size() || len > media_.size() - offset) {
    throw AddressError("device access [" + std::to_string(offset) + ", +" + std::to_string(len) +
                       ") outside capacity " + std::to_string(media_.size()));
  }
}

void PmDevice::add_chunk(std::uint64_t offset, const std::uint8_t* src, std::size_t len) {
  PendingChunk c;
  c.offset = offset;
  c.len = static_cast<std::uint8_t>(len);
  std::memcpy(c.data.data(), src, len);
  c.seq = next_seq_++;
  pending_[offset / kLineSize].push_back(c);
}

void PmDevice::store(std::uint64_t offset, std::span<const std::uint8_t> data) {
  check_range(offset, data.size());
  if (data.empty()) return;
  if (data.size() <= kChunkSize && offset / kChunkSize != (offset + data.size() - 1) / kChunkSize) {
    throw std::invalid_argument("store of " + std::to_string(data.size()) + " bytes at " + std::to_string(offset) +
                                " straddles an 8-byte boundary");
  }
  std::size_t pos = 0;
  while (pos < data.size()) {
    const std::uint64_t at = offset + pos;
    const std::size_t room = kChunkSize - at % kChunkSize;
    const std::size_t n = std::min(room, data.size() - pos);
    add_chunk(at, data.data() + pos, n);
    pos += n;
  }
  if (recording_) trace_.append(TraceEvent::store(offset, data));
}

void PmDevice::store_u64(std::uint64_t offset, std::uint64_t value) {
  std::array<std::uint8_t, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(value >> (8 * i));
  store(offset, b);
}

void PmDevice::store_zeros(std::uint64_t offset, std::size_t len) {
  const std::vector<std::uint8_t> zeros(len, 0);
  store(offset, zeros);
}

void PmDevice::flush(std::uint64_t offset, std::size_t len) {
  check_range(offset, len);
  if (len == 0) return;
  const std::uint64_t first = offset / kLineSize;
  const std::uint64_t last = (offset + len - 1) / kLineSize;
  for (std::uint64_t line = first; line <= last; ++line) {
    auto it = pending_.find(line);
    if (it != pending_.end()) {
      for (auto& c : it->second) c.flushed = true;
    }
    if (recording_) trace_.append(TraceEvent::flush(line));
  }
}

void PmDevice::fence() {
  if (fence_hook_) fence_hook_(*this);
  for (auto it = pending_.begin(); it != pending_.end();) {
    auto& chunks = it->second;
    std::vector<PendingChunk> keep;
    for (const auto& c : chunks) {
      if (c.flushed) {
        std::memcpy(media_.data() + c.offset, c.data.data(), c.len);
      } else {
        keep.push_back(c);
      }
    }
    if (keep.empty()) {
      it = pending_.erase(it);
    } else {
      chunks = std::move(keep);
      ++it;
    }
  }
  ++epoch_;
  if (recording_) trace_.append(TraceEvent::fence());
}

void PmDevice::persist_all() {
  for (const auto& [line, chunks] : pending_) {
    (void)chunks;
    flush(line * kLineSize, kLineSize);
  }
  fence();
}

void PmDevice::read_into(std::uint64_t offset, std::span<std::uint8_t> out) const {
  check_range(offset, out.size());
  if (out.empty()) return;
  std::memcpy(out.data(), media_.data() + offset, out.size());
  const std::uint64_t end = offset + out.size();
  auto it = pending_.lower_bound(offset / kLineSize);
  for (; it != pending_.end() && it->first * kLineSize < end; ++it) {
    for (const auto& c : it->second) {
      const std::uint64_t lo = std::max<std::uint64_t>(c.offset, offset);
      const std::uint64_t hi = std::min<std::uint64_t>(c.offset + c.len, end);
      if (lo >= hi) continue;
      std::memcpy(out.data() + (lo - offset), c.data.data() + (lo - c.offset), hi - lo);
    }
  }
}

std::vector<std::uint8_t> PmDevice::read(std::uint64_t offset, std::size_t len) const {
  std::vector<std::uint8_t> out(len);
  read_into(offset, out);
  return out;
}

std::uint64_t PmDevice::read_u64(std::uint64_t offset) const {
  std::array<std::uint8_t, 8> b{};
  read_into(offset, b);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::vector<std::uint8_t> PmDevice::read_durable(std::uint64_t offset, std::size_t len) const {
  check_range(offset, len);
  return {media_.begin() + static_cast<std::ptrdiff_t>(offset),
          media_.begin() + static_cast<std::ptrdiff_t>(offset + len)};
}

std::size_t PmDevice::pending_count() const {
  std::size_t n = 0;
  for (const auto& [line, chunks] : pending_) n += chunks.size();
  return n;
}

std::vector<PendingChunk> PmDevice::pending_chunks() const {
  std::vector<PendingChunk> out;
  for (const auto& [line, chunks] : pending_) out.insert(out.end(), chunks.begin(), chunks.end());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
  return out;
}

void PmDevice::apply_subset(std::vector<std::uint8_t>& image, const std::vector<const PendingChunk*>& order,
                            const std::vector<bool>& take) const {
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!take[i]) continue;
    std::memcpy(image.data() + order[i]->offset, order[i]->data.data(), order[i]->len);
  }
}

std::size_t PmDevice::for_each_crash_state(std::size_t cap, std::uint64_t seed,
                                           const std::function<void(const CrashState&)>& visit) const {
  std::vector<const PendingChunk*> order;
  for (const auto& [line, chunks] : pending_)
    for (const auto& c : chunks) order.push_back(&c);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->seq < b->seq; });

  // A chunk whose bytes already equal the media and that shares its word with
  // no other pending chunk yields the same image whether or not it persists.
  std::map<std::uint64_t, int> per_word;
  for (const auto* c : order) ++per_word[c->offset / kChunkSize];
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto* c = order[i];
    const bool inert = per_word[c->offset / kChunkSize] == 1 &&
                       std::equal(c->data.begin(), c->data.begin() + c->len, media_.begin() + c->offset);
    if (!inert) live.push_back(i);
  }

  const std::size_t n = live.size();
  if (cap == 0) cap = 1;
  std::vector<bool> take(order.size(), false);
  CrashState cs;
  auto emit = [&] {
    cs.image = media_;
    apply_subset(cs.image, order, take);
    cs.description.assign(order.size(), '-');
    for (auto i : live) cs.description[i] = take[i] ? '1' : '0';
    visit(cs);
  };

  const bool exhaustive = n < 63 && (std::uint64_t{1} << n) <= cap;
  if (exhaustive) {
    const std::uint64_t total = std::uint64_t{1} << n;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      for (std::size_t k = 0; k < n; ++k) take[live[k]] = (mask >> k) & 1u;
      emit();
    }
    return static_cast<std::size_t>(total);
  }

  std::size_t emitted = 0;
  emit();
  ++emitted;
  if (cap >= 2) {
    for (auto i : live) take[i] = true;
    emit();
    ++emitted;
  }
  std::mt19937_64 rng(seed);
  while (emitted < cap) {
    for (auto i : live) take[i] = (rng() & 1u) != 0;
    emit();
    ++emitted;
  }
  return emitted;
}

std::vector<CrashState> PmDevice::enumerate_crash_states(std::size_t cap, std::uint64_t seed) const {
  std::vector<CrashState> out;
  for_each_crash_state(cap, seed, [&](const CrashState& cs) { out.push_back(cs); });
  return out;
}

void PmDevice::mark(std::string label) {
  if (recording_) trace_.append(TraceEvent::mark(std::move(label)));
}

bool PmDevice::try_claim_mount() {
  if (mounted_) return false;
  mounted_ = true;
  return true;
}

}  // namespace ssufs::pmem
