#pragma once

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <istream>
#include <mutex>
#include <ostream>
#include <thread>
#include <vector>

#include "latte/binary_io.hpp"
#include "latte/code_model.hpp"

namespace latte {

// Counter for the PRNG: the edge's anchor, so a lazily generated stream and a
// materialised model draw identical bits.
inline uint64_t edge_counter(const EdgeSpec& e) {
  return (uint64_t(static_cast<uint32_t>(e.anchor.t)) << 28) | (uint64_t(e.anchor.y & 0xfff) << 16) |
         (uint64_t(e.anchor.x & 0xfff) << 4) | static_cast<uint64_t>(e.anchor.channel);
}

inline bool edge_fires(const EdgeSpec& e, uint64_t seed) {
  return e.probability > 0.0 && rng::uniform(seed, 0, edge_counter(e)) < e.probability;
}

struct Shot {
  std::vector<uint32_t> flipped_edges;
  std::vector<uint8_t> detector_bits;  // one byte per real detector
  uint64_t true_logical = 0;

  std::vector<uint32_t> defects() const {
    std::vector<uint32_t> out;
    for (uint32_t i = 0; i < detector_bits.size(); ++i)
      if (detector_bits[i]) out.push_back(i);
    return out;
  }
};

inline Shot shot_from_edges(const DecodingModel& m, std::vector<uint32_t> flipped) {
  Shot s;
  s.detector_bits.assign(m.num_real_detectors(), 0);
  std::sort(flipped.begin(), flipped.end());
  for (uint32_t id : flipped) {
    const auto& e = m.edges[id];
    for (uint32_t d : e) s.detector_bits[d] ^= 1;
    s.true_logical ^= e.logical_mask;
  }
  s.flipped_edges = std::move(flipped);
  return s;
}

inline Shot sample_shot(const DecodingModel& m, uint64_t seed) {
  std::vector<uint32_t> flipped;
  for (const auto& e : m.edges)
    if (edge_fires(e, seed)) flipped.push_back(e.id);
  return shot_from_edges(m, std::move(flipped));
}

// One measurement round on the wire: sorted per-round stabilizer indices.
struct RoundRecord {
  uint16_t patch = 0;
  uint32_t round = 0;
  std::vector<uint32_t> detectors;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

inline void write_round(std::ostream& os, const RoundRecord& r) {
  if (r.detectors.size() > 0xffff) throw SizeError("round has too many detectors for the wire format");
  io::put<uint16_t>(os, r.patch);
  io::put<uint32_t>(os, r.round);
  io::put<uint16_t>(os, static_cast<uint16_t>(r.detectors.size()));
  for (uint32_t d : r.detectors) io::put<uint32_t>(os, d);
}

// Returns false on a clean end of stream before a header.
inline bool read_round(std::istream& is, RoundRecord& r) {
  if (is.peek() == std::char_traits<char>::eof()) return false;
  r.patch = io::get<uint16_t>(is);
  r.round = io::get<uint32_t>(is);
  uint16_t n = io::get<uint16_t>(is);
  r.detectors.resize(n);
  for (auto& d : r.detectors) d = io::get<uint32_t>(is);
  if (!std::is_sorted(r.detectors.begin(), r.detectors.end())) throw FormatError("round detectors not sorted");
  return true;
}

class RoundSource {
 public:
  virtual ~RoundSource() = default;
  virtual bool next(RoundRecord& out) = 0;
};

// Replays a sampled Shot of a materialised model.
class ShotRoundSource : public RoundSource {
 public:
  ShotRoundSource(const DecodingModel& m, const Shot& s, uint16_t patch = 0) : m_(m), s_(s), patch_(patch) {}
  bool next(RoundRecord& out) override {
    if (t_ >= m_.rounds) return false;
    uint32_t n = m_.num_real_detectors() / m_.rounds;
    out.patch = patch_;
    out.round = t_;
    out.detectors.clear();
    for (uint32_t s = 0; s < n; ++s)
      if (s_.detector_bits[t_ * n + s]) out.detectors.push_back(s);
    ++t_;
    return true;
  }

 private:
  const DecodingModel& m_;
  const Shot& s_;
  uint16_t patch_;
  uint32_t t_ = 0;
};

// Samples rounds on the fly from a lattice without materialising the model.
// Produces the same bits as sample_shot on the materialised model.
class LatticeRoundSource : public RoundSource {
 public:
  LatticeRoundSource(std::shared_ptr<const Lattice> l, uint64_t seed, uint16_t patch = 0)
      : l_(std::move(l)), seed_(seed), patch_(patch) {
    n_ = l_->num_stabilizers();
    cur_.assign(n_, 0);
    nxt_.assign(n_, 0);
  }

  bool next(RoundRecord& out) override {
    if (t_ >= l_->rounds()) return false;
    l_->for_each_edge(t_, t_ + 1, [&](const EdgeSpec& e) {
      if (!edge_fires(e, seed_)) return;
      ++flipped_;
      logical_ ^= e.logical_mask;
      for (uint32_t d : e) (l_->round_of(d) == t_ ? cur_ : nxt_)[l_->stabilizer_of(d)] ^= 1;
    });
    out.patch = patch_;
    out.round = t_;
    out.detectors.clear();
    for (uint32_t s = 0; s < n_; ++s)
      if (cur_[s]) out.detectors.push_back(s);
    std::swap(cur_, nxt_);
    std::fill(nxt_.begin(), nxt_.end(), 0);
    ++t_;
    return true;
  }

  uint64_t true_logical() const { return logical_; }
  uint64_t flipped_count() const { return flipped_; }

 private:
  std::shared_ptr<const Lattice> l_;
  uint64_t seed_;
  uint16_t patch_;
  uint32_t n_ = 0;
  uint32_t t_ = 0;
  std::vector<uint8_t> cur_, nxt_;
  uint64_t logical_ = 0;
  uint64_t flipped_ = 0;
};

// Reads the wire format from a file descriptor (pipe, socket or file).
class FdRoundSource : public RoundSource {
 public:
  explicit FdRoundSource(int fd) : fd_(fd) {}
  bool next(RoundRecord& out) override {
    uint8_t hdr[8];
    if (!read_exact(hdr, sizeof hdr, true)) return false;
    out.patch = static_cast<uint16_t>(hdr[0] | hdr[1] << 8);
    out.round = uint32_t(hdr[2]) | uint32_t(hdr[3]) << 8 | uint32_t(hdr[4]) << 16 | uint32_t(hdr[5]) << 24;
    uint16_t n = static_cast<uint16_t>(hdr[6] | hdr[7] << 8);
    out.detectors.resize(n);
    for (auto& d : out.detectors) {
      uint8_t b[4];
      read_exact(b, 4, false);
      d = uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
    }
    return true;
  }

 private:
  bool read_exact(uint8_t* buf, size_t n, bool eof_ok) {
    size_t got = 0;
    while (got < n) {
      ssize_t r = ::read(fd_, buf + got, n - got);
      if (r < 0 && errno == EINTR) continue;
      if (r <= 0) {
        if (got == 0 && eof_ok) return false;
        throw FormatError("truncated round on input stream");
      }
      got += static_cast<size_t>(r);
    }
    return true;
  }
  int fd_;
};

struct StreamConfig {
  uint64_t round_period_ns = 1000;  // virtual time per round
  bool hybrid_mode = false;
  int hybrid_fd = -1;               // wire-format input when hybrid_mode is set
  double time_scale = 0.0;          // wall ns per virtual ns; 0 runs as fast as possible
  uint64_t seed = 0;
  size_t high_water = 1024;

  void validate() const {
    if (round_period_ns == 0) throw ConfigError("round_period must be > 0");
    if (time_scale < 0) throw ConfigError("time_scale must be >= 0");
    if (hybrid_mode && hybrid_fd < 0) throw ConfigError("hybrid mode needs an input descriptor");
    if (high_water == 0) throw ConfigError("high-water mark must be > 0");
  }
};

using Clock = std::chrono::steady_clock;

struct RoundEvent {
  RoundRecord record;
  uint64_t timestamp_ns = 0;  // virtual time
  Clock::time_point emitted;  // wall time the generator released the round
};

struct StreamStats {
  uint64_t rounds = 0;
  size_t max_buffered = 0;
};

// Sleeps most of the way, then spins, to hit wall-clock targets closely.
inline void pace_until(Clock::time_point target) {
  using namespace std::chrono;
  auto now = Clock::now();
  if (target - now > microseconds(200)) std::this_thread::sleep_until(target - microseconds(100));
  while (Clock::now() < target) std::this_thread::yield();
}

// Runs a generator thread feeding an ordered single-producer single-consumer
// channel; the calling thread drains it into `sink`. In paced mode the
// generator never waits, so a slow sink trips the high-water mark.
inline StreamStats stream_rounds(RoundSource& source, const StreamConfig& cfg,
                                 const std::function<void(const RoundEvent&)>& sink) {
  cfg.validate();
  std::mutex mu;
  std::condition_variable cv;
  std::deque<RoundEvent> queue;
  bool done = false;
  bool fault = false;
  size_t fault_depth = 0;
  std::exception_ptr source_error;
  std::atomic<bool> stop{false};
  StreamStats stats;
  const bool paced = cfg.time_scale > 0.0;

  std::thread producer([&] {
    try {
      auto start = Clock::now();
      RoundRecord rec;
      uint64_t index = 0;
      while (!stop.load(std::memory_order_relaxed) && source.next(rec)) {
        uint64_t ts = index * cfg.round_period_ns;
        if (paced) pace_until(start + std::chrono::nanoseconds(static_cast<int64_t>(double(ts) * cfg.time_scale)));
        std::unique_lock lk(mu);
        if (!paced) cv.wait(lk, [&] { return queue.size() < cfg.high_water || stop.load(); });
        queue.push_back({rec, ts, Clock::now()});
        stats.max_buffered = std::max(stats.max_buffered, queue.size());
        if (paced && queue.size() > cfg.high_water) {
          fault = true;
          fault_depth = queue.size();
          cv.notify_all();
          break;
        }
        ++index;
        cv.notify_all();
      }
    } catch (...) {
      std::lock_guard lk(mu);
      source_error = std::current_exception();
    }
    std::lock_guard lk(mu);
    done = true;
    cv.notify_all();
  });

  std::exception_ptr sink_error;
  try {
    for (;;) {
      std::unique_lock lk(mu);
      cv.wait(lk, [&] { return !queue.empty() || done || fault; });
      if (fault) break;
      if (queue.empty() && done) break;
      RoundEvent ev = std::move(queue.front());
      queue.pop_front();
      cv.notify_all();
      lk.unlock();
      sink(ev);
      ++stats.rounds;
    }
  } catch (...) {
    sink_error = std::current_exception();
  }
  stop = true;
  {
    std::lock_guard lk(mu);
    cv.notify_all();
  }
  producer.join();
  if (sink_error) std::rethrow_exception(sink_error);
  if (source_error) std::rethrow_exception(source_error);
  if (fault) throw BacklogFault(fault_depth, cfg.high_water);
  return stats;
}

}  // namespace latte
