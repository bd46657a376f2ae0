#pragma once

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "latte/block_engine.hpp"
#include "latte/sampler.hpp"

namespace latte {

// ---------------------------------------------------------------------------
// Pauli-frame basis tracking

// Signed Pauli string over logical qubits in (x, z) form; Y = x & z.
struct PauliString {
  std::vector<uint8_t> x, z;
  bool negative = false;

  static PauliString single(size_t n, size_t q, Pauli p) {
    PauliString s;
    s.x.assign(n, 0);
    s.z.assign(n, 0);
    s.x[q] = p == Pauli::X || p == Pauli::Y;
    s.z[q] = p == Pauli::Z || p == Pauli::Y;
    return s;
  }
  Pauli at(size_t q) const {
    if (x[q] && z[q]) return Pauli::Y;
    if (x[q]) return Pauli::X;
    if (z[q]) return Pauli::Z;
    return Pauli::I;
  }
  friend bool operator==(const PauliString&, const PauliString&) = default;
};

// Measurement basis of each logical qubit as a signed Pauli string.
struct PauliBasisState {
  std::vector<PauliString> bases;

  static PauliBasisState all_z(size_t n) {
    PauliBasisState s;
    for (size_t q = 0; q < n; ++q) s.bases.push_back(PauliString::single(n, q, Pauli::Z));
    return s;
  }
};

struct CliffordGate {
  std::string tag;               // X, Z, S, H, CNOT
  std::vector<uint32_t> targets;  // CNOT: {control, target}
};

namespace detail {

inline void conj_x(PauliString& p, size_t q) { p.negative ^= p.z[q]; }
inline void conj_z(PauliString& p, size_t q) { p.negative ^= p.x[q]; }
inline void conj_h(PauliString& p, size_t q) {
  p.negative ^= p.x[q] & p.z[q];
  std::swap(p.x[q], p.z[q]);
}
// S P S^dagger
inline void conj_phase(PauliString& p, size_t q) {
  p.negative ^= p.x[q] & p.z[q];
  p.z[q] ^= p.x[q];
}
inline void conj_cnot(PauliString& p, size_t c, size_t t) {
  p.negative ^= p.x[c] & p.z[t] & (p.x[t] ^ p.z[c] ^ 1);
  p.x[t] ^= p.x[c];
  p.z[c] ^= p.z[t];
}

}  // namespace detail

// P' = C^dagger P C applied to every basis when the outcome is 1.
inline PauliBasisState update_measurement_basis(PauliBasisState state, const CliffordGate& gate, bool outcome) {
  const size_t n = state.bases.empty() ? 0 : state.bases.front().x.size();
  auto check = [&](size_t arity) {
    if (gate.targets.size() != arity) throw ConfigError("gate " + gate.tag + " needs " + std::to_string(arity) + " targets");
    for (uint32_t q : gate.targets)
      if (q >= n) throw ConfigError("gate target out of range");
  };
  if (gate.tag == "X" || gate.tag == "Z" || gate.tag == "S" || gate.tag == "H") {
    check(1);
  } else if (gate.tag == "CNOT") {
    check(2);
    if (gate.targets[0] == gate.targets[1]) throw ConfigError("CNOT control equals target");
  } else {
    throw ConfigError("unknown gate tag: " + gate.tag);
  }
  if (!outcome) return state;
  for (auto& p : state.bases) {
    size_t q = gate.targets[0];
    if (gate.tag == "X") detail::conj_x(p, q);
    else if (gate.tag == "Z") detail::conj_z(p, q);
    else if (gate.tag == "H") detail::conj_h(p, q);
    else if (gate.tag == "S") for (int k = 0; k < 3; ++k) detail::conj_phase(p, q);  // S^dagger P S
    else detail::conj_cnot(p, q, gate.targets[1]);
  }
  return state;
}

// Extra logical failure probability from waiting `latency_ns` at `eps` per 1 us round.
inline double fidelity_penalty(double latency_ns, double eps) {
  if (!(eps >= 0.0 && eps <= 0.5)) throw ConfigError("logical error rate must be in [0, 0.5]");
  if (!(latency_ns >= 0.0)) throw ConfigError("latency must be non-negative");
  double n = std::max(1.0, std::ceil(latency_ns / 1000.0));
  return 0.5 * (1.0 - std::pow(1.0 - 2.0 * eps, n));
}

inline double fidelity_penalty_linear(double latency_ns, double eps) {
  return std::max(1.0, std::ceil(latency_ns / 1000.0)) * eps;
}

// ---------------------------------------------------------------------------
// Stream transformer placed between the sampler and the block decoders.

struct FilteredRound {
  RoundRecord record;
  uint64_t local_logical = 0;  // logical flips already removed from this round
};

class RoundFilter {
 public:
  virtual ~RoundFilter() = default;
  virtual std::vector<FilteredRound> push(const RoundRecord& raw) = 0;
  virtual std::vector<FilteredRound> finish() = 0;
};

// ---------------------------------------------------------------------------
// Scheduler

struct TickRule {
  uint32_t observable = 0;
  CliffordGate gate;
};

struct SchedulerConfig {
  uint32_t decode_workers = 1;
  uint32_t merge_workers = 2;
  uint32_t windows_per_tick = 1;
  size_t max_buffered_rounds = size_t(1) << 20;
  bool serialized = false;  // run every task inline on the central thread
  std::vector<TickRule> feedback;  // applied at every tick
  size_t logical_qubits = 0;
  // Virtual-time cost model, calibrated against the bundled union-find on
  // a desktop core: task cost = ns_per_task + ns_per_work * work.
  double ns_per_task = 1000.0;
  double ns_per_work = 90.0;
  std::ostream* trace = nullptr;         // JSON lines
  std::ostream* feedback_csv = nullptr;  // tick,bits,latency_ns

  void validate() const {
    if (decode_workers < 1) throw ConfigError("decode_workers must be >= 1");
    if (merge_workers < 1) throw ConfigError("merge_workers must be >= 1");
    if (windows_per_tick < 1) throw ConfigError("windows_per_tick must be >= 1");
    if (max_buffered_rounds < 1) throw ConfigError("max_buffered_rounds must be >= 1");
    if (ns_per_task < 0 || ns_per_work < 0) throw ConfigError("virtual costs must be non-negative");
  }
};

struct FeedbackEvent {
  uint32_t tick = 0;
  uint32_t frontier_round = 0;
  uint64_t bits = 0;
  int64_t latency_ns = 0;          // wall clock
  int64_t virtual_latency_ns = 0;  // cost-model replay on M decode and N merge servers
};

struct TraceEvent {
  std::string type;  // decode | merge
  uint32_t id = 0;
  int64_t t_start = 0, t_end = 0;
  uint32_t worker = 0;
};

struct RunCounters {
  uint64_t decode_tasks = 0;
  uint64_t merge_tasks = 0;
  uint64_t blocks = 0;
  uint64_t seams = 0;
  uint64_t decode_work = 0;
  uint64_t merge_work = 0;
  uint64_t unresolved = 0;
  uint64_t retries = 0;
  size_t max_buffered_rounds = 0;
  uint64_t raw_detector_bits = 0;
  uint64_t residual_detector_bits = 0;
  size_t virtual_max_buffered_rounds = 0;
};

// Per-task work recorded by a run; enough to replay it on any pool size.
struct TaskRecord {
  std::vector<uint64_t> block_work;
  std::vector<uint64_t> seam_work;
  std::vector<uint64_t> arrival;  // virtual ns at which each round became decodable input
  uint64_t period_ns = 1000;
};

struct VirtualReplay {
  std::vector<int64_t> latency_ns;  // per tick
  size_t max_buffered_rounds = 0;
};

struct RunResult {
  std::vector<FeedbackEvent> feedback;
  std::vector<TraceEvent> trace;
  uint64_t frame = 0;
  uint64_t audit_xor = 0;
  RunCounters counters;
  TaskRecord tasks;
  StreamStats stream;
  PauliBasisState basis;
};

namespace detail {

template <class T>
class WorkQueue {
 public:
  void push(T v) {
    {
      std::lock_guard lk(mu_);
      q_.push_back(std::move(v));
    }
    cv_.notify_one();
  }
  bool pop(T& out) {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return closed_ || !q_.empty(); });
    if (q_.empty()) return false;
    out = std::move(q_.front());
    q_.pop_front();
    return true;
  }
  void close() {
    {
      std::lock_guard lk(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> q_;
  bool closed_ = false;
};

// Rounds indexed by time; written by the central thread before the decode
// task that reads them is enqueued.
class StreamStore : public RoundStore {
 public:
  explicit StreamStore(uint32_t rounds) : slots_(rounds) {}
  const std::vector<uint32_t>* round(uint32_t t) const override {
    return t < slots_.size() ? slots_[t].get() : nullptr;
  }
  void put(uint32_t t, std::vector<uint32_t> v) {
    slots_.at(t) = std::make_unique<std::vector<uint32_t>>(std::move(v));
    ++live_;
  }
  void release_below(uint32_t t) {
    for (; released_ < t && released_ < slots_.size(); ++released_)
      if (slots_[released_]) {
        slots_[released_].reset();
        --live_;
      }
  }
  size_t live() const { return live_; }

 private:
  std::vector<std::unique_ptr<std::vector<uint32_t>>> slots_;
  uint32_t released_ = 0;
  size_t live_ = 0;
};

}  // namespace detail

// List-schedules recorded tasks on M decode and N merge servers in
// eligibility order (ties by id); deterministic for a fixed record.
// Task cost = ns_per_task + ns_per_work * work. Tick k is delivered when every
// task of ticks <= k is done; latency counts from the emission of the tick's
// last core round.
inline VirtualReplay replay_virtual(const Partition& p, const TaskRecord& rec, uint32_t decode_servers,
                                    uint32_t merge_servers, const SchedulerConfig& cfg) {
  if (decode_servers < 1 || merge_servers < 1) throw ConfigError("need at least one server per pool");
  auto cost = [&](uint64_t work) {
    return static_cast<uint64_t>(std::llround(cfg.ns_per_task + cfg.ns_per_work * double(work)));
  };
  using Task = std::tuple<uint64_t, uint32_t, uint64_t>;
  auto schedule = [](std::vector<Task> tasks, uint32_t servers, std::vector<uint64_t>& finish) {
    std::sort(tasks.begin(), tasks.end());
    std::vector<uint64_t> free_at(servers, 0);
    for (auto [elig, id, dur] : tasks) {
      auto it = std::min_element(free_at.begin(), free_at.end());
      *it = std::max(elig, *it) + dur;
      finish[id] = *it;
    }
  };
  const auto& blocks = p.blocks();
  const auto& seams = p.seams();
  std::vector<uint64_t> block_done(blocks.size(), 0), seam_done(seams.size(), 0);
  std::vector<Task> tasks;
  for (const auto& b : blocks) tasks.emplace_back(rec.arrival[p.ready_round(b)], b.index, cost(rec.block_work[b.index]));
  schedule(std::move(tasks), decode_servers, block_done);
  tasks.clear();
  for (uint32_t s = 0; s < seams.size(); ++s)
    tasks.emplace_back(std::max(block_done[seams[s].a], block_done[seams[s].b]), s, cost(rec.seam_work[s]));
  schedule(std::move(tasks), merge_servers, seam_done);

  const uint32_t per_tick = cfg.windows_per_tick;
  const uint32_t ticks = (p.num_windows() + per_tick - 1) / per_tick;
  std::vector<uint64_t> finish(ticks, 0);
  std::vector<uint32_t> frontier(ticks, 0);
  for (const auto& b : blocks) {
    uint32_t k = static_cast<uint32_t>(b.id.window) / per_tick;
    finish[k] = std::max(finish[k], block_done[b.index]);
    frontier[k] = std::max(frontier[k], b.core_hi - 1);
  }
  for (uint32_t s = 0; s < seams.size(); ++s) {
    uint32_t k = static_cast<uint32_t>(std::max(blocks[seams[s].a].id.window, blocks[seams[s].b].id.window)) / per_tick;
    finish[k] = std::max(finish[k], seam_done[s]);
  }
  VirtualReplay out;
  uint64_t delivered = 0;
  for (uint32_t k = 0; k < ticks; ++k) {
    delivered = std::max(delivered, finish[k]);
    out.latency_ns.push_back(static_cast<int64_t>(delivered) - static_cast<int64_t>(uint64_t(frontier[k]) * rec.period_ns));
  }
  // Rounds below the lowest unfinished block's window are released; while block
  // b holds the frontier, everything that has arrived since its window start is buffered.
  uint64_t prefix_done = 0;
  const uint32_t rounds = p.lattice().rounds();
  for (const auto& b : blocks) {
    prefix_done = std::max(prefix_done, block_done[b.index]);
    auto arrived = static_cast<uint32_t>(std::upper_bound(rec.arrival.begin(), rec.arrival.end(), prefix_done) -
                                         rec.arrival.begin());
    arrived = std::min(arrived, rounds);
    if (arrived > b.win_lo) out.max_buffered_rounds = std::max<size_t>(out.max_buffered_rounds, arrived - b.win_lo);
  }
  return out;
}

class Scheduler {
 public:
  Scheduler(const BlockEngine& engine, SchedulerConfig cfg) : eng_(engine), cfg_(std::move(cfg)) { cfg_.validate(); }

  RunResult run(RoundSource& source, const StreamConfig& stream_cfg, RoundFilter* filter = nullptr) {
    const Partition& p = eng_.partition();
    const Lattice& lat = p.lattice();
    const uint32_t nb = static_cast<uint32_t>(p.blocks().size());
    const uint32_t ns = static_cast<uint32_t>(p.seams().size());
    reset(p);
    detail::StreamStore store(lat.rounds());
    std::vector<int64_t> emitted(lat.rounds(), 0);
    emitted_ = &emitted;
    std::vector<uint64_t> arrival_v(lat.rounds(), 0);  // virtual time each stored round became available
    uint64_t now_v = 0;
    RunResult res;
    res.basis = PauliBasisState::all_z(cfg_.logical_qubits);
    t0_ = Clock::now();

    // Blocks become eligible in index order of their last needed round.
    std::vector<uint32_t> by_ready(nb);
    std::iota(by_ready.begin(), by_ready.end(), 0u);
    std::stable_sort(by_ready.begin(), by_ready.end(), [&](uint32_t a, uint32_t b) {
      return p.ready_round(p.block(a)) < p.ready_round(p.block(b));
    });
    size_t next_ready = 0;
    uint32_t stored_prefix = 0;  // rounds [0, stored_prefix) are present
    std::vector<uint8_t> have(lat.rounds(), 0);

    std::vector<std::thread> threads;
    auto start_workers = [&] {
      if (cfg_.serialized) return;
      for (uint32_t w = 0; w < cfg_.decode_workers; ++w)
        threads.emplace_back([this, &store, w] { decode_loop(store, w); });
      for (uint32_t w = 0; w < cfg_.merge_workers; ++w)
        threads.emplace_back([this, w] { merge_loop(w); });
    };
    auto stop_workers = [&] {
      decode_q_->close();
      merge_q_->close();
      for (auto& t : threads) t.join();
      threads.clear();
    };

    auto accept = [&](const RoundRecord& r, uint64_t local) {
      std::vector<uint32_t> v(r.detectors.begin(), r.detectors.end());
      res.counters.residual_detector_bits += v.size();
      store.put(r.round, std::move(v));
      have[r.round] = 1;
      arrival_v[r.round] = now_v;
      if (local) {
        uint32_t tick = tick_of_round(r.round);
        apply({ContributorId::Kind::Local, r.round}, local, tick);
      }
      while (stored_prefix < lat.rounds() && have[stored_prefix]) ++stored_prefix;
      while (next_ready < by_ready.size() && p.ready_round(p.block(by_ready[next_ready])) < stored_prefix) {
        uint32_t b = by_ready[next_ready++];
        if (cfg_.serialized) {
          run_decode(store, b, 0);
          drain_merges_inline();
        } else {
          decode_q_->push(b);
        }
      }
      // Rounds no unfinished block still needs.
      while (gc_block_ < nb && finished_[gc_block_].load(std::memory_order_acquire)) ++gc_block_;
      store.release_below(gc_block_ < nb ? p.block(gc_block_).win_lo : lat.rounds());
      res.counters.max_buffered_rounds = std::max(res.counters.max_buffered_rounds, store.live());
      if (store.live() > cfg_.max_buffered_rounds) throw BacklogFault(store.live(), cfg_.max_buffered_rounds);
      rethrow_worker_error();
    };

    start_workers();
    try {
      res.stream = stream_rounds(source, stream_cfg, [&](const RoundEvent& ev) {
        emitted[ev.record.round] = std::chrono::duration_cast<std::chrono::nanoseconds>(ev.emitted.time_since_epoch()).count();
        now_v = ev.timestamp_ns;
        res.counters.raw_detector_bits += ev.record.detectors.size();
        if (filter) {
          for (auto& f : filter->push(ev.record)) accept(f.record, f.local_logical);
        } else {
          accept(ev.record, 0);
        }
      });
      if (filter)
        for (auto& f : filter->finish()) accept(f.record, f.local_logical);
      if (stored_prefix != lat.rounds()) throw ContractViolation("stream ended before all rounds arrived");
      {
        std::unique_lock lk(done_mu_);
        done_cv_.wait(lk, [&] { return error_ || (decodes_done_ == nb && merges_done_ == ns); });
      }
      stop_workers();
      rethrow_worker_error();
    } catch (...) {
      stop_workers();
      throw;
    }

    res.counters.decode_tasks = decodes_done_;
    res.counters.merge_tasks = merges_done_;
    res.counters.blocks = nb;
    res.counters.seams = ns;
    res.counters.decode_work = decode_work_;
    res.counters.merge_work = merge_work_;
    res.counters.unresolved = unresolved_;
    res.counters.retries = retries_;
    res.frame = frame_->bits();
    res.audit_xor = frame_->audit_xor();
    res.feedback = feedback_;
    res.trace = trace_;
    res.tasks.block_work = block_work_;
    res.tasks.seam_work = seam_work_;
    res.tasks.arrival = arrival_v;
    res.tasks.period_ns = stream_cfg.round_period_ns;
    auto replay = replay_virtual(p, res.tasks, cfg_.serialized ? 1 : cfg_.decode_workers,
                                 cfg_.serialized ? 1 : cfg_.merge_workers, cfg_);
    for (auto& fe : res.feedback) fe.virtual_latency_ns = replay.latency_ns[fe.tick];
    res.counters.virtual_max_buffered_rounds = replay.max_buffered_rounds;
    for (const auto& fe : res.feedback)
      for (const auto& rule : cfg_.feedback)
        res.basis = update_measurement_basis(res.basis, rule.gate, (fe.bits >> rule.observable) & 1);
    write_outputs(res);
    return res;
  }

 private:
  void reset(const Partition& p) {
    const uint32_t nb = static_cast<uint32_t>(p.blocks().size());
    const uint32_t ns = static_cast<uint32_t>(p.seams().size());
    decode_q_ = std::make_unique<detail::WorkQueue<uint32_t>>();
    merge_q_ = std::make_unique<detail::WorkQueue<uint32_t>>();
    finished_ = std::vector<std::atomic<uint8_t>>(nb);
    arrivals_ = std::vector<std::atomic<uint8_t>>(ns);
    results_.assign(nb, {});
    block_work_.assign(nb, 0);
    seam_work_.assign(ns, 0);
    decodes_done_ = merges_done_ = 0;
    decode_work_ = merge_work_ = unresolved_ = retries_ = 0;
    error_ = nullptr;
    gc_block_ = 0;
    frame_ = std::make_unique<LogicalFrame>();
    feedback_.clear();
    trace_.clear();
    // Tick bookkeeping: a task belongs to the tick of its latest window.
    num_ticks_ = (p.num_windows() + cfg_.windows_per_tick - 1) / cfg_.windows_per_tick;
    tick_total_.assign(num_ticks_, 0);
    tick_done_.assign(num_ticks_, 0);
    tick_xor_.assign(num_ticks_, 0);
    tick_frontier_.assign(num_ticks_, 0);
    for (const auto& b : p.blocks()) {
      uint32_t k = tick_of_window(static_cast<uint32_t>(b.id.window));
      ++tick_total_[k];
      tick_frontier_[k] = std::max(tick_frontier_[k], b.core_hi - 1);
    }
    for (const auto& s : p.seams()) ++tick_total_[seam_tick(s)];
    next_tick_ = 0;
    prefix_ = 0;
  }

  uint32_t tick_of_window(uint32_t w) const { return w / cfg_.windows_per_tick; }
  uint32_t tick_of_round(uint32_t t) const { return tick_of_window(t / eng_.partition().core()); }
  uint32_t seam_tick(const SeamPair& s) const {
    const auto& p = eng_.partition();
    return tick_of_window(static_cast<uint32_t>(std::max(p.block(s.a).id.window, p.block(s.b).id.window)));
  }

  int64_t now_ns() const {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0_).count();
  }

  void apply(ContributorId who, uint64_t mask, uint32_t tick, bool counts_as_task = false) {
    frame_->apply(who, mask);
    std::lock_guard lk(tick_mu_);
    tick_xor_[tick] ^= mask;
    if (counts_as_task) ++tick_done_[tick];
    while (next_tick_ < num_ticks_ && tick_done_[next_tick_] == tick_total_[next_tick_]) {
      prefix_ ^= tick_xor_[next_tick_];
      FeedbackEvent fe;
      fe.tick = next_tick_;
      fe.frontier_round = tick_frontier_[next_tick_];
      fe.bits = prefix_;
      // The frontier round was stored before any task of this tick was enqueued.
      fe.latency_ns = std::max<int64_t>(0, steady_ns() - (*emitted_)[fe.frontier_round]);
      feedback_.push_back(fe);
      ++next_tick_;
    }
  }

  static int64_t steady_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now().time_since_epoch()).count();
  }

  void run_decode(const RoundStore& store, uint32_t b, uint32_t worker) {
    const auto& p = eng_.partition();
    int64_t t_start = now_ns();
    BlockResult r;
    for (;;) {
      try {
        r = eng_.decode_block(b, store);
        break;
      } catch (const NotReadyError&) {
        ++retries_;
        std::this_thread::yield();
      }
    }
    int64_t t_end = now_ns();
    decode_work_ += r.work;
    block_work_[b] = r.work;
    uint64_t logical = r.logical;
    results_[b] = std::move(r);
    finished_[b].store(1, std::memory_order_release);
    record({"decode", b, t_start, t_end, worker});
    const auto& blk = p.block(b);
    for (uint32_t s : blk.seams)
      if (arrivals_[s].fetch_add(1, std::memory_order_acq_rel) == 1) {
        if (cfg_.serialized) pending_inline_.push_back(s);
        else merge_q_->push(s);
      }
    apply({ContributorId::Kind::Block, b}, logical, tick_of_window(static_cast<uint32_t>(blk.id.window)), true);
    {
      std::lock_guard lk(done_mu_);
      ++decodes_done_;
    }
    done_cv_.notify_all();
  }

  void run_merge(uint32_t s, uint32_t worker) {
    const auto& sp = eng_.partition().seams()[s];
    int64_t t_start = now_ns();
    auto side = [&](uint32_t blk) -> const SeamCorrection& {
      for (const auto& sc : results_[blk].seams)
        if (sc.seam == s) return sc;
      throw ContractViolation("seam correction missing");
    };
    MergeResult m = eng_.merge(side(sp.a), side(sp.b));
    int64_t t_end = now_ns();
    merge_work_ += m.work;
    seam_work_[s] = m.work;
    unresolved_ += m.unresolved;
    record({"merge", s, t_start, t_end, worker});
    apply({ContributorId::Kind::Seam, s}, m.logical, seam_tick(sp), true);
    {
      std::lock_guard lk(done_mu_);
      ++merges_done_;
    }
    done_cv_.notify_all();
  }

  void drain_merges_inline() {
    while (!pending_inline_.empty()) {
      uint32_t s = pending_inline_.front();
      pending_inline_.pop_front();
      run_merge(s, 0);
    }
  }

  void decode_loop(const RoundStore& store, uint32_t worker) {
    uint32_t b;
    while (decode_q_->pop(b)) {
      try {
        run_decode(store, b, worker);
      } catch (...) {
        fail(std::current_exception());
      }
    }
  }

  void merge_loop(uint32_t worker) {
    uint32_t s;
    while (merge_q_->pop(s)) {
      try {
        run_merge(s, worker);
      } catch (...) {
        fail(std::current_exception());
      }
    }
  }

  void fail(std::exception_ptr e) {
    {
      std::lock_guard lk(done_mu_);
      if (!error_) error_ = e;
    }
    done_cv_.notify_all();
  }

  void rethrow_worker_error() {
    std::exception_ptr e;
    {
      std::lock_guard lk(done_mu_);
      e = error_;
    }
    if (e) std::rethrow_exception(e);
  }

  void record(TraceEvent ev) {
    std::lock_guard lk(trace_mu_);
    trace_.push_back(std::move(ev));
  }

  void write_outputs(const RunResult& res) const {
    if (cfg_.trace)
      for (const auto& e : res.trace)
        *cfg_.trace << "{\"type\":\"" << e.type << "\",\"id\":" << e.id << ",\"t_start\":" << e.t_start
                    << ",\"t_end\":" << e.t_end << ",\"worker\":" << e.worker << "}\n";
    if (cfg_.feedback_csv) {
      *cfg_.feedback_csv << "tick,bits,latency_ns,virtual_latency_ns\n";
      for (const auto& f : res.feedback)
        *cfg_.feedback_csv << f.tick << ',' << f.bits << ',' << f.latency_ns << ',' << f.virtual_latency_ns << '\n';
    }
  }

  const BlockEngine& eng_;
  SchedulerConfig cfg_;
  Clock::time_point t0_;

  std::unique_ptr<detail::WorkQueue<uint32_t>> decode_q_;
  std::unique_ptr<detail::WorkQueue<uint32_t>> merge_q_;
  std::deque<uint32_t> pending_inline_;
  std::vector<std::atomic<uint8_t>> finished_;
  std::vector<std::atomic<uint8_t>> arrivals_;
  std::vector<BlockResult> results_;
  std::vector<uint64_t> block_work_, seam_work_;
  uint32_t gc_block_ = 0;

  std::mutex done_mu_;
  std::condition_variable done_cv_;
  uint32_t decodes_done_ = 0, merges_done_ = 0;
  std::exception_ptr error_;
  std::atomic<uint64_t> decode_work_{0}, merge_work_{0}, unresolved_{0}, retries_{0};

  std::unique_ptr<LogicalFrame> frame_;
  std::mutex tick_mu_;
  uint32_t num_ticks_ = 0, next_tick_ = 0;
  std::vector<uint32_t> tick_total_, tick_done_, tick_frontier_;
  std::vector<uint64_t> tick_xor_;
  uint64_t prefix_ = 0;
  std::vector<FeedbackEvent> feedback_;

  const std::vector<int64_t>* emitted_ = nullptr;

  std::mutex trace_mu_;
  std::vector<TraceEvent> trace_;
};

}  // namespace latte
