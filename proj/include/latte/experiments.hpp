#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "latte/nldu.hpp"
#include "latte/scheduler.hpp"

namespace latte::exp {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Statistics

struct Interval {
  double lo = 0, hi = 0;
  double half_width() const { return (hi - lo) / 2; }
};

inline constexpr double kZ95 = 1.959963984540054;

inline Interval wilson(uint64_t k, uint64_t n, double z = kZ95) {
  if (n == 0) return {0, 1};
  double nn = double(n), ph = double(k) / nn, z2 = z * z;
  double den = 1 + z2 / nn;
  double mid = (ph + z2 / (2 * nn)) / den;
  double half = z * std::sqrt(ph * (1 - ph) / nn + z2 / (4 * nn * nn)) / den;
  // The bounds are exact at the edges; rounding would otherwise leave tiny residues.
  return {k == 0 ? 0.0 : std::max(0.0, mid - half), k == n ? 1.0 : std::min(1.0, mid + half)};
}

// One-sided z statistic for p_a > p_b from two independent binomial samples.
inline double two_proportion_z(uint64_t ka, uint64_t na, uint64_t kb, uint64_t nb) {
  double pa = double(ka) / double(na), pb = double(kb) / double(nb);
  double pool = double(ka + kb) / double(na + nb);
  double se = std::sqrt(pool * (1 - pool) * (1.0 / double(na) + 1.0 / double(nb)));
  return se > 0 ? (pa - pb) / se : 0.0;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0;
  size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  double hi = v[m];
  if (v.size() % 2) return hi;
  return (*std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m)) + hi) / 2;
}

// ---------------------------------------------------------------------------
// Specification

inline std::string default_weights_path() { return std::string(LATTE_DATA_DIR) + "/nldu_k7.lnw1"; }

struct ExperimentSpec {
  std::string kind = "memory";
  int d = 5;
  double p = 1e-3;
  uint32_t rounds = 0;  // 0: d rounds
  uint64_t shots = 1000;
  uint32_t buffer = 0;  // 0: ceil(d / 2)
  uint32_t decode_workers = 4;
  uint32_t merge_workers = 2;
  bool nldu = false;
  std::string weights = default_weights_path();
  int board = 0;  // NLDU board extent; 0 = one board
  uint64_t seed = 1;
  std::string out;
  std::string decoder = "uf";
  std::string engine = "block";  // global | block | stream
  double tolerance = 0;          // target Wilson half-width; 0 disables escalation
  uint64_t shot_cap = 1'000'000;
  int patches = 2;
  std::vector<int> ds;
  std::vector<double> ps;
  std::vector<uint32_t> threads;
  uint32_t windows_per_tick = 1;
  std::string scan = "memory";  // threshold scan target: memory | stability

  uint32_t effective_rounds() const { return rounds ? rounds : static_cast<uint32_t>(d); }
  uint32_t effective_buffer() const { return buffer ? buffer : static_cast<uint32_t>((d + 1) / 2); }

  void validate() const {
    static const char* kinds[] = {"memory", "stability", "multipatch", "bandwidth", "stream-latency", "threshold-scan"};
    if (std::find(std::begin(kinds), std::end(kinds), kind) == std::end(kinds))
      throw ConfigError("unknown experiment kind: " + kind);
    if (d < 2) throw ConfigError("d must be >= 2");
    if (!(p >= 0 && p < 0.5)) throw ConfigError("p must lie in [0, 0.5)");
    if (shots == 0) throw ConfigError("shots must be >= 1");
    if (decode_workers == 0 || merge_workers == 0) throw ConfigError("worker counts must be >= 1");
    if (engine != "global" && engine != "block" && engine != "stream") throw ConfigError("engine must be global, block or stream");
    if (decoder != "uf" && decoder != "exact") throw ConfigError("decoder must be uf or exact");
    if (tolerance < 0) throw ConfigError("tolerance must be >= 0");
    if (patches < 1) throw ConfigError("patches must be >= 1");
    if (scan != "memory" && scan != "stability") throw ConfigError("scan must be memory or stability");
    if (windows_per_tick == 0) throw ConfigError("windows_per_tick must be >= 1");
  }
};

namespace detail {

inline std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(static_cast<unsigned char>(s.back()))) s.pop_back();
  size_t i = 0;
  while (i < s.size() && ws(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

inline std::string unquote(std::string s) {
  s = trim(std::move(s));
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) return s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> list_items(const std::string& v) {
  std::string s = trim(v);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw ConfigError("unterminated list: " + v);
    s = s.substr(1, s.size() - 2);
  }
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) out.push_back(unquote(item));
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::string s = unquote(v);
  try {
    size_t used = 0;
    T out;
    if constexpr (std::is_floating_point_v<T>) out = static_cast<T>(std::stod(s, &used));
    else if constexpr (std::is_signed_v<T>) out = static_cast<T>(std::stoll(s, &used));
    else {
      if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
      out = static_cast<T>(std::stoull(s, &used));
    }
    if (used != s.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("bad value for " + key + ": " + v);
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  std::string s = unquote(v);
  if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "off" || s == "no") return false;
  throw ConfigError("bad boolean for " + key + ": " + v);
}

}  // namespace detail

// Sets one field by name; '-' and '_' are interchangeable in keys.
inline void set_field(ExperimentSpec& s, std::string key, const std::string& value) {
  std::replace(key.begin(), key.end(), '-', '_');
  using namespace detail;
  if (key == "kind") s.kind = unquote(value);
  else if (key == "d") s.d = parse_number<int>(key, value);
  else if (key == "p") s.p = parse_number<double>(key, value);
  else if (key == "rounds") s.rounds = parse_number<uint32_t>(key, value);
  else if (key == "shots") s.shots = parse_number<uint64_t>(key, value);
  else if (key == "buffer") s.buffer = parse_number<uint32_t>(key, value);
  else if (key == "decode_workers") s.decode_workers = parse_number<uint32_t>(key, value);
  else if (key == "merge_workers") s.merge_workers = parse_number<uint32_t>(key, value);
  else if (key == "nldu") s.nldu = parse_bool(key, value);
  else if (key == "weights") s.weights = unquote(value);
  else if (key == "board") s.board = parse_number<int>(key, value);
  else if (key == "seed") s.seed = parse_number<uint64_t>(key, value);
  else if (key == "out") s.out = unquote(value);
  else if (key == "decoder") s.decoder = unquote(value);
  else if (key == "engine") s.engine = unquote(value);
  else if (key == "tolerance") s.tolerance = parse_number<double>(key, value);
  else if (key == "shot_cap") s.shot_cap = parse_number<uint64_t>(key, value);
  else if (key == "patches") s.patches = parse_number<int>(key, value);
  else if (key == "windows_per_tick") s.windows_per_tick = parse_number<uint32_t>(key, value);
  else if (key == "scan") s.scan = unquote(value);
  else if (key == "ds") {
    s.ds.clear();
    for (const auto& i : list_items(value)) s.ds.push_back(parse_number<int>(key, i));
  } else if (key == "ps") {
    s.ps.clear();
    for (const auto& i : list_items(value)) s.ps.push_back(parse_number<double>(key, i));
  } else if (key == "threads") {
    s.threads.clear();
    for (const auto& i : list_items(value)) s.threads.push_back(parse_number<uint32_t>(key, i));
  } else throw ConfigError("unknown config key: " + key);
}

// TOML-like text: `key = value` lines, '#' comments, optional [section] headers ignored.
inline void apply_config(ExperimentSpec& s, std::istream& in) {
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = detail::trim(line);
    if (line.empty() || line.front() == '[') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    set_field(s, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

inline void load_config(ExperimentSpec& s, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  apply_config(s, f);
}

// ---------------------------------------------------------------------------
// Shot-level decoding

inline uint64_t shot_seed(uint64_t seed, uint64_t i) { return rng::draw(seed, 0x5107, i); }

struct ShotTotals {
  uint64_t shots = 0;
  uint64_t failures = 0;
  std::vector<uint64_t> observable_failures;
  uint64_t raw_bits = 0;
  uint64_t residual_bits = 0;
  uint64_t decode_work = 0;
  uint64_t unresolved = 0;

  void add(const ShotTotals& o) {
    shots += o.shots;
    failures += o.failures;
    if (observable_failures.size() < o.observable_failures.size()) observable_failures.resize(o.observable_failures.size());
    for (size_t i = 0; i < o.observable_failures.size(); ++i) observable_failures[i] += o.observable_failures[i];
    raw_bits += o.raw_bits;
    residual_bits += o.residual_bits;
    decode_work += o.decode_work;
    unresolved += o.unresolved;
  }
  double ler() const { return shots ? double(failures) / double(shots) : 0.0; }
  Interval ci() const { return wilson(failures, shots); }
  double ratio() const { return raw_bits ? double(residual_bits) / double(raw_bits) : 0.0; }
};

// Everything needed to decode shots of one lattice under one spec.
class ShotRunner {
 public:
  ShotRunner(std::shared_ptr<const Lattice> lat, const ExperimentSpec& spec, const SurgeryLayout* layout = nullptr)
      : spec_(spec), lat_(std::move(lat)), model_(materialize(lat_)), graphs_(basis_graphs(model_)),
        dec_(make_decoder(spec.decoder)) {
    spec.validate();
    if (spec.engine != "global") {
      uint32_t core = std::min<uint32_t>(static_cast<uint32_t>(spec.d), lat_->rounds());
      uint32_t b = std::min(spec.effective_buffer(), core > 1 ? core - 1 : 1);
      engine_ = std::make_unique<BlockEngine>(Partition(lat_, core, b, layout),
                                              std::shared_ptr<const Decoder>(make_decoder(spec.decoder)));
    }
    if (spec.nldu) nldu_ = std::make_unique<nldu::QuantizedModel>(nldu::load_lnw1(spec.weights));
  }

  const Lattice& lattice() const { return *lat_; }
  const DecodingModel& model() const { return model_; }
  const BlockEngine* engine() const { return engine_.get(); }

  ShotTotals run(uint64_t first, uint64_t count) const {
    ShotTotals t;
    t.observable_failures.assign(lat_->num_observables(), 0);
    for (uint64_t i = first; i < first + count; ++i) one(shot_seed(spec_.seed, i), t);
    return t;
  }

  // Runs spec.shots, then doubles while the Wilson half-width exceeds the tolerance.
  ShotTotals run_escalating() const {
    ShotTotals t = run(0, spec_.shots);
    while (spec_.tolerance > 0 && t.ci().half_width() >= spec_.tolerance && t.shots < spec_.shot_cap) {
      uint64_t more = std::min(t.shots, spec_.shot_cap - t.shots);
      t.add(run(t.shots, more));
    }
    return t;
  }

 private:
  void one(uint64_t seed, ShotTotals& t) const {
    Shot s = sample_shot(model_, seed);
    const uint32_t n = lat_->num_stabilizers();
    std::vector<uint8_t> bits = s.detector_bits;
    uint64_t local = 0;
    uint64_t raw = 0;
    for (uint8_t b : bits) raw += b;
    t.raw_bits += raw;
    if (nldu_ && spec_.engine != "stream") {
      std::vector<std::vector<uint32_t>> rounds(lat_->rounds());
      for (uint32_t det = 0; det < bits.size(); ++det)
        if (bits[det]) rounds[det / n].push_back(det % n);
      auto o = nldu::apply_nldu(*nldu_, *lat_, rounds, spec_.board);
      std::fill(bits.begin(), bits.end(), 0);
      for (uint32_t r = 0; r < o.residual.size(); ++r)
        for (uint32_t st : o.residual[r]) bits[size_t(r) * n + st] = 1;
      local = o.local_logical;
      t.residual_bits += o.residual_bits;
    } else if (!nldu_) {
      t.residual_bits += raw;
    }
    uint64_t decoded = 0;
    if (spec_.engine == "global") {
      uint64_t w = 0;
      decoded = decode_global(graphs_, bits, *dec_, &w);
      t.decode_work += w;
    } else if (spec_.engine == "block") {
      VectorRoundStore store(*lat_, bits);
      PartitionedDecodeStats st;
      decoded = decode_partitioned(*engine_, store, &st);
      t.decode_work += st.work;
      t.unresolved += st.unresolved;
    } else {
      SchedulerConfig cfg;
      cfg.decode_workers = spec_.decode_workers;
      cfg.merge_workers = spec_.merge_workers;
      cfg.windows_per_tick = spec_.windows_per_tick;
      ShotRoundSource src(model_, s);
      std::unique_ptr<nldu::NlduFilter> filter;
      if (nldu_) filter = std::make_unique<nldu::NlduFilter>(*nldu_, *lat_, spec_.board);
      RunResult r = Scheduler(*engine_, cfg).run(src, StreamConfig{}, filter.get());
      decoded = r.frame;
      t.decode_work += r.counters.decode_work + r.counters.merge_work;
      t.unresolved += r.counters.unresolved;
      if (nldu_) t.residual_bits += r.counters.residual_detector_bits;
    }
    uint64_t wrong = (decoded ^ local) ^ s.true_logical;
    ++t.shots;
    if (wrong) ++t.failures;
    for (size_t o = 0; o < t.observable_failures.size(); ++o)
      if ((wrong >> o) & 1) ++t.observable_failures[o];
  }

  ExperimentSpec spec_;
  std::shared_ptr<const Lattice> lat_;
  DecodingModel model_;
  std::array<BasisGraph, 2> graphs_;
  std::unique_ptr<Decoder> dec_;
  std::unique_ptr<BlockEngine> engine_;
  std::unique_ptr<nldu::QuantizedModel> nldu_;
};

inline json totals_json(const ShotTotals& t, bool nldu) {
  Interval ci = t.ci();
  json j{{"shots", t.shots},
         {"failures", t.failures},
         {"observable_failures", t.observable_failures},
         {"ler", t.ler()},
         {"ci_low", ci.lo},
         {"ci_high", ci.hi},
         {"decode_work", t.decode_work},
         {"unresolved", t.unresolved}};
  if (nldu) {
    j["raw_bits"] = t.raw_bits;
    j["residual_bits"] = t.residual_bits;
    j["bandwidth_ratio"] = t.ratio();
    j["ratio_undefined"] = t.raw_bits == 0;
  }
  return j;
}

inline json spec_json(const ExperimentSpec& s) {
  return json{{"kind", s.kind},         {"d", s.d},
              {"p", s.p},               {"rounds", s.effective_rounds()},
              {"shots", s.shots},       {"buffer", s.effective_buffer()},
              {"decode_workers", s.decode_workers}, {"merge_workers", s.merge_workers},
              {"nldu", s.nldu},         {"seed", s.seed},
              {"decoder", s.decoder},   {"engine", s.engine}};
}

// ---------------------------------------------------------------------------
// Experiments

inline NoiseParams noise(double p) { return NoiseParams::uniform(p); }

struct LerResult {
  ShotTotals totals;
  json to_json(const ExperimentSpec& s) const {
    json j = spec_json(s);
    j["result"] = totals_json(totals, s.nldu);
    return j;
  }
};

inline LerResult run_memory(const ExperimentSpec& s) {
  ShotRunner r(memory_lattice(build_surface_code(s.d), s.effective_rounds(), noise(s.p)), s);
  return {r.run_escalating()};
}

// d is the (even) stability patch size.
inline LerResult run_stability(const ExperimentSpec& s) {
  ShotRunner r(stability_lattice(s.d, s.effective_rounds(), noise(s.p)), s);
  return {r.run_escalating()};
}

struct LatencyRow {
  uint32_t threads = 0;
  double wall_s = 0;
  double virtual_median_ns = 0;
  double virtual_max_ns = 0;
  double virtual_makespan_ns = 0;
  uint64_t frame = 0;
};

struct MultipatchResult {
  ShotTotals totals;
  uint64_t joint_failures = 0;  // shots with a wrong merge outcome
  std::vector<LatencyRow> latency;
  bool frames_agree = true;

  json to_json(const ExperimentSpec& s) const {
    json j = spec_json(s);
    j["patches"] = s.patches;
    j["result"] = totals_json(totals, s.nldu);
    j["result"]["joint_failures"] = joint_failures;
    j["frames_agree"] = frames_agree;
    for (const auto& r : latency)
      j["latency"].push_back({{"threads", r.threads},
                              {"wall_s", r.wall_s},
                              {"virtual_median_ns", r.virtual_median_ns},
                              {"virtual_max_ns", r.virtual_max_ns},
                              {"virtual_makespan_ns", r.virtual_makespan_ns}});
    return j;
  }
};

inline MultipatchResult run_multipatch(const ExperimentSpec& s) {
  SurgeryLayout layout = make_chain_layout(s.patches, s.d);
  auto lat = surgery_lattice(layout, s.effective_rounds(), noise(s.p));
  ExperimentSpec block = s;
  if (block.engine == "global") block.engine = "block";
  ShotRunner runner(lat, block, &layout);
  MultipatchResult res;
  res.totals = runner.run_escalating();
  for (size_t o = 2; o < res.totals.observable_failures.size(); ++o) res.joint_failures += res.totals.observable_failures[o];

  std::vector<uint32_t> threads = s.threads;
  if (threads.empty()) threads = {1, 2, 4, 8, 16};
  const BlockEngine& eng = *runner.engine();
  for (uint32_t m : threads) {
    SchedulerConfig cfg;
    cfg.decode_workers = m;
    cfg.merge_workers = s.merge_workers;
    cfg.serialized = m == 1;
    LatticeRoundSource src(lat, shot_seed(s.seed, 0));
    auto t0 = Clock::now();
    RunResult r = Scheduler(eng, cfg).run(src, StreamConfig{});
    LatencyRow row;
    row.threads = m;
    row.wall_s = std::chrono::duration<double>(Clock::now() - t0).count();
    VirtualReplay v = replay_virtual(eng.partition(), r.tasks, m, s.merge_workers, cfg);
    std::vector<double> lat_ns(v.latency_ns.begin(), v.latency_ns.end());
    row.virtual_median_ns = median(lat_ns);
    row.virtual_max_ns = lat_ns.empty() ? 0 : *std::max_element(lat_ns.begin(), lat_ns.end());
    row.virtual_makespan_ns = double(r.tasks.arrival.empty() ? 0 : r.tasks.arrival.back()) + row.virtual_max_ns;
    row.frame = r.frame;
    if (!res.latency.empty() && row.frame != res.latency.front().frame) res.frames_agree = false;
    res.latency.push_back(row);
  }
  return res;
}

struct BandwidthRow {
  int d = 0;
  double p = 0;
  uint64_t shots = 0;
  uint64_t raw_bits = 0, residual_bits = 0;
  double ratio() const { return raw_bits ? double(residual_bits) / double(raw_bits) : 0.0; }
  bool undefined() const { return raw_bits == 0; }
};

// Residual/raw detector-bit ratio of the NLDU over a (d, p) grid.
inline std::vector<BandwidthRow> run_bandwidth(const ExperimentSpec& s) {
  nldu::QuantizedModel m = nldu::load_lnw1(s.weights);
  std::vector<int> ds = s.ds.empty() ? std::vector<int>{s.d} : s.ds;
  std::vector<double> ps = s.ps.empty() ? std::vector<double>{s.p} : s.ps;
  std::vector<BandwidthRow> rows;
  for (int d : ds)
    for (double p : ps) {
      ExperimentSpec one = s;
      one.d = d;
      one.p = p;
      auto lat = memory_lattice(build_surface_code(d), one.effective_rounds(), noise(p));
      const uint32_t n = lat->num_stabilizers();
      BandwidthRow row{d, p, s.shots, 0, 0};
      for (uint64_t i = 0; i < s.shots; ++i) {
        std::vector<std::vector<uint32_t>> rounds(lat->rounds());
        uint64_t seed = shot_seed(s.seed, i);
        lat->for_each_edge(0, lat->rounds(), [&](const EdgeSpec& e) {
          if (!edge_fires(e, seed)) return;
          for (uint32_t det : e) {
            auto& r = rounds[det / n];
            auto it = std::lower_bound(r.begin(), r.end(), det % n);
            if (it != r.end() && *it == det % n) r.erase(it);
            else r.insert(it, det % n);
          }
        });
        auto o = nldu::apply_nldu(m, *lat, rounds, s.board);
        row.raw_bits += o.raw_bits;
        row.residual_bits += o.residual_bits;
      }
      rows.push_back(row);
    }
  return rows;
}

inline std::string bandwidth_csv(const std::vector<BandwidthRow>& rows) {
  std::ostringstream os;
  os << "d,p,shots,raw_bits,residual_bits,ratio,undefined\n";
  for (const auto& r : rows)
    os << r.d << ',' << r.p << ',' << r.shots << ',' << r.raw_bits << ',' << r.residual_bits << ',' << r.ratio() << ','
       << (r.undefined() ? 1 : 0) << '\n';
  return os.str();
}

struct ScanRow {
  int d = 0;
  double p = 0;
  ShotTotals totals;
};

inline std::vector<ScanRow> run_threshold_scan(const ExperimentSpec& s) {
  std::vector<int> ds = s.ds.empty() ? std::vector<int>{3, 5} : s.ds;
  std::vector<double> ps = s.ps.empty() ? std::vector<double>{1e-3, 3e-3, 1e-2, 3e-2} : s.ps;
  std::vector<ScanRow> rows;
  for (int d : ds)
    for (double p : ps) {
      ExperimentSpec one = s;
      one.d = d;
      one.p = p;
      one.rounds = s.rounds;
      LerResult r = s.scan == "stability" ? run_stability(one) : run_memory(one);
      rows.push_back({d, p, r.totals});
    }
  return rows;
}

inline std::string scan_csv(const std::vector<ScanRow>& rows) {
  std::ostringstream os;
  os << "d,p,shots,failures,ler,ci_low,ci_high\n";
  for (const auto& r : rows) {
    Interval ci = r.totals.ci();
    os << r.d << ',' << r.p << ',' << r.totals.shots << ',' << r.totals.failures << ',' << r.totals.ler() << ',' << ci.lo
       << ',' << ci.hi << '\n';
  }
  return os.str();
}

// First scanned p at which the larger distance has the higher LER.
inline std::optional<double> crossing(const std::vector<ScanRow>& rows, int d_lo, int d_hi) {
  std::map<double, std::pair<double, double>> by_p;
  for (const auto& r : rows) {
    if (r.d == d_lo) by_p[r.p].first = r.totals.ler();
    if (r.d == d_hi) by_p[r.p].second = r.totals.ler();
  }
  for (const auto& [p, v] : by_p)
    if (v.second > v.first) return p;
  return std::nullopt;
}

struct StreamLatencyResult {
  uint64_t rounds = 0;
  uint64_t ticks = 0;
  double virtual_median_ns = 0, virtual_max_ns = 0;
  double wall_median_ns = 0, wall_max_ns = 0;
  size_t max_buffered_rounds = 0;
  size_t virtual_max_buffered_rounds = 0;
  uint64_t decode_work = 0, merge_work = 0;
  uint64_t raw_bits = 0, residual_bits = 0;
  uint64_t unresolved = 0;
  uint32_t min_decode_workers = 0;  // 0: none up to the sweep limit
  double min_m_median_ns = 0, min_m_max_ns = 0;  // replayed tick latency at min_decode_workers
  size_t min_m_buffered_rounds = 0;
  double min_m_utilization = 0;
  size_t buffer_bound = 0;
  std::vector<std::pair<uint32_t, size_t>> sweep;  // (M, virtual max buffered rounds)

  double virtual_ratio() const { return virtual_median_ns > 0 ? virtual_max_ns / virtual_median_ns : 0; }
  double min_m_ratio() const { return min_m_median_ns > 0 ? min_m_max_ns / min_m_median_ns : 0; }

  json to_json(const ExperimentSpec& s) const {
    json j = spec_json(s);
    j["result"] = {{"rounds", rounds},
                   {"ticks", ticks},
                   {"virtual_median_ns", virtual_median_ns},
                   {"virtual_max_ns", virtual_max_ns},
                   {"virtual_max_over_median", virtual_ratio()},
                   {"wall_median_ns", wall_median_ns},
                   {"wall_max_ns", wall_max_ns},
                   {"max_buffered_rounds", max_buffered_rounds},
                   {"virtual_max_buffered_rounds", virtual_max_buffered_rounds},
                   {"decode_work", decode_work},
                   {"merge_work", merge_work},
                   {"raw_bits", raw_bits},
                   {"residual_bits", residual_bits},
                   {"unresolved", unresolved},
                   {"min_decode_workers", min_decode_workers},
                   {"min_m_median_ns", min_m_median_ns},
                   {"min_m_max_ns", min_m_max_ns},
                   {"min_m_max_over_median", min_m_ratio()},
                   {"min_m_max_buffered_rounds", min_m_buffered_rounds},
                   {"min_m_utilization", min_m_utilization},
                   {"buffer_bound", buffer_bound}};
    for (const auto& [m, b] : sweep) j["result"]["sweep"].push_back({{"decode_workers", m}, {"virtual_max_buffered", b}});
    return j;
  }
};

inline constexpr uint32_t kMaxSweepWorkers = 32;

// Buffered rounds beyond this raise a backlog fault in a paced stream.
inline size_t no_backlog_bound() { return StreamConfig{}.high_water; }

// Offered load per server: replayed task cost over M servers, divided by the
// time the stream takes to arrive. Throughput keeps pace iff this is below 1.
inline double utilization(const std::vector<uint64_t>& work, const TaskRecord& rec, uint32_t servers,
                          const SchedulerConfig& cfg) {
  if (rec.arrival.empty() || servers == 0) return 0;
  double busy = 0;
  for (uint64_t w : work) busy += double(std::llround(cfg.ns_per_task + cfg.ns_per_work * double(w)));
  double span = double(rec.arrival.back() - rec.arrival.front() + rec.period_ns);
  return busy / (double(servers) * span);
}

// Smallest decode pool that keeps pace with the stream and whose replayed
// schedule never exceeds the backlog bound; 0 if none up to the sweep limit.
inline uint32_t min_decode_workers(const Partition& p, const TaskRecord& rec, uint32_t merge_workers,
                                   const SchedulerConfig& cfg, std::vector<std::pair<uint32_t, size_t>>* sweep = nullptr) {
  if (utilization(rec.seam_work, rec, merge_workers, cfg) >= 1) return 0;
  for (uint32_t m = 1; m <= kMaxSweepWorkers; ++m) {
    VirtualReplay v = replay_virtual(p, rec, m, merge_workers, cfg);
    if (sweep) sweep->push_back({m, v.max_buffered_rounds});
    if (utilization(rec.block_work, rec, m, cfg) < 1 && v.max_buffered_rounds <= no_backlog_bound()) return m;
  }
  return 0;
}

struct StreamOutputs {
  std::ostream* trace = nullptr;
  std::ostream* feedback_csv = nullptr;
};

// Streams `rounds` rounds of a memory patch through the scheduler, then sweeps
// the decode pool size over the recorded task costs.
inline StreamLatencyResult run_streaming_latency(const ExperimentSpec& s, StreamOutputs outs = {}) {
  s.validate();
  uint32_t R = s.effective_rounds();
  auto lat = memory_lattice(build_surface_code(s.d), R, noise(s.p));
  uint32_t core = std::min<uint32_t>(static_cast<uint32_t>(s.d), R);
  BlockEngine eng(Partition(lat, core, std::min(s.effective_buffer(), core - 1)),
                  std::shared_ptr<const Decoder>(make_decoder(s.decoder)));
  std::unique_ptr<nldu::QuantizedModel> model;
  if (s.nldu) model = std::make_unique<nldu::QuantizedModel>(nldu::load_lnw1(s.weights));

  SchedulerConfig cfg;
  cfg.decode_workers = s.decode_workers;
  cfg.merge_workers = s.merge_workers;
  cfg.windows_per_tick = s.windows_per_tick;
  cfg.max_buffered_rounds = std::max<size_t>(R + 1, cfg.max_buffered_rounds);
  cfg.trace = outs.trace;
  cfg.feedback_csv = outs.feedback_csv;
  LatticeRoundSource src(lat, shot_seed(s.seed, 0));
  std::unique_ptr<nldu::NlduFilter> filter;
  if (model) filter = std::make_unique<nldu::NlduFilter>(*model, *lat, s.board);
  RunResult r = Scheduler(eng, cfg).run(src, StreamConfig{}, filter.get());

  StreamLatencyResult out;
  out.rounds = R;
  out.ticks = r.feedback.size();
  std::vector<double> v, w;
  for (const auto& f : r.feedback) {
    v.push_back(double(f.virtual_latency_ns));
    w.push_back(double(f.latency_ns));
  }
  out.virtual_median_ns = median(v);
  out.virtual_max_ns = v.empty() ? 0 : *std::max_element(v.begin(), v.end());
  out.wall_median_ns = median(w);
  out.wall_max_ns = w.empty() ? 0 : *std::max_element(w.begin(), w.end());
  out.max_buffered_rounds = r.counters.max_buffered_rounds;
  out.virtual_max_buffered_rounds = r.counters.virtual_max_buffered_rounds;
  out.decode_work = r.counters.decode_work;
  out.merge_work = r.counters.merge_work;
  out.raw_bits = r.counters.raw_detector_bits;
  out.residual_bits = r.counters.residual_detector_bits;
  out.unresolved = r.counters.unresolved;
  out.buffer_bound = no_backlog_bound();
  out.min_decode_workers = min_decode_workers(eng.partition(), r.tasks, s.merge_workers, cfg, &out.sweep);
  if (out.min_decode_workers) {
    VirtualReplay at = replay_virtual(eng.partition(), r.tasks, out.min_decode_workers, s.merge_workers, cfg);
    std::vector<double> lat_ns(at.latency_ns.begin(), at.latency_ns.end());
    out.min_m_median_ns = median(lat_ns);
    out.min_m_max_ns = lat_ns.empty() ? 0 : *std::max_element(lat_ns.begin(), lat_ns.end());
    out.min_m_buffered_rounds = at.max_buffered_rounds;
    out.min_m_utilization = utilization(r.tasks.block_work, r.tasks, out.min_decode_workers, cfg);
  }
  return out;
}

}  // namespace latte::exp
