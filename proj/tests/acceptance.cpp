// Acceptance suite: one PASS/FAIL line per criterion, detail on the same line.
// Usage: acceptance [criterion ...]; with no arguments every criterion runs.
// Exit status is the number of failing criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "latte/experiments.hpp"
#include "nldu_oracles.hpp"

using namespace latte;
using namespace latte::exp;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Binomial standard error of a rate estimate.
double sigma(const ShotTotals& t) { return std::sqrt(t.ler() * (1 - t.ler()) / double(t.shots)); }

constexpr double kOneSided95 = 1.6448536269514722;

ExperimentSpec spec(std::string kind, int d, double p, uint64_t shots) {
  ExperimentSpec s;
  s.kind = std::move(kind);
  s.d = d;
  s.p = p;
  s.shots = shots;
  return s;
}

// Block decoding with the exact decoder inside versus the exact global oracle.
Verdict oracle_equivalence() {
  auto t0 = std::chrono::steady_clock::now();
  const int d = 3;
  const uint32_t rounds = 3, b = 2, shots = 500;
  auto lat = memory_lattice(build_surface_code(d), rounds, NoiseParams::uniform(0.003));
  DecodingModel m = materialize(lat);
  auto graphs = basis_graphs(m);
  auto exact = make_decoder("exact");
  BlockEngine eng(Partition(lat, d, b), std::shared_ptr<const Decoder>(make_decoder("exact")));
  uint32_t agree = 0;
  for (uint32_t i = 0; i < shots; ++i) {
    Shot s = sample_shot(m, shot_seed(1, i));
    uint64_t global = decode_global(graphs, s.detector_bits, *exact);
    uint64_t block = decode_partitioned(eng, VectorRoundStore(*lat, s.detector_bits));
    agree += global == block;
  }
  double secs = seconds_since(t0);
  double frac = double(agree) / shots;
  return {frac >= 0.99 && secs < 60,
          fmt("agreement %u/%u = %.4f (need >= 0.99), %zu block(s), %.2f s (need < 60 s)", agree, shots, frac,
              eng.partition().blocks().size(), secs)};
}

// Buffer b = ceil(d/2) tracks global decoding; b = 1 is measurably worse.
Verdict buffer_convergence() {
  const int d = 5;
  ExperimentSpec s = spec("memory", d, 0.003, 20000);
  s.rounds = 3 * d;
  s.engine = "global";
  ShotTotals global = run_memory(s).totals;
  s.engine = "block";
  s.buffer = 3;
  ShotTotals b3 = run_memory(s).totals;
  s.buffer = 1;
  ShotTotals b1 = run_memory(s).totals;
  double gap = std::abs(b3.ler() - global.ler());
  double two_sigma = 2 * std::hypot(sigma(b3), sigma(global));
  double z = two_proportion_z(b1.failures, b1.shots, b3.failures, b3.shots);
  return {gap <= two_sigma && z > kOneSided95,
          fmt("rounds %u: LER global %.5f, b=3 %.5f (|diff| %.5f vs 2 sigma %.5f), b=1 %.5f (z %.2f vs %.3f)",
              s.effective_rounds(), global.ler(), b3.ler(), gap, two_sigma, b1.ler(), z, kOneSided95)};
}

// Distance helps below threshold and hurts above it.
Verdict threshold_existence() {
  auto ler = [](int d, double p) {
    ExperimentSpec s = spec("memory", d, p, 20000);
    s.engine = "global";
    return run_memory(s).totals;
  };
  ShotTotals lo3 = ler(3, 1e-3), lo5 = ler(5, 1e-3), hi3 = ler(3, 3e-2), hi5 = ler(5, 3e-2);
  double z_lo = two_proportion_z(lo3.failures, lo3.shots, lo5.failures, lo5.shots);
  double z_hi = two_proportion_z(hi5.failures, hi5.shots, hi3.failures, hi3.shots);
  return {z_lo > kOneSided95 && z_hi > kOneSided95,
          fmt("p=1e-3: d3 %lu vs d5 %lu failures (z %.2f); p=3e-2: d5 %lu vs d3 %lu failures (z %.2f); need z > %.3f",
              lo3.failures, lo5.failures, z_lo, hi5.failures, hi3.failures, z_hi, kOneSided95)};
}

// Fixed seed: every pool size produces the same feedback; every task runs once.
Verdict scheduler_determinism() {
  auto t0 = std::chrono::steady_clock::now();
  struct Case {
    std::shared_ptr<const Lattice> lat;
    std::optional<SurgeryLayout> layout;
    uint32_t core, buffer;
  };
  std::vector<Case> cases;
  cases.push_back({memory_lattice(build_surface_code(5), 60, NoiseParams::uniform(0.005)), std::nullopt, 5, 3});
  cases.push_back({memory_lattice(build_surface_code(3), 90, NoiseParams::uniform(0.01)), std::nullopt, 3, 1});
  {
    SurgeryLayout layout = make_chain_layout(4, 3);
    auto lat = surgery_lattice(layout, 12, NoiseParams::uniform(0.005));
    cases.push_back({lat, layout, 3, 2});
  }
  uint32_t runs = 0, mismatches = 0, miscounts = 0;
  for (const auto& c : cases) {
    BlockEngine eng(Partition(c.lat, c.core, c.buffer, c.layout ? &*c.layout : nullptr),
                    std::shared_ptr<const Decoder>(make_decoder("uf")));
    for (uint64_t seed : {11u, 12u, 13u}) {
      std::vector<uint64_t> ref;
      for (uint32_t m : {1u, 2u, 8u}) {
        SchedulerConfig cfg;
        cfg.decode_workers = m;
        LatticeRoundSource src(c.lat, seed);
        RunResult r = Scheduler(eng, cfg).run(src, StreamConfig{});
        std::vector<uint64_t> bits;
        for (const auto& f : r.feedback) bits.push_back(f.bits);
        if (m == 1) ref = bits;
        ++runs;
        mismatches += bits != ref || r.frame != r.audit_xor;
        miscounts += r.counters.decode_tasks != eng.partition().blocks().size() ||
                     r.counters.merge_tasks != eng.partition().seams().size();
      }
    }
  }
  double secs = seconds_since(t0);
  return {mismatches == 0 && miscounts == 0 && secs < 30,
          fmt("%u runs over M in {1,2,8}: %u feedback mismatches, %u task-count mismatches, %.2f s (need < 30 s)", runs,
              mismatches, miscounts, secs)};
}

// Tick latency stays flat at the smallest decode pool that avoids backlog.
Verdict streaming_constancy() {
  ExperimentSpec s = spec("stream-latency", 5, 1e-3, 1);
  s.rounds = 10000;
  StreamLatencyResult r = run_streaming_latency(s);
  bool found = r.min_decode_workers > 0;
  double ratio = r.min_m_ratio();
  bool bounded = found && r.min_m_buffered_rounds <= r.buffer_bound;
  return {found && bounded && ratio <= 1.5,
          fmt("%lu ticks, minimal no-backlog M = %u (utilization %.3f), virtual tick latency median %.0f ns max %.0f ns, "
              "max/median %.2f (need <= 1.5), max buffered rounds %zu (bound %zu)",
              r.ticks, r.min_decode_workers, r.min_m_utilization, r.min_m_median_ns, r.min_m_max_ns, ratio,
              r.min_m_buffered_rounds, r.buffer_bound)};
}

// Streaming INT8 inference against whole-volume integer convolution, and the
// combinational syndrome update against a global recompute.
Verdict nldu_bit_exactness() {
  using namespace latte::oracle;
  const int d = 9;
  const uint32_t R = 20;
  auto lat = memory_lattice(build_surface_code(d), R, NoiseParams::uniform(0.001));
  const nldu::Rect grid = nldu::grid_of(lat->patch());
  uint32_t volumes = 0, bad_volumes = 0;
  for (uint64_t v = 0; v < 100; ++v, ++volumes) {
    QuantizedModel m = v == 0 ? nldu::load_lnw1(default_weights_path()) : random_model(1000 + v);
    auto rounds = random_rounds(*lat, R, 0.02 + 0.002 * double(v), 5000 + v);
    nldu::SyndromeTensor t = nldu::embed(lat->patch(), rounds);
    Volume in(t.w, t.h, t.rounds, 2, 0);
    in.v.assign(t.v.begin(), t.v.end());
    Volume want = oracle_forward(m, in);
    nldu::StreamingInference si(m, grid);
    std::vector<nldu::Slice> got;
    for (uint32_t r = 0; r < R; ++r)
      for (auto& s : si.push(nldu::embed_round(lat->patch(), rounds[r]))) got.push_back(std::move(s));
    for (auto& s : si.finish()) got.push_back(std::move(s));
    bool same = got.size() == R;
    for (uint32_t r = 0; same && r < R; ++r)
      for (int y = 0; same && y < t.h; ++y)
        for (int x = 0; same && x < t.w; ++x)
          for (int c = 0; c < 6; ++c) same = same && got[r].at(x, y, c) == want.at(x, y, int(r), c);
    bad_volumes += !same;
  }

  std::vector<std::shared_ptr<const Lattice>> lats = {
      memory_lattice(build_surface_code(5), 6, NoiseParams::uniform(0.001)),
      memory_lattice(build_surface_code(9), 4, NoiseParams::uniform(0.001)),
      stability_lattice(4, 5, NoiseParams::uniform(0.001))};
  std::mt19937_64 g(77);
  uint32_t sets = 0, bad_sets = 0;
  for (int c = 0; c < 1000; ++c, ++sets) {
    const Lattice& l = *lats[size_t(c) % lats.size()];
    nldu::AnchorMap am(l);
    auto raw = random_rounds(l, l.rounds(), 0.1, g());
    std::erase_if(raw[0], [&](uint32_t s) { return l.observables().cut[s] != 0; });
    auto pred = random_predictions(l, 0.08, g);
    Recompute want = recompute(l, raw, pred);
    uint64_t logical = 0;
    bool same = true;
    for (uint32_t t = 0; t < l.rounds(); ++t) {
      auto r = nldu::post_process_round(am, t, raw[t], pred[t], t ? &pred[t - 1] : nullptr, am.grid());
      same = same && r.residual == want.residual[t];
      logical ^= r.local_logical;
    }
    bad_sets += !same || logical != want.logical;
  }
  return {bad_volumes == 0 && bad_sets == 0,
          fmt("inference: %u/%u volumes (d=9, 20 rounds) bit-exact; post-processing: %u/%u prediction sets bit-exact",
              volumes - bad_volumes, volumes, sets - bad_sets, sets)};
}

// Four boards exchanging halos reproduce the single-board residual and local logical.
Verdict multi_board() {
  using namespace latte::oracle;
  auto lat = memory_lattice(build_surface_code(9), 10, NoiseParams::uniform(0.001));
  QuantizedModel shipped = nldu::load_lnw1(default_weights_path());
  uint32_t agree = 0, boards = 0, flagged = 0;
  for (uint64_t v = 0; v < 100; ++v) {
    QuantizedModel m = v % 2 ? random_model(3000 + v) : shipped;
    auto rounds = random_rounds(*lat, 10, 0.01 + 0.001 * double(v), 4000 + v);
    nldu::NlduOutput one = nldu::apply_nldu(m, *lat, rounds, 0);
    nldu::NlduOutput four = nldu::apply_nldu(m, *lat, rounds, 5);
    agree += one.residual == four.residual && one.local_logical == four.local_logical;
    flagged += one.residual_bits != one.raw_bits;
  }
  boards = static_cast<uint32_t>(nldu::BoardArray(shipped, *lat, 5).boards());
  return {agree == 100 && boards == 4,
          fmt("%u boards; %u/100 volumes bit-exact on residual syndrome and local logical (%u with non-trivial updates)",
              boards, agree, flagged)};
}

// Resource and latency model fixtures.
Verdict hardware_model() {
  nldu::NlduConfig c;
  nldu::ResourceEstimate r = nldu::estimate_resources(c);
  double ltc_us = r.ltc_s * 1e6;
  double rel = std::abs(ltc_us - 4.212) / 4.212;
  nldu::NlduConfig found = nldu::search_config(9, 300e6);
  double worst = 0;
  for (int i = 0; i < 3; ++i) worst = std::max(worst, nldu::stage_latency_s(found, i));
  bool ltc_ok = std::abs(ltc_us - 4.307) < 5e-4;
  return {ltc_ok && rel <= 0.05 && r.lut == 156576.0 && worst < 1e-6,
          fmt("LTC %.4f us (4.307 expected; %.2f%% from 4.212), LUT %.0f (156576 expected), search -> P=(%d,%d,%d) with "
              "slowest stage %.3f us",
              ltc_us, rel * 100, r.lut, found.p[0], found.p[1], found.p[2], worst * 1e6)};
}

// Residual-syndrome ratio with the shipped weights.
Verdict bandwidth() {
  ExperimentSpec s = spec("bandwidth", 9, 0, 1000);
  s.ps = {1e-3, 2e-3, 3e-3};
  auto rows = run_bandwidth(s);
  bool increasing = rows[0].ratio() < rows[1].ratio() && rows[1].ratio() < rows[2].ratio();
  bool defined = !rows[0].undefined() && !rows[1].undefined() && !rows[2].undefined();
  return {defined && increasing && rows[0].ratio() <= 0.35,
          fmt("d=9, %lu shots per point: ratio %.4f @1e-3 (need <= 0.35), %.4f @2e-3, %.4f @3e-3 (need strictly increasing)",
              s.shots, rows[0].ratio(), rows[1].ratio(), rows[2].ratio())};
}

// Pre-decoding must not inflate the logical error rate.
Verdict accuracy() {
  ExperimentSpec s = spec("memory", 5, 1e-3, 20000);
  s.engine = "global";
  ShotTotals raw = run_memory(s).totals;
  s.nldu = true;
  ShotTotals pre = run_memory(s).totals;
  return {double(pre.failures) <= 1.3 * double(raw.failures),
          fmt("d=5, p=1e-3, %lu shots: %lu failures with NLDU vs %lu without (need <= 1.3x); residual ratio %.4f",
              raw.shots, pre.failures, raw.failures, pre.ratio())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"oracle equivalence", oracle_equivalence},
      {"buffer convergence", buffer_convergence},
      {"threshold existence", threshold_existence},
      {"scheduler determinism and exactly-once", scheduler_determinism},
      {"streaming constancy", streaming_constancy},
      {"NLDU bit-exactness", nldu_bit_exactness},
      {"multi-board transparency", multi_board},
      {"hardware model", hardware_model},
      {"bandwidth", bandwidth},
      {"accuracy non-degradation", accuracy},
  };
  std::set<size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %2zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
