#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "latte/decoder.hpp"

namespace latte {

struct BlockId {
  int region = 0;
  int window = 0;
  friend auto operator<=>(const BlockId&, const BlockId&) = default;
};

enum class BlockKind : uint8_t { Temporal, Spatial };
enum class BlockState : uint8_t { Pending, Decoding, Finished };

struct Block {
  uint32_t index = 0;
  BlockId id;
  BlockKind kind = BlockKind::Temporal;
  uint32_t core_lo = 0, core_hi = 0;      // rounds
  uint32_t win_lo = 0, win_hi = 0;
  int row_lo = 0, row_hi = 0;             // stabilizer grid rows of the core
  int win_row_lo = 0, win_row_hi = 0;
  std::vector<uint32_t> neighbors;        // block indices, ascending
  std::vector<uint32_t> seams;            // seam index per neighbor
  BlockState state = BlockState::Pending;
};

struct SeamPair {
  uint32_t a = 0;  // a < b
  uint32_t b = 0;
};

inline constexpr uint64_t kSlotPrime = 1000003;

inline size_t storage_slot(const BlockId& id, size_t table_size) {
  return static_cast<size_t>((uint64_t(id.region) * kSlotPrime + uint64_t(id.window)) % table_size);
}

// Core/buffer tiling of a lattice. Windows of `core` rounds along time; when
// `regions` are given, rows are split too (one region per surgery patch).
class Partition {
 public:
  Partition() = default;

  Partition(std::shared_ptr<const Lattice> lattice, uint32_t core, uint32_t buffer,
            const SurgeryLayout* layout = nullptr)
      : lat_(std::move(lattice)), core_(core), buffer_(buffer) {
    if (core == 0) throw ConfigError("core extent must be >= 1");
    if (buffer < 1) throw ConfigError("buffer must be >= 1");
    if (buffer >= core) throw ConfigError("buffer must be smaller than the core extent");
    const uint32_t rounds = lat_->rounds();
    windows_ = (rounds + core - 1) / core;
    const int height = lat_->patch().height();
    if (layout) {
      if (layout->height() != height) throw ConfigError("layout does not match lattice");
      for (size_t r = 0; r < layout->patches.size(); ++r)
        row_ranges_.push_back({layout->region_row_begin(static_cast<int>(r)), layout->region_row_end(static_cast<int>(r))});
      for (const auto& [lo, hi] : row_ranges_)
        if (static_cast<uint32_t>(hi - lo) <= buffer) throw ConfigError("buffer must be smaller than the region extent");
    } else {
      row_ranges_.push_back({0, height + 1});
    }
    regions_ = static_cast<int>(row_ranges_.size());
    row_region_.assign(static_cast<size_t>(height + 1), 0);
    for (int r = 0; r < regions_; ++r)
      for (int y = row_ranges_[r].first; y < row_ranges_[r].second; ++y) row_region_[static_cast<size_t>(y)] = r;
    for (uint32_t w = 0; w < windows_; ++w)
      for (int r = 0; r < regions_; ++r) {
        Block b;
        b.index = static_cast<uint32_t>(blocks_.size());
        b.id = {r, static_cast<int>(w)};
        b.kind = regions_ > 1 ? BlockKind::Spatial : BlockKind::Temporal;
        b.core_lo = w * core;
        b.core_hi = std::min(rounds, (w + 1) * core);
        b.win_lo = b.core_lo >= buffer ? b.core_lo - buffer : 0;
        b.win_hi = std::min(rounds, b.core_hi + buffer);
        b.row_lo = row_ranges_[r].first;
        b.row_hi = row_ranges_[r].second;
        b.win_row_lo = std::max(0, b.row_lo - static_cast<int>(buffer));
        b.win_row_hi = std::min(height + 1, b.row_hi + static_cast<int>(buffer));
        blocks_.push_back(b);
      }
    find_neighbors();
  }

  const Lattice& lattice() const { return *lat_; }
  std::shared_ptr<const Lattice> lattice_ptr() const { return lat_; }
  uint32_t core() const { return core_; }
  uint32_t buffer() const { return buffer_; }
  uint32_t num_windows() const { return windows_; }
  int num_regions() const { return regions_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const Block& block(uint32_t i) const { return blocks_[i]; }
  const std::vector<SeamPair>& seams() const { return seams_; }
  uint32_t block_index(BlockId id) const { return static_cast<uint32_t>(id.window * regions_ + id.region); }

  int region_of_row(int y) const { return row_region_[static_cast<size_t>(y)]; }
  int region_of_stabilizer(uint32_t s) const { return region_of_row(lat_->patch().stabilizers()[s].y); }

  // Block whose core owns the detector.
  uint32_t owner(uint32_t det) const {
    uint32_t w = lat_->round_of(det) / core_;
    return w * static_cast<uint32_t>(regions_) + static_cast<uint32_t>(region_of_stabilizer(lat_->stabilizer_of(det)));
  }

  bool in_core(const Block& b, uint32_t det) const { return owner(det) == b.index; }

  bool in_window(const Block& b, uint32_t det) const {
    uint32_t t = lat_->round_of(det);
    int y = lat_->patch().stabilizers()[lat_->stabilizer_of(det)].y;
    return t >= b.win_lo && t < b.win_hi && y >= b.win_row_lo && y < b.win_row_hi && lat_->detector_exists(det);
  }

  // Last round a block's decode depends on.
  uint32_t ready_round(const Block& b) const { return b.win_hi - 1; }

 private:
  void find_neighbors() {
    std::set<std::pair<uint32_t, uint32_t>> pairs;
    const uint32_t rounds = lat_->rounds();
    auto scan = [&](uint32_t t_lo, uint32_t t_hi) {
      lat_->for_each_edge(t_lo, t_hi, [&](const EdgeSpec& e) {
        for (uint8_t i = 0; i < e.count; ++i)
          for (uint8_t j = i + 1; j < e.count; ++j) {
            if (lat_->basis_of(e.detectors[i]) != lat_->basis_of(e.detectors[j])) continue;
            uint32_t a = owner(e.detectors[i]), b = owner(e.detectors[j]);
            if (a != b) pairs.insert({std::min(a, b), std::max(a, b)});
          }
      });
    };
    if (regions_ > 1) {
      scan(0, rounds);
    } else {
      for (uint32_t w = 1; w < windows_; ++w) scan(w * core_ - 1, w * core_);
    }
    for (auto [a, b] : pairs) {
      uint32_t s = static_cast<uint32_t>(seams_.size());
      seams_.push_back({a, b});
      blocks_[a].neighbors.push_back(b);
      blocks_[a].seams.push_back(s);
      blocks_[b].neighbors.push_back(a);
      blocks_[b].seams.push_back(s);
    }
    for (auto& b : blocks_) {
      std::vector<size_t> order(b.neighbors.size());
      std::iota(order.begin(), order.end(), size_t(0));
      std::sort(order.begin(), order.end(), [&](size_t x, size_t y) { return b.neighbors[x] < b.neighbors[y]; });
      std::vector<uint32_t> n, s;
      for (size_t k : order) {
        n.push_back(b.neighbors[k]);
        s.push_back(b.seams[k]);
      }
      b.neighbors = std::move(n);
      b.seams = std::move(s);
    }
  }

  std::shared_ptr<const Lattice> lat_;
  uint32_t core_ = 0, buffer_ = 0, windows_ = 0;
  int regions_ = 1;
  std::vector<std::pair<int, int>> row_ranges_;
  std::vector<int> row_region_;
  std::vector<Block> blocks_;
  std::vector<SeamPair> seams_;
};

inline Partition partition(std::shared_ptr<const Lattice> lattice, uint32_t d, uint32_t b,
                           const SurgeryLayout* layout = nullptr) {
  return Partition(std::move(lattice), d, b, layout);
}

struct SeamCorrection {
  uint32_t block = 0;
  uint32_t seam = 0;
  std::vector<uint8_t> bits;  // over the seam's interface detectors
};

struct BlockResult {
  uint32_t block = 0;
  std::array<Correction, 2> core;     // committed edges per basis (block-local edge ids)
  std::vector<SeamCorrection> seams;  // one per neighbor, in neighbor order
  uint64_t logical = 0;
  uint64_t work = 0;
};

struct MergeResult {
  uint64_t logical = 0;
  uint64_t work = 0;
  uint32_t unresolved = 0;  // seam defects that fell back to the artificial boundary
};

// Provides stored rounds: sorted stabilizer indices firing in round t, or
// nullptr when the round has not arrived (or was released).
class RoundStore {
 public:
  virtual ~RoundStore() = default;
  virtual const std::vector<uint32_t>* round(uint32_t t) const = 0;
};

class VectorRoundStore : public RoundStore {
 public:
  VectorRoundStore() = default;
  VectorRoundStore(const Lattice& l, const std::vector<uint8_t>& detector_bits) { assign(l, detector_bits); }
  void assign(const Lattice& l, const std::vector<uint8_t>& detector_bits) {
    rounds_.assign(l.rounds(), {});
    for (uint32_t t = 0; t < l.rounds(); ++t)
      for (uint32_t s = 0; s < l.num_stabilizers(); ++s)
        if (detector_bits[l.detector(s, t)]) rounds_[t].push_back(s);
  }
  const std::vector<uint32_t>* round(uint32_t t) const override { return t < rounds_.size() ? &rounds_[t] : nullptr; }
  std::vector<std::vector<uint32_t>>& rounds() { return rounds_; }

 private:
  std::vector<std::vector<uint32_t>> rounds_;
};

inline constexpr int64_t kArtificialWeight = int64_t(1) << 20;

namespace detail {

enum class EdgeClass : uint8_t { Committed, Crossing, Buffer };

// Block graph with detector ids relative to a base round (id - base * n_stab),
// so shapes repeating along time share one instance.
struct BlockGraphs {
  struct PerBasis {
    DecodingGraph graph;
    std::vector<uint32_t> nodes;  // relative detector ids, ascending
    std::vector<EdgeClass> cls;
    std::vector<int32_t> seam_slot;                      // neighbor position for crossing edges
    std::vector<std::array<uint32_t, 2>> core_keys;      // relative ids in the core (kNoDetector padded)
  };
  std::array<PerBasis, 2> basis;
};

struct SeamGraphs {
  std::vector<uint32_t> interface;  // relative detector ids, ascending, both bases
  struct PerBasis {
    DecodingGraph graph;
    std::vector<uint32_t> node_pos;  // node -> position in interface
    std::vector<uint8_t> artificial;
  };
  std::array<PerBasis, 2> basis;
};

struct PartKey {
  std::array<uint32_t, 4> keys{kNoDetector, kNoDetector, kNoDetector, kNoDetector};
  uint8_t count = 0;
  uint64_t mask = 0;
  auto tie() const { return std::tie(keys, count, mask); }
  bool operator<(const PartKey& o) const { return tie() < o.tie(); }
};

// Per-basis part of an edge (detectors of that basis, mask of that basis' observables).
inline std::optional<PartKey> part_of(const Lattice& l, const EdgeSpec& e, Basis b, uint64_t obs_mask) {
  PartKey k;
  for (uint32_t d : e)
    if (l.basis_of(d) == b) k.keys[k.count++] = d;
  k.mask = e.logical_mask & obs_mask;
  if (k.count == 0) return std::nullopt;
  return k;
}

inline uint64_t observable_mask(const Lattice& l, Basis b) {
  uint64_t m = 0;
  const auto& bases = l.observables().bases;
  for (size_t i = 0; i < bases.size(); ++i)
    if (bases[i] == b) m |= uint64_t(1) << i;
  return m;
}

}  // namespace detail

class BlockEngine {
 public:
  BlockEngine(Partition p, std::shared_ptr<const Decoder> inner, std::shared_ptr<const Decoder> seam = nullptr)
      : p_(std::move(p)), inner_(std::move(inner)), seam_(seam ? std::move(seam) : inner_) {}

  const Partition& partition() const { return p_; }
  const Decoder& inner() const { return *inner_; }

  BlockResult decode_block(uint32_t index, const RoundStore& store) const {
    const Block& b = p_.block(index);
    const Lattice& l = p_.lattice();
    const uint32_t n = l.num_stabilizers();
    const uint32_t base = b.win_lo;
    auto g = block_graphs(b);
    // Collect relative detector ids firing inside the window.
    std::array<std::vector<uint32_t>, 2> defects;
    for (uint32_t t = b.win_lo; t < b.win_hi; ++t) {
      const auto* r = store.round(t);
      if (!r) throw NotReadyError("round " + std::to_string(t) + " missing for block " + std::to_string(index));
      for (uint32_t s : *r) {
        uint32_t det = l.detector(s, t);
        if (!p_.in_window(b, det)) continue;
        auto& pb = g->basis[index_of(l.basis_of(det))];
        uint32_t rel = det - base * n;
        auto it = std::lower_bound(pb.nodes.begin(), pb.nodes.end(), rel);
        if (it == pb.nodes.end() || *it != rel) throw ContractViolation("detector missing from block graph");
        defects[index_of(l.basis_of(det))].push_back(static_cast<uint32_t>(it - pb.nodes.begin()));
      }
    }
    BlockResult res;
    res.block = index;
    res.seams.resize(b.neighbors.size());
    std::vector<std::shared_ptr<const detail::SeamGraphs>> sg(b.neighbors.size());
    for (size_t k = 0; k < b.neighbors.size(); ++k) {
      sg[k] = seam_graphs(b.seams[k]);
      res.seams[k].block = index;
      res.seams[k].seam = b.seams[k];
      res.seams[k].bits.assign(sg[k]->interface.size(), 0);
    }
    for (int bi = 0; bi < 2; ++bi) {
      const auto& pb = g->basis[bi];
      Correction c = inner_->decode(pb.graph, defects[bi]);
      res.work += c.work;
      std::vector<uint32_t> committed;
      for (uint32_t e : c.edges) {
        switch (pb.cls[e]) {
          case detail::EdgeClass::Committed:
            committed.push_back(e);
            break;
          case detail::EdgeClass::Crossing: {
            size_t k = static_cast<size_t>(pb.seam_slot[e]);
            uint32_t seam_base = seam_base_round(b.seams[k]);
            for (uint32_t key : pb.core_keys[e]) {
              if (key == kNoDetector) continue;
              uint32_t rel = key + base * n - seam_base * n;
              const auto& iface = sg[k]->interface;
              auto it = std::lower_bound(iface.begin(), iface.end(), rel);
              if (it == iface.end() || *it != rel) throw ContractViolation("crossing endpoint not on seam");
              res.seams[k].bits[static_cast<size_t>(it - iface.begin())] ^= 1;
            }
            break;
          }
          case detail::EdgeClass::Buffer:
            break;
        }
      }
      res.core[bi] = make_correction(pb.graph, std::move(committed), 0);
      res.logical ^= res.core[bi].logical_flip;
    }
    return res;
  }

  MergeResult merge(const SeamCorrection& a, const SeamCorrection& b) const {
    if (a.seam != b.seam || a.block == b.block) throw ContractViolation("seam corrections do not face each other");
    auto sg = seam_graphs(a.seam);
    if (a.bits.size() != sg->interface.size() || b.bits.size() != sg->interface.size())
      throw ContractViolation("mismatched seam extents");
    MergeResult out;
    for (int bi = 0; bi < 2; ++bi) {
      const auto& pb = sg->basis[bi];
      std::vector<uint32_t> defects;
      for (uint32_t node = 0; node < pb.node_pos.size(); ++node) {
        size_t pos = pb.node_pos[node];
        if (a.bits[pos] ^ b.bits[pos]) defects.push_back(node);
      }
      if (defects.empty()) continue;
      Correction c = decode_seam_2d(pb.graph, defects, *seam_);
      out.logical ^= c.logical_flip;
      out.work += c.work;
      for (uint32_t e : c.edges) out.unresolved += pb.artificial[e];
    }
    return out;
  }

  // Interface detectors of a seam as absolute detector ids.
  std::vector<uint32_t> seam_interface(uint32_t seam) const {
    auto sg = seam_graphs(seam);
    uint32_t off = seam_base_round(seam) * p_.lattice().num_stabilizers();
    std::vector<uint32_t> out;
    for (uint32_t r : sg->interface) out.push_back(r + off);
    return out;
  }

  const DecodingGraph& seam_graph(uint32_t seam, Basis b) const {
    auto sg = seam_graphs(seam);
    return sg->basis[index_of(b)].graph;
  }

  size_t cached_graphs() const {
    std::lock_guard lk(mu_);
    return block_cache_.size() + seam_cache_.size();
  }

 private:
  using ShapeKey = std::tuple<int, uint32_t, uint32_t, uint32_t, uint32_t, bool, bool>;

  ShapeKey block_key(const Block& b) const {
    return {b.id.region, b.core_lo - b.win_lo, b.core_hi - b.win_lo, b.win_hi - b.win_lo, 0, b.win_lo == 0,
            b.win_hi == p_.lattice().rounds()};
  }

  uint32_t seam_base_round(uint32_t seam) const {
    const auto& s = p_.seams()[seam];
    uint32_t lo = std::min(p_.block(s.a).core_lo, p_.block(s.b).core_lo);
    return lo == 0 ? 0 : lo - 1;
  }

  ShapeKey seam_key(uint32_t seam) const {
    const auto& s = p_.seams()[seam];
    const Block& a = p_.block(s.a);
    const Block& b = p_.block(s.b);
    uint32_t base = seam_base_round(seam);
    uint32_t hi = std::max(a.core_hi, b.core_hi);
    return {a.id.region * 65536 + b.id.region, a.core_lo - base, b.core_lo - base, hi - base,
            static_cast<uint32_t>(b.id.window - a.id.window), base == 0, hi == p_.lattice().rounds()};
  }

  std::shared_ptr<const detail::BlockGraphs> block_graphs(const Block& b) const {
    ShapeKey key = block_key(b);
    {
      std::lock_guard lk(mu_);
      auto it = block_cache_.find(key);
      if (it != block_cache_.end()) return it->second;
    }
    auto built = std::make_shared<const detail::BlockGraphs>(build_block(b));
    std::lock_guard lk(mu_);
    return block_cache_.emplace(key, built).first->second;
  }

  std::shared_ptr<const detail::SeamGraphs> seam_graphs(uint32_t seam) const {
    ShapeKey key = seam_key(seam);
    {
      std::lock_guard lk(mu_);
      auto it = seam_cache_.find(key);
      if (it != seam_cache_.end()) return it->second;
    }
    auto built = std::make_shared<const detail::SeamGraphs>(build_seam(seam));
    std::lock_guard lk(mu_);
    return seam_cache_.emplace(key, built).first->second;
  }

  detail::BlockGraphs build_block(const Block& b) const {
    const Lattice& l = p_.lattice();
    const uint32_t off = b.win_lo * l.num_stabilizers();
    detail::BlockGraphs g;
    for (Basis basis : {Basis::Z, Basis::X}) {
      auto& pb = g.basis[index_of(basis)];
      for (uint32_t t = b.win_lo; t < b.win_hi; ++t)
        for (uint32_t s = 0; s < l.num_stabilizers(); ++s) {
          uint32_t det = l.detector(s, t);
          if (l.basis_of(det) == basis && p_.in_window(b, det)) pb.nodes.push_back(det - off);
        }
      uint64_t obs = detail::observable_mask(l, basis);
      std::map<detail::PartKey, double> parts;
      uint32_t lo = b.win_lo == 0 ? 0 : b.win_lo - 1;
      l.for_each_edge(lo, b.win_hi, [&](const EdgeSpec& e) {
        auto k = detail::part_of(l, e, basis, obs);
        if (!k) return;
        bool any = false;
        for (uint8_t i = 0; i < k->count; ++i) any |= p_.in_window(b, k->keys[i]);
        if (!any) return;
        auto [it, fresh] = parts.emplace(*k, e.probability);
        if (!fresh) it->second = combine_probability(it->second, e.probability);
      });
      pb.graph = DecodingGraph(static_cast<uint32_t>(pb.nodes.size()));
      auto node_of = [&](uint32_t det) {
        return static_cast<uint32_t>(std::lower_bound(pb.nodes.begin(), pb.nodes.end(), det - off) - pb.nodes.begin());
      };
      for (const auto& [k, prob] : parts) {
        std::array<uint32_t, 2> inside{kNoDetector, kNoDetector};
        std::array<uint32_t, 2> core{kNoDetector, kNoDetector};
        int n_in = 0, n_core = 0, n_out_core = 0;
        uint32_t other_owner = kNoDetector;
        for (uint8_t i = 0; i < k.count; ++i) {
          uint32_t d = k.keys[i];
          if (p_.in_window(b, d)) inside[static_cast<size_t>(n_in++)] = node_of(d);
          if (p_.in_core(b, d)) {
            core[static_cast<size_t>(n_core++)] = d - off;
          } else {
            ++n_out_core;
            other_owner = p_.owner(d);
          }
        }
        pb.graph.add_edge(inside[0], n_in == 2 ? inside[1] : kBoundary, edge_weight(prob), k.mask);
        if (n_out_core == 0) {
          pb.cls.push_back(detail::EdgeClass::Committed);
          pb.seam_slot.push_back(-1);
        } else if (n_core > 0) {
          auto it = std::find(b.neighbors.begin(), b.neighbors.end(), other_owner);
          if (it == b.neighbors.end()) throw ContractViolation("crossing edge into a non-neighbor block");
          pb.cls.push_back(detail::EdgeClass::Crossing);
          pb.seam_slot.push_back(static_cast<int32_t>(it - b.neighbors.begin()));
        } else {
          pb.cls.push_back(detail::EdgeClass::Buffer);
          pb.seam_slot.push_back(-1);
        }
        pb.core_keys.push_back(core);
      }
    }
    return g;
  }

  detail::SeamGraphs build_seam(uint32_t seam) const {
    const Lattice& l = p_.lattice();
    const auto& sp = p_.seams()[seam];
    const Block& a = p_.block(sp.a);
    const Block& b = p_.block(sp.b);
    const uint32_t base = seam_base_round(seam);
    const uint32_t off = base * l.num_stabilizers();
    const uint32_t hi = std::max(a.core_hi, b.core_hi);
    detail::SeamGraphs sg;
    std::set<uint32_t> iface;
    l.for_each_edge(base, hi, [&](const EdgeSpec& e) {
      for (Basis basis : {Basis::Z, Basis::X}) {
        auto k = detail::part_of(l, e, basis, 0);
        if (!k) continue;
        bool in_a = false, in_b = false;
        for (uint8_t i = 0; i < k->count; ++i) {
          uint32_t o = p_.owner(k->keys[i]);
          in_a |= o == a.index;
          in_b |= o == b.index;
        }
        if (!(in_a && in_b)) continue;
        for (uint8_t i = 0; i < k->count; ++i) {
          uint32_t o = p_.owner(k->keys[i]);
          if (o == a.index || o == b.index) iface.insert(k->keys[i]);
        }
      }
    });
    for (uint32_t d : iface) sg.interface.push_back(d - off);
    for (Basis basis : {Basis::Z, Basis::X}) {
      auto& pb = sg.basis[index_of(basis)];
      std::vector<uint32_t> members;
      for (uint32_t d : iface)
        if (l.basis_of(d) == basis) members.push_back(d);
      pb.graph = DecodingGraph(static_cast<uint32_t>(members.size()));
      for (uint32_t d : members)
        pb.node_pos.push_back(static_cast<uint32_t>(std::lower_bound(sg.interface.begin(), sg.interface.end(), d - off) -
                                                    sg.interface.begin()));
      auto node_of = [&](uint32_t d) {
        return static_cast<uint32_t>(std::lower_bound(members.begin(), members.end(), d) - members.begin());
      };
      uint64_t obs = detail::observable_mask(l, basis);
      std::map<detail::PartKey, double> parts;
      l.for_each_edge(base == 0 ? 0 : base - 1, hi, [&](const EdgeSpec& e) {
        auto k = detail::part_of(l, e, basis, obs);
        if (!k) return;
        for (uint8_t i = 0; i < k->count; ++i)
          if (!iface.count(k->keys[i])) return;
        auto [it, fresh] = parts.emplace(*k, e.probability);
        if (!fresh) it->second = combine_probability(it->second, e.probability);
      });
      for (const auto& [k, prob] : parts) {
        if (k.count > 2) throw ContractViolation("seam edge with more than two detectors");
        pb.graph.add_edge(node_of(k.keys[0]), k.count == 2 ? node_of(k.keys[1]) : kBoundary, edge_weight(prob), k.mask);
        pb.artificial.push_back(0);
      }
      // Escape route for odd residual parity when no real boundary is in reach.
      for (uint32_t v = 0; v < members.size(); ++v) {
        pb.graph.add_edge(v, kBoundary, kArtificialWeight, 0);
        pb.artificial.push_back(1);
      }
    }
    return sg;
  }

  Partition p_;
  std::shared_ptr<const Decoder> inner_;
  std::shared_ptr<const Decoder> seam_;
  mutable std::mutex mu_;
  mutable std::map<ShapeKey, std::shared_ptr<const detail::BlockGraphs>> block_cache_;
  mutable std::map<ShapeKey, std::shared_ptr<const detail::SeamGraphs>> seam_cache_;
};

struct ContributorId {
  enum class Kind : uint8_t { Block, Seam, Local } kind = Kind::Block;
  uint32_t index = 0;
  friend auto operator<=>(const ContributorId&, const ContributorId&) = default;
};

// Shared XOR accumulator of decoded logical flips with an audit trail.
class LogicalFrame {
 public:
  void apply(ContributorId who, uint64_t mask) {
    bits_.fetch_xor(mask, std::memory_order_relaxed);
    std::lock_guard lk(mu_);
    log_.push_back({who, mask});
  }
  uint64_t bits() const { return bits_.load(std::memory_order_relaxed); }
  std::vector<std::pair<ContributorId, uint64_t>> audit() const {
    std::lock_guard lk(mu_);
    return log_;
  }
  uint64_t audit_xor() const {
    std::lock_guard lk(mu_);
    uint64_t x = 0;
    for (const auto& [who, m] : log_) x ^= m;
    return x;
  }

 private:
  std::atomic<uint64_t> bits_{0};
  mutable std::mutex mu_;
  std::vector<std::pair<ContributorId, uint64_t>> log_;
};

struct PartitionedDecodeStats {
  uint64_t work = 0;
  uint32_t unresolved = 0;
};

// Serial reference: decode every block, then merge every seam in index order.
inline uint64_t decode_partitioned(const BlockEngine& eng, const RoundStore& store,
                                   PartitionedDecodeStats* stats = nullptr) {
  const Partition& p = eng.partition();
  std::vector<BlockResult> results;
  results.reserve(p.blocks().size());
  uint64_t logical = 0;
  for (const auto& b : p.blocks()) {
    results.push_back(eng.decode_block(b.index, store));
    logical ^= results.back().logical;
    if (stats) stats->work += results.back().work;
  }
  for (uint32_t s = 0; s < p.seams().size(); ++s) {
    const auto& sp = p.seams()[s];
    auto side = [&](uint32_t blk) -> const SeamCorrection& {
      const auto& r = results[blk];
      for (const auto& sc : r.seams)
        if (sc.seam == s) return sc;
      throw ContractViolation("seam correction missing");
    };
    MergeResult m = eng.merge(side(sp.a), side(sp.b));
    logical ^= m.logical;
    if (stats) {
      stats->work += m.work;
      stats->unresolved += m.unresolved;
    }
  }
  return logical;
}

}  // namespace latte
