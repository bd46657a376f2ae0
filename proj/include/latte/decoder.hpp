#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "latte/code_model.hpp"

namespace latte {

inline constexpr uint32_t kBoundary = 0xffffffffu;
inline constexpr int64_t kUnusable = std::numeric_limits<int64_t>::max() / 4;
inline constexpr int kWeightScale = 256;

// Fixed-point -log(p/(1-p)); zero-probability edges can never be chosen.
inline int64_t edge_weight(double p) {
  if (!(p > 0.0)) return kUnusable;
  if (p >= 0.5) throw ConfigError("edge probability >= 0.5 has no matching weight");
  return std::max<int64_t>(1, std::llround(kWeightScale * -std::log(p / (1.0 - p))));
}

struct GraphEdge {
  uint32_t u = 0;
  uint32_t v = kBoundary;  // kBoundary marks an edge to the boundary
  int64_t weight = 1;
  uint64_t mask = 0;
  bool usable() const { return weight < kUnusable; }
};

class DecodingGraph {
 public:
  explicit DecodingGraph(uint32_t nodes = 0) : n_(nodes) {}

  uint32_t add_edge(uint32_t u, uint32_t v, int64_t weight, uint64_t mask) {
    if (u >= n_ || (v != kBoundary && v >= n_) || u == v) throw ContractViolation("bad graph edge");
    edges_.push_back({u, v, weight, mask});
    adj_valid_ = false;
    return static_cast<uint32_t>(edges_.size() - 1);
  }

  uint32_t num_nodes() const { return n_; }
  size_t num_edges() const { return edges_.size(); }
  const std::vector<GraphEdge>& edges() const { return edges_; }
  const GraphEdge& edge(uint32_t e) const { return edges_[e]; }
  size_t num_usable_edges() const {
    return static_cast<size_t>(std::count_if(edges_.begin(), edges_.end(), [](const auto& e) { return e.usable(); }));
  }

  // Incident edge ids of node x; x == num_nodes() addresses the boundary.
  std::span<const uint32_t> incident(uint32_t x) const {
    build();
    return {adj_.data() + off_[x], adj_.data() + off_[x + 1]};
  }

  uint32_t other(uint32_t e, uint32_t x) const {
    const auto& g = edges_[e];
    uint32_t v = g.v == kBoundary ? n_ : g.v;
    return g.u == x ? v : g.u;
  }

 private:
  void build() const {
    if (adj_valid_) return;
    off_.assign(n_ + 2, 0);
    for (const auto& e : edges_) {
      ++off_[e.u + 1];
      ++off_[(e.v == kBoundary ? n_ : e.v) + 1];
    }
    std::partial_sum(off_.begin(), off_.end(), off_.begin());
    adj_.assign(off_.back(), 0);
    std::vector<uint32_t> pos(off_.begin(), off_.end() - 1);
    for (uint32_t i = 0; i < edges_.size(); ++i) {
      adj_[pos[edges_[i].u]++] = i;
      adj_[pos[edges_[i].v == kBoundary ? n_ : edges_[i].v]++] = i;
    }
    adj_valid_ = true;
  }

  uint32_t n_;
  std::vector<GraphEdge> edges_;
  mutable std::vector<uint32_t> off_, adj_;
  mutable bool adj_valid_ = false;
};

struct Correction {
  std::vector<uint32_t> edges;  // sorted edge ids
  uint64_t logical_flip = 0;
  int64_t weight = 0;           // fixed point, kWeightScale per unit
  uint64_t work = 0;            // edge visits, a machine-independent cost measure

  double real_weight() const { return double(weight) / kWeightScale; }
};

inline Correction make_correction(const DecodingGraph& g, std::vector<uint32_t> edges, uint64_t work) {
  std::sort(edges.begin(), edges.end());
  Correction c;
  for (uint32_t e : edges) {
    c.logical_flip ^= g.edge(e).mask;
    c.weight += g.edge(e).weight;
  }
  c.edges = std::move(edges);
  c.work = work;
  return c;
}

// Toggle-semantics defect flags; validates node range.
inline std::vector<uint8_t> defect_flags(const DecodingGraph& g, std::span<const uint32_t> defects) {
  std::vector<uint8_t> f(g.num_nodes() + 1, 0);
  for (uint32_t d : defects) {
    if (d >= g.num_nodes()) throw ContractViolation("defect " + std::to_string(d) + " outside graph");
    f[d] ^= 1;
  }
  return f;
}

// Nodes left flagged after applying the correction to the syndrome.
inline std::vector<uint32_t> residual(const DecodingGraph& g, std::span<const uint32_t> defects, const Correction& c) {
  auto f = defect_flags(g, defects);
  for (uint32_t e : c.edges) {
    f[g.edge(e).u] ^= 1;
    f[g.edge(e).v == kBoundary ? g.num_nodes() : g.edge(e).v] ^= 1;
  }
  std::vector<uint32_t> out;
  for (uint32_t i = 0; i < g.num_nodes(); ++i)
    if (f[i]) out.push_back(i);
  return out;
}

class Decoder {
 public:
  virtual ~Decoder() = default;
  virtual Correction decode(const DecodingGraph& g, std::span<const uint32_t> defects) const = 0;
  virtual std::string name() const = 0;
};

// Weighted union-find: clusters grow in integer weight units; a fully grown
// edge merges its endpoint clusters; the boundary is one neutral cluster.
// Peeling runs on a spanning forest of grown edges, rooted at the boundary.
inline Correction uf_decode(const DecodingGraph& g, std::span<const uint32_t> defects) {
  const uint32_t n = g.num_nodes();
  const uint32_t B = n;
  auto flags = defect_flags(g, defects);
  if (std::none_of(flags.begin(), flags.end(), [](uint8_t f) { return f; })) return {};

  std::vector<uint32_t> parent(n + 1);
  std::iota(parent.begin(), parent.end(), 0u);
  std::vector<uint8_t> odd(flags.begin(), flags.end());
  std::vector<uint8_t> touches_boundary(n + 1, 0);
  touches_boundary[B] = 1;
  std::vector<std::vector<uint32_t>> members(n + 1);
  for (uint32_t i = 0; i <= n; ++i) members[i] = {i};
  std::vector<int64_t> growth(g.num_edges(), 0);
  std::vector<uint8_t> grown(g.num_edges(), 0);
  std::vector<uint64_t> seen(g.num_edges(), 0);
  uint64_t stamp = 0, work = 0;

  auto find = [&](uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  auto active = [&](uint32_t r) { return odd[r] && !touches_boundary[r]; };
  auto unite = [&](uint32_t a, uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (members[a].size() < members[b].size()) std::swap(a, b);
    parent[b] = a;
    odd[a] ^= odd[b];
    touches_boundary[a] |= touches_boundary[b];
    members[a].insert(members[a].end(), members[b].begin(), members[b].end());
    members[b].clear();
    members[b].shrink_to_fit();
  };

  std::vector<uint32_t> roots;
  for (uint32_t i = 0; i < n; ++i)
    if (flags[i]) roots.push_back(i);
  struct Front {
    uint32_t e;
    int64_t rate;
  };
  std::vector<Front> frontier;
  std::vector<uint32_t> fused;
  for (;;) {
    for (auto& r : roots) r = find(r);
    std::sort(roots.begin(), roots.end());
    roots.erase(std::unique(roots.begin(), roots.end()), roots.end());
    roots.erase(std::remove_if(roots.begin(), roots.end(), [&](uint32_t r) { return !active(r); }), roots.end());
    if (roots.empty()) break;
    ++stamp;
    frontier.clear();
    for (uint32_t r : roots)
      for (uint32_t x : members[r])
        for (uint32_t e : g.incident(x)) {
          ++work;
          if (grown[e] || seen[e] == stamp || !g.edge(e).usable()) continue;
          seen[e] = stamp;
          uint32_t ru = find(g.edge(e).u), rv = find(g.other(e, g.edge(e).u));
          if (ru == rv) continue;
          frontier.push_back({e, int64_t(active(ru)) + int64_t(active(rv))});
        }
    if (frontier.empty()) throw ContractViolation("defect cluster cannot reach a partner or the boundary");
    int64_t delta = kUnusable;
    for (const auto& f : frontier)
      delta = std::min(delta, (g.edge(f.e).weight - growth[f.e] + f.rate - 1) / f.rate);
    delta = std::max<int64_t>(delta, 1);
    fused.clear();
    for (const auto& f : frontier) {
      growth[f.e] += f.rate * delta;
      if (growth[f.e] >= g.edge(f.e).weight) {
        grown[f.e] = 1;
        fused.push_back(f.e);
      }
    }
    for (uint32_t e : fused) unite(g.edge(e).u, g.other(e, g.edge(e).u));
  }

  // Peeling.
  std::vector<uint8_t> visited(n + 1, 0);
  std::vector<uint32_t> order, parent_edge(n + 1, kBoundary);
  auto bfs = [&](uint32_t root) {
    size_t head = order.size();
    visited[root] = 1;
    order.push_back(root);
    while (head < order.size()) {
      uint32_t x = order[head++];
      for (uint32_t e : g.incident(x)) {
        ++work;
        if (!grown[e]) continue;
        uint32_t y = g.other(e, x);
        if (visited[y]) continue;
        visited[y] = 1;
        parent_edge[y] = e;
        order.push_back(y);
      }
    }
  };
  bfs(B);
  for (uint32_t i = 0; i < n; ++i)
    if (flags[i] && !visited[i]) bfs(i);
  std::vector<uint32_t> chosen;
  for (size_t k = order.size(); k-- > 0;) {
    uint32_t x = order[k];
    if (!flags[x] || x == B) continue;
    uint32_t e = parent_edge[x];
    if (e == kBoundary) throw ContractViolation("odd cluster without boundary after growth");
    chosen.push_back(e);
    flags[x] ^= 1;
    flags[g.other(e, x)] ^= 1;
  }
  return make_correction(g, std::move(chosen), work);
}

namespace detail {

inline Correction exact_brute_force(const DecodingGraph& g, const std::vector<uint8_t>& flags) {
  std::vector<uint32_t> ids;
  for (uint32_t e = 0; e < g.num_edges(); ++e)
    if (g.edge(e).usable()) ids.push_back(e);
  const uint32_t n = g.num_nodes();
  const size_t words = (n + 64) / 64;
  std::vector<uint64_t> target(words, 0), cur(words, 0);
  for (uint32_t i = 0; i < n; ++i)
    if (flags[i]) target[i / 64] |= uint64_t(1) << (i % 64);
  std::vector<std::vector<uint64_t>> inc(ids.size(), std::vector<uint64_t>(words, 0));
  for (size_t k = 0; k < ids.size(); ++k) {
    const auto& e = g.edge(ids[k]);
    inc[k][e.u / 64] ^= uint64_t(1) << (e.u % 64);
    if (e.v != kBoundary) inc[k][e.v / 64] ^= uint64_t(1) << (e.v % 64);
  }
  const uint64_t total = uint64_t(1) << ids.size();
  uint64_t subset = 0, best = 0;
  int64_t weight = 0, best_weight = kUnusable;
  bool found = cur == target;
  if (found) best_weight = 0;
  for (uint64_t step = 1; step < total; ++step) {
    int k = std::countr_zero(step);
    subset ^= uint64_t(1) << k;
    for (size_t w = 0; w < words; ++w) cur[w] ^= inc[static_cast<size_t>(k)][w];
    weight += (subset >> k & 1) ? g.edge(ids[static_cast<size_t>(k)]).weight : -g.edge(ids[static_cast<size_t>(k)]).weight;
    if (cur != target) continue;
    uint64_t diff = subset ^ best;
    if (!found || weight < best_weight || (weight == best_weight && (subset & diff & (~diff + 1)) != 0)) {
      found = true;
      best = subset;
      best_weight = weight;
    }
  }
  if (!found) throw ContractViolation("syndrome has no consistent correction");
  std::vector<uint32_t> chosen;
  for (size_t k = 0; k < ids.size(); ++k)
    if (best >> k & 1) chosen.push_back(ids[k]);
  return make_correction(g, std::move(chosen), total * ids.size());
}

struct PathTree {
  std::vector<int64_t> dist;
  std::vector<uint32_t> pred;  // edge into node
};

inline PathTree dijkstra(const DecodingGraph& g, uint32_t src, uint64_t& work) {
  const uint32_t n = g.num_nodes() + 1;
  PathTree t{std::vector<int64_t>(n, kUnusable), std::vector<uint32_t>(n, kBoundary)};
  using Item = std::pair<int64_t, uint32_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  t.dist[src] = 0;
  pq.push({0, src});
  while (!pq.empty()) {
    auto [d, x] = pq.top();
    pq.pop();
    if (d != t.dist[x]) continue;
    if (x == g.num_nodes()) continue;  // paths never pass through the boundary
    for (uint32_t e : g.incident(x)) {
      ++work;
      if (!g.edge(e).usable()) continue;
      uint32_t y = g.other(e, x);
      int64_t nd = d + g.edge(e).weight;
      if (nd < t.dist[y] || (nd == t.dist[y] && e < t.pred[y])) {
        bool improve = nd < t.dist[y];
        t.dist[y] = nd;
        t.pred[y] = e;
        if (improve) pq.push({nd, y});
      }
    }
  }
  return t;
}

inline Correction exact_matching(const DecodingGraph& g, const std::vector<uint32_t>& defects) {
  const size_t k = defects.size();
  uint64_t work = 0;
  std::vector<PathTree> trees;
  for (uint32_t d : defects) trees.push_back(dijkstra(g, d, work));
  const uint32_t B = g.num_nodes();
  const uint32_t full = (uint32_t(1) << k) - 1;
  std::vector<int64_t> f(size_t(full) + 1, kUnusable);
  std::vector<int32_t> choice(size_t(full) + 1, -2);
  f[0] = 0;
  for (uint32_t mask = 1; mask <= full; ++mask) {
    int i = std::countr_zero(mask);
    uint32_t rest = mask & ~(uint32_t(1) << i);
    int64_t best = kUnusable;
    int32_t pick = -2;
    if (trees[static_cast<size_t>(i)].dist[B] < kUnusable && f[rest] < kUnusable) {
      best = f[rest] + trees[static_cast<size_t>(i)].dist[B];
      pick = -1;
    }
    for (uint32_t r = rest; r; r &= r - 1) {
      int j = std::countr_zero(r);
      int64_t dij = trees[static_cast<size_t>(i)].dist[defects[static_cast<size_t>(j)]];
      uint32_t sub = rest & ~(uint32_t(1) << j);
      if (dij >= kUnusable || f[sub] >= kUnusable) continue;
      if (dij + f[sub] < best) {
        best = dij + f[sub];
        pick = j;
      }
    }
    f[mask] = best;
    choice[mask] = pick;
    work += k;
  }
  if (f[full] >= kUnusable) throw ContractViolation("defect cannot reach a partner or the boundary");
  std::vector<uint8_t> use(g.num_edges(), 0);
  auto walk = [&](const PathTree& t, uint32_t to) {
    for (uint32_t x = to; t.pred[x] != kBoundary;) {
      uint32_t e = t.pred[x];
      use[e] ^= 1;
      x = g.other(e, x);
    }
  };
  for (uint32_t mask = full; mask;) {
    int i = std::countr_zero(mask);
    int32_t j = choice[mask];
    mask &= ~(uint32_t(1) << i);
    if (j < 0) {
      walk(trees[static_cast<size_t>(i)], B);
    } else {
      walk(trees[static_cast<size_t>(i)], defects[static_cast<size_t>(j)]);
      mask &= ~(uint32_t(1) << j);
    }
  }
  std::vector<uint32_t> chosen;
  for (uint32_t e = 0; e < g.num_edges(); ++e)
    if (use[e]) chosen.push_back(e);
  return make_correction(g, std::move(chosen), work);
}

}  // namespace detail

inline constexpr size_t kExactMaxEdges = 24;
inline constexpr size_t kExactMaxDefects = 16;

// Minimum-weight correction. Exhaustive search over edge subsets for small
// graphs (ties: lexicographically smallest edge-id set), otherwise an exact
// dynamic program over defect pairings on shortest paths.
inline Correction exact_decode_small(const DecodingGraph& g, std::span<const uint32_t> defects) {
  auto flags = defect_flags(g, defects);
  std::vector<uint32_t> list;
  for (uint32_t i = 0; i < g.num_nodes(); ++i)
    if (flags[i]) list.push_back(i);
  if (list.empty()) return {};
  if (g.num_usable_edges() <= kExactMaxEdges) return detail::exact_brute_force(g, flags);
  if (list.size() <= kExactMaxDefects) return detail::exact_matching(g, list);
  throw SizeError("instance too large for the exact decoder: " + std::to_string(g.num_usable_edges()) + " edges, " +
                  std::to_string(list.size()) + " defects");
}

class UnionFindDecoder final : public Decoder {
 public:
  Correction decode(const DecodingGraph& g, std::span<const uint32_t> d) const override { return uf_decode(g, d); }
  std::string name() const override { return "uf"; }
};

class ExactDecoder final : public Decoder {
 public:
  Correction decode(const DecodingGraph& g, std::span<const uint32_t> d) const override {
    return exact_decode_small(g, d);
  }
  std::string name() const override { return "exact"; }
};

inline std::unique_ptr<Decoder> make_decoder(const std::string& name) {
  if (name == "uf") return std::make_unique<UnionFindDecoder>();
  if (name == "exact") return std::make_unique<ExactDecoder>();
  throw ConfigError("unknown decoder: " + name);
}

// Seam decoding runs the inner decoder on the 2-D interface graph.
inline Correction decode_seam_2d(const DecodingGraph& seam_graph, std::span<const uint32_t> seam_defects,
                                 const Decoder& inner) {
  return inner.decode(seam_graph, seam_defects);
}

inline Correction decode_seam_2d(const DecodingGraph& seam_graph, std::span<const uint32_t> seam_defects) {
  return uf_decode(seam_graph, seam_defects);
}

// Per-basis graph of a materialised model; node i is detector node_detector[i].
struct BasisGraph {
  DecodingGraph graph;
  std::vector<uint32_t> node_detector;
  std::vector<int32_t> detector_node;

  std::vector<uint32_t> defects_of(const std::vector<uint8_t>& detector_bits) const {
    std::vector<uint32_t> out;
    for (uint32_t i = 0; i < node_detector.size(); ++i)
      if (detector_bits[node_detector[i]]) out.push_back(i);
    return out;
  }
};

inline BasisGraph basis_graph(const DecodingModel& m, Basis b) {
  BasisGraph bg;
  bg.detector_node.assign(m.num_real_detectors(), -1);
  for (uint32_t d = 0; d < m.num_real_detectors(); ++d)
    if (m.detectors[d].basis == b) {
      bg.detector_node[d] = static_cast<int32_t>(bg.node_detector.size());
      bg.node_detector.push_back(d);
    }
  bg.graph = DecodingGraph(static_cast<uint32_t>(bg.node_detector.size()));
  for (const auto& s : m.subgraph(b)) {
    uint32_t u = static_cast<uint32_t>(bg.detector_node[s.detectors[0]]);
    uint32_t v = s.count == 2 ? static_cast<uint32_t>(bg.detector_node[s.detectors[1]]) : kBoundary;
    bg.graph.add_edge(u, v, edge_weight(s.probability), s.logical_mask);
  }
  return bg;
}

// Decodes both bases of a shot globally and returns the predicted logical flips.
inline uint64_t decode_global(const std::array<BasisGraph, 2>& graphs, const std::vector<uint8_t>& detector_bits,
                              const Decoder& dec, uint64_t* work = nullptr) {
  uint64_t flip = 0;
  for (const auto& bg : graphs) {
    auto c = dec.decode(bg.graph, bg.defects_of(detector_bits));
    flip ^= c.logical_flip;
    if (work) *work += c.work;
  }
  return flip;
}

inline std::array<BasisGraph, 2> basis_graphs(const DecodingModel& m) {
  return {basis_graph(m, Basis::Z), basis_graph(m, Basis::X)};
}

}  // namespace latte
