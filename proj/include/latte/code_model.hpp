#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "latte/common.hpp"

namespace latte {

enum class Side : uint8_t { Top = 0, Bottom = 1, Left = 2, Right = 3 };

struct DataQubit {
  int i = 0;
  int j = 0;
};

struct Stabilizer {
  int x = 0;
  int y = 0;
  Basis basis = Basis::Z;
  std::vector<uint32_t> support;  // data-qubit indices
};

struct VirtualVertex {
  int x = 0;
  int y = 0;
  Basis basis = Basis::Z;
  Side side = Side::Top;
};

// Rotated surface-code lattice. Stabilizers live on the (W+1) x (H+1) grid of
// plaquette corners; data qubit (i, j) occupies the cell with corners
// (i..i+1, j..j+1). Stabilizers are ordered by (y, x).
class CodePatch {
 public:
  CodePatch() = default;

  CodePatch(int width, int height, int z_parity, std::array<Basis, 4> sides)
      : width_(width), height_(height), z_parity_(z_parity), side_type_(sides) {
    if (width < 2 || height < 2) throw ConfigError("patch extent must be at least 2");
    for (int j = 0; j < height; ++j)
      for (int i = 0; i < width; ++i) data_.push_back({i, j});
    stab_index_.assign(static_cast<size_t>((width + 1) * (height + 1)), -1);
    for (int y = 0; y <= height; ++y) {
      for (int x = 0; x <= width; ++x) {
        Basis b = parity_basis(x, y);
        bool x_edge = x == 0 || x == width;
        bool y_edge = y == 0 || y == height;
        if (!x_edge && !y_edge) {
          add_stabilizer(x, y, b);
        } else if (x_edge && y_edge) {
          Side horizontal = y == 0 ? Side::Top : Side::Bottom;
          Side vertical = x == 0 ? Side::Left : Side::Right;
          if (side_type(horizontal) != b) {
            virtuals_.push_back({x, y, b, horizontal});
          } else if (side_type(vertical) != b) {
            virtuals_.push_back({x, y, b, vertical});
          }
        } else {
          Side s = y == 0 ? Side::Top : y == height ? Side::Bottom : x == 0 ? Side::Left : Side::Right;
          if (side_type(s) == b) {
            add_stabilizer(x, y, b);
          } else {
            virtuals_.push_back({x, y, b, s});
          }
        }
      }
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int distance() const { return std::min(width_, height_); }
  int z_parity() const { return z_parity_; }
  int alpha() const { return width_; }
  int beta() const { return height_; }
  Basis side_type(Side s) const { return side_type_[static_cast<int>(s)]; }

  Basis parity_basis(int x, int y) const { return ((x + y) & 1) == z_parity_ ? Basis::Z : Basis::X; }

  const std::vector<DataQubit>& data_qubits() const { return data_; }
  const std::vector<Stabilizer>& stabilizers() const { return stabs_; }
  const std::vector<VirtualVertex>& virtual_vertices() const { return virtuals_; }
  size_t num_stabilizers() const { return stabs_.size(); }

  bool in_grid(int x, int y) const { return x >= 0 && y >= 0 && x <= width_ && y <= height_; }

  int stabilizer_at(int x, int y) const {
    if (!in_grid(x, y)) return -1;
    return stab_index_[static_cast<size_t>(y * (width_ + 1) + x)];
  }

  int data_at(int i, int j) const {
    if (i < 0 || j < 0 || i >= width_ || j >= height_) return -1;
    return j * width_ + i;
  }

  std::vector<std::pair<int, int>> stabilizer_positions(Basis b) const {
    std::vector<std::pair<int, int>> out;
    for (const auto& s : stabs_)
      if (s.basis == b) out.emplace_back(s.x, s.y);
    return out;
  }
  std::vector<std::pair<int, int>> z_stabilizers() const { return stabilizer_positions(Basis::Z); }
  std::vector<std::pair<int, int>> x_stabilizers() const { return stabilizer_positions(Basis::X); }

  // Stabilizers of basis b at the corners of data qubit q, ordered by (y, x).
  std::vector<uint32_t> neighbors(uint32_t q, Basis b) const {
    std::vector<uint32_t> out;
    const auto& d = data_[q];
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        int s = stabilizer_at(d.i + dx, d.j + dy);
        if (s >= 0 && stabs_[static_cast<size_t>(s)].basis == b) out.push_back(static_cast<uint32_t>(s));
      }
    return out;
  }

  // Side of the lattice reached by an error on q that flips a single b-type stabilizer.
  std::optional<Side> boundary_side(uint32_t q, Basis b) const {
    const auto& d = data_[q];
    if (neighbors(q, b).size() != 1) return std::nullopt;
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        int x = d.i + dx, y = d.j + dy;
        if (parity_basis(x, y) != b || stabilizer_at(x, y) >= 0) continue;
        for (const auto& v : virtuals_)
          if (v.x == x && v.y == y) return v.side;
      }
    return std::nullopt;
  }

  // Data qubits supporting the canonical logical Z (top row) and logical X (left column).
  std::vector<uint32_t> logical_z_boundary() const {
    std::vector<uint32_t> out;
    for (int i = 0; i < width_; ++i) out.push_back(static_cast<uint32_t>(data_at(i, 0)));
    return out;
  }
  std::vector<uint32_t> logical_x_boundary() const {
    std::vector<uint32_t> out;
    for (int j = 0; j < height_; ++j) out.push_back(static_cast<uint32_t>(data_at(0, j)));
    return out;
  }

 private:
  void add_stabilizer(int x, int y, Basis b) {
    Stabilizer s{x, y, b, {}};
    for (int dy = -1; dy <= 0; ++dy)
      for (int dx = -1; dx <= 0; ++dx) {
        int q = data_at(x + dx, y + dy);
        if (q >= 0) s.support.push_back(static_cast<uint32_t>(q));
      }
    stab_index_[static_cast<size_t>(y * (width_ + 1) + x)] = static_cast<int>(stabs_.size());
    stabs_.push_back(std::move(s));
  }

  int width_ = 0;
  int height_ = 0;
  int z_parity_ = 0;
  std::array<Basis, 4> side_type_{};
  std::vector<DataQubit> data_;
  std::vector<Stabilizer> stabs_;
  std::vector<VirtualVertex> virtuals_;
  std::vector<int> stab_index_;
};

// Top and bottom host X plaquettes, left and right host Z plaquettes.
inline CodePatch build_rectangular_patch(int width, int height) {
  return CodePatch(width, height, 0, {Basis::X, Basis::X, Basis::Z, Basis::Z});
}

inline CodePatch build_surface_code(int d) {
  if (d < 3 || d % 2 == 0) throw ConfigError("distance must be odd and >= 3, got " + std::to_string(d));
  return build_rectangular_patch(d, d);
}

// All four sides host Z plaquettes, so the Z graph is spatially closed.
inline CodePatch build_stability_patch(int size) {
  if (size < 2 || size % 2 != 0) throw ConfigError("stability patch size must be even and >= 2");
  return CodePatch(size, size, 1, {Basis::Z, Basis::Z, Basis::Z, Basis::Z});
}

struct NoiseParams {
  double p_pauli = 0.0;
  double p_meas = 0.0;
  double p_diag = 0.0;
  double p_hook = 0.0;

  static NoiseParams uniform(double p) { return {p, p, p / 2, p / 2}; }

  void validate() const {
    for (double p : {p_pauli, p_meas, p_diag, p_hook})
      if (!(p >= 0.0 && p < 0.5)) throw ConfigError("noise probability must lie in [0, 0.5)");
  }
};

enum class EdgeKind : uint8_t { H = 0, V = 1, D = 2, Hook = 3 };

inline const char* to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::H: return "H";
    case EdgeKind::V: return "V";
    case EdgeKind::D: return "D";
    case EdgeKind::Hook: return "Hook";
  }
  return "?";
}

// Anchor channels: Pauli labels 0-3 share the data-qubit position, M and H sit
// on stabilizers, DX / DZ tag diagonal edges at the data-qubit position.
enum class Channel : uint8_t { I = 0, X = 1, Y = 2, Z = 3, M = 4, H = 5, DX = 6, DZ = 7 };

struct Anchor {
  int32_t x = 0;
  int32_t y = 0;
  int32_t t = 0;
  Channel channel = Channel::I;

  friend bool operator==(const Anchor&, const Anchor&) = default;
};

inline constexpr uint32_t kNoDetector = 0xffffffffu;

struct EdgeSpec {
  EdgeKind kind = EdgeKind::H;
  Pauli pauli = Pauli::I;
  double probability = 0.0;
  std::array<uint32_t, 4> detectors{kNoDetector, kNoDetector, kNoDetector, kNoDetector};
  uint8_t count = 0;
  uint64_t logical_mask = 0;
  Anchor anchor;

  const uint32_t* begin() const { return detectors.data(); }
  const uint32_t* end() const { return detectors.data() + count; }
  bool touches(uint32_t det) const { return std::find(begin(), end(), det) != end(); }
};

// How logical observables attach to the lattice: spatial boundary crossings
// and an initial time cut (stabilizers with no round-0 detector).
struct ObservableLayout {
  std::vector<Basis> bases;
  std::array<std::array<uint64_t, 4>, 2> boundary{};
  std::vector<uint64_t> initial_cut;   // per stabilizer, toggled when a round-0 key is dropped
  std::vector<uint8_t> cut;            // per stabilizer, 1 if round 0 has no detector
  std::vector<uint8_t> open_final;     // per stabilizer, 1 if the last round is not perfect

  static ObservableLayout memory(const CodePatch& p) {
    ObservableLayout o;
    o.bases = {Basis::Z, Basis::X};
    o.boundary[index_of(Basis::Z)][static_cast<int>(Side::Top)] = 1;
    o.boundary[index_of(Basis::X)][static_cast<int>(Side::Left)] = 2;
    o.initial_cut.assign(p.num_stabilizers(), 0);
    o.cut.assign(p.num_stabilizers(), 0);
    o.open_final.assign(p.num_stabilizers(), 0);
    return o;
  }
};

// Lazily enumerable detector error model. Detector index = t * n_stab + s.
class Lattice {
 public:
  Lattice(CodePatch patch, uint32_t rounds, NoiseParams noise, ObservableLayout obs)
      : patch_(std::move(patch)), rounds_(rounds), noise_(noise), obs_(std::move(obs)) {
    if (rounds == 0) throw ConfigError("rounds must be >= 1");
    noise_.validate();
    n_ = static_cast<uint32_t>(patch_.num_stabilizers());
    if (obs_.cut.size() != n_ || obs_.open_final.size() != n_ || obs_.initial_cut.size() != n_)
      throw ConfigError("observable layout does not match patch");
    if (obs_.bases.size() > 64) throw ConfigError("at most 64 logical observables");
    if (uint64_t(rounds) * n_ >= kNoDetector) throw SizeError("detector index space exhausted");
    const auto& data = patch_.data_qubits();
    for (uint32_t q = 0; q < data.size(); ++q) {
      for (Basis b : {Basis::Z, Basis::X}) {
        auto nb = patch_.neighbors(q, b);
        QubitInfo& qi = qinfo_[index_of(b)].emplace_back();
        qi.neighbors = nb;
        if (nb.size() == 1) {
          auto side = patch_.boundary_side(q, b);
          if (side) qi.boundary_mask = obs_.boundary[index_of(b)][static_cast<int>(*side)];
        }
      }
    }
    for (const auto& s : patch_.stabilizers()) {
      int partner = s.basis == Basis::Z ? patch_.stabilizer_at(s.x - 2, s.y) : patch_.stabilizer_at(s.x, s.y - 2);
      if (partner >= 0 && patch_.stabilizers()[static_cast<size_t>(partner)].basis != s.basis) partner = -1;
      hook_partner_.push_back(partner);
    }
  }

  const CodePatch& patch() const { return patch_; }
  uint32_t rounds() const { return rounds_; }
  const NoiseParams& noise() const { return noise_; }
  const ObservableLayout& observables() const { return obs_; }
  uint32_t num_stabilizers() const { return n_; }
  uint64_t num_detectors() const { return uint64_t(rounds_) * n_; }
  size_t num_observables() const { return obs_.bases.size(); }
  int alpha() const { return patch_.alpha(); }
  int beta() const { return patch_.beta(); }

  uint32_t detector(uint32_t s, uint32_t t) const { return t * n_ + s; }
  uint32_t stabilizer_of(uint32_t det) const { return det % n_; }
  uint32_t round_of(uint32_t det) const { return det / n_; }
  Basis basis_of(uint32_t det) const { return patch_.stabilizers()[det % n_].basis; }
  bool detector_exists(uint32_t det) const { return !(round_of(det) == 0 && obs_.cut[stabilizer_of(det)]); }

  // Stabilizer whose hook edge lands on s one round later, or -1.
  int hook_partner(uint32_t s) const { return hook_partner_[s]; }
  const std::vector<uint32_t>& qubit_neighbors(uint32_t q, Basis b) const { return qinfo_[index_of(b)][q].neighbors; }
  uint64_t qubit_boundary_mask(uint32_t q, Basis b) const { return qinfo_[index_of(b)][q].boundary_mask; }

  // Calls f(const EdgeSpec&) for every edge anchored in rounds [t_lo, t_hi).
  template <class F>
  void for_each_edge(uint32_t t_lo, uint32_t t_hi, F&& f) const {
    t_hi = std::min(t_hi, rounds_);
    const auto& data = patch_.data_qubits();
    const auto& stabs = patch_.stabilizers();
    for (uint32_t t = t_lo; t < t_hi; ++t) {
      for (uint32_t q = 0; q < data.size(); ++q) {
        for (Pauli p : {Pauli::X, Pauli::Y, Pauli::Z}) {
          EdgeBuilder e(*this, EdgeKind::H, p, noise_.p_pauli / 3.0);
          if (p != Pauli::Z) e.add_qubit_flip(q, Basis::Z, t);
          if (p != Pauli::X) e.add_qubit_flip(q, Basis::X, t);
          e.anchor(data[q].i + 1, data[q].j + 1, t, static_cast<Channel>(p));
          f(e.finish());
        }
      }
      for (uint32_t s = 0; s < n_; ++s) {
        if (t + 1 < rounds_ || obs_.open_final[s]) {
          EdgeBuilder e(*this, EdgeKind::V, Pauli::I, noise_.p_meas);
          e.add(s, t);
          if (t + 1 < rounds_) e.add(s, t + 1);
          e.anchor(stabs[s].x, stabs[s].y, t, Channel::M);
          f(e.finish());
        }
      }
      if (t + 1 >= rounds_) continue;
      for (uint32_t q = 0; q < data.size(); ++q) {
        for (Basis b : {Basis::Z, Basis::X}) {
          const auto& nb = qinfo_[index_of(b)][q].neighbors;
          if (nb.size() != 2) continue;
          bool x_error = b == Basis::Z;
          EdgeBuilder e(*this, EdgeKind::D, x_error ? Pauli::X : Pauli::Z, noise_.p_diag);
          e.add(nb[0], t);
          e.add(nb[1], t + 1);
          e.anchor(data[q].i + 1, data[q].j + 1, t, x_error ? Channel::DX : Channel::DZ);
          f(e.finish());
        }
      }
      for (uint32_t s = 0; s < n_; ++s) {
        int partner = hook_partner_[s];
        if (partner < 0) continue;
        EdgeBuilder e(*this, EdgeKind::Hook, Pauli::I, noise_.p_hook);
        e.add(s, t);
        e.add(static_cast<uint32_t>(partner), t + 1);
        e.anchor(stabs[s].x, stabs[s].y, t, Channel::H);
        f(e.finish());
      }
    }
  }

  std::vector<EdgeSpec> edges_in(uint32_t t_lo, uint32_t t_hi) const {
    std::vector<EdgeSpec> out;
    for_each_edge(t_lo, t_hi, [&](const EdgeSpec& e) { out.push_back(e); });
    return out;
  }

 private:
  struct QubitInfo {
    std::vector<uint32_t> neighbors;
    uint64_t boundary_mask = 0;
  };

  class EdgeBuilder {
   public:
    EdgeBuilder(const Lattice& l, EdgeKind k, Pauli p, double prob) : l_(l) {
      e_.kind = k;
      e_.pauli = p;
      e_.probability = prob;
    }
    void add(uint32_t s, uint32_t t) {
      if (t == 0 && l_.obs_.cut[s]) {
        e_.logical_mask ^= l_.obs_.initial_cut[s];
        return;
      }
      e_.detectors[e_.count++] = l_.detector(s, t);
    }
    void add_qubit_flip(uint32_t q, Basis b, uint32_t t) {
      const auto& qi = l_.qinfo_[index_of(b)][q];
      for (uint32_t s : qi.neighbors) add(s, t);
      e_.logical_mask ^= qi.boundary_mask;
    }
    void anchor(int x, int y, uint32_t t, Channel c) { e_.anchor = {x, y, static_cast<int32_t>(t), c}; }
    const EdgeSpec& finish() {
      std::sort(e_.detectors.begin(), e_.detectors.begin() + e_.count);
      return e_;
    }

   private:
    const Lattice& l_;
    EdgeSpec e_;
  };

  CodePatch patch_;
  uint32_t rounds_;
  NoiseParams noise_;
  ObservableLayout obs_;
  uint32_t n_ = 0;
  std::array<std::vector<QubitInfo>, 2> qinfo_;
  std::vector<int> hook_partner_;
};

struct DetectorId {
  uint32_t patch = 0;
  int32_t x = 0;
  int32_t y = 0;
  uint32_t t = 0;
  Basis basis = Basis::Z;
  bool is_virtual = false;

  friend bool operator==(const DetectorId&, const DetectorId&) = default;
};

struct DemEdge : EdgeSpec {
  uint32_t id = 0;
};

// Edge of a per-basis graph: one or two detectors (one means a boundary edge).
struct SubgraphEdge {
  std::array<uint32_t, 2> detectors{kNoDetector, kNoDetector};
  uint8_t count = 0;
  uint64_t logical_mask = 0;
  double probability = 0.0;
};

inline double combine_probability(double a, double b) { return a * (1 - b) + b * (1 - a); }

class DecodingModel {
 public:
  std::shared_ptr<const Lattice> lattice;  // null when loaded from a file
  std::vector<DetectorId> detectors;       // real detectors first, virtual vertices after
  std::vector<DemEdge> edges;
  std::vector<SubgraphEdge> z_subgraph;
  std::vector<SubgraphEdge> x_subgraph;
  std::vector<int32_t> z_part;  // per edge: index into z_subgraph or -1
  std::vector<int32_t> x_part;
  std::vector<Basis> observable_bases;
  uint32_t rounds = 0;
  int alpha = 0;
  int beta = 0;
  uint32_t num_real = 0;

  const std::vector<SubgraphEdge>& subgraph(Basis b) const { return b == Basis::Z ? z_subgraph : x_subgraph; }
  const std::vector<int32_t>& part(Basis b) const { return b == Basis::Z ? z_part : x_part; }
  uint32_t num_real_detectors() const { return num_real; }
  size_t num_observables() const { return observable_bases.size(); }

  uint64_t observable_mask(Basis b) const {
    uint64_t m = 0;
    for (size_t i = 0; i < observable_bases.size(); ++i)
      if (observable_bases[i] == b) m |= uint64_t(1) << i;
    return m;
  }

  std::array<size_t, 4> count_by_kind() const {
    std::array<size_t, 4> c{};
    for (const auto& e : edges) ++c[static_cast<size_t>(e.kind)];
    return c;
  }
};

// Fills the per-basis subgraphs. Parts with identical detector sets and masks
// are merged, combining independent probabilities.
inline DecodingModel decompose_hyperedges(DecodingModel m) {
  m.z_subgraph.clear();
  m.x_subgraph.clear();
  m.z_part.assign(m.edges.size(), -1);
  m.x_part.assign(m.edges.size(), -1);
  for (Basis b : {Basis::Z, Basis::X}) {
    auto& sub = b == Basis::Z ? m.z_subgraph : m.x_subgraph;
    auto& part = b == Basis::Z ? m.z_part : m.x_part;
    uint64_t obs = m.observable_mask(b);
    std::map<std::tuple<uint32_t, uint32_t, uint64_t>, int32_t> index;
    for (const auto& e : m.edges) {
      SubgraphEdge s;
      for (uint32_t d : e) {
        if (m.detectors[d].basis != b) continue;
        if (s.count == 2) throw ContractViolation("edge has more than two detectors in one basis");
        s.detectors[s.count++] = d;
      }
      s.logical_mask = e.logical_mask & obs;
      if (s.count == 0) continue;
      s.probability = e.probability;
      auto key = std::make_tuple(s.detectors[0], s.detectors[1], s.logical_mask);
      auto it = index.find(key);
      if (it == index.end()) {
        index.emplace(key, static_cast<int32_t>(sub.size()));
        part[e.id] = static_cast<int32_t>(sub.size());
        sub.push_back(s);
      } else {
        part[e.id] = it->second;
        auto& t = sub[static_cast<size_t>(it->second)];
        t.probability = combine_probability(t.probability, s.probability);
      }
    }
  }
  return m;
}

inline DecodingModel materialize(std::shared_ptr<const Lattice> lattice) {
  DecodingModel m;
  const Lattice& l = *lattice;
  const CodePatch& p = l.patch();
  m.rounds = l.rounds();
  m.alpha = p.alpha();
  m.beta = p.beta();
  m.observable_bases = l.observables().bases;
  m.num_real = static_cast<uint32_t>(l.num_detectors());
  m.detectors.reserve(m.num_real + p.virtual_vertices().size() * l.rounds());
  for (uint32_t t = 0; t < l.rounds(); ++t)
    for (const auto& s : p.stabilizers()) m.detectors.push_back({0, s.x, s.y, t, s.basis, false});
  for (uint32_t t = 0; t < l.rounds(); ++t)
    for (const auto& v : p.virtual_vertices()) m.detectors.push_back({0, v.x, v.y, t, v.basis, true});
  l.for_each_edge(0, l.rounds(), [&](const EdgeSpec& e) {
    DemEdge d;
    static_cast<EdgeSpec&>(d) = e;
    d.id = static_cast<uint32_t>(m.edges.size());
    m.edges.push_back(d);
  });
  m.lattice = std::move(lattice);
  return decompose_hyperedges(std::move(m));
}

inline std::shared_ptr<const Lattice> memory_lattice(const CodePatch& patch, uint32_t rounds, const NoiseParams& noise) {
  return std::make_shared<const Lattice>(patch, rounds, noise, ObservableLayout::memory(patch));
}

inline DecodingModel build_dem(const CodePatch& patch, uint32_t rounds, const NoiseParams& noise) {
  return materialize(memory_lattice(patch, rounds, noise));
}

// Observable is the product of every Z stabilizer at round 0; Z stabilizers
// are measured into an open final boundary.
inline std::shared_ptr<const Lattice> stability_lattice(int size, uint32_t rounds, const NoiseParams& noise) {
  CodePatch p = build_stability_patch(size);
  ObservableLayout o;
  o.bases = {Basis::Z};
  size_t n = p.num_stabilizers();
  o.initial_cut.assign(n, 0);
  o.cut.assign(n, 0);
  o.open_final.assign(n, 0);
  for (size_t s = 0; s < n; ++s) {
    if (p.stabilizers()[s].basis != Basis::Z) continue;
    o.initial_cut[s] = 1;
    o.cut[s] = 1;
    o.open_final[s] = 1;
  }
  return std::make_shared<const Lattice>(std::move(p), rounds, noise, std::move(o));
}

inline DecodingModel build_stability_model(int size, uint32_t rounds, const NoiseParams& noise) {
  return materialize(stability_lattice(size, rounds, noise));
}

struct PatchPlacement {
  int x0 = 0;
  int y0 = 0;
  int d = 3;
};

struct MergeRegion {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;
  int patch_a = 0;  // patch above
  int patch_b = 0;  // patch below
};

// Patches stacked vertically; every merge region is a one-row ancilla strip
// joining the bottom edge of one patch to the top edge of the next.
struct SurgeryLayout {
  std::vector<PatchPlacement> patches;
  std::vector<MergeRegion> merge_regions;
  std::string measured_operator;

  int distance() const { return patches.empty() ? 0 : patches.front().d; }
  int width() const { return distance(); }
  int height() const {
    int h = 0;
    for (const auto& p : patches) h = std::max(h, p.y0 + p.d);
    return h;
  }

  // Region of a stabilizer grid row: patch r plus the ancilla strip below it.
  int region_of_row(int y) const {
    int d = distance();
    return std::min(y / (d + 1), static_cast<int>(patches.size()) - 1);
  }
  int region_row_begin(int r) const { return r * (distance() + 1); }
  int region_row_end(int r) const {
    return r + 1 == static_cast<int>(patches.size()) ? height() + 1 : (r + 1) * (distance() + 1);
  }

  void validate() const {
    if (patches.empty()) throw ConfigError("layout has no patches");
    int d = distance();
    if (d < 3 || d % 2 == 0) throw ConfigError("patch distance must be odd and >= 3");
    for (size_t i = 0; i < patches.size(); ++i) {
      const auto& p = patches[i];
      if (p.d != d || p.x0 != 0) throw ConfigError("patches must share distance and column");
      if (p.y0 != static_cast<int>(i) * (d + 1)) throw ConfigError("overlapping or misaligned patch placements");
    }
    if (merge_regions.size() + 1 != patches.size()) throw ConfigError("chain layout needs k-1 merge regions");
    for (size_t m = 0; m < merge_regions.size(); ++m) {
      const auto& r = merge_regions[m];
      const auto& a = patches[m];
      if (r.patch_a != static_cast<int>(m) || r.patch_b != static_cast<int>(m) + 1 || r.x0 != 0 || r.width != d ||
          r.height != 1 || r.y0 != a.y0 + a.d)
        throw ConfigError("merge region is not an edge-adjacent ancilla strip");
    }
  }
};

inline SurgeryLayout make_chain_layout(int k, int d) {
  if (k < 1) throw ConfigError("need at least one patch");
  SurgeryLayout l;
  for (int i = 0; i < k; ++i) l.patches.push_back({0, i * (d + 1), d});
  for (int i = 0; i + 1 < k; ++i) l.merge_regions.push_back({0, i * (d + 1) + d, d, 1, i, i + 1});
  l.measured_operator = std::string(static_cast<size_t>(k), 'Z');
  l.validate();
  return l;
}

// Bits 0 and 1 are the merged patch's memory observables; bit 2 + m is the
// joint Z outcome of merge region m, the product of the new Z plaquettes
// bordering its ancilla row at round 0.
inline std::shared_ptr<const Lattice> surgery_lattice(const SurgeryLayout& layout, uint32_t rounds,
                                                     const NoiseParams& noise) {
  layout.validate();
  if (layout.merge_regions.size() > 62) throw ConfigError("too many merge regions");
  CodePatch p = build_rectangular_patch(layout.width(), layout.height());
  ObservableLayout o = ObservableLayout::memory(p);
  for (size_t m = 0; m < layout.merge_regions.size(); ++m) {
    int row = layout.merge_regions[m].y0;
    o.bases.push_back(Basis::Z);
    uint64_t bit = uint64_t(1) << (2 + m);
    for (size_t s = 0; s < p.num_stabilizers(); ++s) {
      const auto& st = p.stabilizers()[s];
      if (st.basis != Basis::Z || (st.y != row && st.y != row + 1)) continue;
      o.initial_cut[s] ^= bit;
      o.cut[s] = 1;
      o.open_final[s] = 1;
    }
  }
  return std::make_shared<const Lattice>(std::move(p), rounds, noise, std::move(o));
}

inline DecodingModel build_surgery_model(const SurgeryLayout& layout, uint32_t rounds, const NoiseParams& noise) {
  return materialize(surgery_lattice(layout, rounds, noise));
}

inline uint32_t linear_anchor(const Anchor& a, int alpha, int beta) {
  return static_cast<uint32_t>((a.t * (beta + 1) + a.y) * (alpha + 1) + a.x);
}

}  // namespace latte
