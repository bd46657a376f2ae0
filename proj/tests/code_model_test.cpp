#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "latte/code_model.hpp"
#include "latte/dem_io.hpp"

using namespace latte;

namespace {

std::set<std::pair<int, int>> as_set(const std::vector<std::pair<int, int>>& v) { return {v.begin(), v.end()}; }

std::vector<uint8_t> syndrome_of(const DecodingModel& m, const std::vector<uint32_t>& flipped) {
  std::vector<uint8_t> s(m.num_real_detectors(), 0);
  for (uint32_t e : flipped)
    for (uint32_t d : m.edges[e]) s[d] ^= 1;
  return s;
}

}  // namespace

TEST(CodePatch, Distance3Layout) {
  CodePatch p = build_surface_code(3);
  EXPECT_EQ(p.data_qubits().size(), 9u);
  EXPECT_EQ(as_set(p.z_stabilizers()), (std::set<std::pair<int, int>>{{1, 1}, {2, 2}, {0, 2}, {3, 1}}));
  EXPECT_EQ(as_set(p.x_stabilizers()), (std::set<std::pair<int, int>>{{2, 1}, {1, 2}, {1, 0}, {2, 3}}));
}

TEST(CodePatch, StabilizerCountsAndWeights) {
  for (int d : {3, 5, 7, 9}) {
    CodePatch p = build_surface_code(d);
    EXPECT_EQ(p.data_qubits().size(), static_cast<size_t>(d * d));
    EXPECT_EQ(p.num_stabilizers(), static_cast<size_t>(d * d - 1));
    int weight2 = 0;
    for (const auto& s : p.stabilizers()) {
      bool interior = s.x > 0 && s.y > 0 && s.x < d && s.y < d;
      EXPECT_EQ(s.support.size(), interior ? 4u : 2u);
      weight2 += s.support.size() == 2;
    }
    EXPECT_EQ(weight2, 2 * (d - 1));
  }
}

TEST(CodePatch, RejectsBadDistance) {
  EXPECT_THROW(build_surface_code(4), ConfigError);
  EXPECT_THROW(build_surface_code(1), ConfigError);
}

TEST(CodePatch, LogicalOperatorsCommuteWithStabilizers) {
  for (int d : {3, 5, 7}) {
    CodePatch p = build_surface_code(d);
    auto zl = p.logical_z_boundary();
    auto xl = p.logical_x_boundary();
    std::set<uint32_t> zs(zl.begin(), zl.end()), xs(xl.begin(), xl.end());
    for (const auto& s : p.stabilizers()) {
      int overlap = 0;
      for (uint32_t q : s.support) overlap += s.basis == Basis::X ? zs.count(q) : xs.count(q);
      EXPECT_EQ(overlap % 2, 0);
    }
    int anti = 0;
    for (uint32_t q : zl) anti += xs.count(q);
    EXPECT_EQ(anti % 2, 1);
  }
}

TEST(CodePatch, StabilityPatchZGraphIsClosed) {
  CodePatch p = build_stability_patch(4);
  EXPECT_EQ(p.num_stabilizers(), 17u);
  for (uint32_t q = 0; q < p.data_qubits().size(); ++q) EXPECT_EQ(p.neighbors(q, Basis::Z).size(), 2u);
}

TEST(Dem, EdgeCountsMatchHandEnumeration) {
  const int d = 3;
  const uint32_t rounds = 3;
  DecodingModel m = build_dem(build_surface_code(d), rounds, NoiseParams::uniform(0.001));
  CodePatch p = build_surface_code(d);
  // Independent enumeration from plaquette coordinates.
  auto zs = as_set(p.z_stabilizers());
  auto xs = as_set(p.x_stabilizers());
  int two_z = 0, two_x = 0;
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < d; ++i) {
      int nz = 0, nx = 0;
      for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
          nz += zs.count({i + dx, j + dy});
          nx += xs.count({i + dx, j + dy});
        }
      two_z += nz == 2;
      two_x += nx == 2;
    }
  int hooks = 0;
  for (auto [x, y] : zs) hooks += zs.count({x - 2, y});
  for (auto [x, y] : xs) hooks += xs.count({x, y - 2});
  auto c = m.count_by_kind();
  EXPECT_EQ(c[0], static_cast<size_t>(d * d * 3 * rounds));
  EXPECT_EQ(c[1], (zs.size() + xs.size()) * (rounds - 1));
  EXPECT_EQ(c[2], static_cast<size_t>((two_z + two_x) * (rounds - 1)));
  EXPECT_EQ(c[3], static_cast<size_t>(hooks * (rounds - 1)));
  EXPECT_EQ(c[0], 81u);
  EXPECT_EQ(c[1], 16u);
  EXPECT_EQ(c[2], 12u);
  EXPECT_EQ(c[3], 8u);
}

TEST(Dem, AllKindsPresentAndZeroNoise) {
  DecodingModel m = build_dem(build_surface_code(5), 2, NoiseParams{});
  auto c = m.count_by_kind();
  for (size_t k = 0; k < 4; ++k) EXPECT_GT(c[k], 0u);
  for (const auto& e : m.edges) EXPECT_EQ(e.probability, 0.0);
}

TEST(Dem, RejectsInvalidParameters) {
  CodePatch p = build_surface_code(3);
  EXPECT_THROW(build_dem(p, 0, NoiseParams::uniform(0.001)), ConfigError);
  EXPECT_THROW(build_dem(p, 3, NoiseParams{0.5, 0, 0, 0}), ConfigError);
  EXPECT_THROW(build_dem(p, 3, NoiseParams{0, 0, 0, -0.1}), ConfigError);
}

TEST(Dem, EdgeShapes) {
  DecodingModel m = build_dem(build_surface_code(5), 4, NoiseParams::uniform(0.001));
  for (const auto& e : m.edges) {
    ASSERT_GE(e.count, 1);
    ASSERT_LE(e.count, 4);
    if (e.kind == EdgeKind::V) {
      ASSERT_EQ(e.count, 2);
      const auto& a = m.detectors[e.detectors[0]];
      const auto& b = m.detectors[e.detectors[1]];
      EXPECT_EQ(a.x, b.x);
      EXPECT_EQ(a.y, b.y);
      EXPECT_EQ(a.t + 1, b.t);
      EXPECT_EQ(e.anchor.t, static_cast<int32_t>(a.t));
    }
    if (e.kind == EdgeKind::D || e.kind == EdgeKind::Hook) {
      ASSERT_EQ(e.count, 2);
      const auto& a = m.detectors[e.detectors[0]];
      const auto& b = m.detectors[e.detectors[1]];
      EXPECT_EQ(a.basis, b.basis);
      EXPECT_EQ(a.t + 1, b.t);
      EXPECT_TRUE(a.x != b.x || a.y != b.y);
      EXPECT_EQ(e.logical_mask, 0u);
    }
    if (e.kind == EdgeKind::Hook) {
      const auto& a = m.detectors[e.detectors[0]];
      EXPECT_EQ(e.anchor.x, a.x);
      EXPECT_EQ(e.anchor.y, a.y);
    }
  }
}

TEST(Dem, AnchorsInjectivePerChannel) {
  DecodingModel m = build_dem(build_surface_code(5), 5, NoiseParams::uniform(0.002));
  std::set<std::pair<uint32_t, int>> seen;
  for (const auto& e : m.edges) {
    EXPECT_GE(e.anchor.x, 0);
    EXPECT_LE(e.anchor.x, m.alpha);
    EXPECT_GE(e.anchor.y, 0);
    EXPECT_LE(e.anchor.y, m.beta);
    EXPECT_TRUE(seen.insert({linear_anchor(e.anchor, m.alpha, m.beta), static_cast<int>(e.anchor.channel)}).second);
  }
}

TEST(Dem, LogicalMasksOnBoundaries) {
  const int d = 5;
  DecodingModel m = build_dem(build_surface_code(d), 1, NoiseParams::uniform(0.001));
  for (const auto& e : m.edges) {
    if (e.kind != EdgeKind::H) continue;
    int i = e.anchor.x - 1, j = e.anchor.y - 1;
    bool x_part = e.pauli != Pauli::Z, z_part = e.pauli != Pauli::X;
    uint64_t expect = 0;
    if (x_part && j == 0) expect |= 1;  // X error on the Z_L row
    if (z_part && i == 0) expect |= 2;  // Z error on the X_L column
    EXPECT_EQ(e.logical_mask, expect) << i << "," << j;
  }
}

TEST(Decompose, YHyperedgeSplitsIntoOneEdgePerBasis) {
  DecodingModel m = build_dem(build_surface_code(5), 2, NoiseParams::uniform(0.001));
  int found = 0;
  for (const auto& e : m.edges) {
    if (e.kind != EdgeKind::H || e.pauli != Pauli::Y || e.count != 4) continue;
    ++found;
    ASSERT_GE(m.z_part[e.id], 0);
    ASSERT_GE(m.x_part[e.id], 0);
    const auto& z = m.z_subgraph[static_cast<size_t>(m.z_part[e.id])];
    const auto& x = m.x_subgraph[static_cast<size_t>(m.x_part[e.id])];
    EXPECT_EQ(z.count, 2);
    EXPECT_EQ(x.count, 2);
  }
  EXPECT_GT(found, 0);
}

TEST(Decompose, LosslessIncidence) {
  DecodingModel m = build_dem(build_surface_code(5), 3, NoiseParams::uniform(0.003));
  for (const auto& e : m.edges) {
    std::multiset<uint32_t> from_parts;
    uint64_t mask = 0;
    for (Basis b : {Basis::Z, Basis::X}) {
      int32_t p = m.part(b)[e.id];
      if (p < 0) continue;
      const auto& s = m.subgraph(b)[static_cast<size_t>(p)];
      for (uint8_t k = 0; k < s.count; ++k) from_parts.insert(s.detectors[k]);
      mask ^= s.logical_mask;
    }
    EXPECT_EQ(from_parts, std::multiset<uint32_t>(e.begin(), e.end()));
    EXPECT_EQ(mask, e.logical_mask);
  }
}

TEST(Decompose, RandomErrorSetsReproduceParityPerBasis) {
  DecodingModel m = build_dem(build_surface_code(3), 3, NoiseParams::uniform(0.003));
  rng::SplitMix g(7);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<uint32_t> flipped;
    for (const auto& e : m.edges)
      if (g.coin(0.05)) flipped.push_back(e.id);
    auto direct = syndrome_of(m, flipped);
    std::vector<uint8_t> via(m.num_real_detectors(), 0);
    for (uint32_t e : flipped)
      for (Basis b : {Basis::Z, Basis::X}) {
        int32_t p = m.part(b)[e];
        if (p < 0) continue;
        const auto& s = m.subgraph(b)[static_cast<size_t>(p)];
        for (uint8_t k = 0; k < s.count; ++k) via[s.detectors[k]] ^= 1;
      }
    ASSERT_EQ(direct, via);
  }
}

TEST(Dem, TranslationInvarianceInInterior) {
  const int d = 11;
  DecodingModel m = build_dem(build_surface_code(d), 5, NoiseParams::uniform(0.001));
  // Relative edge neighbourhood of every interior stabilizer at round 2.
  std::map<uint32_t, std::multiset<std::tuple<int, int, int, int, int>>> hoods;
  for (const auto& e : m.edges)
    for (uint32_t det : e) {
      const auto& c = m.detectors[det];
      if (c.t != 2) continue;
      if (c.x <= 3 || c.y <= 3 || c.x >= d - 3 || c.y >= d - 3) continue;
      hoods[det].insert({static_cast<int>(e.kind), static_cast<int>(e.pauli), e.anchor.x - c.x, e.anchor.y - c.y,
                         e.anchor.t - static_cast<int>(c.t)});
    }
  ASSERT_GT(hoods.size(), 4u);
  std::map<Basis, std::multiset<std::tuple<int, int, int, int, int>>> reference;
  for (const auto& [det, hood] : hoods) {
    Basis b = m.detectors[det].basis;
    auto [it, inserted] = reference.emplace(b, hood);
    if (!inserted) {
      EXPECT_EQ(it->second, hood);
    }
  }
}

TEST(DemIo, RoundTripIsByteIdentical) {
  DecodingModel m = build_dem(build_surface_code(3), 3, NoiseParams::uniform(0.001));
  std::stringstream a;
  write_ldem(m, a);
  std::string bytes = a.str();
  EXPECT_EQ(bytes.substr(0, 4), "LDEM");
  std::stringstream in(bytes);
  DecodingModel r = read_ldem(in);
  ASSERT_EQ(r.edges.size(), m.edges.size());
  for (size_t i = 0; i < m.edges.size(); ++i) {
    EXPECT_EQ(r.edges[i].anchor, m.edges[i].anchor);
    EXPECT_EQ(r.edges[i].logical_mask, m.edges[i].logical_mask);
  }
  EXPECT_EQ(r.z_subgraph.size(), m.z_subgraph.size());
  std::stringstream b;
  write_ldem(r, b);
  EXPECT_EQ(b.str(), bytes);
}

TEST(DemIo, RejectsBadMagic) {
  std::stringstream in("LDEX....");
  EXPECT_THROW(read_ldem(in), FormatError);
}

TEST(Surgery, SinglePatchMatchesMemoryModel) {
  SurgeryLayout l = make_chain_layout(1, 3);
  DecodingModel s = build_surgery_model(l, 3, NoiseParams::uniform(0.001));
  DecodingModel m = build_dem(build_surface_code(3), 3, NoiseParams::uniform(0.001));
  ASSERT_EQ(s.edges.size(), m.edges.size());
  for (size_t i = 0; i < s.edges.size(); ++i) {
    EXPECT_EQ(s.edges[i].detectors, m.edges[i].detectors);
    EXPECT_EQ(s.edges[i].logical_mask, m.edges[i].logical_mask);
    EXPECT_EQ(s.edges[i].anchor, m.edges[i].anchor);
  }
}

TEST(Surgery, TwoPatchJointObservable) {
  const int d = 3;
  SurgeryLayout l = make_chain_layout(2, d);
  DecodingModel m = build_surgery_model(l, 3, NoiseParams::uniform(0.001));
  EXPECT_EQ(m.beta, 2 * d + 1);
  EXPECT_EQ(m.num_observables(), 3u);
  // New Z plaquettes bordering ancilla row 3: rows 3 and 4.
  std::set<std::pair<int, int>> joint{{1, 3}, {3, 3}, {0, 4}, {2, 4}};
  CodePatch p = build_rectangular_patch(d, 2 * d + 1);
  std::set<std::pair<int, int>> found;
  for (const auto& s : p.stabilizers())
    if (s.basis == Basis::Z && (s.y == 3 || s.y == 4)) found.insert({s.x, s.y});
  EXPECT_EQ(found, joint);
  // Hand rule: an edge toggles the joint bit iff its error flips an odd number
  // of joint plaquettes at round 0.
  auto lat = m.lattice;
  int toggling = 0;
  for (const auto& e : m.edges) {
    int hits = 0;
    if (e.anchor.t == 0) {
      if (e.kind == EdgeKind::H && e.pauli != Pauli::Z) {
        int i = e.anchor.x - 1, j = e.anchor.y - 1;
        for (int dy = 0; dy <= 1; ++dy)
          for (int dx = 0; dx <= 1; ++dx) hits += joint.count({i + dx, j + dy});
      } else if (e.kind == EdgeKind::V || e.kind == EdgeKind::Hook) {
        hits += joint.count({e.anchor.x, e.anchor.y});
      } else if (e.kind == EdgeKind::D && e.anchor.channel == Channel::DX) {
        int q = p.data_at(e.anchor.x - 1, e.anchor.y - 1);
        auto nb = p.neighbors(static_cast<uint32_t>(q), Basis::Z);
        const auto& a = p.stabilizers()[nb[0]];
        hits += joint.count({a.x, a.y});
      }
    }
    bool bit = (e.logical_mask >> 2) & 1;
    EXPECT_EQ(bit, hits % 2 == 1) << to_string(e.kind) << " " << e.anchor.x << "," << e.anchor.y;
    toggling += bit;
    for (uint32_t det : e) {
      const auto& c = m.detectors[det];
      EXPECT_FALSE(c.t == 0 && joint.count({c.x, c.y}));
    }
  }
  EXPECT_GT(toggling, 0);
}

TEST(Surgery, SixteenPatchRegions) {
  SurgeryLayout l = make_chain_layout(16, 5);
  std::set<int> regions;
  for (int y = 0; y <= l.height(); ++y) regions.insert(l.region_of_row(y));
  EXPECT_EQ(regions.size(), 16u);
  DecodingModel m = build_surgery_model(l, 2, NoiseParams::uniform(0.001));
  EXPECT_EQ(m.num_observables(), 2u + 15u);
}

TEST(Surgery, RejectsOverlap) {
  SurgeryLayout l = make_chain_layout(2, 3);
  l.patches[1].y0 = 2;
  EXPECT_THROW(build_surgery_model(l, 3, NoiseParams::uniform(0.001)), ConfigError);
}

TEST(Stability, ObservableFromInitialCut) {
  DecodingModel m = build_stability_model(4, 3, NoiseParams::uniform(0.001));
  EXPECT_EQ(m.num_observables(), 1u);
  for (const auto& e : m.edges) {
    if (e.kind == EdgeKind::H && e.pauli != Pauli::Z && e.anchor.t == 0) {
      // Both Z neighbours are cut at round 0: the toggles cancel.
      EXPECT_EQ(e.logical_mask, 0u);
    }
    if (e.kind == EdgeKind::V && e.anchor.t == 0 && m.detectors[e.detectors[0]].basis == Basis::Z) {
      EXPECT_EQ(e.count, 1);
      EXPECT_EQ(e.logical_mask, 1u);
    }
  }
}
