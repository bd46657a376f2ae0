#pragma once

#include <istream>
#include <ostream>

#include "latte/binary_io.hpp"
#include "latte/code_model.hpp"

namespace latte {

inline constexpr uint16_t kLdemVersion = 1;

// Layout: "LDEM" | version u16 | alpha u32 | beta u32 | gamma u32 |
// detector count u32 | edge count u32 | observable count u8 | observable X-mask u64 |
// detectors (patch u16, x i32, y i32, t u32, basis u8, virtual u8) |
// edges (kind u8, pauli u8, prob f64, ids u32[4], mask u64, anchor u32, channel u8).
inline void write_ldem(const DecodingModel& m, std::ostream& os) {
  io::put_magic(os, "LDEM");
  io::put<uint16_t>(os, kLdemVersion);
  io::put<uint32_t>(os, static_cast<uint32_t>(m.alpha));
  io::put<uint32_t>(os, static_cast<uint32_t>(m.beta));
  io::put<uint32_t>(os, m.rounds);
  io::put<uint32_t>(os, static_cast<uint32_t>(m.detectors.size()));
  io::put<uint32_t>(os, static_cast<uint32_t>(m.edges.size()));
  io::put<uint8_t>(os, static_cast<uint8_t>(m.observable_bases.size()));
  io::put<uint64_t>(os, m.observable_mask(Basis::X));
  for (const auto& d : m.detectors) {
    io::put<uint16_t>(os, static_cast<uint16_t>(d.patch));
    io::put<int32_t>(os, d.x);
    io::put<int32_t>(os, d.y);
    io::put<uint32_t>(os, d.t);
    io::put<uint8_t>(os, static_cast<uint8_t>(d.basis));
    io::put<uint8_t>(os, d.is_virtual ? 1 : 0);
  }
  for (const auto& e : m.edges) {
    io::put<uint8_t>(os, static_cast<uint8_t>(e.kind));
    io::put<uint8_t>(os, static_cast<uint8_t>(e.pauli));
    io::put<double>(os, e.probability);
    for (uint32_t id : e.detectors) io::put<uint32_t>(os, id);
    io::put<uint64_t>(os, e.logical_mask);
    io::put<uint32_t>(os, linear_anchor(e.anchor, m.alpha, m.beta));
    io::put<uint8_t>(os, static_cast<uint8_t>(e.anchor.channel));
  }
  if (!os) throw FormatError("write failed");
}

inline DecodingModel read_ldem(std::istream& is) {
  io::expect_magic(is, "LDEM");
  if (io::get<uint16_t>(is) != kLdemVersion) throw FormatError("unsupported LDEM version");
  DecodingModel m;
  m.alpha = static_cast<int>(io::get<uint32_t>(is));
  m.beta = static_cast<int>(io::get<uint32_t>(is));
  m.rounds = io::get<uint32_t>(is);
  uint32_t nd = io::get<uint32_t>(is);
  uint32_t ne = io::get<uint32_t>(is);
  uint8_t nobs = io::get<uint8_t>(is);
  uint64_t xmask = io::get<uint64_t>(is);
  if (nobs > 64) throw FormatError("observable count out of range");
  for (uint8_t i = 0; i < nobs; ++i) m.observable_bases.push_back((xmask >> i) & 1 ? Basis::X : Basis::Z);
  m.detectors.resize(nd);
  for (auto& d : m.detectors) {
    d.patch = io::get<uint16_t>(is);
    d.x = io::get<int32_t>(is);
    d.y = io::get<int32_t>(is);
    d.t = io::get<uint32_t>(is);
    d.basis = static_cast<Basis>(io::get<uint8_t>(is) & 1);
    d.is_virtual = io::get<uint8_t>(is) != 0;
    if (!d.is_virtual) ++m.num_real;
  }
  const uint32_t plane = static_cast<uint32_t>((m.alpha + 1) * (m.beta + 1));
  m.edges.resize(ne);
  for (uint32_t i = 0; i < ne; ++i) {
    auto& e = m.edges[i];
    e.id = i;
    uint8_t kind = io::get<uint8_t>(is);
    uint8_t pauli = io::get<uint8_t>(is);
    if (kind > 3 || pauli > 3) throw FormatError("bad edge kind or pauli");
    e.kind = static_cast<EdgeKind>(kind);
    e.pauli = static_cast<Pauli>(pauli);
    e.probability = io::get<double>(is);
    for (auto& id : e.detectors) {
      id = io::get<uint32_t>(is);
      if (id != kNoDetector) {
        if (id >= nd) throw FormatError("detector id out of range");
        ++e.count;
      }
    }
    e.logical_mask = io::get<uint64_t>(is);
    uint32_t a = io::get<uint32_t>(is);
    uint8_t ch = io::get<uint8_t>(is);
    if (ch > 7) throw FormatError("bad channel");
    e.anchor = {static_cast<int32_t>(a % plane % static_cast<uint32_t>(m.alpha + 1)),
                static_cast<int32_t>(a % plane / static_cast<uint32_t>(m.alpha + 1)),
                static_cast<int32_t>(a / plane), static_cast<Channel>(ch)};
  }
  return decompose_hyperedges(std::move(m));
}

}  // namespace latte
