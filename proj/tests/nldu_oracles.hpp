#pragma once

// Independent reference implementations shared by the NLDU unit tests and the
// acceptance binary. Nothing here reuses the streaming engine's code paths.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "latte/nldu.hpp"

namespace latte::oracle {

using namespace latte::nldu;

inline QuantizedModel random_model(uint64_t seed, int k = 7) {
  std::mt19937_64 g(seed);
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(g); };
  std::vector<QLayer> ls;
  int chans[5] = {2, k, k, k, 6};
  for (int i = 0; i < 4; ++i) {
    QLayer l;
    l.in = static_cast<uint8_t>(chans[i]);
    l.out = static_cast<uint8_t>(chans[i + 1]);
    l.kz = l.ky = l.kx = static_cast<uint8_t>(i < 3 ? 3 : 1);
    l.weight_scale = 1.0f / float(uni(32, 96));
    l.act_scale = float(uni(5, 40)) / 100.0f;
    l.act_zero_point = i < 3 ? uni(0, 12) : uni(100, 150);
    for (int o = 0; o < l.out; ++o) l.bias.push_back(uni(-300, 300));
    for (size_t w = 0; w < l.weight_count(); ++w) l.weights.push_back(static_cast<int8_t>(uni(-60, 60)));
    ls.push_back(std::move(l));
  }
  return QuantizedModel(std::move(ls));
}

// Independent whole-volume forward pass: tensors are [t][y][x][c].
struct Volume {
  int w, h, t, c;
  std::vector<int> v;
  Volume(int w_, int h_, int t_, int c_, int fill) : w(w_), h(h_), t(t_), c(c_), v(size_t(w_ * h_ * t_ * c_), fill) {}
  int& at(int x, int y, int z, int ch) { return v[size_t(((z * h + y) * w + x) * c + ch)]; }
  int get(int x, int y, int z, int ch, int pad) const {
    if (x < 0 || y < 0 || z < 0 || x >= w || y >= h || z >= t) return pad;
    return v[size_t(((z * h + y) * w + x) * c + ch)];
  }
};

inline int64_t oracle_requant(int64_t acc, double real) {
  int e = 0;
  double f = std::frexp(real, &e);
  __int128 m = static_cast<__int128>(std::llround(std::ldexp(f, 31)));
  int sh = 31 - e;
  if (m == (__int128(1) << 31)) {
    m >>= 1;
    --sh;
  }
  __int128 p = __int128(acc) * m + (__int128(1) << (sh - 1));
  return static_cast<int64_t>(p >> sh);  // arithmetic shift = floor
}

inline Volume oracle_forward(const QuantizedModel& m, const Volume& in) {
  Volume cur = in;
  double in_scale = 1.0;
  int zin = 0;
  for (size_t li = 0; li < 4; ++li) {
    const QLayer& l = m.layer(li);
    double real = double(l.weight_scale) * in_scale / double(l.act_scale);
    Volume out(cur.w, cur.h, cur.t, l.out, 0);
    int r = l.kx / 2;
    for (int z = 0; z < cur.t; ++z)
      for (int y = 0; y < cur.h; ++y)
        for (int x = 0; x < cur.w; ++x)
          for (int o = 0; o < l.out; ++o) {
            int64_t acc = l.bias[size_t(o)];
            for (int i = 0; i < l.in; ++i)
              for (int dz = -r; dz <= r; ++dz)
                for (int dy = -r; dy <= r; ++dy)
                  for (int dx = -r; dx <= r; ++dx) {
                    int a = cur.get(x + dx, y + dy, z + dz, i, zin) - zin;
                    acc += int64_t(a) * l.weights[l.weight_index(o, i, dz + r, dy + r, dx + r)];
                  }
            int64_t q = oracle_requant(acc, real) + l.act_zero_point;
            if (li < 3 && q < l.act_zero_point) q = l.act_zero_point;
            out.at(x, y, z, o) = int(std::clamp<int64_t>(q, 0, 255));
          }
    cur = std::move(out);
    in_scale = l.act_scale;
    zin = l.act_zero_point;
  }
  return cur;
}

inline std::vector<std::vector<uint32_t>> random_rounds(const Lattice& l, uint32_t rounds, double density, uint64_t seed) {
  std::mt19937_64 g(seed);
  std::bernoulli_distribution b(density);
  std::vector<std::vector<uint32_t>> out(rounds);
  for (auto& r : out)
    for (uint32_t s = 0; s < l.num_stabilizers(); ++s)
      if (b(g)) r.push_back(s);
  return out;
}

// Global recompute: XOR every lattice edge selected by a prediction at its anchor.
struct Recompute {
  std::vector<std::vector<uint32_t>> residual;
  uint64_t logical = 0;
};

inline Recompute recompute(const Lattice& l, const std::vector<std::vector<uint32_t>>& raw, const std::vector<Compressed>& pred) {
  uint32_t n = l.num_stabilizers();
  std::vector<uint8_t> bits(size_t(n) * l.rounds(), 0);
  for (uint32_t t = 0; t < raw.size(); ++t)
    for (uint32_t s : raw[t]) bits[size_t(t) * n + s] ^= 1;
  Recompute out;
  l.for_each_edge(0, l.rounds(), [&](const EdgeSpec& e) {
    const Compressed& c = pred[size_t(e.anchor.t)];
    uint8_t b = c.at(e.anchor.x, e.anchor.y);
    bool take = false;
    switch (e.anchor.channel) {
      case Channel::X: take = (b & (kX | kZ)) == kX; break;
      case Channel::Y: take = (b & (kX | kZ)) == (kX | kZ); break;
      case Channel::Z: take = (b & (kX | kZ)) == kZ; break;
      case Channel::M: take = (b & kM) != 0; break;
      case Channel::H: take = (b & kH) != 0; break;
      default: break;
    }
    if (!take) return;
    for (uint32_t d : e) bits[d] ^= 1;
    out.logical ^= e.logical_mask;
  });
  out.residual.resize(raw.size());
  for (uint32_t t = 0; t < raw.size(); ++t)
    for (uint32_t s = 0; s < n; ++s)
      if (bits[size_t(t) * n + s]) out.residual[t].push_back(s);
  return out;
}

inline std::vector<Compressed> random_predictions(const Lattice& l, double density, std::mt19937_64& g) {
  std::bernoulli_distribution b(density);
  Rect grid = grid_of(l.patch());
  std::vector<Compressed> out;
  for (uint32_t t = 0; t < l.rounds(); ++t) {
    Compressed c(grid);
    for (auto& v : c.bits)
      for (uint8_t f : {kX, kZ, kM, kH})
        if (b(g)) v |= f;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace latte::oracle
