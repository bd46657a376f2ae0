#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <string>
#include <vector>

#include "latte/binary_io.hpp"
#include "latte/sampler.hpp"
#include "latte/scheduler.hpp"

namespace latte::nldu {

// ---------------------------------------------------------------------------
// Geometry

struct Rect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  Rect grow(int r) const { return {x0 - r, y0 - r, x1 + r, y1 + r}; }
  Rect clip(const Rect& o) const {
    return {std::max(x0, o.x0), std::max(y0, o.y0), std::min(x1, o.x1), std::min(y1, o.y1)};
  }
  bool covers(const Rect& o) const { return o.x0 >= x0 && o.y0 >= y0 && o.x1 <= x1 && o.y1 <= y1; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

// One round of a channels-last tensor over a rectangle of the patch grid.
struct Slice {
  Rect rect;
  int channels = 0;
  std::vector<uint8_t> v;

  Slice() = default;
  Slice(Rect r, int c, uint8_t fill = 0)
      : rect(r), channels(c), v(static_cast<size_t>(r.width() * r.height() * c), fill) {}
  size_t index(int x, int y, int c) const {
    return static_cast<size_t>(((y - rect.y0) * rect.width() + (x - rect.x0)) * channels + c);
  }
  uint8_t at(int x, int y, int c) const { return v[index(x, y, c)]; }
  uint8_t& at(int x, int y, int c) { return v[index(x, y, c)]; }
};

inline Rect grid_of(const CodePatch& p) { return {0, 0, p.width() + 1, p.height() + 1}; }

// ---------------------------------------------------------------------------
// Syndrome tensor: (alpha+1) x (beta+1) x gamma x 2, channel 0 = Z, 1 = X.

struct SyndromeTensor {
  int w = 0, h = 0, rounds = 0;
  std::vector<uint8_t> v;
  uint8_t at(int x, int y, int t, int c) const { return v[index(x, y, t, c)]; }
  uint8_t& at(int x, int y, int t, int c) { return v[index(x, y, t, c)]; }
  size_t index(int x, int y, int t, int c) const { return static_cast<size_t>(((t * h + y) * w + x) * 2 + c); }
};

inline Slice embed_round(const CodePatch& patch, const std::vector<uint32_t>& fired) {
  Slice s(grid_of(patch), 2);
  for (const auto& vv : patch.virtual_vertices()) s.at(vv.x, vv.y, index_of(vv.basis)) = 2;
  const auto& stabs = patch.stabilizers();
  for (uint32_t i : fired) {
    if (i >= stabs.size()) throw ContractViolation("stabilizer index outside patch");
    s.at(stabs[i].x, stabs[i].y, index_of(stabs[i].basis)) = 1;
  }
  return s;
}

inline SyndromeTensor embed(const CodePatch& patch, const std::vector<std::vector<uint32_t>>& rounds) {
  SyndromeTensor t;
  t.w = patch.width() + 1;
  t.h = patch.height() + 1;
  t.rounds = static_cast<int>(rounds.size());
  t.v.reserve(static_cast<size_t>(t.w * t.h * t.rounds * 2));
  for (const auto& r : rounds) {
    Slice s = embed_round(patch, r);
    t.v.insert(t.v.end(), s.v.begin(), s.v.end());
  }
  return t;
}

inline std::vector<std::vector<uint32_t>> extract(const CodePatch& patch, const SyndromeTensor& t) {
  if (t.w != patch.width() + 1 || t.h != patch.height() + 1) throw ContractViolation("tensor does not match patch");
  std::vector<std::vector<uint32_t>> out(static_cast<size_t>(t.rounds));
  const auto& stabs = patch.stabilizers();
  for (int r = 0; r < t.rounds; ++r)
    for (uint32_t i = 0; i < stabs.size(); ++i)
      if (t.at(stabs[i].x, stabs[i].y, r, index_of(stabs[i].basis)) == 1) out[static_cast<size_t>(r)].push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// Quantized model

struct QLayer {
  uint8_t in = 0, out = 0, kz = 1, ky = 1, kx = 1;
  float weight_scale = 1.0f;
  float act_scale = 1.0f;  // scale of this layer's output activations
  int32_t act_zero_point = 0;
  std::vector<int32_t> bias;  // [out]
  std::vector<int8_t> weights;  // [out][in][kz][ky][kx]

  size_t weight_index(int o, int i, int z, int y, int x) const {
    return static_cast<size_t>((((o * in + i) * kz + z) * ky + y) * kx + x);
  }
  size_t weight_count() const { return size_t(out) * in * kz * ky * kx; }
};

// Fixed-point form of a positive real multiplier: m * 2^-shift, m in [2^30, 2^31).
struct Requant {
  int32_t multiplier = 0;
  int shift = 0;

  static Requant from(double real) {
    if (!(real > 0.0) || !std::isfinite(real)) throw FormatError("requantization scale must be positive");
    int exp = 0;
    double frac = std::frexp(real, &exp);
    auto m = static_cast<int64_t>(std::llround(frac * double(int64_t(1) << 31)));
    if (m == (int64_t(1) << 31)) {
      m /= 2;
      ++exp;
    }
    Requant r;
    r.multiplier = static_cast<int32_t>(m);
    r.shift = 31 - exp;
    if (r.shift < 1 || r.shift > 62) throw FormatError("requantization scale out of range");
    return r;
  }

  // round(acc * real), half away from zero broken upward
  int64_t apply(int32_t acc) const {
    int64_t prod = int64_t(acc) * multiplier;
    return (prod + (int64_t(1) << (shift - 1))) >> shift;
  }
};

class QuantizedModel {
 public:
  QuantizedModel() = default;
  explicit QuantizedModel(std::vector<QLayer> layers) : layers_(std::move(layers)) { prepare(); }

  const std::vector<QLayer>& layers() const { return layers_; }
  const QLayer& layer(size_t i) const { return layers_[i]; }
  const Requant& requant(size_t i) const { return requant_[i]; }
  int32_t input_zero_point(size_t i) const { return i == 0 ? 0 : layers_[i - 1].act_zero_point; }
  std::array<int, 3> hidden() const { return {layers_[0].out, layers_[1].out, layers_[2].out}; }

  size_t parameter_count() const {
    size_t n = 0;
    for (const auto& l : layers_) n += l.weight_count() + l.bias.size();
    return n;
  }

  // Integer logit threshold equivalent to sigmoid(z) > 0.8, i.e. z > ln 4.
  int32_t theta_int() const {
    const auto& l = layers_.back();
    return static_cast<int32_t>(std::lround(std::log(4.0) / double(l.act_scale))) + l.act_zero_point;
  }

 private:
  void prepare() {
    if (layers_.size() != 4) throw FormatError("model must have 4 layers");
    const uint8_t kernels[4] = {3, 3, 3, 1};
    for (size_t i = 0; i < 4; ++i) {
      const auto& l = layers_[i];
      if (l.kz != kernels[i] || l.ky != kernels[i] || l.kx != kernels[i]) throw FormatError("unexpected kernel shape");
      if (l.in == 0 || l.out == 0) throw FormatError("empty layer");
      if (i > 0 && l.in != layers_[i - 1].out) throw FormatError("channel chain mismatch");
      if (l.bias.size() != l.out || l.weights.size() != l.weight_count()) throw FormatError("tensor size mismatch");
      if (l.act_zero_point < 0 || l.act_zero_point > 255) throw FormatError("zero point outside uint8");
      if (!(l.act_scale > 0.0f) || !(l.weight_scale > 0.0f)) throw FormatError("scales must be positive");
    }
    if (layers_[0].in != 2) throw FormatError("input must have 2 channels");
    if (layers_[3].out != 6) throw FormatError("output must have 6 channels");
    requant_.clear();
    double in_scale = 1.0;  // raw syndrome values 0/1/2
    for (const auto& l : layers_) {
      requant_.push_back(Requant::from(double(l.weight_scale) * in_scale / double(l.act_scale)));
      in_scale = l.act_scale;
    }
  }

  std::vector<QLayer> layers_;
  std::vector<Requant> requant_;
};

inline void write_lnw1(std::ostream& os, const QuantizedModel& m) {
  io::put_magic(os, "LNW1");
  io::put<uint8_t>(os, static_cast<uint8_t>(m.layers().size()));
  for (const auto& l : m.layers()) {
    for (uint8_t b : {l.in, l.out, l.kz, l.ky, l.kx}) io::put<uint8_t>(os, b);
    io::put<float>(os, l.weight_scale);
    io::put<float>(os, l.act_scale);
    io::put<int32_t>(os, l.act_zero_point);
    for (int32_t b : l.bias) io::put<int32_t>(os, b);
    for (int8_t w : l.weights) io::put<int8_t>(os, w);
  }
}

inline QuantizedModel read_lnw1(std::istream& is) {
  io::expect_magic(is, "LNW1");
  auto n = io::get<uint8_t>(is);
  std::vector<QLayer> layers(n);
  for (auto& l : layers) {
    l.in = io::get<uint8_t>(is);
    l.out = io::get<uint8_t>(is);
    l.kz = io::get<uint8_t>(is);
    l.ky = io::get<uint8_t>(is);
    l.kx = io::get<uint8_t>(is);
    l.weight_scale = io::get<float>(is);
    l.act_scale = io::get<float>(is);
    l.act_zero_point = io::get<int32_t>(is);
    l.bias.resize(l.out);
    for (auto& b : l.bias) b = io::get<int32_t>(is);
    l.weights.resize(l.weight_count());
    for (auto& w : l.weights) w = io::get<int8_t>(is);
  }
  return QuantizedModel(std::move(layers));
}

inline QuantizedModel load_lnw1(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open weights file: " + path);
  return read_lnw1(f);
}

// Table-shaped model with every weight and bias zero.
inline QuantizedModel zero_model(int k1 = 7, int k2 = 7, int k3 = 7) {
  std::vector<QLayer> ls;
  int chans[5] = {2, k1, k2, k3, 6};
  for (int i = 0; i < 4; ++i) {
    QLayer l;
    l.in = static_cast<uint8_t>(chans[i]);
    l.out = static_cast<uint8_t>(chans[i + 1]);
    l.kz = l.ky = l.kx = static_cast<uint8_t>(i < 3 ? 3 : 1);
    l.weight_scale = 1.0f / 64;
    l.act_scale = 1.0f / 16;
    l.act_zero_point = i < 3 ? 0 : 128;
    l.bias.assign(l.out, 0);
    l.weights.assign(l.weight_count(), 0);
    ls.push_back(std::move(l));
  }
  return QuantizedModel(std::move(ls));
}

// ---------------------------------------------------------------------------
// Streaming inference

namespace detail {

inline uint8_t saturate_u8(int64_t v) { return static_cast<uint8_t>(std::clamp<int64_t>(v, 0, 255)); }

// 3x3x3 "same" convolution of layer `li` producing `out_rect`. `prev`, `cur`,
// `next` are the input slices at t-1, t, t+1 (nullptr = temporal padding).
// Cells outside `grid` read as the input zero point.
inline Slice conv3(const QuantizedModel& m, size_t li, const Slice* prev, const Slice& cur, const Slice* next,
                   const Rect& out_rect, const Rect& grid) {
  const QLayer& l = m.layer(li);
  const Requant& rq = m.requant(li);
  const int32_t zin = m.input_zero_point(li);
  const bool relu = li < 3;
  const Slice* ts[3] = {prev, &cur, next};
  Slice out(out_rect, l.out, static_cast<uint8_t>(l.act_zero_point));
  std::vector<int32_t> acc(l.out);
  for (int y = out_rect.y0; y < out_rect.y1; ++y)
    for (int x = out_rect.x0; x < out_rect.x1; ++x) {
      if (!grid.contains(x, y)) continue;
      for (int o = 0; o < l.out; ++o) acc[static_cast<size_t>(o)] = l.bias[static_cast<size_t>(o)];
      for (int z = 0; z < 3; ++z) {
        const Slice* s = ts[z];
        if (!s) continue;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int xx = x + dx, yy = y + dy;
            if (!grid.contains(xx, yy)) continue;
            if (!s->rect.contains(xx, yy)) throw ContractViolation("inference input does not cover the halo");
            for (int i = 0; i < l.in; ++i) {
              int32_t a = int32_t(s->at(xx, yy, i)) - zin;
              if (a == 0) continue;
              for (int o = 0; o < l.out; ++o) acc[static_cast<size_t>(o)] += a * l.weights[l.weight_index(o, i, z, dy + 1, dx + 1)];
            }
          }
      }
      for (int o = 0; o < l.out; ++o) {
        int64_t q = rq.apply(acc[static_cast<size_t>(o)]) + l.act_zero_point;
        if (relu) q = std::max<int64_t>(q, l.act_zero_point);
        out.at(x, y, o) = saturate_u8(q);
      }
    }
  return out;
}

inline Slice conv1(const QuantizedModel& m, size_t li, const Slice& in, const Rect& grid) {
  const QLayer& l = m.layer(li);
  const Requant& rq = m.requant(li);
  const int32_t zin = m.input_zero_point(li);
  Slice out(in.rect, l.out, static_cast<uint8_t>(l.act_zero_point));
  for (int y = in.rect.y0; y < in.rect.y1; ++y)
    for (int x = in.rect.x0; x < in.rect.x1; ++x) {
      if (!grid.contains(x, y)) continue;
      for (int o = 0; o < l.out; ++o) {
        int32_t acc = l.bias[static_cast<size_t>(o)];
        for (int i = 0; i < l.in; ++i) acc += (int32_t(in.at(x, y, i)) - zin) * l.weights[l.weight_index(o, i, 0, 0, 0)];
        out.at(x, y, o) = saturate_u8(rq.apply(acc) + l.act_zero_point);
      }
    }
  return out;
}

}  // namespace detail

// Three pipelined stages (layer 1, layer 2, layers 3+4). Each stage emits
// round t once its input for t+1 arrives, so logits for round t leave after
// input round t+3. Stage i computes over the tile grown by 3-i cells; inputs
// must cover the tile grown by 3 (clipped to the grid).
class StreamingInference {
 public:
  StreamingInference(const QuantizedModel& m, Rect grid, Rect tile) : m_(m), grid_(grid), tile_(tile) {
    if (!grid.covers(tile) || tile.width() <= 0 || tile.height() <= 0) throw ContractViolation("tile outside grid");
  }
  StreamingInference(const QuantizedModel& m, Rect grid) : StreamingInference(m, grid, grid) {}

  Rect input_rect() const { return tile_.grow(3).clip(grid_); }

  // Returns logits (6 channels over the tile) for the rounds completed by this input.
  std::vector<Slice> push(Slice in) {
    if (!in.rect.covers(input_rect()) || in.channels != 2) throw ContractViolation("input slice does not cover the halo");
    std::vector<Slice> out;
    feed(0, std::move(in), out);
    return out;
  }

  // Flushes the pipeline at end of stream without idle periods.
  std::vector<Slice> finish() {
    std::vector<Slice> out;
    for (size_t s = 0; s < 3; ++s) flush(s, out);
    return out;
  }

  uint64_t rounds_in() const { return rounds_in_; }

 private:
  struct Stage {
    std::optional<Slice> prev, cur;
  };

  Rect stage_rect(size_t s) const { return tile_.grow(static_cast<int>(2 - s)).clip(grid_); }

  Slice compute(size_t s, const Slice* prev, const Slice& cur, const Slice* next) const {
    Slice o = detail::conv3(m_, s, prev, cur, next, stage_rect(s), grid_);
    if (s == 2) o = detail::conv1(m_, 3, o, grid_);
    return o;
  }

  void feed(size_t s, Slice in, std::vector<Slice>& out) {
    if (s == 0) ++rounds_in_;
    Stage& st = stages_[s];
    if (st.cur) {
      Slice r = compute(s, st.prev ? &*st.prev : nullptr, *st.cur, &in);
      st.prev = std::move(st.cur);
      st.cur = std::move(in);
      emit(s, std::move(r), out);
    } else {
      st.cur = std::move(in);
    }
  }

  void flush(size_t s, std::vector<Slice>& out) {
    Stage& st = stages_[s];
    if (!st.cur) return;
    Slice r = compute(s, st.prev ? &*st.prev : nullptr, *st.cur, nullptr);
    st.prev.reset();
    st.cur.reset();
    emit(s, std::move(r), out);
  }

  void emit(size_t s, Slice r, std::vector<Slice>& out) {
    if (s == 2) out.push_back(std::move(r));
    else feed(s + 1, std::move(r), out);
  }

  const QuantizedModel& m_;
  Rect grid_, tile_;
  std::array<Stage, 3> stages_;
  uint64_t rounds_in_ = 0;
};

// ---------------------------------------------------------------------------
// Classification and syndrome update

enum CompressedBit : uint8_t { kX = 1, kZ = 2, kM = 4, kH = 8 };

// One round of [X, Z, M, H] bits per grid cell (bit flags, see CompressedBit).
struct Compressed {
  Rect rect;
  std::vector<uint8_t> bits;
  Compressed() = default;
  explicit Compressed(Rect r) : rect(r), bits(static_cast<size_t>(r.width() * r.height()), 0) {}
  uint8_t at(int x, int y) const {
    return bits[static_cast<size_t>((y - rect.y0) * rect.width() + (x - rect.x0))];
  }
  uint8_t& at(int x, int y) { return bits[static_cast<size_t>((y - rect.y0) * rect.width() + (x - rect.x0))]; }
};

inline uint8_t classify_cell(const uint8_t* logits, int32_t theta) {
  int best = 0;
  for (int c = 1; c < 4; ++c)
    if (logits[c] > logits[best]) best = c;
  uint8_t e = 0;
  if (best == 1 || best == 2) e |= kX;
  if (best == 3 || best == 2) e |= kZ;
  if (int32_t(logits[4]) > theta) e |= kM;
  if (int32_t(logits[5]) > theta) e |= kH;
  return e;
}

inline Compressed classify(const Slice& logits, int32_t theta) {
  if (logits.channels != 6) throw ContractViolation("prediction slice must have 6 channels");
  Compressed c(logits.rect);
  for (int y = logits.rect.y0; y < logits.rect.y1; ++y)
    for (int x = logits.rect.x0; x < logits.rect.x1; ++x) c.at(x, y) = classify_cell(&logits.v[logits.index(x, y, 0)], theta);
  return c;
}

// Which grid cells may carry each prediction type in a given round.
class AnchorMap {
 public:
  explicit AnchorMap(const Lattice& l) : l_(l), grid_(grid_of(l.patch())) {
    const auto& p = l.patch();
    qubit_.assign(cells(), -1);
    stab_.assign(cells(), -1);
    for (uint32_t q = 0; q < p.data_qubits().size(); ++q) {
      const auto& d = p.data_qubits()[q];
      qubit_[cell(d.i + 1, d.j + 1)] = static_cast<int32_t>(q);
    }
    for (uint32_t s = 0; s < p.stabilizers().size(); ++s) stab_[cell(p.stabilizers()[s].x, p.stabilizers()[s].y)] = static_cast<int32_t>(s);
    inverse_hook_.assign(p.stabilizers().size(), -1);
    for (uint32_t s = 0; s < p.stabilizers().size(); ++s) {
      int h = l.hook_partner(s);
      if (h >= 0) inverse_hook_[static_cast<size_t>(h)] = static_cast<int32_t>(s);
    }
  }

  const Lattice& lattice() const { return l_; }
  Rect grid() const { return grid_; }
  int32_t qubit_at(int x, int y) const { return grid_.contains(x, y) ? qubit_[cell(x, y)] : -1; }
  int32_t stabilizer_at(int x, int y) const { return grid_.contains(x, y) ? stab_[cell(x, y)] : -1; }
  int32_t hook_source(uint32_t s) const { return inverse_hook_[s]; }

  // Mask of the accepted-prediction bits that correspond to real edges.
  uint8_t valid(int x, int y, uint32_t t) const {
    uint8_t m = 0;
    if (qubit_at(x, y) >= 0) m |= kX | kZ;
    int32_t s = stabilizer_at(x, y);
    if (s >= 0) {
      if (t + 1 < l_.rounds() || l_.observables().open_final[static_cast<size_t>(s)]) m |= kM;
      if (t + 1 < l_.rounds() && l_.hook_partner(static_cast<uint32_t>(s)) >= 0) m |= kH;
    }
    return m;
  }

 private:
  size_t cells() const { return static_cast<size_t>(grid_.width() * grid_.height()); }
  size_t cell(int x, int y) const { return static_cast<size_t>(y * grid_.width() + x); }

  const Lattice& l_;
  Rect grid_;
  std::vector<int32_t> qubit_, stab_, inverse_hook_;
};

// Logical flips of the accepted predictions anchored at cell (x, y), round t.
inline uint64_t prediction_mask(const AnchorMap& am, int x, int y, uint32_t t, uint8_t bits) {
  const Lattice& l = am.lattice();
  const auto& obs = l.observables();
  bits &= am.valid(x, y, t);
  uint64_t mask = 0;
  auto cut_toggle = [&](uint32_t s, uint32_t tt) {
    if (tt == 0 && obs.cut[s]) mask ^= obs.initial_cut[s];
  };
  if (bits & (kX | kZ)) {
    auto q = static_cast<uint32_t>(am.qubit_at(x, y));
    if (bits & kX) {
      mask ^= l.qubit_boundary_mask(q, Basis::Z);
      for (uint32_t s : l.qubit_neighbors(q, Basis::Z)) cut_toggle(s, t);
    }
    if (bits & kZ) {
      mask ^= l.qubit_boundary_mask(q, Basis::X);
      for (uint32_t s : l.qubit_neighbors(q, Basis::X)) cut_toggle(s, t);
    }
  }
  if (bits & (kM | kH)) {
    auto s = static_cast<uint32_t>(am.stabilizer_at(x, y));
    if (bits & kM) cut_toggle(s, t);
    if (bits & kH) cut_toggle(s, t);
  }
  return mask;
}

// Residual detector bit of stabilizer s in round t, from the raw bit and the
// accepted predictions of rounds t and t-1 in its neighbourhood.
inline bool residual_bit(const AnchorMap& am, uint32_t s, uint32_t t, bool raw, const Compressed& now,
                         const Compressed* before) {
  const Lattice& l = am.lattice();
  const auto& st = l.patch().stabilizers()[s];
  bool b = raw;
  auto get = [&](const Compressed& c, int x, int y, uint32_t tt) -> uint8_t {
    if (!am.grid().contains(x, y)) return 0;
    if (!c.rect.contains(x, y)) throw ContractViolation("post-processing halo missing");
    return c.at(x, y) & am.valid(x, y, tt);
  };
  b ^= (get(now, st.x, st.y, t) & kM) != 0;
  b ^= (get(now, st.x, st.y, t) & kH) != 0;
  if (t > 0 && before) {
    b ^= (get(*before, st.x, st.y, t - 1) & kM) != 0;
    int32_t src = am.hook_source(s);
    if (src >= 0) {
      const auto& hs = l.patch().stabilizers()[static_cast<size_t>(src)];
      b ^= (get(*before, hs.x, hs.y, t - 1) & kH) != 0;
    }
  }
  const uint8_t flips = st.basis == Basis::Z ? kX : kZ;  // X errors flip Z checks
  const auto& data = l.patch().data_qubits();
  for (uint32_t q : st.support) b ^= (get(now, data[q].i + 1, data[q].j + 1, t) & flips) != 0;
  return b;
}

struct PostResult {
  std::vector<uint32_t> residual;  // per-round stabilizer indices, ascending
  uint64_t local_logical = 0;
};

// Updates round t for stabilizers whose cell lies in `region` and accumulates
// the masks of predictions anchored in `region`.
inline PostResult post_process_round(const AnchorMap& am, uint32_t t, const std::vector<uint32_t>& raw,
                                     const Compressed& now, const Compressed* before, const Rect& region) {
  const Lattice& l = am.lattice();
  const auto& stabs = l.patch().stabilizers();
  std::vector<uint8_t> fired(stabs.size(), 0);
  for (uint32_t s : raw) fired.at(s) = 1;
  PostResult r;
  for (uint32_t s = 0; s < stabs.size(); ++s) {
    if (!region.contains(stabs[s].x, stabs[s].y)) continue;
    if (t == 0 && l.observables().cut[s]) continue;  // no detector
    if (residual_bit(am, s, t, fired[s], now, before)) r.residual.push_back(s);
  }
  for (int y = region.y0; y < region.y1; ++y)
    for (int x = region.x0; x < region.x1; ++x)
      if (uint8_t b = now.at(x, y)) r.local_logical ^= prediction_mask(am, x, y, t, b);
  return r;
}

// ---------------------------------------------------------------------------
// Board tiling with halo exchange

struct BoardStats {
  uint64_t pre_halo_cells = 0;   // input cells received from neighbouring boards
  uint64_t post_halo_cells = 0;  // prediction cells received from neighbouring boards
};

// The grid split into N x N boards (edge boards may be smaller). Each board
// runs its own pipeline on its tile plus a 3-cell input halo and a 2-cell
// prediction halo.
class BoardArray {
 public:
  BoardArray(const QuantizedModel& m, const Lattice& l, int n) : m_(m), am_(l), theta_(m.theta_int()) {
    Rect g = am_.grid();
    if (n <= 0) n = std::max(g.width(), g.height());
    for (int y = 0; y < g.height(); y += n)
      for (int x = 0; x < g.width(); x += n) tiles_.push_back(Rect{x, y, x + n, y + n}.clip(g));
    for (const auto& t : tiles_) pipes_.emplace_back(m_, g, t);
  }

  size_t boards() const { return tiles_.size(); }
  const std::vector<Rect>& tiles() const { return tiles_; }
  const AnchorMap& anchors() const { return am_; }
  const BoardStats& stats() const { return stats_; }

  // Feeds raw round t; returns the residual rounds completed by it.
  std::vector<FilteredRound> push(const RoundRecord& raw) {
    if (raw.round != next_in_) throw ContractViolation("rounds must arrive in order");
    ++next_in_;
    raws_.emplace_back(raw.detectors.begin(), raw.detectors.end());
    Slice full = embed_round(am_.lattice().patch(), raws_.back());
    std::vector<std::vector<Slice>> outs(tiles_.size());
    for (size_t b = 0; b < tiles_.size(); ++b) outs[b] = pipes_[b].push(gather(full, b));
    return collect(outs);
  }

  std::vector<FilteredRound> finish() {
    std::vector<std::vector<Slice>> outs(tiles_.size());
    for (size_t b = 0; b < tiles_.size(); ++b) outs[b] = pipes_[b].finish();
    return collect(outs);
  }

  // Compressed predictions of the last emitted round, over the whole grid.
  const Compressed& last_compressed() const { return prev_; }

 private:
  // Pre-inference exchange: the board's own cells plus the 3-cell border of its neighbours.
  Slice gather(const Slice& full, size_t b) {
    Rect need = pipes_[b].input_rect();
    Slice s(need, 2);
    for (int y = need.y0; y < need.y1; ++y)
      for (int x = need.x0; x < need.x1; ++x) {
        for (int c = 0; c < 2; ++c) s.at(x, y, c) = full.at(x, y, c);
        if (!tiles_[b].contains(x, y)) ++stats_.pre_halo_cells;
      }
    return s;
  }

  std::vector<FilteredRound> collect(std::vector<std::vector<Slice>>& outs) {
    std::vector<FilteredRound> res;
    size_t k = outs.empty() ? 0 : outs[0].size();
    for (const auto& o : outs)
      if (o.size() != k) throw ContractViolation("boards out of lockstep");
    for (size_t i = 0; i < k; ++i) {
      // Each board classifies its own tile.
      std::vector<Compressed> own;
      for (size_t b = 0; b < tiles_.size(); ++b) own.push_back(classify(outs[b][i], theta_));
      const uint32_t t = next_out_++;
      Compressed whole(am_.grid());
      for (size_t b = 0; b < tiles_.size(); ++b)
        for (int y = tiles_[b].y0; y < tiles_[b].y1; ++y)
          for (int x = tiles_[b].x0; x < tiles_[b].x1; ++x) whole.at(x, y) = own[b].at(x, y);
      FilteredRound fr;
      fr.record.patch = 0;
      fr.record.round = t;
      for (size_t b = 0; b < tiles_.size(); ++b) {
        // Post-inference exchange: predictions within two cells of the tile.
        Rect halo = tiles_[b].grow(2).clip(am_.grid());
        Compressed now = window(whole, halo, b), before;
        if (t > 0) before = window(prev_, halo, b);
        auto pr = post_process_round(am_, t, raws_.front(), now, t > 0 ? &before : nullptr, tiles_[b]);
        fr.record.detectors.insert(fr.record.detectors.end(), pr.residual.begin(), pr.residual.end());
        fr.local_logical ^= pr.local_logical;
      }
      std::sort(fr.record.detectors.begin(), fr.record.detectors.end());
      raws_.pop_front();
      prev_ = std::move(whole);
      res.push_back(std::move(fr));
    }
    return res;
  }

  Compressed window(const Compressed& whole, const Rect& r, size_t b) {
    Compressed c(r);
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) {
        c.at(x, y) = whole.at(x, y);
        if (!tiles_[b].contains(x, y)) ++stats_.post_halo_cells;
      }
    return c;
  }

  const QuantizedModel& m_;
  AnchorMap am_;
  int32_t theta_;
  std::vector<Rect> tiles_;
  std::vector<StreamingInference> pipes_;
  std::deque<std::vector<uint32_t>> raws_;
  Compressed prev_;
  uint32_t next_in_ = 0, next_out_ = 0;
  BoardStats stats_;
};

// Stream transformer for the scheduler: raw rounds in, residual rounds out.
class NlduFilter : public RoundFilter {
 public:
  NlduFilter(const QuantizedModel& m, const Lattice& l, int board_extent = 0) : boards_(m, l, board_extent) {}
  std::vector<FilteredRound> push(const RoundRecord& raw) override { return boards_.push(raw); }
  std::vector<FilteredRound> finish() override { return boards_.finish(); }
  const BoardArray& boards() const { return boards_; }

 private:
  BoardArray boards_;
};

struct NlduOutput {
  std::vector<std::vector<uint32_t>> residual;
  uint64_t local_logical = 0;
  uint64_t raw_bits = 0, residual_bits = 0;
};

// Whole-stream convenience: push every round, then flush.
inline NlduOutput apply_nldu(const QuantizedModel& m, const Lattice& l, const std::vector<std::vector<uint32_t>>& rounds,
                             int board_extent = 0) {
  BoardArray boards(m, l, board_extent);
  NlduOutput out;
  auto take = [&](std::vector<FilteredRound> v) {
    for (auto& f : v) {
      out.residual_bits += f.record.detectors.size();
      out.local_logical ^= f.local_logical;
      out.residual.emplace_back(f.record.detectors.begin(), f.record.detectors.end());
    }
  };
  for (uint32_t t = 0; t < rounds.size(); ++t) {
    out.raw_bits += rounds[t].size();
    RoundRecord r;
    r.round = t;
    r.detectors.assign(rounds[t].begin(), rounds[t].end());
    take(boards.push(r));
  }
  take(boards.finish());
  return out;
}

// ---------------------------------------------------------------------------
// Training dataset ("LNDS")

struct Cell {
  uint16_t x = 0, y = 0, t = 0;
  uint8_t c = 0;  // input: 0 = Z, 1 = X. label: Channel value (X, Y, Z, M, H)
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct DatasetSample {
  std::vector<Cell> inputs;  // cells with value 1
  std::vector<Cell> labels;  // one per anchor with a non-trivial class
  friend bool operator==(const DatasetSample&, const DatasetSample&) = default;
};

struct Dataset {
  uint32_t alpha = 0, beta = 0, rounds = 0;
  double p = 0;
  std::vector<Cell> virtuals;        // value-2 cells, identical in every round
  std::vector<uint8_t> valid_inner;  // per grid cell: valid prediction bits for t + 1 < rounds
  std::vector<uint8_t> valid_last;   // same for the final round
  std::vector<DatasetSample> samples;
};

// Input cells and anchor labels of one sampled history. Pauli labels at the
// same anchor compose (X then Z is Y). A diagonal edge is labelled as the
// Pauli flip at its qubit plus a measurement error on the later endpoint's
// stabilizer, which flips the same detector pair.
inline DatasetSample make_sample(const Lattice& l, uint64_t seed) {
  const uint32_t n = l.num_stabilizers();
  std::vector<uint8_t> bits(l.num_detectors(), 0);
  std::map<std::tuple<int, int, int>, uint8_t> pauli;
  std::set<std::tuple<int, int, int, int>> toggles;
  auto toggle = [&](int t, int y, int x, Channel c) {
    auto key = std::make_tuple(t, y, x, static_cast<int>(c));
    if (!toggles.erase(key)) toggles.insert(key);
  };
  const auto& stabs = l.patch().stabilizers();
  l.for_each_edge(0, l.rounds(), [&](const EdgeSpec& e) {
    if (!edge_fires(e, seed)) return;
    for (uint32_t d : e) bits[d] ^= 1;
    const auto& a = e.anchor;
    switch (a.channel) {
      case Channel::DX:
      case Channel::DZ: {
        bool x_err = a.channel == Channel::DX;
        pauli[{a.t, a.y, a.x}] ^= x_err ? kX : kZ;
        auto q = static_cast<uint32_t>(l.patch().data_at(a.x - 1, a.y - 1));
        const auto& later = stabs[l.qubit_neighbors(q, x_err ? Basis::Z : Basis::X)[1]];
        toggle(a.t, later.y, later.x, Channel::M);
        break;
      }
      case Channel::X: pauli[{a.t, a.y, a.x}] ^= kX; break;
      case Channel::Y: pauli[{a.t, a.y, a.x}] ^= kX | kZ; break;
      case Channel::Z: pauli[{a.t, a.y, a.x}] ^= kZ; break;
      case Channel::M:
      case Channel::H: toggle(a.t, a.y, a.x, a.channel); break;
      default: break;
    }
  });
  DatasetSample s;
  for (uint32_t d = 0; d < bits.size(); ++d)
    if (bits[d]) {
      const auto& st = stabs[d % n];
      s.inputs.push_back({uint16_t(st.x), uint16_t(st.y), uint16_t(d / n), uint8_t(index_of(st.basis))});
    }
  for (const auto& [k, v] : pauli) {
    if (!v) continue;
    auto [t, y, x] = k;
    Channel c = v == kX ? Channel::X : v == kZ ? Channel::Z : Channel::Y;
    s.labels.push_back({uint16_t(x), uint16_t(y), uint16_t(t), uint8_t(c)});
  }
  for (const auto& [t, y, x, c] : toggles) s.labels.push_back({uint16_t(x), uint16_t(y), uint16_t(t), uint8_t(c)});
  std::sort(s.labels.begin(), s.labels.end(), [](const Cell& a, const Cell& b) {
    return std::tie(a.t, a.y, a.x, a.c) < std::tie(b.t, b.y, b.x, b.c);
  });
  return s;
}

inline Dataset make_dataset(const Lattice& l, double p, uint64_t seed, uint32_t count) {
  Dataset ds;
  ds.alpha = static_cast<uint32_t>(l.alpha());
  ds.beta = static_cast<uint32_t>(l.beta());
  ds.rounds = l.rounds();
  ds.p = p;
  for (const auto& v : l.patch().virtual_vertices())
    ds.virtuals.push_back({uint16_t(v.x), uint16_t(v.y), 0, uint8_t(index_of(v.basis))});
  AnchorMap am(l);
  Rect g = am.grid();
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x) {
      ds.valid_inner.push_back(am.valid(x, y, 0));
      ds.valid_last.push_back(am.valid(x, y, l.rounds() - 1));
    }
  for (uint32_t i = 0; i < count; ++i) ds.samples.push_back(make_sample(l, rng::splitmix64(seed + i)));
  return ds;
}

namespace detail {
inline void put_cells(std::ostream& os, const std::vector<Cell>& cells) {
  io::put<uint32_t>(os, static_cast<uint32_t>(cells.size()));
  for (const auto& c : cells) {
    io::put<uint16_t>(os, c.x);
    io::put<uint16_t>(os, c.y);
    io::put<uint16_t>(os, c.t);
    io::put<uint8_t>(os, c.c);
  }
}
inline std::vector<Cell> get_cells(std::istream& is) {
  std::vector<Cell> v(io::get<uint32_t>(is));
  for (auto& c : v) {
    c.x = io::get<uint16_t>(is);
    c.y = io::get<uint16_t>(is);
    c.t = io::get<uint16_t>(is);
    c.c = io::get<uint8_t>(is);
  }
  return v;
}
}  // namespace detail

inline constexpr uint16_t kDatasetVersion = 1;

inline void write_lnds(std::ostream& os, const Dataset& ds) {
  io::put_magic(os, "LNDS");
  io::put<uint16_t>(os, kDatasetVersion);
  io::put<uint32_t>(os, ds.alpha);
  io::put<uint32_t>(os, ds.beta);
  io::put<uint32_t>(os, ds.rounds);
  io::put<uint32_t>(os, static_cast<uint32_t>(ds.samples.size()));
  io::put<double>(os, ds.p);
  detail::put_cells(os, ds.virtuals);
  for (uint8_t v : ds.valid_inner) io::put<uint8_t>(os, v);
  for (uint8_t v : ds.valid_last) io::put<uint8_t>(os, v);
  for (const auto& s : ds.samples) {
    detail::put_cells(os, s.inputs);
    detail::put_cells(os, s.labels);
  }
}

inline Dataset read_lnds(std::istream& is) {
  io::expect_magic(is, "LNDS");
  if (io::get<uint16_t>(is) != kDatasetVersion) throw FormatError("unsupported dataset version");
  Dataset ds;
  ds.alpha = io::get<uint32_t>(is);
  ds.beta = io::get<uint32_t>(is);
  ds.rounds = io::get<uint32_t>(is);
  uint32_t count = io::get<uint32_t>(is);
  ds.p = io::get<double>(is);
  ds.virtuals = detail::get_cells(is);
  size_t cells = size_t(ds.alpha + 1) * (ds.beta + 1);
  ds.valid_inner.resize(cells);
  ds.valid_last.resize(cells);
  for (auto& v : ds.valid_inner) v = io::get<uint8_t>(is);
  for (auto& v : ds.valid_last) v = io::get<uint8_t>(is);
  ds.samples.resize(count);
  for (auto& s : ds.samples) {
    s.inputs = detail::get_cells(is);
    s.labels = detail::get_cells(is);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Hardware resource and latency model

struct NlduConfig {
  int n = 9;
  std::array<int, 3> k{7, 7, 7};
  std::array<int, 3> p{52, 33, 27};
  double f_hz = 300e6;

  void validate() const {
    if (n < 1) throw ConfigError("board extent must be >= 1");
    for (int v : k)
      if (v < 1) throw ConfigError("K_i must be >= 1");
    for (int v : p)
      if (v < 1) throw ConfigError("P_i must be >= 1");
    if (!(f_hz > 0)) throw ConfigError("clock frequency must be positive");
  }
  int k_in(int i) const { return i == 0 ? 2 : k[static_cast<size_t>(i - 1)]; }
};

struct ResourceEstimate {
  double lut = 0;
  double reg = 0;
  double ltc_s = 0;  // seconds
};

inline constexpr double kPipelineDelayS = 3e-6;
inline constexpr double kCyclesPerPass = 28.0;

// Cells stage i (0-based) must produce per round on an N x N board.
inline int stage_cells(int n, int i) {
  int e = n + 2 * (2 - i);
  return e * e;
}

inline double stage_latency_s(const NlduConfig& c, int i) {
  int cells = stage_cells(c.n, i);
  int p = c.p[static_cast<size_t>(i)];
  return kCyclesPerPass / c.f_hz * double((cells + p - 1) / p);
}

inline ResourceEstimate estimate_resources(const NlduConfig& c) {
  c.validate();
  ResourceEstimate r;
  double n2 = double(c.n) * c.n;
  double passes = 3;
  for (int i = 0; i < 3; ++i) {
    double p = c.p[static_cast<size_t>(i)];
    double kin = c.k_in(i);
    r.lut += 7.0 * p * (40.0 * kin + 1.0);
    r.reg += 56.0 * p * (1.0 + kin);
    int cells = stage_cells(c.n, i);
    passes += double((cells + c.p[static_cast<size_t>(i)] - 1) / c.p[static_cast<size_t>(i)]);
  }
  r.lut += 16.0 * c.k[2] * n2;
  r.reg += 16.0 * c.k[2] * n2;
  r.ltc_s = kPipelineDelayS + kCyclesPerPass / c.f_hz * passes;
  return r;
}

inline constexpr int kMaxConfigsPerLayer = 90;

// Per layer, the P_i in 1..90 with the lowest LUT+REG cost whose stage latency
// fits the budget. Layer costs are independent once K is fixed.
inline NlduConfig search_config(int n, double f_hz, double stage_budget_s = 1e-6, std::array<int, 3> k = {7, 7, 7}) {
  NlduConfig best;
  best.n = n;
  best.k = k;
  best.f_hz = f_hz;
  best.validate();
  if (!(stage_budget_s > 0)) throw ConfigError("stage budget must be positive");
  for (int i = 0; i < 3; ++i) {
    double best_cost = INFINITY;
    int best_p = -1;
    for (int p = 1; p <= kMaxConfigsPerLayer; ++p) {
      NlduConfig c = best;
      c.p[static_cast<size_t>(i)] = p;
      if (stage_latency_s(c, i) > stage_budget_s) continue;
      double kin = c.k_in(i);
      double cost = 7.0 * p * (40.0 * kin + 1.0) + 56.0 * p * (1.0 + kin);
      if (cost < best_cost) {
        best_cost = cost;
        best_p = p;
      }
    }
    if (best_p < 0) throw ConfigError("no configuration meets the per-stage latency budget");
    best.p[static_cast<size_t>(i)] = best_p;
  }
  return best;
}

}  // namespace latte::nldu
