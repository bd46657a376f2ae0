#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "latte/nldu.hpp"
#include "nldu_oracles.hpp"

using namespace latte;
using namespace latte::nldu;
using namespace latte::oracle;

namespace {

std::shared_ptr<const Lattice> memory(int d, uint32_t rounds, double p = 0.001) {
  return memory_lattice(build_surface_code(d), rounds, NoiseParams::uniform(p));
}

}  // namespace

TEST(Embedding, RoundTripAndVirtualMarkers) {
  auto l = memory(5, 6);
  auto rounds = random_rounds(*l, 6, 0.3, 1);
  SyndromeTensor t = embed(l->patch(), rounds);
  EXPECT_EQ(t.w, 6);
  EXPECT_EQ(t.h, 6);
  EXPECT_EQ(extract(l->patch(), t), rounds);
  for (const auto& v : l->patch().virtual_vertices()) EXPECT_EQ(t.at(v.x, v.y, 3, index_of(v.basis)), 2);
  size_t ones = 0;
  for (uint8_t v : t.v) ones += v == 1;
  size_t expect = 0;
  for (const auto& r : rounds) expect += r.size();
  EXPECT_EQ(ones, expect);
}

TEST(Requant, ExactPowerOfTwoRoundsHalfUp) {
  Requant r = Requant::from(0.25);
  for (int acc : {-9, -6, -5, -2, -1, 0, 1, 2, 5, 6, 9, 1000001})
    EXPECT_EQ(r.apply(acc), static_cast<int64_t>(std::floor(acc / 4.0 + 0.5))) << acc;
  EXPECT_THROW(Requant::from(0.0), FormatError);
}

TEST(Requant, MatchesRealScaling) {
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> scale(1e-4, 4.0);
  std::uniform_int_distribution<int32_t> accs(-1 << 20, 1 << 20);
  for (int i = 0; i < 2000; ++i) {
    double s = scale(g);
    int32_t a = accs(g);
    Requant r = Requant::from(s);
    EXPECT_LE(std::abs(double(r.apply(a)) - a * s), 0.5 + 1e-6) << s << " " << a;
  }
}

TEST(Lnw1, RoundTrip) {
  QuantizedModel m = random_model(11, 5);
  std::stringstream ss;
  write_lnw1(ss, m);
  QuantizedModel back = read_lnw1(ss);
  ASSERT_EQ(back.layers().size(), 4u);
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back.layer(i).weights, m.layer(i).weights);
    EXPECT_EQ(back.layer(i).bias, m.layer(i).bias);
    EXPECT_EQ(back.layer(i).act_zero_point, m.layer(i).act_zero_point);
    EXPECT_EQ(back.layer(i).act_scale, m.layer(i).act_scale);
  }
  EXPECT_EQ(back.hidden(), (std::array<int, 3>{5, 5, 5}));
}

TEST(Lnw1, RejectsMalformed) {
  std::stringstream bad("LNWX");
  EXPECT_THROW(read_lnw1(bad), FormatError);
  std::stringstream ss;
  write_lnw1(ss, random_model(2));
  std::string s = ss.str();
  std::stringstream trunc(s.substr(0, s.size() - 10));
  EXPECT_THROW(read_lnw1(trunc), FormatError);
  auto layers = random_model(2).layers();
  layers[3].out = 5;
  EXPECT_THROW(QuantizedModel{layers}, FormatError);
}

TEST(Lnw1, BundledWeightsLoad) {
  QuantizedModel m = load_lnw1(std::string(LATTE_DATA_DIR) + "/nldu_k7.lnw1");
  EXPECT_EQ(m.hidden(), (std::array<int, 3>{7, 7, 7}));
  EXPECT_GT(m.parameter_count(), 3000u);
}

TEST(Classify, ArgmaxTiesAndThreshold) {
  const int32_t th = 150;
  uint8_t y_wins[6] = {10, 20, 30, 5, 151, 150};
  EXPECT_EQ(classify_cell(y_wins, th), kX | kZ | kM);
  uint8_t tie[6] = {40, 40, 40, 40, 0, 0};
  EXPECT_EQ(classify_cell(tie, th), 0);
  uint8_t x_tie_z[6] = {0, 90, 10, 90, 0, 255};
  EXPECT_EQ(classify_cell(x_tie_z, th), kX | kH);
  uint8_t z_only[6] = {0, 0, 0, 1, 0, 0};
  EXPECT_EQ(classify_cell(z_only, th), kZ);
}

TEST(Classify, ThresholdIsSigmoidPointEight) {
  QuantizedModel m = random_model(5);
  const auto& last = m.layer(3);
  int32_t th = m.theta_int();
  // Dequantized logit at th rounds to ln 4; sigmoid of the next step exceeds 0.8.
  double z_th = double(th - last.act_zero_point) * last.act_scale;
  EXPECT_NEAR(z_th, std::log(4.0), last.act_scale / 2 + 1e-9);
  EXPECT_EQ(th, int32_t(std::lround(1.3862943611198906 / last.act_scale)) + last.act_zero_point);
}

TEST(Streaming, MatchesBatchConvolution) {
  for (int trial = 0; trial < 6; ++trial) {
    int d = trial < 3 ? 5 : 7;
    uint32_t R = 9;
    auto l = memory(d, R);
    QuantizedModel m = random_model(100 + trial);
    auto rounds = random_rounds(*l, R, 0.15, 200 + trial);
    SyndromeTensor t = embed(l->patch(), rounds);
    Volume in(t.w, t.h, t.rounds, 2, 0);
    in.v.assign(t.v.begin(), t.v.end());
    Volume expect = oracle_forward(m, in);

    StreamingInference si(m, grid_of(l->patch()));
    std::vector<Slice> got;
    for (uint32_t r = 0; r < R; ++r) {
      auto out = si.push(embed_round(l->patch(), rounds[r]));
      EXPECT_EQ(out.size(), r >= 3 ? 1u : 0u) << "three-round pipeline delay";
      for (auto& s : out) got.push_back(std::move(s));
    }
    for (auto& s : si.finish()) got.push_back(std::move(s));
    ASSERT_EQ(got.size(), R);
    for (uint32_t r = 0; r < R; ++r)
      for (int y = 0; y < t.h; ++y)
        for (int x = 0; x < t.w; ++x)
          for (int c = 0; c < 6; ++c)
            ASSERT_EQ(got[r].at(x, y, c), expect.at(x, y, int(r), c)) << trial << " " << r << " " << x << "," << y << "," << c;
  }
}

TEST(Streaming, TileWithHaloMatchesWholeGrid) {
  auto l = memory(7, 6);
  QuantizedModel m = random_model(9);
  auto rounds = random_rounds(*l, 6, 0.2, 9);
  Rect grid = grid_of(l->patch());
  Rect tile{2, 3, 5, 6};
  StreamingInference whole(m, grid), part(m, grid, tile);
  std::vector<Slice> a, b;
  for (const auto& r : rounds) {
    Slice full = embed_round(l->patch(), r);
    for (auto& s : whole.push(full)) a.push_back(std::move(s));
    Rect need = part.input_rect();
    Slice cut(need, 2);
    for (int y = need.y0; y < need.y1; ++y)
      for (int x = need.x0; x < need.x1; ++x)
        for (int c = 0; c < 2; ++c) cut.at(x, y, c) = full.at(x, y, c);
    for (auto& s : part.push(cut)) b.push_back(std::move(s));
  }
  for (auto& s : whole.finish()) a.push_back(std::move(s));
  for (auto& s : part.finish()) b.push_back(std::move(s));
  ASSERT_EQ(a.size(), b.size());
  for (size_t r = 0; r < a.size(); ++r) {
    EXPECT_EQ(b[r].rect, tile);
    for (int y = tile.y0; y < tile.y1; ++y)
      for (int x = tile.x0; x < tile.x1; ++x)
        for (int c = 0; c < 6; ++c) ASSERT_EQ(b[r].at(x, y, c), a[r].at(x, y, c));
  }
  Slice small(tile, 2);
  StreamingInference p2(m, grid, tile);
  EXPECT_THROW(p2.push(small), ContractViolation);
}

namespace {

void check_post_process(const Lattice& l, uint64_t seed, int cases) {
  std::mt19937_64 g(seed);
  AnchorMap am(l);
  for (int c = 0; c < cases; ++c) {
    auto raw = random_rounds(l, l.rounds(), 0.1, g());
    for (uint32_t t = 0; t < raw.size(); ++t)
      if (t == 0)
        std::erase_if(raw[0], [&](uint32_t s) { return l.observables().cut[s] != 0; });
    auto pred = random_predictions(l, 0.08, g);
    Recompute want = recompute(l, raw, pred);
    uint64_t logical = 0;
    for (uint32_t t = 0; t < l.rounds(); ++t) {
      auto r = post_process_round(am, t, raw[t], pred[t], t ? &pred[t - 1] : nullptr, am.grid());
      ASSERT_EQ(r.residual, want.residual[t]) << "case " << c << " round " << t;
      logical ^= r.local_logical;
    }
    ASSERT_EQ(logical, want.logical) << "case " << c;
  }
}

}  // namespace

TEST(PostProcess, MatchesGlobalRecomputeMemory) {
  check_post_process(*memory(5, 5), 1, 500);
  check_post_process(*memory(3, 2), 2, 250);
}

TEST(PostProcess, MatchesGlobalRecomputeStability) {
  check_post_process(*stability_lattice(4, 5, NoiseParams::uniform(0.001)), 3, 250);
}

TEST(PostProcess, PerfectLabelsLeaveOnlyDiagonalEdges) {
  auto l = memory(5, 8, 0.02);
  DecodingModel dm = materialize(l);
  AnchorMap am(*l);
  for (uint64_t seed = 0; seed < 30; ++seed) {
    std::vector<EdgeSpec> fired;
    l->for_each_edge(0, l->rounds(), [&](const EdgeSpec& e) {
      if (edge_fires(e, seed)) fired.push_back(e);
    });
    uint32_t n = l->num_stabilizers();
    std::vector<uint8_t> raw(size_t(n) * l->rounds(), 0), diag(raw.size(), 0);
    uint64_t truth = 0, diag_logical = 0;
    std::vector<Compressed> pred(l->rounds(), Compressed(grid_of(l->patch())));
    for (const auto& e : fired) {
      for (uint32_t d : e) raw[d] ^= 1;
      truth ^= e.logical_mask;
      uint8_t& cell = pred[size_t(e.anchor.t)].at(e.anchor.x, e.anchor.y);
      switch (e.anchor.channel) {
        case Channel::X: cell ^= kX; break;
        case Channel::Y: cell ^= kX | kZ; break;
        case Channel::Z: cell ^= kZ; break;
        case Channel::M: cell ^= kM; break;
        case Channel::H: cell ^= kH; break;
        default:
          for (uint32_t d : e) diag[d] ^= 1;
          diag_logical ^= e.logical_mask;
      }
    }
    uint64_t local = 0;
    for (uint32_t t = 0; t < l->rounds(); ++t) {
      std::vector<uint32_t> r;
      for (uint32_t s = 0; s < n; ++s)
        if (raw[size_t(t) * n + s]) r.push_back(s);
      auto pr = post_process_round(am, t, r, pred[t], t ? &pred[t - 1] : nullptr, am.grid());
      std::vector<uint32_t> want;
      for (uint32_t s = 0; s < n; ++s)
        if (diag[size_t(t) * n + s]) want.push_back(s);
      EXPECT_EQ(pr.residual, want);
      local ^= pr.local_logical;
    }
    EXPECT_EQ(local ^ diag_logical, truth);
  }
}

TEST(Boards, TiledMatchesSingleBoard) {
  for (int n : {3, 4, 5}) {
    auto l = memory(9, 10);
    QuantizedModel m = random_model(40 + n);
    auto rounds = random_rounds(*l, 10, 0.1, 77 + n);
    NlduOutput one = apply_nldu(m, *l, rounds, 0);
    NlduOutput tiled = apply_nldu(m, *l, rounds, n);
    EXPECT_EQ(tiled.residual, one.residual) << n;
    EXPECT_EQ(tiled.local_logical, one.local_logical) << n;
    EXPECT_EQ(tiled.raw_bits, one.raw_bits);
  }
}

TEST(Boards, HaloTrafficIsCounted) {
  auto l = memory(9, 4);
  QuantizedModel m = random_model(3);
  BoardArray single(m, *l, 0), quad(m, *l, 5);
  EXPECT_EQ(single.boards(), 1u);
  EXPECT_EQ(quad.boards(), 4u);
  RoundRecord r;
  for (uint32_t t = 0; t < 4; ++t) {
    r.round = t;
    single.push(r);
    quad.push(r);
  }
  single.finish();
  quad.finish();
  EXPECT_EQ(single.stats().pre_halo_cells, 0u);
  EXPECT_GT(quad.stats().pre_halo_cells, 0u);
  EXPECT_GT(quad.stats().post_halo_cells, 0u);
}

TEST(Boards, ZeroModelIsIdentity) {
  auto l = memory(5, 7);
  QuantizedModel m = zero_model();
  auto rounds = random_rounds(*l, 7, 0.2, 5);
  NlduOutput out = apply_nldu(m, *l, rounds, 3);
  EXPECT_EQ(out.residual, rounds);
  EXPECT_EQ(out.local_logical, 0u);
  EXPECT_EQ(out.residual_bits, out.raw_bits);
}

TEST(Boards, RejectsOutOfOrderRounds) {
  auto l = memory(3, 4);
  QuantizedModel m = zero_model();
  BoardArray b(m, *l, 0);
  RoundRecord r;
  r.round = 1;
  EXPECT_THROW(b.push(r), ContractViolation);
}

TEST(Resources, ReferenceConfigurationFixture) {
  NlduConfig c;  // N=9, K=7, P=(52,33,27), 300 MHz
  ResourceEstimate r = estimate_resources(c);
  EXPECT_DOUBLE_EQ(r.lut, 7.0 * 52 * 81 + 7.0 * 33 * 281 + 7.0 * 27 * 281 + 16.0 * 7 * 81);
  EXPECT_DOUBLE_EQ(r.lut, 156576.0);
  EXPECT_DOUBLE_EQ(r.reg, 56.0 * 52 * 3 + 56.0 * 33 * 8 + 56.0 * 27 * 8 + 16.0 * 7 * 81);
  // passes: 3 + ceil(169/52) + ceil(121/33) + ceil(81/27) = 14
  EXPECT_NEAR(r.ltc_s, 3e-6 + 28.0 * 14 / 300e6, 1e-15);
  EXPECT_NEAR(r.ltc_s * 1e6, 4.3067, 1e-4);
  EXPECT_THROW(estimate_resources(NlduConfig{0}), ConfigError);
}

TEST(Resources, SearchFindsCheapestFeasiblePerLayer) {
  NlduConfig c = search_config(9, 300e6, 1e-6);
  // Smallest P with 28/f * ceil(cells/P) <= 1us, cells = 169, 121, 81.
  for (int i = 0; i < 3; ++i) {
    int cells = stage_cells(9, i);
    int want = 1;
    while (28.0 / 300e6 * ((cells + want - 1) / want) > 1e-6) ++want;
    EXPECT_EQ(c.p[size_t(i)], want) << i;
  }
  EXPECT_EQ(c.p, (std::array<int, 3>{17, 13, 9}));
  NlduConfig loose = search_config(9, 300e6, 1.0);
  EXPECT_EQ(loose.p, (std::array<int, 3>{1, 1, 1}));
  EXPECT_THROW(search_config(9, 300e6, 1e-9), ConfigError);
}

TEST(Dataset, RoundTripAndLabelsReproduceSyndrome) {
  auto l = memory(5, 6, 0.01);
  Dataset ds = make_dataset(*l, 0.01, 42, 50);
  std::stringstream ss;
  write_lnds(ss, ds);
  Dataset back = read_lnds(ss);
  EXPECT_EQ(back.samples, ds.samples);
  EXPECT_EQ(back.valid_inner, ds.valid_inner);
  EXPECT_EQ(back.rounds, 6u);
  EXPECT_EQ(back.p, 0.01);
  // Labels applied as perfect predictions clear the syndrome and reproduce
  // the sampled logical flips.
  auto nd = memory(5, 6, 0.02);
  AnchorMap am(*nd);
  for (uint64_t seed = 0; seed < 60; ++seed) {
    DatasetSample s = make_sample(*nd, seed);
    uint64_t truth = 0;
    nd->for_each_edge(0, 6, [&](const EdgeSpec& e) {
      if (edge_fires(e, seed)) truth ^= e.logical_mask;
    });
    std::vector<Compressed> pred(6, Compressed(am.grid()));
    for (const auto& c : s.labels) {
      uint8_t f = c.c == uint8_t(Channel::X) ? kX : c.c == uint8_t(Channel::Y) ? (kX | kZ) : c.c == uint8_t(Channel::Z) ? kZ
                 : c.c == uint8_t(Channel::M) ? kM : kH;
      pred[c.t].at(c.x, c.y) |= f;
      EXPECT_TRUE(am.valid(c.x, c.y, c.t) & f);
    }
    std::vector<std::vector<uint32_t>> raw(6);
    for (const auto& c : s.inputs) raw[c.t].push_back(uint32_t(am.stabilizer_at(c.x, c.y)));
    for (auto& r : raw) std::sort(r.begin(), r.end());
    uint64_t local = 0;
    for (uint32_t t = 0; t < 6; ++t) {
      auto r = post_process_round(am, t, raw[t], pred[t], t ? &pred[t - 1] : nullptr, am.grid());
      EXPECT_TRUE(r.residual.empty()) << seed << " " << t;
      local ^= r.local_logical;
    }
    EXPECT_EQ(local, truth) << seed;
  }
}
