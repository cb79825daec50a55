#include <cmath>

#include <doctest.h>

#include "e3net/nnops.hpp"
#include "oracle.hpp"

using namespace e3net;
using oracle::Mat;
using oracle::Vec;

TEST_CASE("frame_signal basic slicing") {
  Tensor64 x({6}, {1, 2, 3, 4, 5, 6});
  const Tensor64 f = nnops::frame_signal(x, 4, 2);
  REQUIRE(f.shape() == Shape{2, 4});
  CHECK(f.at(0, 0) == 1);
  CHECK(f.at(0, 3) == 4);
  CHECK(f.at(1, 0) == 3);
  CHECK(f.at(1, 3) == 6);
}

TEST_CASE("frame_signal single frame and frame count") {
  Tensor64 x({320});
  oracle::fill_uniform(x, 7, -1, 1);
  const Tensor64 f = nnops::frame_signal(x, 320, 160);
  REQUIRE(f.shape() == Shape{1, 320});
  for (std::int64_t i = 0; i < 320; ++i) CHECK(f[i] == x[i]);

  Tensor64 sec({16000});
  CHECK(nnops::frame_signal(sec, 320, 160).dim(0) == 99);  // floor((16000-320)/160)+1
}

TEST_CASE("frame_signal drops trailing remainder and rejects short input") {
  Tensor64 x({7}, {1, 2, 3, 4, 5, 6, 7});
  CHECK(nnops::frame_signal(x, 4, 2).dim(0) == 2);  // sample 7 dropped
  Tensor64 tiny({3}, {1, 2, 3});
  CHECK_THROWS_WITH_AS(nnops::frame_signal(tiny, 4, 2), "input shorter than one frame",
                       ShapeError);
}

TEST_CASE("conv1d_encoder delta filter and bias-only") {
  Tensor64 frames({1, 4}, {1, 0, 0, 0});
  Tensor64 delta({1, 4}, {1, 0, 0, 0});
  Tensor64 zero_b({1});
  const Tensor64 out = nnops::conv1d_encoder(frames, delta, zero_b);
  CHECK(out.numel() == 1);
  CHECK(out[0] == 1.0);

  Tensor64 zeros({3, 4});
  Tensor64 b({3}, {2.5, -1.0, 0.25});
  Tensor64 fr({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor64 out2 = nnops::conv1d_encoder(fr, zeros, b);
  for (std::int64_t t = 0; t < 2; ++t)
    for (std::int64_t f = 0; f < 3; ++f) CHECK(out2.at(t, f) == b[f]);
}

TEST_CASE("conv1d_encoder matches triple-loop oracle on a random case") {
  Tensor64 frames({2, 5}), filters({3, 5}), bias({3});
  oracle::fill_uniform(frames, 11, -1, 1);
  oracle::fill_uniform(filters, 12, -1, 1);
  oracle::fill_uniform(bias, 13, -1, 1);
  const Tensor64 got = nnops::conv1d_encoder(frames, filters, bias);
  const Mat want = oracle::matmul_wt(oracle::to_mat(frames), oracle::to_mat(filters),
                                     oracle::to_vec(bias));
  for (std::int64_t t = 0; t < 2; ++t)
    for (std::int64_t f = 0; f < 3; ++f)
      CHECK(got.at(t, f) ==
            doctest::Approx(want[std::size_t(t)][std::size_t(f)]).epsilon(1e-12));
}

TEST_CASE("conv1d_encoder names the mismatched axis") {
  Tensor64 frames({2, 5});
  Tensor64 filters({3, 4});
  Tensor64 bias({3});
  CHECK_THROWS_AS(nnops::conv1d_encoder(frames, filters, bias), ShapeError);
  try {
    nnops::conv1d_encoder(frames, filters, bias);
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
  }
}

TEST_CASE("prelu definition") {
  Tensor64 x({2}, {3.0, -2.0});
  Tensor64 alpha({2}, {0.25, 0.25});
  const Tensor64 out = nnops::prelu(x, alpha);
  CHECK(out[0] == 3.0);
  CHECK(out[1] == -0.5);

  // shared scalar slope
  Tensor64 a1({1}, {0.1});
  const Tensor64 out2 = nnops::prelu(x, a1);
  CHECK(out2[1] == doctest::Approx(-0.2));

  Tensor64 bad({3});
  CHECK_THROWS_AS(nnops::prelu(x, bad), ShapeError);
}

TEST_CASE("layer_norm constant and already-normalized rows") {
  Tensor64 x({1, 4}, {5, 5, 5, 5});
  Tensor64 g = Tensor64::full({4}, 1.0);
  Tensor64 b({4});
  const Tensor64 out = nnops::layer_norm(x, g, b, 1e-8);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(std::abs(out[i]) < 1e-3);

  Tensor64 x2({1, 2}, {1, -1});
  Tensor64 g2 = Tensor64::full({2}, 1.0);
  Tensor64 b2({2});
  const Tensor64 out2 = nnops::layer_norm(x2, g2, b2, 0.0);
  CHECK(out2[0] == doctest::Approx(1.0));
  CHECK(out2[1] == doctest::Approx(-1.0));
}

TEST_CASE("layer_norm output statistics on random input") {
  Tensor64 x({4, 16});
  oracle::fill_uniform(x, 21, -2, 2);
  Tensor64 g = Tensor64::full({16}, 1.0);
  Tensor64 b({16});
  const Tensor64 out = nnops::layer_norm(x, g, b, 1e-8);
  for (std::int64_t r = 0; r < 4; ++r) {
    double mean = 0, var = 0;
    for (std::int64_t i = 0; i < 16; ++i) mean += out.at(r, i);
    mean /= 16;
    for (std::int64_t i = 0; i < 16; ++i) var += (out.at(r, i) - mean) * (out.at(r, i) - mean);
    var /= 16;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("linear identity, hand case, and axis error") {
  Tensor64 x({1, 2}, {1, 2});
  Tensor64 eye({2, 2}, {1, 0, 0, 1});
  Tensor64 zb({2});
  const Tensor64 same = nnops::linear(x, eye, zb);
  CHECK(same[0] == 1.0);
  CHECK(same[1] == 2.0);

  Tensor64 w({2, 2}, {1, 1, 0, 1});
  Tensor64 b({2}, {0, 1});
  const Tensor64 out = nnops::linear(x, w, b);
  CHECK(out[0] == 3.0);
  CHECK(out[1] == 3.0);

  Tensor64 wbad({2, 3});
  CHECK_THROWS_AS(nnops::linear(x, wbad, b), ShapeError);
}

TEST_CASE("sigmoid values and saturation") {
  Tensor64 x({3}, {0.0, -100.0, 100.0});
  const Tensor64 out = nnops::sigmoid(x);
  CHECK(out[0] == 0.5);
  CHECK(out[1] >= 0.0);
  CHECK(out[1] <= 1e-40);
  CHECK(std::isfinite(out[1]));
  CHECK(out[2] <= 1.0);
  CHECK(out[2] >= 1.0 - 1e-40);

  // float path saturates without NaN as well
  Tensor xf({2}, {-100.0f, 100.0f});
  const Tensor of = nnops::sigmoid(xf);
  CHECK(std::isfinite(of[0]));
  CHECK(std::isfinite(of[1]));
}

TEST_CASE("lstm_cell_step zero-parameter fixed points") {
  const std::int64_t d = 3, h = 2;
  Tensor64 w({h, d}), u({h, h}), b({h});
  nnops::LstmCellParamsT<double> p;
  for (int g = 0; g < 4; ++g) {
    p.w[g] = &w;
    p.u[g] = &u;
    p.b[g] = &b;
  }
  Tensor64 x({d}, {0.3, -0.2, 0.9});
  Tensor64 h0({h}), c0({h});
  Tensor64 h1, c1;
  nnops::lstm_cell_step(x, h0, c0, p, h1, c1);
  for (std::int64_t i = 0; i < h; ++i) {
    CHECK(h1[i] == 0.0);  // gates at 0.5, candidate tanh(0)=0
    CHECK(c1[i] == 0.0);
  }

  Tensor64 c_one = Tensor64::full({h}, 1.0);
  nnops::lstm_cell_step(x, h0, c_one, p, h1, c1);
  for (std::int64_t i = 0; i < h; ++i) {
    CHECK(c1[i] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(h1[i] == doctest::Approx(0.5 * std::tanh(0.5)).epsilon(1e-12));
    CHECK(h1[i] == doctest::Approx(0.231059).epsilon(1e-5));
  }
}

TEST_CASE("lstm_cell_step matches the scalar oracle on a random case") {
  const std::int64_t d = 3, h = 4;
  std::vector<Tensor64> store;
  store.reserve(12);
  nnops::LstmCellParamsT<double> p;
  oracle::LstmP lp;
  Mat* gw[4] = {&lp.wi, &lp.wf, &lp.wg, &lp.wo};
  Mat* gu[4] = {&lp.ui, &lp.uf, &lp.ug, &lp.uo};
  Vec* gb[4] = {&lp.bi, &lp.bf, &lp.bg, &lp.bo};
  for (int g = 0; g < 4; ++g) {
    store.emplace_back(Shape{h, d});
    oracle::fill_uniform(store.back(), 100 + g, -0.7, 0.7);
    *gw[g] = oracle::to_mat(store.back());
    p.w[g] = &store.back();
  }
  for (int g = 0; g < 4; ++g) {
    store.emplace_back(Shape{h, h});
    oracle::fill_uniform(store.back(), 200 + g, -0.7, 0.7);
    *gu[g] = oracle::to_mat(store.back());
    p.u[g] = &store.back();
  }
  for (int g = 0; g < 4; ++g) {
    store.emplace_back(Shape{h});
    oracle::fill_uniform(store.back(), 300 + g, -0.7, 0.7);
    *gb[g] = oracle::to_vec(store.back());
    p.b[g] = &store.back();
  }
  Tensor64 x({d}), h0({h}), c0({h});
  oracle::fill_uniform(x, 400, -1, 1);
  oracle::fill_uniform(h0, 401, -1, 1);
  oracle::fill_uniform(c0, 402, -1, 1);

  Tensor64 h1, c1;
  nnops::lstm_cell_step(x, h0, c0, p, h1, c1);
  Vec ho = oracle::to_vec(h0), co = oracle::to_vec(c0);
  oracle::lstm_step(lp, oracle::to_vec(x), ho, co);
  for (std::int64_t i = 0; i < h; ++i) {
    CHECK(h1[i] == doctest::Approx(ho[std::size_t(i)]).epsilon(1e-12));
    CHECK(c1[i] == doctest::Approx(co[std::size_t(i)]).epsilon(1e-12));
  }
}

TEST_CASE("overlap_add doubling and single frame") {
  Tensor64 ones({2, 4}, {1, 1, 1, 1, 1, 1, 1, 1});
  const Tensor64 out = nnops::overlap_add(ones, 2);
  REQUIRE(out.numel() == 6);
  const double want[6] = {1, 1, 2, 2, 1, 1};
  for (int i = 0; i < 6; ++i) CHECK(out[i] == want[i]);

  Tensor64 one({1, 4}, {4, 3, 2, 1});
  const Tensor64 verbatim = nnops::overlap_add(one, 2);
  REQUIRE(verbatim.numel() == 4);
  for (int i = 0; i < 4; ++i) CHECK(verbatim[i] == one[i]);
}

TEST_CASE("overlap_add_decoder matches the scatter-add oracle exactly") {
  Tensor64 masked({3, 4}), filters({4, 6}), bias({6});
  oracle::fill_uniform(masked, 31, -1, 1);
  oracle::fill_uniform(filters, 32, -1, 1);
  oracle::fill_uniform(bias, 33, -1, 1);
  const Tensor64 got = nnops::overlap_add_decoder(masked, filters, bias, 3);

  // oracle: per-frame projection (filters viewed per feature row), then scatter
  Mat frames(3, Vec(6, 0.0));
  for (int t = 0; t < 3; ++t)
    for (int j = 0; j < 6; ++j) {
      double s = bias[j];
      for (int f = 0; f < 4; ++f) s += masked.at(t, f) * filters.at(f, j);
      frames[std::size_t(t)][std::size_t(j)] = s;
    }
  const Vec want = oracle::overlap_add(frames, 3);
  REQUIRE(got.numel() == static_cast<std::int64_t>(want.size()));
  for (std::int64_t i = 0; i < got.numel(); ++i)
    CHECK(got[i] == doctest::Approx(want[std::size_t(i)]).epsilon(1e-12));
}

TEST_CASE("encoder/decoder adjointness on an orthogonal filter bank") {
  // W == F == 4, hop == W, orthonormal filters: decode(encode(x)) == x.
  const double h = 0.5;  // rows of the 4x4 Hadamard matrix scaled to unit norm
  Tensor64 q({4, 4}, {h, h, h, h, h, -h, h, -h, h, h, -h, -h, h, -h, -h, h});
  Tensor64 zb({4});
  Tensor64 x({12});
  oracle::fill_uniform(x, 55, -1, 1);
  const Tensor64 frames = nnops::frame_signal(x, 4, 4);
  const Tensor64 feat = nnops::conv1d_encoder(frames, q, zb);
  const Tensor64 back = nnops::overlap_add_decoder(feat, q, zb, 4);
  REQUIRE(back.numel() == x.numel());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-5));
}

TEST_CASE("kernels are bitwise deterministic across repeated calls") {
  Tensor x({37, 64});
  Tensor w({48, 64});
  Tensor b({48});
  oracle::fill_uniform(x, 71, -1, 1);
  oracle::fill_uniform(w, 72, -1, 1);
  oracle::fill_uniform(b, 73, -1, 1);
  const Tensor a1 = nnops::linear(x, w, b);
  const Tensor a2 = nnops::linear(x, w, b);
  for (std::int64_t i = 0; i < a1.numel(); ++i) CHECK(a1[i] == a2[i]);
}
