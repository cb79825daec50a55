// Microbenchmarks for the hot kernels behind the streaming engine and the
// training loop. Run with --benchmark_filter=... as usual.

#include <benchmark/benchmark.h>

#include <memory>

#include "e3net/dsp.hpp"
#include "e3net/model.hpp"
#include "e3net/nnops.hpp"
#include "e3net/stream.hpp"

namespace {

using e3net::Tensor;

Tensor random_tensor(e3net::Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  e3net::dsp::SplitMix64 rng(seed);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = float(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_MatvecEncoder(benchmark::State& state) {
  const std::int64_t f = state.range(0), w = 320;
  const Tensor filters = random_tensor({f, w}, 1);
  const Tensor x = random_tensor({w}, 2);
  Tensor y({f});
  for (auto _ : state) {
    e3net::nnops::detail::matvec<float>(filters.data(), x.data(), y.data(), f, w);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * f * w);
}
BENCHMARK(BM_MatvecEncoder)->Arg(256)->Arg(2048);

void BM_GemmNt(benchmark::State& state) {
  const std::int64_t rows = state.range(0), k = 320, n = 2048;
  const Tensor a = random_tensor({rows, k}, 3);
  const Tensor b = random_tensor({n, k}, 4);
  Tensor c({rows, n});
  for (auto _ : state) {
    e3net::nnops::detail::gemm_nt<float>(a.data(), b.data(), c.data(), rows, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * rows * k * n);
}
BENCHMARK(BM_GemmNt)->Arg(100)->Arg(400);

void BM_LstmCell(benchmark::State& state) {
  const std::int64_t d = state.range(0);
  e3net::ModelConfig cfg;
  cfg.model_dim = d;
  const Tensor wi = random_tensor({d, d}, 5), ui = random_tensor({d, d}, 6);
  const Tensor bi = random_tensor({d}, 7);
  e3net::nnops::LstmCellParams p;
  for (int g = 0; g < 4; ++g) {
    p.w[g] = &wi;
    p.u[g] = &ui;
    p.b[g] = &bi;
  }
  const Tensor x = random_tensor({d}, 8);
  Tensor h({d}), c({d}), ho, co;
  for (auto _ : state) {
    e3net::nnops::lstm_cell_step(x, h, c, p, ho, co);
    benchmark::DoNotOptimize(ho.data());
  }
  state.SetItemsProcessed(state.iterations() * 8 * d * d);
}
BENCHMARK(BM_LstmCell)->Arg(128)->Arg(256);

void BM_StreamFrame(benchmark::State& state) {
  e3net::ModelConfig cfg;
  cfg.num_blocks = state.range(0);
  auto params = std::make_shared<const e3net::ModelParams>(e3net::init_params<float>(cfg, 1));
  const Tensor emb = Tensor::full({cfg.emb_dim}, 0.0625f);
  e3net::Streamer s(params, cfg, emb);
  const std::int64_t hop = cfg.hop_samples();
  const Tensor chunk = random_tensor({hop * 4}, 9);
  s.push(chunk.data(), chunk.numel());  // prime the window
  std::int64_t at = 0;
  for (auto _ : state) {
    auto out = s.push(chunk.data() + (at % (3 * hop)), hop);
    benchmark::DoNotOptimize(out.data());
    at += hop;
  }
  state.SetItemsProcessed(state.iterations() * hop);
}
BENCHMARK(BM_StreamFrame)->Arg(2)->Arg(4)->Arg(8);

}  // namespace

BENCHMARK_MAIN();
