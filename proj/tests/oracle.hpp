#pragma once

// Test-only reference implementations, independent of the library's kernel
// and autodiff code paths. Everything here is plain double loops derived
// directly from the operator definitions; tests freeze or compare against
// these values.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "e3net/model.hpp"
#include "e3net/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

Mat frame(const Vec& x, int window, int hop);

// x[T][Din] * w[Dout][Din]^T + b
Mat matmul_wt(const Mat& x, const Mat& w, const Vec& b);

Mat prelu(const Mat& x, const Vec& alpha);
Mat layer_norm(const Mat& x, const Vec& gamma, const Vec& beta, double eps);
Mat sigmoid(const Mat& x);

struct LstmP {
  Mat wi, wf, wg, wo, ui, uf, ug, uo;
  Vec bi, bf, bg, bo;
};
void lstm_step(const LstmP& p, const Vec& x, Vec& h, Vec& c);

Vec overlap_add(const Mat& frames, int hop);

double si_sdr(const Vec& estimate, const Vec& reference);  // capped at +/-100 dB

// Step-by-step scalar E3Net forward over double-precision parameters,
// written from the architecture description with no shared code.
Vec e3net_forward(const e3net::ModelParams64& params, const e3net::ModelConfig& cfg,
                  const Vec& waveform, const Vec& embedding);

// Conversions between library tensors and oracle containers.
Vec to_vec(const e3net::Tensor64& t);
Mat to_mat(const e3net::Tensor64& t);
e3net::Tensor64 from_vec(const Vec& v);
LstmP lstm_params(const e3net::ModelParams64& params, std::int64_t block);

// Central finite differences vs analytic gradients, relative error
// |ad - fd| / max(|ad|, |fd|, 1e-8), maximized over every element of every
// input that has an analytic gradient supplied.
struct FdReport {
  double max_rel_err = 0;
  std::string worst;
};

FdReport fd_check(const std::function<double(const std::vector<e3net::Tensor64>&)>& loss,
                  std::vector<e3net::Tensor64> inputs,
                  const std::vector<e3net::Tensor64>& analytic, double h);

// End-to-end gradient check of the training loss (se_loss of the recorded
// forward graph) against central differences over every model parameter, in
// 64-bit. Returns the max relative error and how many elements were checked.
struct ModelFdReport {
  double max_rel_err = 0;
  std::string worst;
  std::int64_t checked = 0;
};

ModelFdReport model_grad_fd_check(const e3net::ModelConfig& cfg, std::uint64_t seed,
                                  std::int64_t input_len, double h, double lambda);

// Deterministic fill helpers for test fixtures.
void fill_uniform(e3net::Tensor64& t, std::uint64_t seed, double lo, double hi);
void fill_uniform(e3net::Tensor& t, std::uint64_t seed, double lo, double hi);
std::vector<float> random_wave(std::int64_t n, std::uint64_t seed, double amp = 0.5);

}  // namespace oracle
