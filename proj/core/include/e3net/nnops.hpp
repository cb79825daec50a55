#pragma once

#include <cstdint>

#include "e3net/tensor.hpp"

// Numeric kernel layer: forward kernels for every primitive of the model
// pipeline. All kernels are pure, single-threaded, and use a fixed summation
// order, so identical inputs give bitwise-identical outputs across runs.
// Shape mismatches throw ShapeError naming the offending axis; nothing
// broadcasts silently.
namespace e3net::nnops {

// Layer-norm epsilon used by default at each precision. The wider epsilon in
// 32-bit keeps variance denominators away from float round-off; gradient
// checking runs in 64-bit with the tighter value.
template <typename T>
constexpr T default_ln_eps() {
  if constexpr (sizeof(T) == 4)
    return T(1e-5);
  else
    return T(1e-8);
}

// Slices a waveform into overlapping frames: frame t = x[t*hop .. t*hop+window).
// Trailing samples that do not fill a window are dropped.
template <typename T>
TensorT<T> frame_signal(const TensorT<T>& x, std::int64_t window, std::int64_t hop);

inline std::int64_t num_frames(std::int64_t len, std::int64_t window, std::int64_t hop) {
  return len < window ? 0 : (len - window) / hop + 1;
}

// 1-D conv with kernel == window and stride == hop reduces to a per-frame
// matrix multiply: out[t,f] = dot(frames[t], filters[f]) + bias[f].
template <typename T>
TensorT<T> conv1d_encoder(const TensorT<T>& frames, const TensorT<T>& filters,
                          const TensorT<T>& bias);

// out = x if x > 0 else alpha*x, alpha per channel over the last axis
// (or a single shared scalar).
template <typename T>
TensorT<T> prelu(const TensorT<T>& x, const TensorT<T>& alpha);

// Normalizes over the last axis with population variance (divide by D):
// out = gamma * (x - mean) / sqrt(var + eps) + beta.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps);

// out = x * W^T + b with W of shape [Dout x Din].
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& weight,
                  const TensorT<T>& bias);

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x);

template <typename T>
TensorT<T> tanh_map(const TensorT<T>& x);

// LSTM gate parameters in the fixed (i, f, g, o) order. W* are input
// projections [H x D], U* recurrent projections [H x H], b* biases [H].
template <typename T>
struct LstmCellParamsT {
  const TensorT<T>* w[4] = {nullptr, nullptr, nullptr, nullptr};
  const TensorT<T>* u[4] = {nullptr, nullptr, nullptr, nullptr};
  const TensorT<T>* b[4] = {nullptr, nullptr, nullptr, nullptr};
};

using LstmCellParams = LstmCellParamsT<float>;

enum LstmGate { kGateI = 0, kGateF = 1, kGateG = 2, kGateO = 3 };

// Standard LSTM cell:
//   i = sig(Wi x + Ui h + bi), f = sig(.), g = tanh(.), o = sig(.)
//   c' = f*c + i*g, h' = o*tanh(c')
template <typename T>
void lstm_cell_step(const TensorT<T>& x, const TensorT<T>& h_prev,
                    const TensorT<T>& c_prev, const LstmCellParamsT<T>& p,
                    TensorT<T>& h_out, TensorT<T>& c_out);

// Sums strided overlapping frames back into a waveform.
// out length = (T-1)*hop + W; T == 0 gives an empty signal.
template <typename T>
TensorT<T> overlap_add(const TensorT<T>& frames, std::int64_t hop);

// Projects masked features through the decoder filters ([F x W], one output
// frame per input frame) and overlap-adds the result.
template <typename T>
TensorT<T> overlap_add_decoder(const TensorT<T>& masked, const TensorT<T>& filters,
                               const TensorT<T>& bias, std::int64_t hop);

// ---------------------------------------------------------------------------
// Low-level primitives shared by the kernels, the autodiff tape and the
// streaming engine. Float versions use explicitly blocked accumulators that
// vectorize well; double versions use strict left-to-right summation for
// gradient-checking mode.
namespace detail {

template <typename T>
T dot(const T* a, const T* b, std::int64_t n);

// y[M] = W[M x K] * x[K] (+ y if accumulate)
template <typename T>
void matvec(const T* w, const T* x, T* y, std::int64_t m, std::int64_t k,
            bool accumulate = false);

// C[M x N] = A[M x K] * B[N x K]^T (+ C if accumulate)
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate = false);

// C[M x N] = A[M x K] * B[K x N] (+ C if accumulate)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate = false);

// C[M x N] = A[K x M]^T * B[K x N] (+ C if accumulate)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate = false);

template <typename T>
T sigmoid_scalar(T x);

}  // namespace detail

}  // namespace e3net::nnops
