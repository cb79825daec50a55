#include "e3net/nnops.hpp"

#include <cmath>
#include <string>

namespace e3net {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += " x ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void require_dim(std::int64_t got, std::int64_t want, const char* op, const char* axis) {
  if (got != want)
    throw ShapeError(std::string(op) + ": " + axis + " is " + std::to_string(got) +
                     ", expected " + std::to_string(want));
}

}  // namespace e3net

namespace e3net::nnops {

namespace detail {

// Float reductions use 16 explicit accumulator lanes combined in a fixed
// tree. The order never depends on data alignment, so results are
// reproducible bit for bit.
template <>
float dot<float>(const float* a, const float* b, std::int64_t n) {
  float acc[16] = {0};
  std::int64_t k = 0;
  for (; k + 16 <= n; k += 16)
    for (int j = 0; j < 16; ++j) acc[j] += a[k + j] * b[k + j];
  float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  for (int j = 0; j < 4; ++j) {
    s0 += acc[j];
    s1 += acc[4 + j];
    s2 += acc[8 + j];
    s3 += acc[12 + j];
  }
  float s = (s0 + s1) + (s2 + s3);
  for (; k < n; ++k) s += a[k] * b[k];
  return s;
}

// Double path: strict left-to-right summation (gradient-checking mode).
template <>
double dot<double>(const double* a, const double* b, std::int64_t n) {
  double s = 0;
  for (std::int64_t k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

template <>
void matvec<float>(const float* w, const float* x, float* y, std::int64_t m,
                   std::int64_t k, bool accumulate) {
  std::int64_t r = 0;
  for (; r + 4 <= m; r += 4) {
    const float* w0 = w + r * k;
    const float* w1 = w0 + k;
    const float* w2 = w1 + k;
    const float* w3 = w2 + k;
    float a0[16] = {0}, a1[16] = {0}, a2[16] = {0}, a3[16] = {0};
    std::int64_t i = 0;
    for (; i + 16 <= k; i += 16) {
      for (int j = 0; j < 16; ++j) {
        const float xv = x[i + j];
        a0[j] += w0[i + j] * xv;
        a1[j] += w1[i + j] * xv;
        a2[j] += w2[i + j] * xv;
        a3[j] += w3[i + j] * xv;
      }
    }
    float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    for (int j = 0; j < 16; ++j) {
      s0 += a0[j];
      s1 += a1[j];
      s2 += a2[j];
      s3 += a3[j];
    }
    for (; i < k; ++i) {
      s0 += w0[i] * x[i];
      s1 += w1[i] * x[i];
      s2 += w2[i] * x[i];
      s3 += w3[i] * x[i];
    }
    if (accumulate) {
      y[r] += s0;
      y[r + 1] += s1;
      y[r + 2] += s2;
      y[r + 3] += s3;
    } else {
      y[r] = s0;
      y[r + 1] = s1;
      y[r + 2] = s2;
      y[r + 3] = s3;
    }
  }
  for (; r < m; ++r) {
    const float s = dot<float>(w + r * k, x, k);
    if (accumulate)
      y[r] += s;
    else
      y[r] = s;
  }
}

template <>
void matvec<double>(const double* w, const double* x, double* y, std::int64_t m,
                    std::int64_t k, bool accumulate) {
  for (std::int64_t r = 0; r < m; ++r) {
    const double s = dot<double>(w + r * k, x, k);
    if (accumulate)
      y[r] += s;
    else
      y[r] = s;
  }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate) {
  for (std::int64_t r = 0; r < m; ++r)
    matvec<T>(b, a + r * k, c + r * n, n, k, accumulate);
}

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate) {
  for (std::int64_t r = 0; r < m; ++r) {
    T* crow = c + r * n;
    if (!accumulate)
      for (std::int64_t j = 0; j < n; ++j) crow[j] = T(0);
    const T* arow = a + r * k;
    for (std::int64_t i = 0; i < k; ++i) {
      const T av = arow[i];
      const T* brow = b + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate) {
  if (!accumulate)
    for (std::int64_t i = 0; i < m * n; ++i) c[i] = T(0);
  for (std::int64_t i = 0; i < k; ++i) {
    const T* arow = a + i * m;
    const T* brow = b + i * n;
    for (std::int64_t r = 0; r < m; ++r) {
      const T av = arow[r];
      T* crow = c + r * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template float dot<float>(const float*, const float*, std::int64_t);
template double dot<double>(const double*, const double*, std::int64_t);
template void gemm_nt<float>(const float*, const float*, float*, std::int64_t,
                             std::int64_t, std::int64_t, bool);
template void gemm_nt<double>(const double*, const double*, double*, std::int64_t,
                              std::int64_t, std::int64_t, bool);
template void gemm_nn<float>(const float*, const float*, float*, std::int64_t,
                             std::int64_t, std::int64_t, bool);
template void gemm_nn<double>(const double*, const double*, double*, std::int64_t,
                              std::int64_t, std::int64_t, bool);
template void gemm_tn<float>(const float*, const float*, float*, std::int64_t,
                             std::int64_t, std::int64_t, bool);
template void gemm_tn<double>(const double*, const double*, double*, std::int64_t,
                              std::int64_t, std::int64_t, bool);
template float sigmoid_scalar<float>(float);
template double sigmoid_scalar<double>(double);

}  // namespace detail

template <typename T>
TensorT<T> frame_signal(const TensorT<T>& x, std::int64_t window, std::int64_t hop) {
  if (x.rank() != 1)
    throw ShapeError("frame_signal: expected rank-1 signal, got " + shape_str(x.shape()));
  if (hop < 1 || window < hop)
    throw ConfigError("frame_signal: need window >= hop >= 1, got window=" +
                      std::to_string(window) + " hop=" + std::to_string(hop));
  const std::int64_t len = x.numel();
  if (len < window) throw ShapeError("input shorter than one frame");
  const std::int64_t t = num_frames(len, window, hop);
  TensorT<T> out({t, window});
  for (std::int64_t i = 0; i < t; ++i) {
    const T* src = x.data() + i * hop;
    T* dst = out.data() + i * window;
    for (std::int64_t j = 0; j < window; ++j) dst[j] = src[j];
  }
  return out;
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& bias) {
  if (x.rank() != 2) throw ShapeError("linear: expected rank-2 input, got " + shape_str(x.shape()));
  if (weight.rank() != 2)
    throw ShapeError("linear: expected rank-2 weight, got " + shape_str(weight.shape()));
  const std::int64_t rows = x.dim(0), din = x.dim(1);
  const std::int64_t dout = weight.dim(0);
  require_dim(weight.dim(1), din, "linear", "weight input axis (axis 1)");
  require_dim(bias.numel(), dout, "linear", "bias axis (axis 0)");
  TensorT<T> out({rows, dout});
  detail::gemm_nt<T>(x.data(), weight.data(), out.data(), rows, din, dout);
  const T* b = bias.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    T* orow = out.data() + r * dout;
    for (std::int64_t j = 0; j < dout; ++j) orow[j] += b[j];
  }
  return out;
}

template <typename T>
TensorT<T> conv1d_encoder(const TensorT<T>& frames, const TensorT<T>& filters,
                          const TensorT<T>& bias) {
  if (frames.rank() != 2)
    throw ShapeError("conv1d_encoder: expected rank-2 frames, got " + shape_str(frames.shape()));
  if (filters.rank() != 2)
    throw ShapeError("conv1d_encoder: expected rank-2 filters, got " + shape_str(filters.shape()));
  require_dim(filters.dim(1), frames.dim(1), "conv1d_encoder", "filter width (axis 1)");
  require_dim(bias.numel(), filters.dim(0), "conv1d_encoder", "bias axis (axis 0)");
  // With stride == hop and kernel == window the conv is a per-frame matmul.
  return linear(frames, filters, bias);
}

template <typename T>
TensorT<T> prelu(const TensorT<T>& x, const TensorT<T>& alpha) {
  const std::int64_t channels = x.rank() >= 1 ? x.dim(x.rank() - 1) : 1;
  if (alpha.numel() != channels && alpha.numel() != 1)
    throw ShapeError("prelu: alpha axis is " + std::to_string(alpha.numel()) +
                     ", expected " + std::to_string(channels) + " (channel axis) or 1");
  TensorT<T> out(x.shape());
  const T* a = alpha.data();
  const bool scalar_slope = alpha.numel() == 1;
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const T v = x[i];
    const T slope = scalar_slope ? a[0] : a[i % channels];
    out[i] = v > T(0) ? v : slope * v;
  }
  return out;
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma,
                      const TensorT<T>& beta, T eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: expected rank >= 1 input");
  const std::int64_t d = x.dim(x.rank() - 1);
  if (d == 0) throw ShapeError("layer_norm: feature axis must be non-empty");
  require_dim(gamma.numel(), d, "layer_norm", "gamma axis (feature axis)");
  require_dim(beta.numel(), d, "layer_norm", "beta axis (feature axis)");
  const std::int64_t rows = x.numel() / d;
  TensorT<T> out(x.shape());
  const T* g = gamma.data();
  const T* b = beta.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T* orow = out.data() + r * d;
    T mean = 0;
    for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= T(d);
    T var = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      const T c = xr[j] - mean;
      var += c * c;
    }
    var /= T(d);  // population variance
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::int64_t j = 0; j < d; ++j) orow[j] = g[j] * (xr[j] - mean) * inv + b[j];
  }
  return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = detail::sigmoid_scalar(x[i]);
  return out;
}

template <typename T>
TensorT<T> tanh_map(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
  return out;
}

template <typename T>
void lstm_cell_step(const TensorT<T>& x, const TensorT<T>& h_prev,
                    const TensorT<T>& c_prev, const LstmCellParamsT<T>& p,
                    TensorT<T>& h_out, TensorT<T>& c_out) {
  const std::int64_t d = x.numel();
  const std::int64_t h = h_prev.numel();
  require_dim(c_prev.numel(), h, "lstm_cell_step", "cell state axis");
  for (int gidx = 0; gidx < 4; ++gidx) {
    require_dim(p.w[gidx]->dim(1), d, "lstm_cell_step", "input weight axis 1");
    require_dim(p.w[gidx]->dim(0), h, "lstm_cell_step", "input weight axis 0");
    require_dim(p.u[gidx]->dim(1), h, "lstm_cell_step", "recurrent weight axis 1");
    require_dim(p.u[gidx]->dim(0), h, "lstm_cell_step", "recurrent weight axis 0");
    require_dim(p.b[gidx]->numel(), h, "lstm_cell_step", "bias axis");
  }
  if (h_out.shape() != h_prev.shape()) h_out = TensorT<T>(h_prev.shape());
  if (c_out.shape() != c_prev.shape()) c_out = TensorT<T>(c_prev.shape());

  TensorT<T> gates({4, h});
  for (int gidx = 0; gidx < 4; ++gidx) {
    T* grow = gates.data() + gidx * h;
    detail::matvec<T>(p.w[gidx]->data(), x.data(), grow, h, d, false);
    detail::matvec<T>(p.u[gidx]->data(), h_prev.data(), grow, h, h, true);
    const T* brow = p.b[gidx]->data();
    for (std::int64_t j = 0; j < h; ++j) grow[j] += brow[j];
  }
  const T* gi = gates.data();
  const T* gf = gates.data() + h;
  const T* gg = gates.data() + 2 * h;
  const T* go = gates.data() + 3 * h;
  for (std::int64_t j = 0; j < h; ++j) {
    const T iv = detail::sigmoid_scalar(gi[j]);
    const T fv = detail::sigmoid_scalar(gf[j]);
    const T gv = std::tanh(gg[j]);
    const T ov = detail::sigmoid_scalar(go[j]);
    const T cv = fv * c_prev[j] + iv * gv;
    c_out[j] = cv;
    h_out[j] = ov * std::tanh(cv);
  }
}

template <typename T>
TensorT<T> overlap_add(const TensorT<T>& frames, std::int64_t hop) {
  if (frames.rank() != 2)
    throw ShapeError("overlap_add: expected rank-2 frames, got " + shape_str(frames.shape()));
  const std::int64_t t = frames.dim(0), w = frames.dim(1);
  if (hop < 1 || hop > w)
    throw ConfigError("overlap_add: need 1 <= hop <= frame width");
  TensorT<T> out({(t - 1) * hop + w});
  for (std::int64_t i = 0; i < t; ++i) {
    const T* src = frames.data() + i * w;
    T* dst = out.data() + i * hop;
    for (std::int64_t j = 0; j < w; ++j) dst[j] += src[j];
  }
  return out;
}

template <typename T>
TensorT<T> overlap_add_decoder(const TensorT<T>& masked, const TensorT<T>& filters,
                               const TensorT<T>& bias, std::int64_t hop) {
  if (masked.rank() != 2)
    throw ShapeError("overlap_add_decoder: expected rank-2 features, got " +
                     shape_str(masked.shape()));
  if (masked.dim(0) == 0) return TensorT<T>();
  if (filters.rank() != 2)
    throw ShapeError("overlap_add_decoder: expected rank-2 filters, got " +
                     shape_str(filters.shape()));
  require_dim(filters.dim(0), masked.dim(1), "overlap_add_decoder",
              "filter feature axis (axis 0)");
  const std::int64_t t = masked.dim(0), f = masked.dim(1), w = filters.dim(1);
  require_dim(bias.numel(), w, "overlap_add_decoder", "bias axis (axis 0)");
  // One output frame per input frame: frame[t] = masked[t] * filters + bias.
  TensorT<T> frames({t, w});
  detail::gemm_nn<T>(masked.data(), filters.data(), frames.data(), t, f, w);
  const T* b = bias.data();
  for (std::int64_t i = 0; i < t; ++i) {
    T* row = frames.data() + i * w;
    for (std::int64_t j = 0; j < w; ++j) row[j] += b[j];
  }
  return overlap_add(frames, hop);
}

#define E3NET_INSTANTIATE_KERNELS(T)                                                       \
  template TensorT<T> frame_signal<T>(const TensorT<T>&, std::int64_t, std::int64_t);     \
  template TensorT<T> conv1d_encoder<T>(const TensorT<T>&, const TensorT<T>&,             \
                                        const TensorT<T>&);                               \
  template TensorT<T> prelu<T>(const TensorT<T>&, const TensorT<T>&);                     \
  template TensorT<T> layer_norm<T>(const TensorT<T>&, const TensorT<T>&,                 \
                                    const TensorT<T>&, T);                                \
  template TensorT<T> linear<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&); \
  template TensorT<T> sigmoid<T>(const TensorT<T>&);                                      \
  template TensorT<T> tanh_map<T>(const TensorT<T>&);                                     \
  template void lstm_cell_step<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,\
                                  const LstmCellParamsT<T>&, TensorT<T>&, TensorT<T>&);   \
  template TensorT<T> overlap_add<T>(const TensorT<T>&, std::int64_t);                    \
  template TensorT<T> overlap_add_decoder<T>(const TensorT<T>&, const TensorT<T>&,        \
                                             const TensorT<T>&, std::int64_t);

E3NET_INSTANTIATE_KERNELS(float)
E3NET_INSTANTIATE_KERNELS(double)

#undef E3NET_INSTANTIATE_KERNELS

}  // namespace e3net::nnops
