#include "e3net/autodiff.hpp"

#include <cmath>
#include <string>

namespace e3net {

namespace {
constexpr double kSiSdrCapDb = 100.0;
constexpr double kLog10Scale = 10.0 / 2.302585092994045684;  // 10 / ln(10)

template <typename T>
T sign_of(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}
}  // namespace

template <typename T>
std::int32_t GradTapeT<T>::check(Var v) const {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw StateError("tape: variable does not belong to this tape");
  return v.id;
}

template <typename T>
TensorT<T>& GradTapeT<T>::grad_buf(std::int32_t id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad = TensorT<T>(val(id).shape());
  return n.grad;
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::push(TensorT<T> value, bool requires_grad,
                                              std::function<void(GradTapeT&)> fn) {
  if (backward_done_)
    throw StateError("tape: recording after backward; start a fresh tape");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward_fn = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::constant(TensorT<T> v) {
  return push(std::move(v), false, nullptr);
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::leaf(const TensorT<T>* external) {
  if (!external) throw StateError("tape: null leaf");
  if (backward_done_) throw StateError("tape: recording after backward; start a fresh tape");
  Node n;
  n.external = external;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
void GradTapeT<T>::backward(Var loss) {
  if (nodes_.empty()) throw StateError("backward before forward: tape is empty");
  if (backward_done_) throw StateError("backward called twice without a new forward");
  const std::int32_t lid = check(loss);
  if (val(lid).numel() != 1) throw ShapeError("backward: loss must be a scalar");
  backward_done_ = true;
  grad_buf(lid)[0] = T(1);
  for (std::int32_t id = static_cast<std::int32_t>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward_fn && !n.grad.empty()) n.backward_fn(*this);
  }
}

template <typename T>
const TensorT<T>& GradTapeT<T>::grad(Var v) {
  const std::int32_t id = check(v);
  if (!backward_done_) throw StateError("grad requested before backward");
  return grad_buf(id);  // zeros if nothing reached this node
}

template <typename T>
const typename GradTapeT<T>::SeLossInfo& GradTapeT<T>::se_loss_info(Var loss) const {
  auto it = se_info_.find(check(loss));
  if (it == se_info_.end()) throw StateError("se_loss_info: not an se_loss node");
  return it->second;
}

// --------------------------------------------------------------------------

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::linear(Var x, Var weight, Var bias) {
  const std::int32_t xi = check(x), wi = check(weight);
  const std::int32_t bi = bias.valid() ? check(bias) : -1;
  const TensorT<T>& xv = val(xi);
  const TensorT<T>& wv = val(wi);
  if (xv.rank() != 2 || wv.rank() != 2)
    throw ShapeError("linear: expected rank-2 input and weight");
  const std::int64_t rows = xv.dim(0), din = xv.dim(1), dout = wv.dim(0);
  require_dim(wv.dim(1), din, "linear", "weight input axis (axis 1)");
  if (bi >= 0) require_dim(val(bi).numel(), dout, "linear", "bias axis (axis 0)");

  TensorT<T> out({rows, dout});
  nnops::detail::gemm_nt<T>(xv.data(), wv.data(), out.data(), rows, din, dout);
  if (bi >= 0) {
    const T* b = val(bi).data();
    for (std::int64_t r = 0; r < rows; ++r) {
      T* orow = out.data() + r * dout;
      for (std::int64_t j = 0; j < dout; ++j) orow[j] += b[j];
    }
  }
  const bool rg = nodes_[xi].requires_grad || nodes_[wi].requires_grad ||
                  (bi >= 0 && nodes_[bi].requires_grad);
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    const TensorT<T>& xval = t.val(xi);
    const TensorT<T>& wval = t.val(wi);
    if (t.nodes_[xi].requires_grad)
      nnops::detail::gemm_nn<T>(gy.data(), wval.data(), t.grad_buf(xi).data(), rows, dout,
                                din, true);
    if (t.nodes_[wi].requires_grad)
      nnops::detail::gemm_tn<T>(gy.data(), xval.data(), t.grad_buf(wi).data(), dout, rows,
                                din, true);
    if (bi >= 0 && t.nodes_[bi].requires_grad) {
      T* db = t.grad_buf(bi).data();
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* grow = gy.data() + r * dout;
        for (std::int64_t j = 0; j < dout; ++j) db[j] += grow[j];
      }
    }
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::linear_concat(Var x1, Var x2, Var weight, Var bias) {
  const std::int32_t x1i = check(x1), x2i = check(x2), wi = check(weight), bi = check(bias);
  const TensorT<T>& v1 = val(x1i);
  const TensorT<T>& v2 = val(x2i);
  const TensorT<T>& wv = val(wi);
  if (v1.rank() != 2 || v2.rank() != 2 || wv.rank() != 2)
    throw ShapeError("linear_concat: expected rank-2 operands");
  const std::int64_t rows = v1.dim(0), d1 = v1.dim(1), d2 = v2.dim(1);
  require_dim(v2.dim(0), rows, "linear_concat", "second input rows (axis 0)");
  require_dim(wv.dim(1), d1 + d2, "linear_concat", "weight input axis (axis 1)");
  const std::int64_t dout = wv.dim(0);
  require_dim(val(bi).numel(), dout, "linear_concat", "bias axis (axis 0)");

  TensorT<T> out({rows, dout});
  const T* b = val(bi).data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* r1 = v1.data() + r * d1;
    const T* r2 = v2.data() + r * d2;
    T* orow = out.data() + r * dout;
    for (std::int64_t o = 0; o < dout; ++o) {
      const T* wrow = wv.data() + o * (d1 + d2);
      orow[o] = nnops::detail::dot<T>(r1, wrow, d1) +
                nnops::detail::dot<T>(r2, wrow + d1, d2) + b[o];
    }
  }
  const bool rg = nodes_[x1i].requires_grad || nodes_[x2i].requires_grad ||
                  nodes_[wi].requires_grad || nodes_[bi].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    const TensorT<T>& w = t.val(wi);
    const bool need1 = t.nodes_[x1i].requires_grad;
    const bool need2 = t.nodes_[x2i].requires_grad;
    const bool needw = t.nodes_[wi].requires_grad;
    const bool needb = t.nodes_[bi].requires_grad;
    T* d1p = need1 ? t.grad_buf(x1i).data() : nullptr;
    T* d2p = need2 ? t.grad_buf(x2i).data() : nullptr;
    T* dwp = needw ? t.grad_buf(wi).data() : nullptr;
    T* dbp = needb ? t.grad_buf(bi).data() : nullptr;
    const TensorT<T>& xv1 = t.val(x1i);
    const TensorT<T>& xv2 = t.val(x2i);
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* grow = gy.data() + r * dout;
      for (std::int64_t o = 0; o < dout; ++o) {
        const T g = grow[o];
        if (g == T(0)) continue;
        const T* wrow = w.data() + o * (d1 + d2);
        if (need1) {
          T* dst = d1p + r * d1;
          for (std::int64_t j = 0; j < d1; ++j) dst[j] += g * wrow[j];
        }
        if (need2) {
          T* dst = d2p + r * d2;
          for (std::int64_t j = 0; j < d2; ++j) dst[j] += g * wrow[d1 + j];
        }
        if (needw) {
          T* dw = dwp + o * (d1 + d2);
          const T* r1 = xv1.data() + r * d1;
          const T* r2 = xv2.data() + r * d2;
          for (std::int64_t j = 0; j < d1; ++j) dw[j] += g * r1[j];
          for (std::int64_t j = 0; j < d2; ++j) dw[d1 + j] += g * r2[j];
        }
        if (needb) dbp[o] += g;
      }
    }
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::prelu(Var x, Var alpha) {
  const std::int32_t xi = check(x), ai = check(alpha);
  const TensorT<T>& xv = val(xi);
  const TensorT<T>& av = val(ai);
  TensorT<T> out = nnops::prelu(xv, av);
  const std::int64_t channels = xv.dim(xv.rank() - 1);
  const bool scalar_slope = av.numel() == 1;
  const bool rg = nodes_[xi].requires_grad || nodes_[ai].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    const TensorT<T>& xval = t.val(xi);
    const TensorT<T>& aval = t.val(ai);
    const std::int64_t n = xval.numel();
    if (t.nodes_[xi].requires_grad) {
      T* dx = t.grad_buf(xi).data();
      for (std::int64_t i = 0; i < n; ++i) {
        const T slope = scalar_slope ? aval[0] : aval[i % channels];
        dx[i] += gy[i] * (xval[i] > T(0) ? T(1) : slope);
      }
    }
    if (t.nodes_[ai].requires_grad) {
      T* da = t.grad_buf(ai).data();
      for (std::int64_t i = 0; i < n; ++i) {
        if (xval[i] <= T(0)) da[scalar_slope ? 0 : i % channels] += gy[i] * xval[i];
      }
    }
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
  const std::int32_t xi = check(x), gi = check(gamma), bi = check(beta);
  const TensorT<T>& xv = val(xi);
  const std::int64_t d = xv.dim(xv.rank() - 1);
  require_dim(val(gi).numel(), d, "layer_norm", "gamma axis (feature axis)");
  require_dim(val(bi).numel(), d, "layer_norm", "beta axis (feature axis)");
  const std::int64_t rows = xv.numel() / d;

  TensorT<T> out(xv.shape());
  std::vector<T> means(static_cast<std::size_t>(rows));
  std::vector<T> invs(static_cast<std::size_t>(rows));
  {
    const T* g = val(gi).data();
    const T* b = val(bi).data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xr = xv.data() + r * d;
      T mean = 0;
      for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
      mean /= T(d);
      T var = 0;
      for (std::int64_t j = 0; j < d; ++j) {
        const T c = xr[j] - mean;
        var += c * c;
      }
      var /= T(d);
      const T inv = T(1) / std::sqrt(var + eps);
      means[static_cast<std::size_t>(r)] = mean;
      invs[static_cast<std::size_t>(r)] = inv;
      T* orow = out.data() + r * d;
      for (std::int64_t j = 0; j < d; ++j) orow[j] = g[j] * (xr[j] - mean) * inv + b[j];
    }
  }
  const bool rg =
      nodes_[xi].requires_grad || nodes_[gi].requires_grad || nodes_[bi].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg,
              [=, means = std::move(means), invs = std::move(invs)](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    const TensorT<T>& xval = t.val(xi);
    const TensorT<T>& gval = t.val(gi);
    const bool needx = t.nodes_[xi].requires_grad;
    const bool needg = t.nodes_[gi].requires_grad;
    const bool needb = t.nodes_[bi].requires_grad;
    T* dx = needx ? t.grad_buf(xi).data() : nullptr;
    T* dg = needg ? t.grad_buf(gi).data() : nullptr;
    T* db = needb ? t.grad_buf(bi).data() : nullptr;
    std::vector<T> xhat(static_cast<std::size_t>(d));
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xr = xval.data() + r * d;
      const T* grow = gy.data() + r * d;
      const T mean = means[static_cast<std::size_t>(r)];
      const T inv = invs[static_cast<std::size_t>(r)];
      for (std::int64_t j = 0; j < d; ++j) xhat[static_cast<std::size_t>(j)] = (xr[j] - mean) * inv;
      if (needx) {
        T m1 = 0, m2 = 0;
        for (std::int64_t j = 0; j < d; ++j) {
          const T gj = grow[j] * gval[j];
          m1 += gj;
          m2 += gj * xhat[static_cast<std::size_t>(j)];
        }
        m1 /= T(d);
        m2 /= T(d);
        T* dxr = dx + r * d;
        for (std::int64_t j = 0; j < d; ++j) {
          const T gj = grow[j] * gval[j];
          dxr[j] += (gj - m1 - xhat[static_cast<std::size_t>(j)] * m2) * inv;
        }
      }
      if (needg)
        for (std::int64_t j = 0; j < d; ++j) dg[j] += grow[j] * xhat[static_cast<std::size_t>(j)];
      if (needb)
        for (std::int64_t j = 0; j < d; ++j) db[j] += grow[j];
    }
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::sigmoid(Var x) {
  const std::int32_t xi = check(x);
  TensorT<T> out = nnops::sigmoid(val(xi));
  const bool rg = nodes_[xi].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    const TensorT<T>& yv = t.val(out_id);
    T* dx = t.grad_buf(xi).data();
    const std::int64_t n = yv.numel();
    for (std::int64_t i = 0; i < n; ++i) dx[i] += gy[i] * yv[i] * (T(1) - yv[i]);
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::tanh(Var x) {
  const std::int32_t xi = check(x);
  TensorT<T> out = nnops::tanh_map(val(xi));
  const bool rg = nodes_[xi].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    const TensorT<T>& yv = t.val(out_id);
    T* dx = t.grad_buf(xi).data();
    const std::int64_t n = yv.numel();
    for (std::int64_t i = 0; i < n; ++i) dx[i] += gy[i] * (T(1) - yv[i] * yv[i]);
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::add(Var a, Var b) {
  const std::int32_t ai = check(a), bi = check(b);
  const TensorT<T>& av = val(ai);
  const TensorT<T>& bv = val(bi);
  if (!av.same_shape(bv))
    throw ShapeError("add: shape mismatch " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  TensorT<T> out(av.shape());
  const std::int64_t n = av.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
  const bool rg = nodes_[ai].requires_grad || nodes_[bi].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    const std::int64_t m = gy.numel();
    if (t.nodes_[ai].requires_grad) {
      T* da = t.grad_buf(ai).data();
      for (std::int64_t i = 0; i < m; ++i) da[i] += gy[i];
    }
    if (t.nodes_[bi].requires_grad) {
      T* db = t.grad_buf(bi).data();
      for (std::int64_t i = 0; i < m; ++i) db[i] += gy[i];
    }
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::sub(Var a, Var b) {
  const std::int32_t ai = check(a), bi = check(b);
  const TensorT<T>& av = val(ai);
  const TensorT<T>& bv = val(bi);
  if (!av.same_shape(bv))
    throw ShapeError("sub: shape mismatch " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  TensorT<T> out(av.shape());
  const std::int64_t n = av.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
  const bool rg = nodes_[ai].requires_grad || nodes_[bi].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    const std::int64_t m = gy.numel();
    if (t.nodes_[ai].requires_grad) {
      T* da = t.grad_buf(ai).data();
      for (std::int64_t i = 0; i < m; ++i) da[i] += gy[i];
    }
    if (t.nodes_[bi].requires_grad) {
      T* db = t.grad_buf(bi).data();
      for (std::int64_t i = 0; i < m; ++i) db[i] -= gy[i];
    }
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::mul(Var a, Var b) {
  const std::int32_t ai = check(a), bi = check(b);
  const TensorT<T>& av = val(ai);
  const TensorT<T>& bv = val(bi);
  if (!av.same_shape(bv))
    throw ShapeError("mul: shape mismatch " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  TensorT<T> out(av.shape());
  const std::int64_t n = av.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = av[i] * bv[i];
  const bool rg = nodes_[ai].requires_grad || nodes_[bi].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    const TensorT<T>& aval = t.val(ai);
    const TensorT<T>& bval = t.val(bi);
    const std::int64_t m = gy.numel();
    if (t.nodes_[ai].requires_grad) {
      T* da = t.grad_buf(ai).data();
      for (std::int64_t i = 0; i < m; ++i) da[i] += gy[i] * bval[i];
    }
    if (t.nodes_[bi].requires_grad) {
      T* db = t.grad_buf(bi).data();
      for (std::int64_t i = 0; i < m; ++i) db[i] += gy[i] * aval[i];
    }
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::scale(Var x, T c) {
  const std::int32_t xi = check(x);
  const TensorT<T>& xv = val(xi);
  TensorT<T> out(xv.shape());
  const std::int64_t n = xv.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = c * xv[i];
  const bool rg = nodes_[xi].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    T* dx = t.grad_buf(xi).data();
    const std::int64_t m = gy.numel();
    for (std::int64_t i = 0; i < m; ++i) dx[i] += c * gy[i];
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::log_plus(Var x, T offset) {
  const std::int32_t xi = check(x);
  const TensorT<T>& xv = val(xi);
  TensorT<T> out(xv.shape());
  const std::int64_t n = xv.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::log(xv[i] + offset);
  const bool rg = nodes_[xi].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    const TensorT<T>& xval = t.val(xi);
    T* dx = t.grad_buf(xi).data();
    const std::int64_t m = gy.numel();
    for (std::int64_t i = 0; i < m; ++i) dx[i] += gy[i] / (xval[i] + offset);
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::sum(Var x) {
  const std::int32_t xi = check(x);
  const TensorT<T>& xv = val(xi);
  T s = 0;
  const std::int64_t n = xv.numel();
  for (std::int64_t i = 0; i < n; ++i) s += xv[i];
  TensorT<T> out({1});
  out[0] = s;
  const bool rg = nodes_[xi].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const T g = t.nodes_[out_id].grad[0];
    T* dx = t.grad_buf(xi).data();
    const std::int64_t m = t.val(xi).numel();
    for (std::int64_t i = 0; i < m; ++i) dx[i] += g;
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::frame_rows(Var x, std::int64_t window,
                                                    std::int64_t hop) {
  const std::int32_t xi = check(x);
  const TensorT<T>& xv = val(xi);
  if (xv.rank() != 2) throw ShapeError("frame_rows: expected rank-2 input [items x samples]");
  const std::int64_t items = xv.dim(0), len = xv.dim(1);
  if (len < window) throw ShapeError("input shorter than one frame");
  const std::int64_t t_frames = nnops::num_frames(len, window, hop);
  TensorT<T> out({items * t_frames, window});
  for (std::int64_t b = 0; b < items; ++b) {
    const T* src = xv.data() + b * len;
    for (std::int64_t tf = 0; tf < t_frames; ++tf) {
      T* dst = out.data() + (b * t_frames + tf) * window;
      const T* s = src + tf * hop;
      for (std::int64_t j = 0; j < window; ++j) dst[j] = s[j];
    }
  }
  const bool rg = nodes_[xi].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    T* dx = t.grad_buf(xi).data();
    for (std::int64_t b = 0; b < items; ++b) {
      T* dst = dx + b * len;
      for (std::int64_t tf = 0; tf < t_frames; ++tf) {
        const T* g = gy.data() + (b * t_frames + tf) * window;
        T* d = dst + tf * hop;
        for (std::int64_t j = 0; j < window; ++j) d[j] += g[j];
      }
    }
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::slice_rows(Var x, std::int64_t begin,
                                                    std::int64_t count) {
  const std::int32_t xi = check(x);
  const TensorT<T>& xv = val(xi);
  if (xv.rank() != 2) throw ShapeError("slice_rows: expected rank-2 input");
  const std::int64_t rows = xv.dim(0), cols = xv.dim(1);
  if (begin < 0 || count < 1 || begin + count > rows)
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + std::to_string(rows) +
                     " rows");
  TensorT<T> out({count, cols});
  for (std::int64_t i = 0; i < count * cols; ++i) out[i] = xv[begin * cols + i];
  const bool rg = nodes_[xi].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    T* dx = t.grad_buf(xi).data();
    for (std::int64_t i = 0; i < count * cols; ++i) dx[begin * cols + i] += gy[i];
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::stack_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("stack_rows: nothing to stack");
  std::vector<std::int32_t> ids;
  ids.reserve(parts.size());
  std::int64_t rows = 0;
  const std::int64_t cols = val(check(parts[0])).dim(1);
  bool rg = false;
  for (Var p : parts) {
    const std::int32_t id = check(p);
    const TensorT<T>& v = val(id);
    if (v.rank() != 2) throw ShapeError("stack_rows: expected rank-2 parts");
    require_dim(v.dim(1), cols, "stack_rows", "column axis (axis 1)");
    rows += v.dim(0);
    rg = rg || nodes_[id].requires_grad;
    ids.push_back(id);
  }
  TensorT<T> out({rows, cols});
  std::int64_t at = 0;
  for (std::int32_t id : ids) {
    const TensorT<T>& v = val(id);
    const std::int64_t n = v.numel();
    for (std::int64_t i = 0; i < n; ++i) out[at + i] = v[i];
    at += n;
  }
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=, ids = std::move(ids)](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    std::int64_t off = 0;
    for (std::int32_t id : ids) {
      const std::int64_t n = t.val(id).numel();
      if (t.nodes_[id].requires_grad) {
        T* dx = t.grad_buf(id).data();
        for (std::int64_t i = 0; i < n; ++i) dx[i] += gy[off + i];
      }
      off += n;
    }
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::overlap_add_tmajor(Var frames, std::int64_t batch,
                                                            std::int64_t hop) {
  const std::int32_t fi = check(frames);
  const TensorT<T>& fv = val(fi);
  if (fv.rank() != 2) throw ShapeError("overlap_add_tmajor: expected rank-2 frames");
  if (fv.dim(0) % batch != 0)
    throw ShapeError("overlap_add_tmajor: rows not divisible by batch size");
  const std::int64_t t_frames = fv.dim(0) / batch, w = fv.dim(1);
  const std::int64_t out_len = (t_frames - 1) * hop + w;
  TensorT<T> out({batch, out_len});
  for (std::int64_t tf = 0; tf < t_frames; ++tf) {
    for (std::int64_t b = 0; b < batch; ++b) {
      const T* src = fv.data() + (tf * batch + b) * w;
      T* dst = out.data() + b * out_len + tf * hop;
      for (std::int64_t j = 0; j < w; ++j) dst[j] += src[j];
    }
  }
  const bool rg = nodes_[fi].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    T* df = t.grad_buf(fi).data();
    for (std::int64_t tf = 0; tf < t_frames; ++tf) {
      for (std::int64_t b = 0; b < batch; ++b) {
        T* dst = df + (tf * batch + b) * w;
        const T* src = gy.data() + b * out_len + tf * hop;
        for (std::int64_t j = 0; j < w; ++j) dst[j] += src[j];
      }
    }
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::lstm_sequence(Var x, std::int64_t batch,
                                                       const std::array<Var, 4>& w,
                                                       const std::array<Var, 4>& u,
                                                       const std::array<Var, 4>& b) {
  const std::int32_t xi = check(x);
  std::array<std::int32_t, 4> wi{}, ui{}, bi{};
  for (int g = 0; g < 4; ++g) {
    wi[g] = check(w[g]);
    ui[g] = check(u[g]);
    bi[g] = check(b[g]);
  }
  const TensorT<T>& xv = val(xi);
  if (xv.rank() != 2) throw ShapeError("lstm_sequence: expected rank-2 t-major input");
  if (xv.dim(0) % batch != 0)
    throw ShapeError("lstm_sequence: rows not divisible by batch size");
  const std::int64_t t_frames = xv.dim(0) / batch;
  const std::int64_t d = xv.dim(1);
  const std::int64_t h = val(wi[0]).dim(0);
  for (int g = 0; g < 4; ++g) {
    require_dim(val(wi[g]).dim(1), d, "lstm_sequence", "input weight axis 1");
    require_dim(val(wi[g]).dim(0), h, "lstm_sequence", "input weight axis 0");
    require_dim(val(ui[g]).dim(1), h, "lstm_sequence", "recurrent weight axis 1");
    require_dim(val(ui[g]).dim(0), h, "lstm_sequence", "recurrent weight axis 0");
    require_dim(val(bi[g]).numel(), h, "lstm_sequence", "bias axis");
  }
  const std::int64_t rows = t_frames * batch;

  // Saved activations for BPTT: post-activation gates, cell states, tanh(c).
  TensorT<T> gates({4 * rows, h});
  TensorT<T> cells({rows, h});
  TensorT<T> tanhc({rows, h});
  TensorT<T> hs({rows, h});

  {
    const T* wp[4];
    const T* up[4];
    const T* bp[4];
    for (int g = 0; g < 4; ++g) {
      wp[g] = val(wi[g]).data();
      up[g] = val(ui[g]).data();
      bp[g] = val(bi[g]).data();
    }
    TensorT<T> pre({batch, h});
    std::vector<T> hprev(static_cast<std::size_t>(batch * h), T(0));
    std::vector<T> cprev(static_cast<std::size_t>(batch * h), T(0));
    for (std::int64_t tf = 0; tf < t_frames; ++tf) {
      const T* xt = xv.data() + tf * batch * d;
      for (int g = 0; g < 4; ++g) {
        nnops::detail::gemm_nt<T>(xt, wp[g], pre.data(), batch, d, h);
        nnops::detail::gemm_nt<T>(hprev.data(), up[g], pre.data(), batch, h, h, true);
        T* grow = gates.data() + (std::int64_t(g) * rows + tf * batch) * h;
        for (std::int64_t r = 0; r < batch; ++r)
          for (std::int64_t j = 0; j < h; ++j) {
            const T v = pre.at(r, j) + bp[g][j];
            grow[r * h + j] =
                g == kGateG ? std::tanh(v) : nnops::detail::sigmoid_scalar(v);
          }
      }
      const T* gi = gates.data() + (std::int64_t(kGateI) * rows + tf * batch) * h;
      const T* gf = gates.data() + (std::int64_t(kGateF) * rows + tf * batch) * h;
      const T* gg = gates.data() + (std::int64_t(kGateG) * rows + tf * batch) * h;
      const T* go = gates.data() + (std::int64_t(kGateO) * rows + tf * batch) * h;
      T* crow = cells.data() + tf * batch * h;
      T* trow = tanhc.data() + tf * batch * h;
      T* hrow = hs.data() + tf * batch * h;
      for (std::int64_t i = 0; i < batch * h; ++i) {
        const T cv = gf[i] * cprev[static_cast<std::size_t>(i)] + gi[i] * gg[i];
        crow[i] = cv;
        const T tc = std::tanh(cv);
        trow[i] = tc;
        hrow[i] = go[i] * tc;
        cprev[static_cast<std::size_t>(i)] = cv;
        hprev[static_cast<std::size_t>(i)] = hrow[i];
      }
    }
  }

  bool rg = nodes_[xi].requires_grad;
  for (int g = 0; g < 4; ++g)
    rg = rg || nodes_[wi[g]].requires_grad || nodes_[ui[g]].requires_grad ||
         nodes_[bi[g]].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(hs), rg,
              [=, gates = std::move(gates), cells = std::move(cells),
               tanhc = std::move(tanhc)](GradTapeT& t) {
    const TensorT<T>& gy = t.nodes_[out_id].grad;
    const TensorT<T>& xval = t.val(xi);
    const TensorT<T>& hval = t.val(out_id);
    const bool needx = t.nodes_[xi].requires_grad;
    T* dx = needx ? t.grad_buf(xi).data() : nullptr;
    T* dw[4];
    T* du[4];
    T* db[4];
    const T* wp[4];
    const T* up[4];
    for (int g = 0; g < 4; ++g) {
      dw[g] = t.nodes_[wi[g]].requires_grad ? t.grad_buf(wi[g]).data() : nullptr;
      du[g] = t.nodes_[ui[g]].requires_grad ? t.grad_buf(ui[g]).data() : nullptr;
      db[g] = t.nodes_[bi[g]].requires_grad ? t.grad_buf(bi[g]).data() : nullptr;
      wp[g] = t.val(wi[g]).data();
      up[g] = t.val(ui[g]).data();
    }
    std::vector<T> dh(static_cast<std::size_t>(batch * h), T(0));       // carry from t+1
    std::vector<T> dh_next(static_cast<std::size_t>(batch * h), T(0));  // carry to t-1
    std::vector<T> dc(static_cast<std::size_t>(batch * h), T(0));
    TensorT<T> dpre({batch, h});
    for (std::int64_t tf = t_frames - 1; tf >= 0; --tf) {
      const T* gi = gates.data() + (std::int64_t(kGateI) * rows + tf * batch) * h;
      const T* gf = gates.data() + (std::int64_t(kGateF) * rows + tf * batch) * h;
      const T* gg = gates.data() + (std::int64_t(kGateG) * rows + tf * batch) * h;
      const T* go = gates.data() + (std::int64_t(kGateO) * rows + tf * batch) * h;
      const T* trow = tanhc.data() + tf * batch * h;
      const T* gout = gy.data() + tf * batch * h;
      const T* cprev = tf > 0 ? cells.data() + (tf - 1) * batch * h : nullptr;
      const T* hprev = tf > 0 ? hval.data() + (tf - 1) * batch * h : nullptr;
      const T* xt = xval.data() + tf * batch * d;

      // total dL/dh_t = carried recurrent gradient + this step's output grad,
      // then fold the h -> c path into dc
      for (std::int64_t i = 0; i < batch * h; ++i) {
        const T dht = dh[static_cast<std::size_t>(i)] + gout[i];
        dh[static_cast<std::size_t>(i)] = dht;
        dc[static_cast<std::size_t>(i)] += dht * go[i] * (T(1) - trow[i] * trow[i]);
      }

      std::fill(dh_next.begin(), dh_next.end(), T(0));
      for (int g = 0; g < 4; ++g) {
        const T* gate = gates.data() + (std::int64_t(g) * rows + tf * batch) * h;
        T* dp = dpre.data();
        for (std::int64_t i = 0; i < batch * h; ++i) {
          T dgate;
          switch (g) {
            case kGateI: dgate = dc[static_cast<std::size_t>(i)] * gg[i]; break;
            case kGateF:
              dgate = cprev ? dc[static_cast<std::size_t>(i)] * cprev[i] : T(0);
              break;
            case kGateG: dgate = dc[static_cast<std::size_t>(i)] * gi[i]; break;
            default: dgate = dh[static_cast<std::size_t>(i)] * trow[i]; break;
          }
          const T gv = gate[i];
          dp[i] = g == kGateG ? dgate * (T(1) - gv * gv) : dgate * gv * (T(1) - gv);
        }
        if (dw[g])
          nnops::detail::gemm_tn<T>(dpre.data(), xt, dw[g], h, batch, d, true);
        if (du[g] && hprev)
          nnops::detail::gemm_tn<T>(dpre.data(), hprev, du[g], h, batch, h, true);
        if (db[g])
          for (std::int64_t r = 0; r < batch; ++r)
            for (std::int64_t j = 0; j < h; ++j) db[g][j] += dpre.at(r, j);
        if (needx)
          nnops::detail::gemm_nn<T>(dpre.data(), wp[g], dx + tf * batch * d, batch, h, d,
                                    true);
        if (tf > 0)
          nnops::detail::gemm_nn<T>(dpre.data(), up[g], dh_next.data(), batch, h, h, true);
      }
      std::swap(dh, dh_next);
      for (std::int64_t i = 0; i < batch * h; ++i)
        dc[static_cast<std::size_t>(i)] *= gf[i];
    }
  });
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::se_loss(Var enhanced, const TensorT<T>& targets,
                                                 T lambda) {
  const std::int32_t ei = check(enhanced);
  const TensorT<T>& ev = val(ei);
  if (ev.rank() != 2) throw ShapeError("se_loss: expected rank-2 [items x samples]");
  if (!ev.same_shape(targets))
    throw ShapeError("se_loss: enhanced " + shape_str(ev.shape()) + " vs targets " +
                     shape_str(targets.shape()));
  const std::int64_t items = ev.dim(0), len = ev.dim(1);

  SeLossInfo info;
  // Per-item quantities saved for the backward pass.
  std::vector<double> ets(items), tts(items), s2s(items), errs(items);
  std::vector<std::uint8_t> capped(items), zero_target(items);
  double total = 0;
  for (std::int64_t b = 0; b < items; ++b) {
    const T* e = ev.data() + b * len;
    const T* t = targets.data() + b * len;
    double et = 0, tt = 0, ee = 0, l1 = 0;
    for (std::int64_t i = 0; i < len; ++i) {
      et += double(e[i]) * double(t[i]);
      tt += double(t[i]) * double(t[i]);
      ee += double(e[i]) * double(e[i]);
      l1 += std::abs(double(e[i]) - double(t[i]));
    }
    l1 /= double(len);
    double si = 0;
    bool cap = false, zt = false;
    if (tt == 0) {
      zt = true;  // all-zero target: pure L1 fallback
    } else {
      const double s2 = et * et / tt;
      const double err2 = ee - s2;
      if (err2 <= 0 || s2 / (err2 + 1e-300) >= 1e10) {
        si = kSiSdrCapDb;
        cap = true;
      } else if (s2 <= 0 || err2 / (s2 + 1e-300) >= 1e10) {
        si = -kSiSdrCapDb;
        cap = true;
      } else {
        si = 10.0 * std::log10(s2 / err2);
        if (si > kSiSdrCapDb) {
          si = kSiSdrCapDb;
          cap = true;
        } else if (si < -kSiSdrCapDb) {
          si = -kSiSdrCapDb;
          cap = true;
        }
      }
      s2s[b] = s2;
      errs[b] = err2;
    }
    ets[b] = et;
    tts[b] = tt;
    capped[b] = cap;
    zero_target[b] = zt;
    info.si_sdr_db.push_back(zt ? 0.0 : si);
    info.l1.push_back(l1);
    total += (zt ? 0.0 : -si) + double(lambda) * l1;
    info.si_component += (zt ? 0.0 : -si);
    info.l1_component += double(lambda) * l1;
  }
  total /= double(items);
  info.si_component /= double(items);
  info.l1_component /= double(items);

  TensorT<T> out({1});
  out[0] = T(total);
  const bool rg = nodes_[ei].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  Var v = push(std::move(out), rg,
               [=, ets = std::move(ets), tts = std::move(tts), s2s = std::move(s2s),
                errs = std::move(errs), capped = std::move(capped),
                zero_target = std::move(zero_target)](GradTapeT& t) {
    const T g = t.nodes_[out_id].grad[0];
    const TensorT<T>& eval_ = t.val(ei);
    T* de = t.grad_buf(ei).data();
    const T* tv = targets.data();
    for (std::int64_t b = 0; b < items; ++b) {
      const T* e = eval_.data() + b * len;
      const T* tr = tv + b * len;
      T* d = de + b * len;
      const double gb = double(g) / double(items);
      // L1 term
      const double gl1 = gb * double(lambda) / double(len);
      for (std::int64_t i = 0; i < len; ++i) {
        const double diff = double(e[i]) - double(tr[i]);
        d[i] += T(gl1 * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0)));
      }
      if (zero_target[b] || capped[b]) continue;  // capped region: zero si gradient
      const double et = ets[b], tt = tts[b], s2 = s2s[b], err2 = errs[b];
      const double a = 2.0 * et / tt;
      // d(-si)/de = -10/ln10 * [a*t/s2 - (2e - a*t)/err2]
      const double c1 = -gb * kLog10Scale * (a / s2 + a / err2);
      const double c2 = gb * kLog10Scale * 2.0 / err2;
      for (std::int64_t i = 0; i < len; ++i)
        d[i] += T(c1 * double(tr[i]) + c2 * double(e[i]));
    }
  });
  se_info_[v.id] = std::move(info);
  return v;
}

template <typename T>
typename GradTapeT<T>::Var GradTapeT<T>::weighted_l1(Var a, const TensorT<T>& b,
                                                     const std::vector<T>& row_weights,
                                                     T norm) {
  const std::int32_t ai = check(a);
  const TensorT<T>& av = val(ai);
  if (av.rank() != 2) throw ShapeError("weighted_l1: expected rank-2 input");
  if (!av.same_shape(b))
    throw ShapeError("weighted_l1: shape mismatch " + shape_str(av.shape()) + " vs " +
                     shape_str(b.shape()));
  const std::int64_t rows = av.dim(0), cols = av.dim(1);
  if (static_cast<std::int64_t>(row_weights.size()) != rows)
    throw ShapeError("weighted_l1: row weight axis is " + std::to_string(row_weights.size()) +
                     ", expected " + std::to_string(rows));
  double total = 0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (row_weights[r] == T(0)) continue;
    const T* ar = av.data() + r * cols;
    const T* br = b.data() + r * cols;
    double s = 0;
    for (std::int64_t j = 0; j < cols; ++j) s += std::abs(double(ar[j]) - double(br[j]));
    total += double(row_weights[r]) * s;
  }
  TensorT<T> out({1});
  out[0] = T(total / double(norm));
  const bool rg = nodes_[ai].requires_grad;
  const std::int32_t out_id = static_cast<std::int32_t>(nodes_.size());
  return push(std::move(out), rg, [=, w = row_weights](GradTapeT& t) {
    const T g = t.nodes_[out_id].grad[0];
    const TensorT<T>& aval = t.val(ai);
    T* da = t.grad_buf(ai).data();
    for (std::int64_t r = 0; r < rows; ++r) {
      if (w[r] == T(0)) continue;
      const T* ar = aval.data() + r * cols;
      const T* br = b.data() + r * cols;
      T* dr = da + r * cols;
      const T c = g * w[r] / norm;
      for (std::int64_t j = 0; j < cols; ++j) dr[j] += c * sign_of(ar[j] - br[j]);
    }
  });
}

template class GradTapeT<float>;
template class GradTapeT<double>;

}  // namespace e3net
