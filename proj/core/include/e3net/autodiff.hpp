#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "e3net/nnops.hpp"
#include "e3net/tensor.hpp"

namespace e3net {

// Reverse-mode tape. Ops append nodes in forward order; backward() replays
// the recorded closures in exact reverse order. A tape is single-owner and
// single-use: record one forward graph, run backward once, then discard.
template <typename T>
class GradTapeT {
 public:
  struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
  };

  // Per-item pieces of a scale-invariant-SDR + L1 loss, recorded at forward
  // time for logging.
  struct SeLossInfo {
    std::vector<double> si_sdr_db;  // per item, after the +/-100 dB cap
    std::vector<double> l1;         // per item, mean |e - t|
    double si_component = 0;        // batch mean of -si_sdr_db
    double l1_component = 0;        // batch mean of lambda * l1
  };

  GradTapeT() = default;
  GradTapeT(const GradTapeT&) = delete;
  GradTapeT& operator=(const GradTapeT&) = delete;

  // --- leaves ---------------------------------------------------------
  Var constant(TensorT<T> v);
  // Registers external storage as a differentiable leaf. The pointee must
  // outlive the tape; its gradient is accumulated on the tape.
  Var leaf(const TensorT<T>* external);

  // --- kernels --------------------------------------------------------
  // out = x * W^T (+ bias when valid); W is [Dout x Din].
  Var linear(Var x, Var weight, Var bias = Var{});
  // Two-input linear over a weight stored as one [Dout x (D1+D2)] block:
  // out = x1 * W[:, :D1]^T + x2 * W[:, D1:]^T + bias.
  Var linear_concat(Var x1, Var x2, Var weight, Var bias);
  Var prelu(Var x, Var alpha);
  Var layer_norm(Var x, Var gamma, Var beta, T eps);
  Var sigmoid(Var x);
  Var tanh(Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, T c);
  // out = log(x + offset), elementwise.
  Var log_plus(Var x, T offset);
  Var sum(Var x);

  // Frames every row of x [B x L] into [B*T x W], rows grouped by item.
  Var frame_rows(Var x, std::int64_t window, std::int64_t hop);
  // Rows [begin, begin+count) of a rank-2 tensor.
  Var slice_rows(Var x, std::int64_t begin, std::int64_t count);
  // Vertically concatenates rank-2 vars with equal column counts.
  Var stack_rows(const std::vector<Var>& parts);
  // frames laid out t-major ([t*batch + b] rows of width W) -> [B x (T-1)*hop+W].
  Var overlap_add_tmajor(Var frames, std::int64_t batch, std::int64_t hop);

  // Whole-sequence LSTM over t-major input [T*B x D] with zero initial state:
  // one node for the full recurrence, backward runs truncated-free BPTT.
  // Gate order (i, f, g, o); w/u are [H x D] / [H x H], biases [H].
  Var lstm_sequence(Var x, std::int64_t batch, const std::array<Var, 4>& w,
                    const std::array<Var, 4>& u, const std::array<Var, 4>& b);

  // Batched enhancement loss: mean over items of (-si_sdr(e, t) + lambda*mean|e-t|),
  // si_sdr capped at +/-100 dB (gradient is zero in the capped region). Items
  // whose target is all-zero contribute only the L1 term.
  Var se_loss(Var enhanced, const TensorT<T>& targets, T lambda);
  // Weighted elementwise L1: sum_r w[r] * sum_c |a[r,c] - b[r,c]| / norm.
  Var weighted_l1(Var a, const TensorT<T>& b, const std::vector<T>& row_weights, T norm);

  // --- queries --------------------------------------------------------
  const TensorT<T>& value(Var v) const { return val(check(v)); }
  bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }
  const SeLossInfo& se_loss_info(Var loss) const;
  std::size_t size() const { return nodes_.size(); }

  // Runs the reverse pass from a scalar loss. Throws StateError if nothing
  // was recorded or if backward already ran on this tape.
  void backward(Var loss);
  bool backward_done() const { return backward_done_; }

  // Gradient of a leaf/op output after backward. Returns zeros of the value
  // shape when no gradient reached the node.
  const TensorT<T>& grad(Var v);

 private:
  struct Node {
    TensorT<T> value;                      // owned values (empty for external leaves)
    const TensorT<T>* external = nullptr;  // leaf storage
    TensorT<T> grad;
    bool requires_grad = false;
    std::function<void(GradTapeT&)> backward_fn;
  };

  std::int32_t check(Var v) const;
  const TensorT<T>& val(std::int32_t id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.value;
  }
  // Accumulation buffer for a node's gradient, allocated on first touch.
  TensorT<T>& grad_buf(std::int32_t id);
  bool has_grad(std::int32_t id) const {
    return !nodes_[static_cast<std::size_t>(id)].grad.empty();
  }
  Var push(TensorT<T> value, bool requires_grad, std::function<void(GradTapeT&)> fn);

  std::vector<Node> nodes_;
  std::unordered_map<std::int32_t, SeLossInfo> se_info_;
  bool backward_done_ = false;
};

using GradTape = GradTapeT<float>;
using GradTape64 = GradTapeT<double>;

}  // namespace e3net
