#pragma once

#include <string>

#include "e3net/model.hpp"
#include "e3net/nnops.hpp"

// Helpers shared by the offline forward pass and the streaming engine. Both
// paths must execute the same arithmetic in the same order so that their
// outputs agree bit for bit on the overlapping samples.
namespace e3net::detail {

template <typename T>
nnops::LstmCellParamsT<T> lstm_params_for_block(const ModelParamsT<T>& params,
                                                std::int64_t block) {
  const std::string p = "block_" + std::to_string(block) + ".lstm.";
  nnops::LstmCellParamsT<T> lp;
  const char* wn[4] = {"Wi", "Wf", "Wg", "Wo"};
  const char* un[4] = {"Ui", "Uf", "Ug", "Uo"};
  const char* bn[4] = {"bi", "bf", "bg", "bo"};
  for (int g = 0; g < 4; ++g) {
    lp.w[g] = &params.at(p + wn[g]);
    lp.u[g] = &params.at(p + un[g]);
    lp.b[g] = &params.at(p + bn[g]);
  }
  return lp;
}

// proj over [features | embedding] without materializing the concat:
// out[t] = W[:, :F] * feat[t] + (W[:, F:] * emb + bias).
template <typename T>
TensorT<T> project_with_embedding(const TensorT<T>& feat, const TensorT<T>& emb,
                                  const TensorT<T>& weight, const TensorT<T>& bias) {
  const std::int64_t rows = feat.dim(0), f = feat.dim(1), e = emb.numel();
  const std::int64_t d = weight.dim(0);
  require_dim(weight.dim(1), f + e, "proj", "weight input axis (axis 1)");
  std::vector<T> emb_part(static_cast<std::size_t>(d));
  for (std::int64_t o = 0; o < d; ++o)
    emb_part[static_cast<std::size_t>(o)] =
        nnops::detail::dot<T>(weight.data() + o * (f + e) + f, emb.data(), e) + bias[o];
  TensorT<T> out({rows, d});
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* fr = feat.data() + r * f;
    T* orow = out.data() + r * d;
    for (std::int64_t o = 0; o < d; ++o)
      orow[o] = nnops::detail::dot<T>(weight.data() + o * (f + e), fr, f) +
                emb_part[static_cast<std::size_t>(o)];
  }
  return out;
}

}  // namespace e3net::detail
