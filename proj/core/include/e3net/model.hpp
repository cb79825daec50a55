#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "e3net/autodiff.hpp"
#include "e3net/tensor.hpp"

namespace e3net {

// E3Net hyperparameters. Defaults follow the 16 kHz / 20 ms / 10 ms framing
// with a 2048-filter learnable encoder-decoder; num_blocks picks the model
// size (4 baseline, 8 teacher, 2 student).
struct ModelConfig {
  int sample_rate_hz = 16000;
  double window_ms = 20.0;
  double hop_ms = 10.0;
  std::int64_t num_filters = 2048;  // F
  std::int64_t emb_dim = 256;       // E
  std::int64_t model_dim = 256;     // D
  std::int64_t fc_hidden = 1024;    // H
  std::int64_t num_blocks = 4;      // N

  std::int64_t window_samples() const;
  std::int64_t hop_samples() const;
  void validate() const;  // throws ConfigError
  bool same_framing(const ModelConfig& o) const;

  static ModelConfig baseline() { return {}; }
  static ModelConfig teacher() {
    ModelConfig c;
    c.num_blocks = 8;
    return c;
  }
  static ModelConfig student() {
    ModelConfig c;
    c.num_blocks = 2;
    return c;
  }
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

ModelConfig config_from_json_string(const std::string& text);
std::string config_to_json_string(const ModelConfig& cfg);

// Named parameter set induced by a ModelConfig, in canonical order. The
// order is part of the checkpoint wire format.
template <typename T>
struct ModelParamsT {
  std::vector<std::pair<std::string, TensorT<T>>> named;

  TensorT<T>& at(std::string_view name);
  const TensorT<T>& at(std::string_view name) const;
  bool has(std::string_view name) const;
  std::int64_t total_elements() const;
};

using ModelParams = ModelParamsT<float>;
using ModelParams64 = ModelParamsT<double>;

// Shapes of every named parameter, in canonical order. Parameter allocation
// and count_params both derive from this single list.
std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& cfg);

std::int64_t count_params(const ModelConfig& cfg);

// Per-module parameter counts (encoder, proj, blocks, mask, decoder).
std::vector<std::pair<std::string, std::int64_t>> count_params_breakdown(const ModelConfig& cfg);

// Weight matrices ~ uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases zero
// except LSTM forget-gate bias at 1; prelu slopes 0.25; layer-norm affine
// at identity. Deterministic in the seed.
template <typename T>
ModelParamsT<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

ModelParams64 params_to_double(const ModelParams& p);
ModelParams params_to_float(const ModelParams64& p);

// FNV-1a over the raw little-endian tensor bytes in canonical order; used to
// assert teacher immutability during distillation.
std::uint64_t params_hash(const ModelParams& p);

// Fixed-length speaker summary fed to the projection layer.
struct SpeakerEmbedding {
  enum class Source { FileLoaded, BuiltinStats };
  Tensor vec;  // [E], L2-normalized
  Source source = Source::BuiltinStats;
};

// Deterministic feature-statistics embedding standing in for a speaker
// encoder network: 40 log-mel band means and 40 standard deviations over
// 25 ms frames, padded/truncated to E and L2-normalized. Needs >= 1 s of
// enrollment audio.
SpeakerEmbedding builtin_embedding(const std::vector<float>& enrollment,
                                   const ModelConfig& cfg);

// Parses a JSON array of E floats and L2-normalizes it.
SpeakerEmbedding embedding_from_json_string(const std::string& text, std::int64_t emb_dim);

// Offline (whole-utterance) forward pass:
// frame -> encoder -> PReLU -> LN -> [.|embedding] -> proj+PReLU ->
// N lstm blocks -> sigmoid mask -> mask * linear encoder features -> decoder OLA.
// Output length is (T-1)*hop + window.
template <typename T>
TensorT<T> forward(const ModelParamsT<T>& params, const ModelConfig& cfg,
                   const TensorT<T>& waveform, const TensorT<T>& embedding);

// Single-frame LSTM block step with caller-held recurrent state; the
// streaming engine advances one of these per block per hop.
template <typename T>
struct LstmBlockStateT {
  TensorT<T> h, c;
};
using LstmBlockState = LstmBlockStateT<float>;

template <typename T>
TensorT<T> lstm_block_forward(const ModelParamsT<T>& params, std::int64_t block,
                              const TensorT<T>& x, LstmBlockStateT<T>& state);

// Tape variables for every named parameter, for building training graphs.
template <typename T>
struct ParamVarsT {
  std::vector<std::pair<std::string, typename GradTapeT<T>::Var>> named;
  typename GradTapeT<T>::Var at(std::string_view name) const;
};

template <typename T>
ParamVarsT<T> register_params(GradTapeT<T>& tape, const ModelParamsT<T>& params);

// Records the full forward graph for a batch of utterances.
// inputs: [B x L] (constant), embeddings: [B x E] (constant).
// Returns the enhanced batch [B x (T-1)*hop+W].
template <typename T>
typename GradTapeT<T>::Var forward_tape(GradTapeT<T>& tape, const ParamVarsT<T>& pv,
                                        const ModelConfig& cfg, const TensorT<T>& inputs,
                                        const TensorT<T>& embeddings);

}  // namespace e3net
