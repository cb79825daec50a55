#include "e3net/model.hpp"

#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "e3net/dsp.hpp"
#include "e3net/nnops.hpp"
#include "model_internal.hpp"

namespace e3net {

using json = nlohmann::json;

std::int64_t ModelConfig::window_samples() const {
  return std::llround(window_ms * sample_rate_hz / 1000.0);
}

std::int64_t ModelConfig::hop_samples() const {
  return std::llround(hop_ms * sample_rate_hz / 1000.0);
}

void ModelConfig::validate() const {
  if (sample_rate_hz <= 0) throw ConfigError("config: sample_rate_hz must be positive");
  if (num_filters < 1 || num_blocks < 1 || model_dim < 1 || emb_dim < 1 || fc_hidden < 1)
    throw ConfigError("config: num_filters, num_blocks, model_dim, emb_dim, fc_hidden must be >= 1");
  const std::int64_t w = window_samples(), h = hop_samples();
  if (h < 1 || w < h)
    throw ConfigError("config: need window_samples >= hop_samples >= 1, got window=" +
                      std::to_string(w) + " hop=" + std::to_string(h));
}

bool ModelConfig::same_framing(const ModelConfig& o) const {
  return sample_rate_hz == o.sample_rate_hz && window_samples() == o.window_samples() &&
         hop_samples() == o.hop_samples();
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.sample_rate_hz == b.sample_rate_hz && a.window_ms == b.window_ms &&
         a.hop_ms == b.hop_ms && a.num_filters == b.num_filters && a.emb_dim == b.emb_dim &&
         a.model_dim == b.model_dim && a.fc_hidden == b.fc_hidden &&
         a.num_blocks == b.num_blocks;
}

namespace {

json config_to_json(const ModelConfig& c) {
  return json{{"sample_rate_hz", c.sample_rate_hz}, {"window_ms", c.window_ms},
              {"hop_ms", c.hop_ms},                 {"num_filters", c.num_filters},
              {"emb_dim", c.emb_dim},               {"model_dim", c.model_dim},
              {"fc_hidden", c.fc_hidden},           {"num_blocks", c.num_blocks}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.sample_rate_hz = j.value("sample_rate_hz", c.sample_rate_hz);
  c.window_ms = j.value("window_ms", c.window_ms);
  c.hop_ms = j.value("hop_ms", c.hop_ms);
  c.num_filters = j.value("num_filters", c.num_filters);
  c.emb_dim = j.value("emb_dim", c.emb_dim);
  c.model_dim = j.value("model_dim", c.model_dim);
  c.fc_hidden = j.value("fc_hidden", c.fc_hidden);
  c.num_blocks = j.value("num_blocks", c.num_blocks);
  c.validate();
  return c;
}

}  // namespace

ModelConfig config_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

std::string config_to_json_string(const ModelConfig& cfg) {
  return config_to_json(cfg).dump();
}

// --------------------------------------------------------------------------

std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t w = cfg.window_samples();
  const std::int64_t f = cfg.num_filters, e = cfg.emb_dim, d = cfg.model_dim,
                     h = cfg.fc_hidden;
  std::vector<std::pair<std::string, Shape>> s;
  s.emplace_back("encoder.filters", Shape{f, w});
  s.emplace_back("encoder.bias", Shape{f});
  s.emplace_back("encoder.prelu_alpha", Shape{f});
  s.emplace_back("encoder.ln.gamma", Shape{f});
  s.emplace_back("encoder.ln.beta", Shape{f});
  s.emplace_back("proj.weight", Shape{d, f + e});
  s.emplace_back("proj.bias", Shape{d});
  s.emplace_back("proj.prelu_alpha", Shape{d});
  for (std::int64_t b = 0; b < cfg.num_blocks; ++b) {
    const std::string p = "block_" + std::to_string(b) + ".";
    s.emplace_back(p + "fc1.weight", Shape{h, d});
    s.emplace_back(p + "fc1.bias", Shape{h});
    s.emplace_back(p + "fc1.prelu_alpha", Shape{h});
    s.emplace_back(p + "fc2.weight", Shape{d, h});
    s.emplace_back(p + "fc2.bias", Shape{d});
    s.emplace_back(p + "fc2.prelu_alpha", Shape{d});
    s.emplace_back(p + "ln_fc.gamma", Shape{d});
    s.emplace_back(p + "ln_fc.beta", Shape{d});
    for (const char* g : {"Wi", "Wf", "Wg", "Wo"}) s.emplace_back(p + "lstm." + g, Shape{d, d});
    for (const char* g : {"Ui", "Uf", "Ug", "Uo"}) s.emplace_back(p + "lstm." + g, Shape{d, d});
    for (const char* g : {"bi", "bf", "bg", "bo"}) s.emplace_back(p + "lstm." + g, Shape{d});
    s.emplace_back(p + "ln_lstm.gamma", Shape{d});
    s.emplace_back(p + "ln_lstm.beta", Shape{d});
    s.emplace_back(p + "ln_res.gamma", Shape{d});
    s.emplace_back(p + "ln_res.beta", Shape{d});
  }
  s.emplace_back("mask.weight", Shape{f, d});
  s.emplace_back("mask.bias", Shape{f});
  s.emplace_back("decoder.filters", Shape{w, f});
  s.emplace_back("decoder.bias", Shape{w});
  return s;
}

std::int64_t count_params(const ModelConfig& cfg) {
  std::int64_t total = 0;
  for (const auto& [name, shape] : param_shapes(cfg)) total += shape_numel(shape);
  return total;
}

std::vector<std::pair<std::string, std::int64_t>> count_params_breakdown(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, std::int64_t>> out;
  auto bucket = [&](const std::string& name) -> std::int64_t& {
    for (auto& [k, v] : out)
      if (k == name) return v;
    out.emplace_back(name, 0);
    return out.back().second;
  };
  for (const auto& [name, shape] : param_shapes(cfg)) {
    const auto dot = name.find('.');
    bucket(name.substr(0, dot)) += shape_numel(shape);
  }
  return out;
}

template <typename T>
TensorT<T>& ModelParamsT<T>::at(std::string_view name) {
  for (auto& [k, v] : named)
    if (k == name) return v;
  throw ConfigError("params: no parameter named '" + std::string(name) + "'");
}

template <typename T>
const TensorT<T>& ModelParamsT<T>::at(std::string_view name) const {
  for (const auto& [k, v] : named)
    if (k == name) return v;
  throw ConfigError("params: no parameter named '" + std::string(name) + "'");
}

template <typename T>
bool ModelParamsT<T>::has(std::string_view name) const {
  for (const auto& [k, v] : named)
    if (k == name) return true;
  return false;
}

template <typename T>
std::int64_t ModelParamsT<T>::total_elements() const {
  std::int64_t total = 0;
  for (const auto& [k, v] : named) total += v.numel();
  return total;
}

namespace {

// fan_in of a weight matrix is its input axis; vectors have no fan-in and
// are initialized by role below.
std::int64_t weight_fan_in(const Shape& shape) {
  return shape.size() == 2 ? shape[1] : 0;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

template <typename T>
ModelParamsT<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  dsp::SplitMix64 rng(seed);
  ModelParamsT<T> p;
  for (const auto& [name, shape] : param_shapes(cfg)) {
    TensorT<T> t(shape);
    const std::int64_t fan_in = weight_fan_in(shape);
    if (fan_in > 0) {
      const double bound = 1.0 / std::sqrt(double(fan_in));
      for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = T(rng.uniform(-bound, bound));
    } else if (ends_with(name, "prelu_alpha")) {
      for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = T(0.25);
    } else if (ends_with(name, "gamma")) {
      for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = T(1);
    } else if (ends_with(name, "lstm.bf")) {
      // forget-gate bias starts at 1
      for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = T(1);
    }
    // all other vectors (biases, beta) stay zero
    p.named.emplace_back(name, std::move(t));
  }
  return p;
}

ModelParams64 params_to_double(const ModelParams& p) {
  ModelParams64 out;
  for (const auto& [name, t] : p.named) out.named.emplace_back(name, t.cast<double>());
  return out;
}

ModelParams params_to_float(const ModelParams64& p) {
  ModelParams out;
  for (const auto& [name, t] : p.named) out.named.emplace_back(name, t.cast<float>());
  return out;
}

std::uint64_t params_hash(const ModelParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, t] : p.named) {
    mix(name.data(), name.size());
    mix(t.data(), sizeof(float) * static_cast<std::size_t>(t.numel()));
  }
  return h;
}

// --------------------------------------------------------------------------

SpeakerEmbedding builtin_embedding(const std::vector<float>& enrollment,
                                   const ModelConfig& cfg) {
  cfg.validate();
  if (static_cast<std::int64_t>(enrollment.size()) < cfg.sample_rate_hz)
    throw ConfigError("enrollment shorter than 1 s (" +
                      std::to_string(enrollment.size()) + " samples at " +
                      std::to_string(cfg.sample_rate_hz) + " Hz)");
  dsp::LogMelConfig mc;
  mc.frame_len = cfg.sample_rate_hz / 40;  // 25 ms
  mc.hop = cfg.sample_rate_hz / 100;       // 10 ms
  const Tensor lm = dsp::logmel_frames(enrollment.data(),
                                       static_cast<std::int64_t>(enrollment.size()),
                                       cfg.sample_rate_hz, mc);
  const std::int64_t t = lm.dim(0), bands = lm.dim(1);
  std::vector<double> mean(static_cast<std::size_t>(bands), 0.0);
  std::vector<double> sd(static_cast<std::size_t>(bands), 0.0);
  for (std::int64_t f = 0; f < t; ++f)
    for (std::int64_t b = 0; b < bands; ++b) mean[static_cast<std::size_t>(b)] += lm.at(f, b);
  for (auto& m : mean) m /= double(t);
  for (std::int64_t f = 0; f < t; ++f)
    for (std::int64_t b = 0; b < bands; ++b) {
      const double c = lm.at(f, b) - mean[static_cast<std::size_t>(b)];
      sd[static_cast<std::size_t>(b)] += c * c;
    }
  for (auto& v : sd) v = std::sqrt(v / double(t));

  SpeakerEmbedding emb;
  emb.source = SpeakerEmbedding::Source::BuiltinStats;
  emb.vec = Tensor({cfg.emb_dim});
  for (std::int64_t i = 0; i < cfg.emb_dim; ++i) {
    if (i < bands)
      emb.vec[i] = float(mean[static_cast<std::size_t>(i)]);
    else if (i < 2 * bands)
      emb.vec[i] = float(sd[static_cast<std::size_t>(i - bands)]);
    else
      emb.vec[i] = 0.0f;
  }
  double norm = 0;
  for (std::int64_t i = 0; i < cfg.emb_dim; ++i) norm += double(emb.vec[i]) * double(emb.vec[i]);
  norm = std::sqrt(norm);
  if (norm > 0)
    for (std::int64_t i = 0; i < cfg.emb_dim; ++i) emb.vec[i] = float(emb.vec[i] / norm);
  else
    emb.vec[0] = 1.0f;
  return emb;
}

SpeakerEmbedding embedding_from_json_string(const std::string& text, std::int64_t emb_dim) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("embedding: invalid JSON: ") + e.what());
  }
  if (!j.is_array())
    throw DataError("embedding: expected a JSON array of floats");
  if (static_cast<std::int64_t>(j.size()) != emb_dim)
    throw ConfigError("embedding length " + std::to_string(j.size()) +
                      " does not match emb_dim " + std::to_string(emb_dim));
  SpeakerEmbedding emb;
  emb.source = SpeakerEmbedding::Source::FileLoaded;
  emb.vec = Tensor({emb_dim});
  double norm = 0;
  for (std::int64_t i = 0; i < emb_dim; ++i) {
    emb.vec[i] = j[static_cast<std::size_t>(i)].get<float>();
    if (!std::isfinite(emb.vec[i])) throw DataError("embedding: non-finite value");
    norm += double(emb.vec[i]) * double(emb.vec[i]);
  }
  norm = std::sqrt(norm);
  if (norm == 0) throw DataError("embedding: zero vector");
  for (std::int64_t i = 0; i < emb_dim; ++i) emb.vec[i] = float(emb.vec[i] / norm);
  return emb;
}

// --------------------------------------------------------------------------

using detail::lstm_params_for_block;
using detail::project_with_embedding;

template <typename T>
TensorT<T> lstm_block_forward(const ModelParamsT<T>& params, std::int64_t block,
                              const TensorT<T>& x, LstmBlockStateT<T>& state) {
  const std::string p = "block_" + std::to_string(block) + ".";
  const T eps = nnops::default_ln_eps<T>();
  const std::int64_t d = x.numel();
  if (state.h.empty()) state.h = TensorT<T>({d});
  if (state.c.empty()) state.c = TensorT<T>({d});

  TensorT<T> row({1, d});
  for (std::int64_t i = 0; i < d; ++i) row[i] = x[i];
  TensorT<T> h1 = nnops::prelu(nnops::linear(row, params.at(p + "fc1.weight"),
                                             params.at(p + "fc1.bias")),
                               params.at(p + "fc1.prelu_alpha"));
  TensorT<T> h2 = nnops::prelu(nnops::linear(h1, params.at(p + "fc2.weight"),
                                             params.at(p + "fc2.bias")),
                               params.at(p + "fc2.prelu_alpha"));
  TensorT<T> y = nnops::layer_norm(h2, params.at(p + "ln_fc.gamma"),
                                   params.at(p + "ln_fc.beta"), eps);

  TensorT<T> y1({d});
  for (std::int64_t i = 0; i < d; ++i) y1[i] = y[i];
  TensorT<T> h_next, c_next;
  nnops::lstm_cell_step(y1, state.h, state.c, lstm_params_for_block(params, block), h_next,
                        c_next);
  state.h = std::move(h_next);
  state.c = std::move(c_next);

  TensorT<T> hrow({1, d});
  for (std::int64_t i = 0; i < d; ++i) hrow[i] = state.h[i];
  TensorT<T> z = nnops::layer_norm(hrow, params.at(p + "ln_lstm.gamma"),
                                   params.at(p + "ln_lstm.beta"), eps);
  TensorT<T> s({1, d});
  for (std::int64_t i = 0; i < d; ++i) s[i] = y[i] + z[i];
  TensorT<T> out2 = nnops::layer_norm(s, params.at(p + "ln_res.gamma"),
                                      params.at(p + "ln_res.beta"), eps);
  TensorT<T> out({d});
  for (std::int64_t i = 0; i < d; ++i) out[i] = out2[i];
  return out;
}

template <typename T>
TensorT<T> forward(const ModelParamsT<T>& params, const ModelConfig& cfg,
                   const TensorT<T>& waveform, const TensorT<T>& embedding) {
  cfg.validate();
  if (embedding.numel() != cfg.emb_dim)
    throw ConfigError("forward: embedding length " + std::to_string(embedding.numel()) +
                      " does not match emb_dim " + std::to_string(cfg.emb_dim));
  const std::int64_t w = cfg.window_samples(), hop = cfg.hop_samples();
  const T eps = nnops::default_ln_eps<T>();

  const TensorT<T> frames = nnops::frame_signal(waveform, w, hop);
  const std::int64_t t = frames.dim(0);
  const TensorT<T> feat_lin =
      nnops::conv1d_encoder(frames, params.at("encoder.filters"), params.at("encoder.bias"));
  TensorT<T> feat = nnops::prelu(feat_lin, params.at("encoder.prelu_alpha"));
  feat = nnops::layer_norm(feat, params.at("encoder.ln.gamma"), params.at("encoder.ln.beta"),
                           eps);

  TensorT<T> x = nnops::prelu(
      project_with_embedding(feat, embedding, params.at("proj.weight"), params.at("proj.bias")),
      params.at("proj.prelu_alpha"));

  const std::int64_t d = cfg.model_dim;
  TensorT<T> xt({d}), h({d}), c({d}), h_next, c_next;
  for (std::int64_t b = 0; b < cfg.num_blocks; ++b) {
    const std::string p = "block_" + std::to_string(b) + ".";
    TensorT<T> h1 = nnops::prelu(
        nnops::linear(x, params.at(p + "fc1.weight"), params.at(p + "fc1.bias")),
        params.at(p + "fc1.prelu_alpha"));
    TensorT<T> h2 = nnops::prelu(
        nnops::linear(h1, params.at(p + "fc2.weight"), params.at(p + "fc2.bias")),
        params.at(p + "fc2.prelu_alpha"));
    TensorT<T> y =
        nnops::layer_norm(h2, params.at(p + "ln_fc.gamma"), params.at(p + "ln_fc.beta"), eps);

    const auto lp = lstm_params_for_block(params, b);
    for (std::int64_t i = 0; i < d; ++i) h[i] = c[i] = T(0);
    TensorT<T> hmat({t, d});
    for (std::int64_t f = 0; f < t; ++f) {
      for (std::int64_t i = 0; i < d; ++i) xt[i] = y.at(f, i);
      nnops::lstm_cell_step(xt, h, c, lp, h_next, c_next);
      std::swap(h, h_next);
      std::swap(c, c_next);
      for (std::int64_t i = 0; i < d; ++i) hmat.at(f, i) = h[i];
    }
    TensorT<T> z = nnops::layer_norm(hmat, params.at(p + "ln_lstm.gamma"),
                                     params.at(p + "ln_lstm.beta"), eps);
    for (std::int64_t i = 0; i < t * d; ++i) z[i] += y[i];
    x = nnops::layer_norm(z, params.at(p + "ln_res.gamma"), params.at(p + "ln_res.beta"), eps);
  }

  const TensorT<T> mask =
      nnops::sigmoid(nnops::linear(x, params.at("mask.weight"), params.at("mask.bias")));
  TensorT<T> masked(mask.shape());
  for (std::int64_t i = 0; i < masked.numel(); ++i) masked[i] = mask[i] * feat_lin[i];
  const TensorT<T> out_frames =
      nnops::linear(masked, params.at("decoder.filters"), params.at("decoder.bias"));
  return nnops::overlap_add(out_frames, hop);
}

// --------------------------------------------------------------------------

template <typename T>
typename GradTapeT<T>::Var ParamVarsT<T>::at(std::string_view name) const {
  for (const auto& [k, v] : named)
    if (k == name) return v;
  throw ConfigError("param vars: no parameter named '" + std::string(name) + "'");
}

template <typename T>
ParamVarsT<T> register_params(GradTapeT<T>& tape, const ModelParamsT<T>& params) {
  ParamVarsT<T> pv;
  for (const auto& [name, t] : params.named) pv.named.emplace_back(name, tape.leaf(&t));
  return pv;
}

template <typename T>
typename GradTapeT<T>::Var forward_tape(GradTapeT<T>& tape, const ParamVarsT<T>& pv,
                                        const ModelConfig& cfg, const TensorT<T>& inputs,
                                        const TensorT<T>& embeddings) {
  using Var = typename GradTapeT<T>::Var;
  cfg.validate();
  if (inputs.rank() != 2) throw ShapeError("forward_tape: inputs must be [items x samples]");
  const std::int64_t batch = inputs.dim(0), len = inputs.dim(1);
  require_dim(embeddings.dim(0), batch, "forward_tape", "embedding rows (axis 0)");
  require_dim(embeddings.dim(1), cfg.emb_dim, "forward_tape", "embedding size (axis 1)");
  const std::int64_t w = cfg.window_samples(), hop = cfg.hop_samples();
  if (len < w) throw ShapeError("input shorter than one frame");
  const std::int64_t t_frames = nnops::num_frames(len, w, hop);
  const T eps = nnops::default_ln_eps<T>();

  // Frames and broadcast embeddings laid out t-major: row tf*batch + b. This
  // keeps each LSTM timestep slice contiguous.
  TensorT<T> frames({t_frames * batch, w});
  TensorT<T> emb_rows({t_frames * batch, cfg.emb_dim});
  for (std::int64_t tf = 0; tf < t_frames; ++tf) {
    for (std::int64_t b = 0; b < batch; ++b) {
      const T* src = inputs.data() + b * len + tf * hop;
      T* dst = frames.data() + (tf * batch + b) * w;
      for (std::int64_t j = 0; j < w; ++j) dst[j] = src[j];
      const T* esrc = embeddings.data() + b * cfg.emb_dim;
      T* edst = emb_rows.data() + (tf * batch + b) * cfg.emb_dim;
      for (std::int64_t j = 0; j < cfg.emb_dim; ++j) edst[j] = esrc[j];
    }
  }
  Var frames_v = tape.constant(std::move(frames));
  Var emb_v = tape.constant(std::move(emb_rows));

  Var feat_lin = tape.linear(frames_v, pv.at("encoder.filters"), pv.at("encoder.bias"));
  Var feat = tape.prelu(feat_lin, pv.at("encoder.prelu_alpha"));
  feat = tape.layer_norm(feat, pv.at("encoder.ln.gamma"), pv.at("encoder.ln.beta"), eps);

  Var x = tape.prelu(
      tape.linear_concat(feat, emb_v, pv.at("proj.weight"), pv.at("proj.bias")),
      pv.at("proj.prelu_alpha"));

  const std::int64_t d = cfg.model_dim;
  for (std::int64_t b = 0; b < cfg.num_blocks; ++b) {
    const std::string p = "block_" + std::to_string(b) + ".";
    Var h1 = tape.prelu(tape.linear(x, pv.at(p + "fc1.weight"), pv.at(p + "fc1.bias")),
                        pv.at(p + "fc1.prelu_alpha"));
    Var h2 = tape.prelu(tape.linear(h1, pv.at(p + "fc2.weight"), pv.at(p + "fc2.bias")),
                        pv.at(p + "fc2.prelu_alpha"));
    Var y = tape.layer_norm(h2, pv.at(p + "ln_fc.gamma"), pv.at(p + "ln_fc.beta"), eps);

    Var wv[4] = {pv.at(p + "lstm.Wi"), pv.at(p + "lstm.Wf"), pv.at(p + "lstm.Wg"),
                 pv.at(p + "lstm.Wo")};
    Var uv[4] = {pv.at(p + "lstm.Ui"), pv.at(p + "lstm.Uf"), pv.at(p + "lstm.Ug"),
                 pv.at(p + "lstm.Uo")};
    Var bv[4] = {pv.at(p + "lstm.bi"), pv.at(p + "lstm.bf"), pv.at(p + "lstm.bg"),
                 pv.at(p + "lstm.bo")};
    Var h_prev = tape.constant(TensorT<T>({batch, d}));
    Var c_prev = tape.constant(TensorT<T>({batch, d}));
    std::vector<Var> h_steps;
    h_steps.reserve(static_cast<std::size_t>(t_frames));
    for (std::int64_t tf = 0; tf < t_frames; ++tf) {
      Var xt = tape.slice_rows(y, tf * batch, batch);
      Var pre[4];
      for (int g = 0; g < 4; ++g)
        pre[g] = tape.add(tape.linear(xt, wv[g], bv[g]), tape.linear(h_prev, uv[g]));
      Var ig = tape.sigmoid(pre[nnops::kGateI]);
      Var fg = tape.sigmoid(pre[nnops::kGateF]);
      Var gg = tape.tanh(pre[nnops::kGateG]);
      Var og = tape.sigmoid(pre[nnops::kGateO]);
      Var cnew = tape.add(tape.mul(fg, c_prev), tape.mul(ig, gg));
      Var hnew = tape.mul(og, tape.tanh(cnew));
      h_prev = hnew;
      c_prev = cnew;
      h_steps.push_back(hnew);
    }
    Var hmat = tape.stack_rows(h_steps);
    Var z = tape.layer_norm(hmat, pv.at(p + "ln_lstm.gamma"), pv.at(p + "ln_lstm.beta"), eps);
    x = tape.layer_norm(tape.add(y, z), pv.at(p + "ln_res.gamma"), pv.at(p + "ln_res.beta"),
                        eps);
  }

  Var mask = tape.sigmoid(tape.linear(x, pv.at("mask.weight"), pv.at("mask.bias")));
  Var masked = tape.mul(mask, feat_lin);
  Var out_frames = tape.linear(masked, pv.at("decoder.filters"), pv.at("decoder.bias"));
  return tape.overlap_add_tmajor(out_frames, batch, hop);
}

// --------------------------------------------------------------------------

template struct ModelParamsT<float>;
template struct ModelParamsT<double>;
template ModelParamsT<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ModelParamsT<double> init_params<double>(const ModelConfig&, std::uint64_t);
template TensorT<float> forward<float>(const ModelParamsT<float>&, const ModelConfig&,
                                       const TensorT<float>&, const TensorT<float>&);
template TensorT<double> forward<double>(const ModelParamsT<double>&, const ModelConfig&,
                                         const TensorT<double>&, const TensorT<double>&);
template TensorT<float> lstm_block_forward<float>(const ModelParamsT<float>&, std::int64_t,
                                                  const TensorT<float>&,
                                                  LstmBlockStateT<float>&);
template TensorT<double> lstm_block_forward<double>(const ModelParamsT<double>&, std::int64_t,
                                                    const TensorT<double>&,
                                                    LstmBlockStateT<double>&);
template struct ParamVarsT<float>;
template struct ParamVarsT<double>;
template ParamVarsT<float> register_params<float>(GradTapeT<float>&, const ModelParamsT<float>&);
template ParamVarsT<double> register_params<double>(GradTapeT<double>&,
                                                    const ModelParamsT<double>&);
template GradTapeT<float>::Var forward_tape<float>(GradTapeT<float>&, const ParamVarsT<float>&,
                                                   const ModelConfig&, const TensorT<float>&,
                                                   const TensorT<float>&);
template GradTapeT<double>::Var forward_tape<double>(GradTapeT<double>&,
                                                     const ParamVarsT<double>&,
                                                     const ModelConfig&, const TensorT<double>&,
                                                     const TensorT<double>&);

}  // namespace e3net
