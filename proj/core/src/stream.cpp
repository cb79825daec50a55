#include "e3net/stream.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "e3net/dsp.hpp"
#include "e3net/nnops.hpp"
#include "model_internal.hpp"

namespace e3net {

Streamer::Streamer(std::shared_ptr<const ModelParams> params, ModelConfig cfg,
                   Tensor embedding)
    : params_(std::move(params)), cfg_(cfg), embedding_(std::move(embedding)) {
  cfg_.validate();
  if (!params_) throw StateError("streamer: null params");
  if (embedding_.numel() != cfg_.emb_dim)
    throw ConfigError("streamer: embedding length " + std::to_string(embedding_.numel()) +
                      " does not match emb_dim " + std::to_string(cfg_.emb_dim));
  window_ = cfg_.window_samples();
  hop_ = cfg_.hop_samples();
  block_states_.resize(static_cast<std::size_t>(cfg_.num_blocks));
  for (auto& s : block_states_) {
    s.h = Tensor({cfg_.model_dim});
    s.c = Tensor({cfg_.model_dim});
  }
  acc_.assign(static_cast<std::size_t>(window_), 0.0f);
  frame_scratch_ = Tensor({1, window_});
  pending_.reserve(static_cast<std::size_t>(2 * window_));
}

void Streamer::reset() {
  for (auto& s : block_states_) {
    std::fill(s.h.data(), s.h.data() + s.h.numel(), 0.0f);
    std::fill(s.c.data(), s.c.data() + s.c.numel(), 0.0f);
  }
  pending_.clear();
  std::fill(acc_.begin(), acc_.end(), 0.0f);
  frames_processed_ = 0;
  closed_ = false;
}

std::int64_t Streamer::residue_len() const {
  const std::int64_t held = static_cast<std::int64_t>(pending_.size());
  if (frames_processed_ == 0) return held;
  return std::max<std::int64_t>(0, held - (window_ - hop_));
}

// One hop's worth of work. Mirrors forward() op for op so the streamed output
// matches the offline pass bit for bit.
void Streamer::process_frame(const float* window_start, std::vector<float>& out) {
  const ModelParams& p = *params_;
  const float eps = nnops::default_ln_eps<float>();
  std::memcpy(frame_scratch_.data(), window_start,
              static_cast<std::size_t>(window_) * sizeof(float));

  const Tensor feat_lin =
      nnops::linear(frame_scratch_, p.at("encoder.filters"), p.at("encoder.bias"));
  Tensor feat = nnops::prelu(feat_lin, p.at("encoder.prelu_alpha"));
  feat = nnops::layer_norm(feat, p.at("encoder.ln.gamma"), p.at("encoder.ln.beta"), eps);

  Tensor x = nnops::prelu(
      detail::project_with_embedding(feat, embedding_, p.at("proj.weight"), p.at("proj.bias")),
      p.at("proj.prelu_alpha"));

  const std::int64_t d = cfg_.model_dim;
  Tensor xt({d}), h_next, c_next;
  for (std::int64_t b = 0; b < cfg_.num_blocks; ++b) {
    const std::string pref = "block_" + std::to_string(b) + ".";
    Tensor h1 = nnops::prelu(
        nnops::linear(x, p.at(pref + "fc1.weight"), p.at(pref + "fc1.bias")),
        p.at(pref + "fc1.prelu_alpha"));
    Tensor h2 = nnops::prelu(
        nnops::linear(h1, p.at(pref + "fc2.weight"), p.at(pref + "fc2.bias")),
        p.at(pref + "fc2.prelu_alpha"));
    Tensor y =
        nnops::layer_norm(h2, p.at(pref + "ln_fc.gamma"), p.at(pref + "ln_fc.beta"), eps);

    auto& st = block_states_[static_cast<std::size_t>(b)];
    for (std::int64_t i = 0; i < d; ++i) xt[i] = y[i];
    nnops::lstm_cell_step(xt, st.h, st.c, detail::lstm_params_for_block(p, b), h_next, c_next);
    std::swap(st.h, h_next);
    std::swap(st.c, c_next);

    Tensor hrow({1, d});
    for (std::int64_t i = 0; i < d; ++i) hrow[i] = st.h[i];
    Tensor z = nnops::layer_norm(hrow, p.at(pref + "ln_lstm.gamma"),
                                 p.at(pref + "ln_lstm.beta"), eps);
    for (std::int64_t i = 0; i < d; ++i) z[i] += y[i];
    x = nnops::layer_norm(z, p.at(pref + "ln_res.gamma"), p.at(pref + "ln_res.beta"), eps);
  }

  const Tensor mask = nnops::sigmoid(nnops::linear(x, p.at("mask.weight"), p.at("mask.bias")));
  Tensor masked(mask.shape());
  for (std::int64_t i = 0; i < masked.numel(); ++i) masked[i] = mask[i] * feat_lin[i];
  const Tensor dframe = nnops::linear(masked, p.at("decoder.filters"), p.at("decoder.bias"));

  for (std::int64_t j = 0; j < window_; ++j) acc_[static_cast<std::size_t>(j)] += dframe[j];
  out.insert(out.end(), acc_.begin(), acc_.begin() + hop_);
  std::memmove(acc_.data(), acc_.data() + hop_,
               static_cast<std::size_t>(window_ - hop_) * sizeof(float));
  std::fill(acc_.begin() + (window_ - hop_), acc_.end(), 0.0f);
  ++frames_processed_;
}

std::vector<float> Streamer::push(const float* samples, std::int64_t n) {
  if (closed_) throw StateError("push after close");
  pending_.insert(pending_.end(), samples, samples + n);
  std::vector<float> out;
  std::int64_t start = 0;
  while (static_cast<std::int64_t>(pending_.size()) - start >= window_) {
    process_frame(pending_.data() + start, out);
    start += hop_;
  }
  if (start > 0) pending_.erase(pending_.begin(), pending_.begin() + start);
  return out;
}

std::vector<float> Streamer::flush() {
  if (closed_) throw StateError("double flush");
  std::vector<float> out;
  if (residue_len() > 0) {
    pending_.resize(static_cast<std::size_t>(window_), 0.0f);
    process_frame(pending_.data(), out);
    pending_.clear();
  }
  out.insert(out.end(), acc_.begin(), acc_.begin() + (window_ - hop_));
  closed_ = true;
  return out;
}

// --------------------------------------------------------------------------

std::string rtf_report_json(const RtfReport& r) {
  nlohmann::json j{{"runs", r.runs},
                   {"audio_seconds", r.audio_seconds},
                   {"mean_seconds", r.mean_seconds},
                   {"median_seconds", r.median_seconds},
                   {"p95_seconds", r.p95_seconds},
                   {"rtf", r.rtf},
                   {"rtf_median", r.rtf_median},
                   {"rtf_p95", r.rtf_p95},
                   {"run_seconds", r.run_seconds}};
  return j.dump();
}

RtfReport bench_rtf(const std::shared_ptr<const ModelParams>& params, const ModelConfig& cfg,
                    double audio_seconds, int runs) {
  if (runs < 1) throw ConfigError("bench_rtf: runs must be >= 1");
  cfg.validate();
  const std::int64_t n = std::llround(audio_seconds * cfg.sample_rate_hz);
  std::vector<float> noise(static_cast<std::size_t>(n));
  dsp::SplitMix64 rng(0x52544642u);  // fixed seed; RTF is input-independent
  for (auto& v : noise) v = float(rng.uniform(-0.5, 0.5));
  Tensor emb = Tensor::full({cfg.emb_dim}, float(1.0 / std::sqrt(double(cfg.emb_dim))));
  const std::int64_t hop = cfg.hop_samples();

  auto one_run = [&]() {
    Streamer s(params, cfg, emb);
    std::size_t sink = 0;
    const auto t0 = std::chrono::steady_clock::now();
    std::int64_t at = 0;
    while (at < n) {
      const std::int64_t len = std::min(hop, n - at);
      sink += s.push(noise.data() + at, len).size();
      at += len;
    }
    sink += s.flush().size();
    const auto t1 = std::chrono::steady_clock::now();
    if (sink == 0) throw StateError("bench_rtf: no output produced");
    return std::chrono::duration<double>(t1 - t0).count();
  };

  for (int i = 0; i < 3; ++i) one_run();  // warm-up, excluded from stats

  RtfReport rep;
  rep.runs = runs;
  rep.audio_seconds = audio_seconds;
  rep.run_seconds.reserve(static_cast<std::size_t>(runs));
  for (int i = 0; i < runs; ++i) rep.run_seconds.push_back(one_run());

  std::vector<double> sorted = rep.run_seconds;
  std::sort(sorted.begin(), sorted.end());
  double total = 0;
  for (double v : sorted) total += v;
  rep.mean_seconds = total / runs;
  rep.median_seconds = runs % 2 ? sorted[static_cast<std::size_t>(runs / 2)]
                                : 0.5 * (sorted[static_cast<std::size_t>(runs / 2 - 1)] +
                                         sorted[static_cast<std::size_t>(runs / 2)]);
  const std::size_t p95_idx =
      std::min(sorted.size() - 1,
               static_cast<std::size_t>(std::ceil(0.95 * runs)) - (runs > 0 ? 1 : 0));
  rep.p95_seconds = sorted[p95_idx];
  rep.rtf = rep.mean_seconds / audio_seconds;
  rep.rtf_median = rep.median_seconds / audio_seconds;
  rep.rtf_p95 = rep.p95_seconds / audio_seconds;
  return rep;
}

}  // namespace e3net
