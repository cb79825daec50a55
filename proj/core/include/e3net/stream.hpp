#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "e3net/model.hpp"

namespace e3net {

// Wall-clock statistics for repeated single-threaded streaming runs.
struct RtfReport {
  int runs = 0;
  double audio_seconds = 0;
  double mean_seconds = 0;
  double median_seconds = 0;
  double p95_seconds = 0;
  double rtf = 0;  // mean processing time / audio duration
  double rtf_median = 0;
  double rtf_p95 = 0;
  std::vector<double> run_seconds;
};

std::string rtf_report_json(const RtfReport& r);

// Causal frame-by-frame inference. Consumes arbitrary-sized sample chunks and
// emits hop-sized output chunks once each full analysis window is available;
// the first sample is emitted after exactly window_samples of input (one
// window of algorithmic latency). For any partition of the same input into
// push calls the concatenated output is bitwise identical, and it matches the
// offline forward pass on the shared prefix.
//
// A Streamer is single-owner; concurrent Streamers may share the same
// immutable ModelParams.
class Streamer {
 public:
  Streamer(std::shared_ptr<const ModelParams> params, ModelConfig cfg, Tensor embedding);

  std::vector<float> push(const float* samples, std::int64_t n);
  std::vector<float> push(const std::vector<float>& samples) {
    return push(samples.data(), static_cast<std::int64_t>(samples.size()));
  }

  // Zero-pads any unconsumed input to one final window, emits the remaining
  // overlap-add tail, and closes the stream.
  std::vector<float> flush();

  void reset();

  bool closed() const { return closed_; }
  std::int64_t frames_processed() const { return frames_processed_; }
  // Unconsumed new samples (< hop once at least one frame has been emitted).
  std::int64_t residue_len() const;
  const ModelConfig& config() const { return cfg_; }

 private:
  void process_frame(const float* window_start, std::vector<float>& out);

  std::shared_ptr<const ModelParams> params_;
  ModelConfig cfg_;
  Tensor embedding_;
  std::int64_t window_ = 0, hop_ = 0;

  std::vector<LstmBlockState> block_states_;
  std::vector<float> pending_;  // frame context + unconsumed residue
  std::vector<float> acc_;      // overlap-add accumulator, length window
  Tensor frame_scratch_;        // [1 x window], fixed storage for determinism
  std::int64_t frames_processed_ = 0;
  bool closed_ = false;
};

// Runs the streaming engine single-threaded over fixed-seed synthetic noise:
// 3 warm-up runs, then `runs` timed runs of `audio_seconds` of audio.
RtfReport bench_rtf(const std::shared_ptr<const ModelParams>& params, const ModelConfig& cfg,
                    double audio_seconds, int runs);

}  // namespace e3net
