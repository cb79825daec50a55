#pragma once

#include <cstdint>
#include <vector>

#include "e3net/tensor.hpp"

namespace e3net::dsp {

// splitmix64; the library's only randomness source. Keeps parameter init and
// fixture synthesis bit-reproducible across platforms, unlike the
// implementation-defined std::uniform_* distributions.
struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  // uniform in [0, 1)
  double unit() { return double(next() >> 11) * 0x1.0p-53; }
  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
};

std::vector<float> hann_window(int n);

// Real-DFT projection matrices [K x n], K = n/2 + 1, with an analysis window
// folded into the coefficients. Power spectrum = (x*C^T)^2 + (x*S^T)^2.
Tensor dft_cos_matrix(int n, const std::vector<float>& window);
Tensor dft_sin_matrix(int n, const std::vector<float>& window);

// Triangular mel filterbank [bands x (frame_len/2+1)] over [fmin, fmax] Hz.
Tensor mel_filterbank(int bands, int frame_len, int sample_rate, double fmin, double fmax);

struct LogMelConfig {
  int frame_len = 400;  // 25 ms at 16 kHz
  int hop = 160;        // 10 ms
  int bands = 40;
  float log_floor = 1e-10f;
};

// [num_frames x bands] log-mel energies; empty tensor if the signal is
// shorter than one frame.
Tensor logmel_frames(const float* x, std::int64_t n, int sample_rate, const LogMelConfig& mc);

double rms(const float* x, std::int64_t n);

// RMS of each non-overlapping frame; a trailing partial frame is included
// and normalized by its own length.
std::vector<float> frame_rms(const float* x, std::int64_t n, std::int64_t frame_len);

// Energy VAD: frame is active when its RMS exceeds 10^(floor_dbfs/20).
std::vector<std::uint8_t> vad_active(const float* x, std::int64_t n, std::int64_t frame_len,
                                     double floor_dbfs);

// RMS restricted to active frames; returns 0 when nothing is active.
double rms_over_active(const float* x, std::int64_t n, const std::vector<std::uint8_t>& active,
                       std::int64_t frame_len);

}  // namespace e3net::dsp
