#include "e3net/dsp.hpp"

#include <cmath>

#include "e3net/nnops.hpp"

namespace e3net::dsp {

namespace {
constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }
}  // namespace

std::vector<float> hann_window(int n) {
  std::vector<float> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<std::size_t>(i)] =
        float(0.5 - 0.5 * std::cos(2.0 * kPi * i / (n > 1 ? n - 1 : 1)));
  return w;
}

Tensor dft_cos_matrix(int n, const std::vector<float>& window) {
  const int k = n / 2 + 1;
  Tensor m({k, n});
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < n; ++c)
      m.at(r, c) = float(std::cos(2.0 * kPi * r * c / n)) * window[static_cast<std::size_t>(c)];
  return m;
}

Tensor dft_sin_matrix(int n, const std::vector<float>& window) {
  const int k = n / 2 + 1;
  Tensor m({k, n});
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < n; ++c)
      m.at(r, c) = float(-std::sin(2.0 * kPi * r * c / n)) * window[static_cast<std::size_t>(c)];
  return m;
}

Tensor mel_filterbank(int bands, int frame_len, int sample_rate, double fmin, double fmax) {
  const int k = frame_len / 2 + 1;
  Tensor fb({bands, k});
  const double mel_lo = hz_to_mel(fmin), mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(bands) + 2);
  for (int i = 0; i < bands + 2; ++i)
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (bands + 1));
  const double bin_hz = double(sample_rate) / frame_len;
  for (int b = 0; b < bands; ++b) {
    const double lo = edges[static_cast<std::size_t>(b)];
    const double mid = edges[static_cast<std::size_t>(b) + 1];
    const double hi = edges[static_cast<std::size_t>(b) + 2];
    for (int j = 0; j < k; ++j) {
      const double f = j * bin_hz;
      double w = 0;
      if (f > lo && f < mid)
        w = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        w = (hi - f) / (hi - mid);
      fb.at(b, j) = float(w);
    }
  }
  return fb;
}

Tensor logmel_frames(const float* x, std::int64_t n, int sample_rate, const LogMelConfig& mc) {
  const std::int64_t t = nnops::num_frames(n, mc.frame_len, mc.hop);
  if (t <= 0) return Tensor();
  const auto window = hann_window(mc.frame_len);
  const Tensor cosm = dft_cos_matrix(mc.frame_len, window);
  const Tensor sinm = dft_sin_matrix(mc.frame_len, window);
  const Tensor mel = mel_filterbank(mc.bands, mc.frame_len, sample_rate, 0.0,
                                    sample_rate / 2.0);
  const int k = mc.frame_len / 2 + 1;
  Tensor out({t, mc.bands});
  std::vector<float> re(static_cast<std::size_t>(k)), im(static_cast<std::size_t>(k)),
      power(static_cast<std::size_t>(k));
  for (std::int64_t f = 0; f < t; ++f) {
    const float* frame = x + f * mc.hop;
    nnops::detail::matvec<float>(cosm.data(), frame, re.data(), k, mc.frame_len);
    nnops::detail::matvec<float>(sinm.data(), frame, im.data(), k, mc.frame_len);
    for (int j = 0; j < k; ++j)
      power[static_cast<std::size_t>(j)] = re[static_cast<std::size_t>(j)] * re[static_cast<std::size_t>(j)] +
                                           im[static_cast<std::size_t>(j)] * im[static_cast<std::size_t>(j)];
    float* orow = out.data() + f * mc.bands;
    nnops::detail::matvec<float>(mel.data(), power.data(), orow, mc.bands, k);
    for (int b = 0; b < mc.bands; ++b) orow[b] = std::log(orow[b] + mc.log_floor);
  }
  return out;
}

double rms(const float* x, std::int64_t n) {
  if (n <= 0) return 0.0;
  double e = 0;
  for (std::int64_t i = 0; i < n; ++i) e += double(x[i]) * double(x[i]);
  return std::sqrt(e / double(n));
}

std::vector<float> frame_rms(const float* x, std::int64_t n, std::int64_t frame_len) {
  const std::int64_t t = (n + frame_len - 1) / frame_len;
  std::vector<float> out(static_cast<std::size_t>(t));
  for (std::int64_t f = 0; f < t; ++f) {
    const std::int64_t begin = f * frame_len;
    const std::int64_t len = std::min(frame_len, n - begin);
    out[static_cast<std::size_t>(f)] = float(rms(x + begin, len));
  }
  return out;
}

std::vector<std::uint8_t> vad_active(const float* x, std::int64_t n, std::int64_t frame_len,
                                     double floor_dbfs) {
  const double thresh = std::pow(10.0, floor_dbfs / 20.0);
  const auto levels = frame_rms(x, n, frame_len);
  std::vector<std::uint8_t> active(levels.size());
  for (std::size_t i = 0; i < levels.size(); ++i) active[i] = levels[i] > thresh ? 1 : 0;
  return active;
}

double rms_over_active(const float* x, std::int64_t n, const std::vector<std::uint8_t>& active,
                       std::int64_t frame_len) {
  double e = 0;
  std::int64_t count = 0;
  for (std::size_t f = 0; f < active.size(); ++f) {
    if (!active[f]) continue;
    const std::int64_t begin = static_cast<std::int64_t>(f) * frame_len;
    const std::int64_t len = std::min(frame_len, n - begin);
    for (std::int64_t i = 0; i < len; ++i) e += double(x[begin + i]) * double(x[begin + i]);
    count += len;
  }
  return count > 0 ? std::sqrt(e / double(count)) : 0.0;
}

}  // namespace e3net::dsp
