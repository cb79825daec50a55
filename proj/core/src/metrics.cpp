#include "e3net/metrics.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace e3net {

namespace {
constexpr double kCapDb = 100.0;

double clamp_db(double v) { return v > kCapDb ? kCapDb : (v < -kCapDb ? -kCapDb : v); }
}  // namespace

double si_sdr_db(const float* estimate, const float* reference, std::int64_t n) {
  double et = 0, tt = 0, ee = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    et += double(estimate[i]) * double(reference[i]);
    tt += double(reference[i]) * double(reference[i]);
    ee += double(estimate[i]) * double(estimate[i]);
  }
  if (tt == 0) throw DataError("si_sdr: zero reference");
  const double s2 = et * et / tt;  // energy of the projection onto the reference
  const double err2 = ee - s2;
  if (err2 <= 0 || err2 < s2 * 1e-10) return kCapDb;
  if (s2 == 0 || s2 < err2 * 1e-10) return -kCapDb;
  return clamp_db(10.0 * std::log10(s2 / err2));
}

double si_sdr_db(const std::vector<float>& estimate, const std::vector<float>& reference) {
  if (estimate.size() != reference.size())
    throw ShapeError("si_sdr: length mismatch, " + std::to_string(estimate.size()) + " vs " +
                     std::to_string(reference.size()));
  return si_sdr_db(estimate.data(), reference.data(),
                   static_cast<std::int64_t>(estimate.size()));
}

double snr_db(const float* signal, const float* noise, std::int64_t n) {
  double ss = 0, nn = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    ss += double(signal[i]) * double(signal[i]);
    nn += double(noise[i]) * double(noise[i]);
  }
  if (nn == 0) return kCapDb;
  if (ss == 0) return -kCapDb;
  return clamp_db(10.0 * std::log10(ss / nn));
}

double snr_db(const std::vector<float>& signal, const std::vector<float>& noise) {
  if (signal.size() != noise.size())
    throw ShapeError("snr: length mismatch, " + std::to_string(signal.size()) + " vs " +
                     std::to_string(noise.size()));
  return snr_db(signal.data(), noise.data(), static_cast<std::int64_t>(signal.size()));
}

TsosReport tsos(const float* enhanced, const float* reference, std::int64_t n,
                const TsosOptions& opts) {
  const std::int64_t frame_len =
      std::llround(opts.frame_ms * opts.sample_rate_hz / 1000.0);
  if (frame_len < 1) throw ConfigError("tsos: frame too short");
  const double floor_energy_per_sample =
      std::pow(10.0, opts.activity_floor_dbfs / 10.0);  // squared RMS threshold
  const double drop = std::pow(10.0, -opts.suppression_drop_db / 10.0);

  TsosReport rep;
  rep.frame_ms = opts.frame_ms;
  const std::int64_t frames = n / frame_len;  // whole frames only
  rep.active_frames.resize(static_cast<std::size_t>(frames), 0);
  rep.suppressed_frames.resize(static_cast<std::size_t>(frames), 0);
  std::int64_t suppressed = 0, active = 0;
  for (std::int64_t f = 0; f < frames; ++f) {
    const float* r = reference + f * frame_len;
    const float* e = enhanced + f * frame_len;
    double er = 0, ee = 0;
    for (std::int64_t i = 0; i < frame_len; ++i) {
      er += double(r[i]) * double(r[i]);
      ee += double(e[i]) * double(e[i]);
    }
    const bool is_active = er / double(frame_len) > floor_energy_per_sample;
    if (!is_active) continue;
    rep.active_frames[static_cast<std::size_t>(f)] = 1;
    ++active;
    if (ee < er * drop) {
      rep.suppressed_frames[static_cast<std::size_t>(f)] = 1;
      ++suppressed;
    }
  }
  rep.no_activity = active == 0;
  rep.oversuppressed_seconds = double(suppressed) * opts.frame_ms / 1000.0;
  const double total_seconds = double(n) / opts.sample_rate_hz;
  rep.normalized_seconds_per_half_hour =
      total_seconds > 0 ? rep.oversuppressed_seconds * 1800.0 / total_seconds : 0.0;
  return rep;
}

TsosReport tsos(const std::vector<float>& enhanced, const std::vector<float>& reference,
                const TsosOptions& opts) {
  if (enhanced.size() != reference.size())
    throw ShapeError("tsos: length mismatch, " + std::to_string(enhanced.size()) + " vs " +
                     std::to_string(reference.size()));
  return tsos(enhanced.data(), reference.data(), static_cast<std::int64_t>(enhanced.size()),
              opts);
}

std::string metric_report_json(const std::string& file, double si_sdr, double snr,
                               const TsosReport& t, const TsosOptions& opts) {
  nlohmann::json j{
      {"file", file},
      {"si_sdr_db", si_sdr},
      {"snr_db", snr},
      {"tsos",
       {{"seconds", t.oversuppressed_seconds},
        {"per_half_hour", t.normalized_seconds_per_half_hour},
        {"no_activity", t.no_activity}}},
      {"params",
       {{"frame_ms", opts.frame_ms},
        {"activity_floor_dbfs", opts.activity_floor_dbfs},
        {"suppression_drop_db", opts.suppression_drop_db},
        {"sample_rate_hz", opts.sample_rate_hz}}},
      {"dnsmos", "unavailable"},
      {"wer", "unavailable"}};
  return j.dump();
}

}  // namespace e3net
