#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "e3net/error.hpp"

namespace e3net {

// Scale-invariant SDR in dB, capped at +/-100. Throws DataError when the
// reference carries no energy.
double si_sdr_db(const float* estimate, const float* reference, std::int64_t n);
double si_sdr_db(const std::vector<float>& estimate, const std::vector<float>& reference);

// 10*log10(|signal|^2 / |noise|^2), capped at +/-100.
double snr_db(const float* signal, const float* noise, std::int64_t n);
double snr_db(const std::vector<float>& signal, const std::vector<float>& noise);

struct TsosOptions {
  double frame_ms = 20.0;
  double activity_floor_dbfs = -40.0;  // reference frame RMS above this = target-active
  double suppression_drop_db = 10.0;   // enhanced energy this far below reference = suppressed
  int sample_rate_hz = 16000;
};

// Target-speaker over-suppression: time where the enhancer removed
// target-active audio, normalized to seconds per half hour.
struct TsosReport {
  double oversuppressed_seconds = 0;
  double normalized_seconds_per_half_hour = 0;
  std::vector<std::uint8_t> active_frames;
  std::vector<std::uint8_t> suppressed_frames;  // subset of active
  double frame_ms = 20.0;
  bool no_activity = false;
};

TsosReport tsos(const float* enhanced, const float* reference, std::int64_t n,
                const TsosOptions& opts = {});
TsosReport tsos(const std::vector<float>& enhanced, const std::vector<float>& reference,
                const TsosOptions& opts = {});

// Metric report for one file pair. DNSMOS and WER need external estimators
// this toolkit does not ship, so they are reported as "unavailable" rather
// than omitted.
std::string metric_report_json(const std::string& file, double si_sdr, double snr,
                               const TsosReport& t, const TsosOptions& opts);

}  // namespace e3net
