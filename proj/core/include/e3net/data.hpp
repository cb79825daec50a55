#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "e3net/error.hpp"

namespace e3net {

// Mono 16 kHz audio, samples in [-1, 1].
struct AudioFile {
  std::vector<float> samples;
  int sample_rate_hz = 16000;
};

enum class WavFormat { Float32, Pcm16 };

// Strict reader for the subset this toolkit writes: RIFF/WAVE, mono,
// 16 kHz, PCM 16-bit (scaled by 1/32768) or IEEE float 32-bit. Anything
// else is a distinct error; nothing is resampled or downmixed silently.
AudioFile load_wav(const std::string& path);
void save_wav(const std::string& path, const AudioFile& audio,
              WavFormat format = WavFormat::Float32);

enum class Scenario { TS1, TS2, TS3 };

Scenario scenario_from_string(const std::string& s);
std::string scenario_to_string(Scenario s);

// One simulated mixture: target speech plus optional interfering speech and
// noise at controlled ratios. TS1 requires interferer and noise, TS2 noise
// only, TS3 neither.
struct MixtureSpec {
  std::string target_path;
  std::optional<std::string> interferer_path;
  std::optional<std::string> noise_path;
  double snr_noise_db = 10.0;  // target-to-noise, over target-active frames
  double sir_db = 5.0;         // target-to-interferer
  std::uint64_t seed = 0;
  Scenario scenario = Scenario::TS2;
};

struct MixResult {
  std::vector<float> noisy;
  std::vector<float> clean;  // target reference, scaled by the same gain
  double gain = 1.0;         // anti-clipping scalar applied to both
};

// Scales interferer/noise relative to target RMS measured over target-active
// frames (energy VAD, -40 dBFS, 20 ms frames), sums, and peak-normalizes the
// mixture to 0.9 only if it would clip, applying the same scalar to the
// clean reference. Components shorter than the target are loop-padded.
MixResult mix(const MixtureSpec& spec);

struct FixtureOptions {
  int n_train = 20;
  int n_eval = 5;
  int n_unlabeled = 0;          // noisy-only split for KD-on-unlabeled runs
  double clip_seconds = 2.0;
  int n_speakers = 10;
  std::optional<Scenario> scenario;  // unset: cycle TS1/TS2/TS3
  double snr_min_db = 0.0, snr_max_db = 20.0;
  double sir_min_db = 0.0, sir_max_db = 10.0;
};

struct FixtureItem {
  Scenario scenario = Scenario::TS2;
  std::string split;  // "train" | "eval" | "unlabeled"
  std::string noisy_path;
  std::string clean_path;  // empty for the unlabeled split
  std::string enrollment_path;
  std::string target_path;
  std::string interferer_path;  // empty unless TS1
  std::string noise_path;       // empty for TS3
  double snr_noise_db = 0;
  double sir_db = 0;
  std::uint64_t seed = 0;
  int speaker = 0;
};

struct FixtureManifest {
  std::uint64_t seed = 0;
  std::vector<FixtureItem> items;
};

// Deterministic synthetic corpus: harmonic "speakers" with vibrato and
// formant shaping, shaped noise beds, mixtures per scenario, enrollment
// clips, and a manifest. Same seed gives byte-identical files. Honors
// E3NET_THREADS for synthesis (output is identical regardless).
FixtureManifest make_fixture_set(std::uint64_t seed, const std::string& out_dir,
                                 const FixtureOptions& opts = {});

FixtureManifest load_manifest(const std::string& dir_or_manifest_path);
std::string manifest_to_json_string(const FixtureManifest& m);

// Synthesis entry points, exposed for tests and long-form metric fixtures.
std::vector<float> synth_speech(std::uint64_t seed, int speaker_id, double seconds,
                                int sample_rate_hz);
std::vector<float> synth_noise(std::uint64_t seed, double seconds, int sample_rate_hz);

}  // namespace e3net
