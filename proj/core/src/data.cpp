#include "e3net/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "e3net/dsp.hpp"

namespace e3net {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// WAV I/O

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
std::uint16_t rd_u16(const unsigned char* p) {
  return std::uint16_t(p[0]) | (std::uint16_t(p[1]) << 8);
}

void wr_u32(std::string& s, std::uint32_t v) {
  s.push_back(char(v & 0xff));
  s.push_back(char((v >> 8) & 0xff));
  s.push_back(char((v >> 16) & 0xff));
  s.push_back(char((v >> 24) & 0xff));
}
void wr_u16(std::string& s, std::uint16_t v) {
  s.push_back(char(v & 0xff));
  s.push_back(char((v >> 8) & 0xff));
}

constexpr int kRequiredRate = 16000;

}  // namespace

AudioFile load_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw DataError("'" + path + "' is not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;

  std::size_t at = 12;
  while (at + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + at);
    const std::uint32_t sz = rd_u32(bytes.data() + at + 4);
    if (at + 8 + sz > bytes.size()) throw DataError("'" + path + "': truncated chunk");
    const unsigned char* body = bytes.data() + at + 8;
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (sz < 16) throw DataError("'" + path + "': malformed fmt chunk");
      format = rd_u16(body);
      channels = rd_u16(body + 2);
      rate = rd_u32(body + 4);
      bits = rd_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = body;
      data_len = sz;
    }
    at += 8 + sz + (sz & 1);  // chunks are word-aligned
  }
  if (!have_fmt || !data) throw DataError("'" + path + "': missing fmt or data chunk");
  if (channels != 1)
    throw DataError("mono required: '" + path + "' has " + std::to_string(channels) +
                    " channels");
  if (rate != kRequiredRate)
    throw DataError("sample rate mismatch: '" + path + "' is " + std::to_string(rate) +
                    " Hz, need 16000 Hz (resampling not supported)");

  AudioFile out;
  out.sample_rate_hz = kRequiredRate;
  if (format == 1) {
    if (bits != 16)
      throw DataError("'" + path + "': PCM must be 16-bit, got " + std::to_string(bits));
    const std::size_t n = data_len / 2;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::int16_t v =
          static_cast<std::int16_t>(rd_u16(data + 2 * i));
      out.samples[i] = float(v) / 32768.0f;
    }
  } else if (format == 3) {
    if (bits != 32)
      throw DataError("'" + path + "': IEEE float must be 32-bit, got " + std::to_string(bits));
    const std::size_t n = data_len / 4;
    out.samples.resize(n);
    std::memcpy(out.samples.data(), data, n * 4);
  } else {
    throw DataError("'" + path + "': unsupported codec (format tag " + std::to_string(format) +
                    "); need PCM 16-bit or IEEE float 32-bit");
  }
  return out;
}

void save_wav(const std::string& path, const AudioFile& audio, WavFormat format) {
  if (audio.sample_rate_hz != kRequiredRate)
    throw DataError("save_wav: only 16 kHz audio is supported");
  std::string out;
  const std::uint32_t n = static_cast<std::uint32_t>(audio.samples.size());
  if (format == WavFormat::Float32) {
    const std::uint32_t data_len = n * 4;
    out.reserve(58 + data_len);
    out += "RIFF";
    wr_u32(out, 4 + 24 + 12 + 8 + data_len);
    out += "WAVE";
    out += "fmt ";
    wr_u32(out, 16);
    wr_u16(out, 3);  // IEEE float
    wr_u16(out, 1);
    wr_u32(out, kRequiredRate);
    wr_u32(out, kRequiredRate * 4);
    wr_u16(out, 4);
    wr_u16(out, 32);
    out += "fact";
    wr_u32(out, 4);
    wr_u32(out, n);
    out += "data";
    wr_u32(out, data_len);
    const std::size_t at = out.size();
    out.resize(at + data_len);
    std::memcpy(out.data() + at, audio.samples.data(), data_len);
  } else {
    const std::uint32_t data_len = n * 2;
    out.reserve(44 + data_len);
    out += "RIFF";
    wr_u32(out, 4 + 24 + 8 + data_len);
    out += "WAVE";
    out += "fmt ";
    wr_u32(out, 16);
    wr_u16(out, 1);  // PCM
    wr_u16(out, 1);
    wr_u32(out, kRequiredRate);
    wr_u32(out, kRequiredRate * 2);
    wr_u16(out, 2);
    wr_u16(out, 16);
    out += "data";
    wr_u32(out, data_len);
    for (std::uint32_t i = 0; i < n; ++i) {
      double v = std::lround(double(audio.samples[i]) * 32768.0);
      v = std::min(32767.0, std::max(-32768.0, v));
      wr_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Mixing

Scenario scenario_from_string(const std::string& s) {
  if (s == "TS1" || s == "ts1") return Scenario::TS1;
  if (s == "TS2" || s == "ts2") return Scenario::TS2;
  if (s == "TS3" || s == "ts3") return Scenario::TS3;
  throw ConfigError("unknown scenario '" + s + "' (expected TS1, TS2 or TS3)");
}

std::string scenario_to_string(Scenario s) {
  switch (s) {
    case Scenario::TS1: return "TS1";
    case Scenario::TS2: return "TS2";
    case Scenario::TS3: return "TS3";
  }
  return "TS2";
}

namespace {

constexpr std::int64_t kVadFrame = 320;  // 20 ms at 16 kHz
constexpr double kVadFloorDbfs = -40.0;

std::vector<float> loop_pad(std::vector<float> x, std::size_t n) {
  if (x.size() < std::size_t(kRequiredRate))
    throw DataError("mix: component shorter than 1 s");
  if (x.size() >= n) {
    x.resize(n);
    return x;
  }
  std::vector<float> out;
  out.reserve(n);
  while (out.size() < n) {
    const std::size_t take = std::min(x.size(), n - out.size());
    out.insert(out.end(), x.begin(), x.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return out;
}

double speech_rms(const std::vector<float>& x) {
  const auto active = dsp::vad_active(x.data(), static_cast<std::int64_t>(x.size()), kVadFrame,
                                      kVadFloorDbfs);
  return dsp::rms_over_active(x.data(), static_cast<std::int64_t>(x.size()), active, kVadFrame);
}

}  // namespace

MixResult mix(const MixtureSpec& spec) {
  switch (spec.scenario) {
    case Scenario::TS1:
      if (!spec.interferer_path || !spec.noise_path)
        throw ConfigError("mix: TS1 requires interferer and noise paths");
      break;
    case Scenario::TS2:
      if (spec.interferer_path || !spec.noise_path)
        throw ConfigError("mix: TS2 requires a noise path and no interferer");
      break;
    case Scenario::TS3:
      if (spec.interferer_path || spec.noise_path)
        throw ConfigError("mix: TS3 takes the target only");
      break;
  }
  const AudioFile target = load_wav(spec.target_path);
  const std::size_t n = target.samples.size();
  if (n < std::size_t(kRequiredRate)) throw DataError("mix: target shorter than 1 s");

  const double rms_t = speech_rms(target.samples);
  if (rms_t == 0) throw DataError("mix: zero-energy target");

  std::vector<float> noisy = target.samples;
  if (spec.interferer_path) {
    auto inter = loop_pad(load_wav(*spec.interferer_path).samples, n);
    const double rms_i = speech_rms(inter);
    if (rms_i == 0) throw DataError("mix: zero-energy interferer");
    const double s = rms_t / (rms_i * std::pow(10.0, spec.sir_db / 20.0));
    for (std::size_t i = 0; i < n; ++i) noisy[i] += float(s * inter[i]);
  }
  if (spec.noise_path) {
    auto noise = loop_pad(load_wav(*spec.noise_path).samples, n);
    const double rms_n = dsp::rms(noise.data(), static_cast<std::int64_t>(noise.size()));
    if (rms_n == 0) throw DataError("mix: zero-energy noise");
    const double s = rms_t / (rms_n * std::pow(10.0, spec.snr_noise_db / 20.0));
    for (std::size_t i = 0; i < n; ++i) noisy[i] += float(s * noise[i]);
  }

  MixResult res;
  res.clean = target.samples;
  float peak = 0;
  for (float v : noisy) peak = std::max(peak, std::abs(v));
  if (peak > 1.0f) {
    res.gain = 0.9 / double(peak);
    for (auto& v : noisy) v = float(v * res.gain);
    for (auto& v : res.clean) v = float(v * res.gain);
  }
  res.noisy = std::move(noisy);
  return res;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

struct Voice {
  double f0;
  double formant_hz[3];
  double formant_bw[3];
  double vibrato_hz;
};

// Fixed per-speaker traits; utterance content varies with the item seed.
Voice voice_for_speaker(int speaker_id) {
  dsp::SplitMix64 vr(0x564f494345ull ^ (std::uint64_t(speaker_id) * 0x9E3779B97F4A7C15ull));
  Voice v;
  v.f0 = 85.0 + 15.0 * double(speaker_id % 7) + vr.uniform(0.0, 12.0);
  v.formant_hz[0] = vr.uniform(320.0, 840.0);
  v.formant_hz[1] = vr.uniform(950.0, 2100.0);
  v.formant_hz[2] = vr.uniform(2300.0, 3200.0);
  for (int m = 0; m < 3; ++m) v.formant_bw[m] = vr.uniform(90.0, 160.0);
  v.vibrato_hz = vr.uniform(4.0, 6.5);
  return v;
}

double formant_gain(const Voice& v, double hz) {
  double g = 0.05;
  for (int m = 0; m < 3; ++m) {
    const double d = (hz - v.formant_hz[m]) / v.formant_bw[m];
    g += std::exp(-0.5 * d * d);
  }
  return g;
}

}  // namespace

std::vector<float> synth_speech(std::uint64_t seed, int speaker_id, double seconds,
                                int sample_rate_hz) {
  const Voice voice = voice_for_speaker(speaker_id);
  dsp::SplitMix64 rng(seed ^ 0x53504545434855ull);
  const std::int64_t n = std::llround(seconds * sample_rate_hz);
  std::vector<float> out(static_cast<std::size_t>(n), 0.0f);
  const double dt = 1.0 / sample_rate_hz;

  constexpr int kMaxHarmonics = 64;
  double phase[kMaxHarmonics];

  std::int64_t at = 0;
  // lead-in pause so clips do not all start identically
  at += std::llround(rng.uniform(0.01, 0.05) * sample_rate_hz);
  while (at < n) {
    const std::int64_t seg = std::llround(rng.uniform(0.12, 0.35) * sample_rate_hz);
    const double f0_seg = voice.f0 * (1.0 + 0.12 * (rng.unit() - 0.5));
    const double vib_phase = rng.uniform(0.0, 6.283185307179586);
    const double amp = 0.22 * (0.75 + 0.5 * rng.unit());
    const int harmonics =
        std::min<int>(kMaxHarmonics, int(0.45 * sample_rate_hz / voice.f0));
    double weights[kMaxHarmonics];
    double wsum = 0;
    for (int k = 0; k < harmonics; ++k) {
      weights[k] = formant_gain(voice, (k + 1) * f0_seg) / (1.0 + 0.35 * k);
      wsum += weights[k];
    }
    for (int k = 0; k < harmonics; ++k) {
      weights[k] /= wsum;
      phase[k] = rng.uniform(0.0, 6.283185307179586);
    }
    const std::int64_t attack = std::min<std::int64_t>(seg / 4, sample_rate_hz / 50);
    for (std::int64_t i = 0; i < seg && at + i < n; ++i) {
      const double t = double(i) * dt;
      const double f0 =
          f0_seg * (1.0 + 0.035 * std::sin(6.283185307179586 * voice.vibrato_hz * t + vib_phase) +
                    0.06 * t);
      double env = 1.0;
      if (i < attack) env = double(i) / double(attack);
      const std::int64_t tail = seg - i;
      if (tail < attack) env = std::min(env, double(tail) / double(attack));
      double s = 0;
      for (int k = 0; k < harmonics; ++k) {
        phase[k] += 6.283185307179586 * (k + 1) * f0 * dt;
        s += weights[k] * std::sin(phase[k]);
      }
      out[static_cast<std::size_t>(at + i)] = float(amp * env * s);
    }
    at += seg;
    at += std::llround(rng.uniform(0.04, 0.16) * sample_rate_hz);  // inter-syllable pause
  }
  return out;
}

std::vector<float> synth_noise(std::uint64_t seed, double seconds, int sample_rate_hz) {
  dsp::SplitMix64 rng(seed ^ 0x4e4f495345ull);
  const std::int64_t n = std::llround(seconds * sample_rate_hz);
  std::vector<float> out(static_cast<std::size_t>(n));
  // one-pole lowpassed white noise with slow amplitude modulation
  const double a = rng.uniform(0.86, 0.985);
  const double mod_hz = rng.uniform(0.15, 0.7);
  const double mod_phase = rng.uniform(0.0, 6.283185307179586);
  double y = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double white = rng.uniform(-1.0, 1.0);
    y = a * y + (1.0 - a) * white;
    const double mod =
        0.75 + 0.25 * std::sin(6.283185307179586 * mod_hz * double(i) / sample_rate_hz +
                               mod_phase);
    out[static_cast<std::size_t>(i)] = float(y * mod);
  }
  const double target_rms = 0.02 + 0.04 * rng.unit();
  const double cur = dsp::rms(out.data(), n);
  if (cur > 0) {
    const float s = float(target_rms / cur);
    for (auto& v : out) v *= s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixture set

namespace {

int env_threads() {
  const char* v = std::getenv("E3NET_THREADS");
  if (!v) return 1;
  const int t = std::atoi(v);
  return t > 0 ? t : 1;
}

json item_to_json(const FixtureItem& it) {
  json j{{"scenario", scenario_to_string(it.scenario)},
         {"split", it.split},
         {"noisy", it.noisy_path},
         {"clean", it.clean_path},
         {"enrollment", it.enrollment_path},
         {"target", it.target_path},
         {"snr_noise_db", it.snr_noise_db},
         {"sir_db", it.sir_db},
         {"seed", it.seed},
         {"speaker", it.speaker}};
  if (!it.interferer_path.empty()) j["interferer"] = it.interferer_path;
  if (!it.noise_path.empty()) j["noise"] = it.noise_path;
  return j;
}

FixtureItem item_from_json(const json& j) {
  FixtureItem it;
  it.scenario = scenario_from_string(j.at("scenario").get<std::string>());
  it.split = j.value("split", "train");
  it.noisy_path = j.value("noisy", "");
  it.clean_path = j.value("clean", "");
  it.enrollment_path = j.value("enrollment", "");
  it.target_path = j.value("target", "");
  it.interferer_path = j.value("interferer", "");
  it.noise_path = j.value("noise", "");
  it.snr_noise_db = j.value("snr_noise_db", 0.0);
  it.sir_db = j.value("sir_db", 0.0);
  it.seed = j.value("seed", std::uint64_t(0));
  it.speaker = j.value("speaker", 0);
  return it;
}

}  // namespace

std::string manifest_to_json_string(const FixtureManifest& m) {
  json arr = json::array();
  for (const auto& it : m.items) arr.push_back(item_to_json(it));
  return arr.dump(2);
}

FixtureManifest load_manifest(const std::string& dir_or_manifest_path) {
  fs::path p(dir_or_manifest_path);
  if (fs::is_directory(p)) p /= "manifest.json";
  std::ifstream f(p);
  if (!f) throw DataError("cannot open manifest '" + p.string() + "'");
  json arr;
  try {
    f >> arr;
  } catch (const json::exception& e) {
    throw DataError("manifest '" + p.string() + "': invalid JSON: " + e.what());
  }
  if (!arr.is_array()) throw DataError("manifest '" + p.string() + "': expected a JSON array");
  FixtureManifest m;
  for (const auto& j : arr) m.items.push_back(item_from_json(j));
  return m;
}

FixtureManifest make_fixture_set(std::uint64_t seed, const std::string& out_dir,
                                 const FixtureOptions& opts) {
  const fs::path root(out_dir);
  std::error_code ec;
  fs::create_directories(root / "speakers", ec);
  fs::create_directories(root / "sources", ec);
  fs::create_directories(root / "items", ec);
  if (!fs::is_directory(root)) throw DataError("cannot create output dir '" + out_dir + "'");

  const int total = opts.n_train + opts.n_eval + opts.n_unlabeled;
  const double enroll_seconds = 2.0;

  // Enrollment clip per speaker.
  std::vector<std::string> enroll_paths(static_cast<std::size_t>(opts.n_speakers));
  for (int k = 0; k < opts.n_speakers; ++k) {
    dsp::SplitMix64 d(seed ^ (0x454e524cull + std::uint64_t(k)));
    const auto clip = synth_speech(d.next(), k, enroll_seconds, kRequiredRate);
    const std::string p = (root / "speakers" / ("spk_" + std::to_string(k) + ".wav")).string();
    save_wav(p, AudioFile{clip, kRequiredRate});
    enroll_paths[static_cast<std::size_t>(k)] = p;
  }

  struct Prepared {
    FixtureItem item;
    std::vector<float> target, interferer, noise;
  };
  std::vector<Prepared> prep(static_cast<std::size_t>(total));

  auto synth_item = [&](int i) {
    Prepared& pr = prep[static_cast<std::size_t>(i)];
    FixtureItem& it = pr.item;
    dsp::SplitMix64 d(seed ^ ((std::uint64_t(i) + 1) * 0x9E3779B97F4A7C15ull));
    it.seed = d.next();
    it.speaker = i % opts.n_speakers;
    it.split = i < opts.n_train ? "train" : (i < opts.n_train + opts.n_eval ? "eval" : "unlabeled");
    it.scenario = opts.scenario ? *opts.scenario
                                : (i % 3 == 0 ? Scenario::TS1
                                              : (i % 3 == 1 ? Scenario::TS2 : Scenario::TS3));
    it.snr_noise_db = d.uniform(opts.snr_min_db, opts.snr_max_db);
    it.sir_db = d.uniform(opts.sir_min_db, opts.sir_max_db);
    it.enrollment_path = enroll_paths[static_cast<std::size_t>(it.speaker)];
    pr.target = synth_speech(d.next(), it.speaker, opts.clip_seconds, kRequiredRate);
    if (it.scenario == Scenario::TS1) {
      const int other = (it.speaker + 1 + int(d.next() % std::uint64_t(opts.n_speakers - 1))) %
                        opts.n_speakers;
      pr.interferer = synth_speech(d.next(), other, opts.clip_seconds, kRequiredRate);
    }
    if (it.scenario != Scenario::TS3) pr.noise = synth_noise(d.next(), opts.clip_seconds, kRequiredRate);
  };

  const int threads = std::min(env_threads(), total > 0 ? total : 1);
  if (threads > 1) {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
      pool.emplace_back([&, w]() {
        for (int i = w; i < total; i += threads) synth_item(i);
      });
    for (auto& t : pool) t.join();
  } else {
    for (int i = 0; i < total; ++i) synth_item(i);
  }

  FixtureManifest manifest;
  manifest.seed = seed;
  for (int i = 0; i < total; ++i) {
    Prepared& pr = prep[static_cast<std::size_t>(i)];
    FixtureItem& it = pr.item;
    const std::string tag = "item_" + std::to_string(i);
    it.target_path = (root / "sources" / (tag + "_target.wav")).string();
    save_wav(it.target_path, AudioFile{pr.target, kRequiredRate});
    MixtureSpec spec;
    spec.target_path = it.target_path;
    spec.scenario = it.scenario;
    spec.snr_noise_db = it.snr_noise_db;
    spec.sir_db = it.sir_db;
    spec.seed = it.seed;
    if (!pr.interferer.empty()) {
      it.interferer_path = (root / "sources" / (tag + "_interferer.wav")).string();
      save_wav(it.interferer_path, AudioFile{pr.interferer, kRequiredRate});
      spec.interferer_path = it.interferer_path;
    }
    if (!pr.noise.empty()) {
      it.noise_path = (root / "sources" / (tag + "_noise.wav")).string();
      save_wav(it.noise_path, AudioFile{pr.noise, kRequiredRate});
      spec.noise_path = it.noise_path;
    }
    const MixResult mixed = mix(spec);
    it.noisy_path = (root / "items" / (tag + "_noisy.wav")).string();
    save_wav(it.noisy_path, AudioFile{mixed.noisy, kRequiredRate});
    if (it.split != "unlabeled") {
      it.clean_path = (root / "items" / (tag + "_clean.wav")).string();
      save_wav(it.clean_path, AudioFile{mixed.clean, kRequiredRate});
    }
    manifest.items.push_back(it);
  }

  std::ofstream mf(root / "manifest.json");
  if (!mf) throw DataError("cannot write manifest in '" + out_dir + "'");
  mf << manifest_to_json_string(manifest) << "\n";
  return manifest;
}

}  // namespace e3net
