#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "e3net/checkpoint.hpp"
#include "e3net/dsp.hpp"
#include "e3net/data.hpp"
#include "e3net/model.hpp"
#include "e3net/nnops.hpp"
#include "oracle.hpp"

using namespace e3net;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("e3net_cli_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

struct CliResult {
  int exit_code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path out = fs::temp_directory_path() / ("cli_out_" + std::to_string(counter));
  const fs::path err = fs::temp_directory_path() / ("cli_err_" + std::to_string(counter));
  ++counter;
  const std::string cmd = std::string(E3NET_CLI_PATH) + " " + args + " >" + out.string() +
                          " 2>" + err.string();
  const int rc = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = rc < 0 ? rc : WEXITSTATUS(rc);
  r.out = slurp(out);
  r.err = slurp(err);
  fs::remove(out);
  fs::remove(err);
  return r;
}

ModelConfig small16k() {
  ModelConfig c;  // 16 kHz default framing, scaled-down widths
  c.num_filters = 16;
  c.emb_dim = 8;
  c.model_dim = 8;
  c.fc_hidden = 12;
  c.num_blocks = 1;
  return c;
}

}  // namespace

TEST_CASE("cli: params reproduces the published totals from a config file") {
  TempDir dir;
  const fs::path cfg_file = dir.path / "cfg.json";
  std::ofstream(cfg_file) << config_to_json_string(ModelConfig::baseline());
  auto r = run_cli("params --config " + cfg_file.string() + " --json");
  REQUIRE(r.exit_code == 0);
  const json j = json::parse(r.out);
  const double total = j["total"].get<double>();
  CHECK(std::abs(total - 6.61e6) / 6.61e6 <= 0.015);

  std::ofstream(cfg_file) << config_to_json_string(ModelConfig::student());
  r = run_cli("params --config " + cfg_file.string() + " --json");
  REQUIRE(r.exit_code == 0);
  const double total2 = json::parse(r.out)["total"].get<double>();
  CHECK(std::abs(total2 - 4.50e6) / 4.50e6 <= 0.015);

  // usage error: both sources missing
  r = run_cli("params");
  CHECK(r.exit_code == 1);
}

TEST_CASE("cli: metrics on identical files reports the caps and zero TSOS") {
  TempDir dir;
  AudioFile a;
  a.samples = oracle::random_wave(32000, 3, 0.3);
  const fs::path wav = dir.path / "x.wav";
  save_wav(wav.string(), a);
  const auto r = run_cli("metrics --ref " + wav.string() + " --deg " + wav.string());
  REQUIRE(r.exit_code == 0);
  const json j = json::parse(r.out);
  CHECK(j["si_sdr_db"].get<double>() == 100.0);
  CHECK(j["tsos"]["seconds"].get<double>() == 0.0);
  CHECK(j["dnsmos"] == "unavailable");
  CHECK(j["wer"] == "unavailable");
}

TEST_CASE("cli: enhance requires exactly one speaker-identity source") {
  TempDir dir;
  const ModelConfig cfg = small16k();
  const fs::path ckpt = dir.path / "m.e3n";
  save_checkpoint(init_params<float>(cfg, 3), cfg, ckpt.string());
  AudioFile a;
  a.samples = oracle::random_wave(16000, 4, 0.3);
  const fs::path wav = dir.path / "in.wav";
  save_wav(wav.string(), a);

  const auto r = run_cli("enhance --model " + ckpt.string() + " --in " + wav.string() +
                         " --out " + (dir.path / "o.wav").string());
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("enroll") != std::string::npos);
}

TEST_CASE("cli: enhance offline vs streaming agree within 1e-5") {
  TempDir dir;
  const ModelConfig cfg = small16k();
  const fs::path ckpt = dir.path / "m.e3n";
  save_checkpoint(init_params<float>(cfg, 5), cfg, ckpt.string());

  AudioFile in;
  in.samples = oracle::random_wave(16000, 6, 0.3);
  const fs::path wav = dir.path / "in.wav";
  save_wav(wav.string(), in);

  // embedding file route
  json emb = json::array();
  dsp::SplitMix64 rng(7);
  for (std::int64_t i = 0; i < cfg.emb_dim; ++i) emb.push_back(rng.uniform(-1, 1));
  const fs::path embf = dir.path / "emb.json";
  std::ofstream(embf) << emb.dump();

  const fs::path out_a = dir.path / "a.wav";
  const fs::path out_b = dir.path / "b.wav";
  auto r1 = run_cli("enhance --model " + ckpt.string() + " --in " + wav.string() +
                    " --embedding " + embf.string() + " --out " + out_a.string() + " --json");
  REQUIRE(r1.exit_code == 0);
  CHECK(json::parse(r1.out).contains("rtf"));
  auto r2 = run_cli("enhance --model " + ckpt.string() + " --in " + wav.string() +
                    " --embedding " + embf.string() + " --out " + out_b.string() +
                    " --streaming --json");
  REQUIRE(r2.exit_code == 0);

  const AudioFile a = load_wav(out_a.string());
  const AudioFile b = load_wav(out_b.string());
  REQUIRE(b.samples.size() >= a.samples.size());
  double max_diff = 0;
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    max_diff = std::max(max_diff, std::abs(double(a.samples[i]) - b.samples[i]));
  CHECK(max_diff < 1e-5);
}

TEST_CASE("cli: mask-saturated model reduces enhance to decoder(encoder(x)) on a TS3 clip") {
  TempDir dir;
  const ModelConfig cfg = small16k();
  ModelParams p = init_params<float>(cfg, 8);
  Tensor& mb = p.at("mask.bias");
  for (std::int64_t i = 0; i < mb.numel(); ++i) mb[i] = 60.0f;
  Tensor& mw = p.at("mask.weight");
  for (std::int64_t i = 0; i < mw.numel(); ++i) mw[i] = 0.0f;
  const fs::path ckpt = dir.path / "sat.e3n";
  save_checkpoint(p, cfg, ckpt.string());

  // TS3 fixture: clean speech only
  const auto speech = synth_speech(900, 1, 1.5, 16000);
  const fs::path wav = dir.path / "ts3.wav";
  save_wav(wav.string(), AudioFile{speech, 16000});
  const fs::path enroll = dir.path / "enroll.wav";
  save_wav(enroll.string(), AudioFile{synth_speech(901, 1, 2.0, 16000), 16000});

  const fs::path out = dir.path / "out.wav";
  const auto r = run_cli("enhance --model " + ckpt.string() + " --in " + wav.string() +
                         " --enroll " + enroll.string() + " --out " + out.string());
  REQUIRE(r.exit_code == 0);

  Tensor x({static_cast<std::int64_t>(speech.size())});
  std::copy(speech.begin(), speech.end(), x.data());
  const Tensor frames = nnops::frame_signal(x, cfg.window_samples(), cfg.hop_samples());
  const Tensor feat = nnops::conv1d_encoder(frames, p.at("encoder.filters"), p.at("encoder.bias"));
  const Tensor dec = nnops::linear(feat, p.at("decoder.filters"), p.at("decoder.bias"));
  const Tensor want = nnops::overlap_add(dec, cfg.hop_samples());

  const AudioFile got = load_wav(out.string());
  REQUIRE(static_cast<std::int64_t>(got.samples.size()) == want.numel());
  for (std::int64_t i = 0; i < want.numel(); ++i)
    CHECK(got.samples[std::size_t(i)] == doctest::Approx(double(want[i])).epsilon(1e-6));
}

TEST_CASE("cli: simulate is deterministic across runs") {
  TempDir d1, d2;
  const std::string flags = " --seed 99 --train 2 --eval 1 --speakers 2 --seconds 1.1";
  auto r1 = run_cli("simulate --out " + (d1.path / "f").string() + flags);
  auto r2 = run_cli("simulate --out " + (d2.path / "f").string() + flags);
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  std::string m1 = slurp(d1.path / "f" / "manifest.json");
  std::string m2 = slurp(d2.path / "f" / "manifest.json");
  // manifests embed absolute paths; compare with the roots stripped
  const std::string p1 = (d1.path / "f").string(), p2 = (d2.path / "f").string();
  std::string::size_type pos;
  while ((pos = m1.find(p1)) != std::string::npos) m1.erase(pos, p1.size());
  while ((pos = m2.find(p2)) != std::string::npos) m2.erase(pos, p2.size());
  CHECK(m1 == m2);
}

TEST_CASE("cli: bench report carries one sample per run") {
  TempDir dir;
  const ModelConfig cfg = small16k();
  const fs::path cfgf = dir.path / "cfg.json";
  std::ofstream(cfgf) << config_to_json_string(cfg);
  const auto r = run_cli("bench --config " + cfgf.string() + " --seconds 0.2 --runs 5 --json");
  REQUIRE(r.exit_code == 0);
  const json j = json::parse(r.out);
  CHECK(j["runs"].get<int>() == 5);
  CHECK(j["run_seconds"].size() == 5);
  CHECK(j["rtf"].get<double>() > 0);
}

TEST_CASE("cli: KD regime without a teacher exits with a usage error") {
  TempDir dir;
  const fs::path data = dir.path / "data";
  auto sim = run_cli("simulate --out " + data.string() +
                     " --seed 1 --train 2 --eval 0 --speakers 2 --seconds 1.1 --scenario ts2");
  REQUIRE(sim.exit_code == 0);

  ModelConfig cfg = small16k();
  json train_cfg{{"regime", "kd_on_sup"},
                 {"model", json::parse(config_to_json_string(cfg))},
                 {"steps", 2},
                 {"batch_size", 1},
                 {"crop_seconds", 1.0},
                 {"data_dir", data.string()}};
  const fs::path cfgf = dir.path / "train.json";
  std::ofstream(cfgf) << train_cfg.dump();
  const auto r = run_cli("train --config " + cfgf.string() + " --out " +
                         (dir.path / "m.e3n").string());
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("teacher") != std::string::npos);
}

TEST_CASE("cli: seed-fixed training run is reproducible checkpoint-for-checkpoint") {
  TempDir dir;
  const fs::path data = dir.path / "data";
  auto sim = run_cli("simulate --out " + data.string() +
                     " --seed 2 --train 3 --eval 1 --speakers 2 --seconds 1.1 --scenario ts2");
  REQUIRE(sim.exit_code == 0);

  ModelConfig cfg = small16k();
  json train_cfg{{"regime", "supervised_se"},
                 {"model", json::parse(config_to_json_string(cfg))},
                 {"steps", 10},
                 {"batch_size", 1},
                 {"crop_seconds", 1.0},
                 {"peak_lr", 1e-3},
                 {"seed", 77},
                 {"data_dir", data.string()}};
  const fs::path cfgf = dir.path / "train.json";
  std::ofstream(cfgf) << train_cfg.dump();

  const fs::path c1 = dir.path / "a.e3n", c2 = dir.path / "b.e3n";
  auto r1 = run_cli("train --config " + cfgf.string() + " --out " + c1.string() + " --json");
  REQUIRE(r1.exit_code == 0);
  auto r2 = run_cli("train --config " + cfgf.string() + " --out " + c2.string() + " --json");
  REQUIRE(r2.exit_code == 0);
  CHECK(slurp(c1) == slurp(c2));  // bitwise-identical checkpoints

  // log file exists with json lines
  const std::string log = slurp(fs::path(c1.string() + ".log.jsonl"));
  CHECK(log.find("\"loss\"") != std::string::npos);
}

TEST_CASE("cli: unknown subcommand and missing args are usage errors") {
  CHECK(run_cli("frobnicate").exit_code == 1);
  CHECK(run_cli("enhance").exit_code == 1);
  CHECK(run_cli("metrics --ref /nonexistent.wav --deg /nonexistent.wav").exit_code == 2);
}
