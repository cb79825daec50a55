// e3net command-line interface: simulate, train, distill, enhance, bench,
// metrics, params. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 numerical failure. Results go to stdout, diagnostics to stderr.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "e3net/checkpoint.hpp"
#include "e3net/data.hpp"
#include "e3net/metrics.hpp"
#include "e3net/model.hpp"
#include "e3net/stream.hpp"
#include "e3net/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw e3net::DataError("cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

e3net::Tensor to_tensor(const std::vector<float>& v) {
  e3net::Tensor t({static_cast<std::int64_t>(v.size())});
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

struct SimulateArgs {
  std::string out_dir;
  std::uint64_t seed = 17;
  int n_train = 20, n_eval = 5, n_unlabeled = 0, n_speakers = 10;
  double seconds = 2.0;
  std::string scenario = "mixed";
  double snr_min = 0, snr_max = 20, sir_min = 0, sir_max = 10;
  bool json_out = false;
};

int cmd_simulate(const SimulateArgs& a) {
  e3net::FixtureOptions opts;
  opts.n_train = a.n_train;
  opts.n_eval = a.n_eval;
  opts.n_unlabeled = a.n_unlabeled;
  opts.n_speakers = a.n_speakers;
  opts.clip_seconds = a.seconds;
  opts.snr_min_db = a.snr_min;
  opts.snr_max_db = a.snr_max;
  opts.sir_min_db = a.sir_min;
  opts.sir_max_db = a.sir_max;
  if (a.scenario != "mixed") opts.scenario = e3net::scenario_from_string(a.scenario);
  const auto manifest = e3net::make_fixture_set(a.seed, a.out_dir, opts);
  const std::string mpath = (fs::path(a.out_dir) / "manifest.json").string();
  if (a.json_out) {
    std::cout << json{{"manifest", mpath}, {"items", manifest.items.size()}, {"seed", a.seed}}
              << "\n";
  } else {
    std::cout << "wrote " << manifest.items.size() << " fixtures under " << a.out_dir
              << " (manifest: " << mpath << ")\n";
  }
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string data_dir;
  std::string teacher;
  std::string out_ckpt;
  bool json_out = false;
  bool distill = false;
};

int cmd_train(const TrainArgs& a) {
  e3net::TrainRunConfig rc = e3net::parse_train_run_config(read_file(a.config_path));
  if (!a.data_dir.empty()) rc.data_dir = a.data_dir;
  if (!a.teacher.empty()) rc.teacher_checkpoint = a.teacher;
  if (a.distill && rc.regime == e3net::Regime::SupervisedSE) rc.regime = e3net::Regime::KDonSup;
  if (a.distill && rc.teacher_checkpoint.empty())
    throw e3net::ConfigError("distill requires --teacher or teacher_checkpoint in the config");

  auto run_one = [&](const e3net::TrainRunConfig& cfg, const std::string& ckpt_path) {
    const std::string log_path = ckpt_path + ".log.jsonl";
    std::ofstream log(log_path, std::ios::trunc);
    auto sink = [&log](const std::string& line) { log << line << "\n"; };
    const e3net::TrainRunResult res = e3net::run_training(cfg, sink);
    e3net::save_checkpoint(res.params, res.config, ckpt_path);
    return res;
  };

  if (!rc.sweep.empty()) {
    if (!rc.model)
      throw e3net::ConfigError("sweep runs need an explicit model config to override");
    std::string csv = "filters,blocks,final_loss,si_sdr_db\n";
    for (const auto& [filters, blocks] : rc.sweep) {
      e3net::TrainRunConfig one = rc;
      one.sweep.clear();
      one.model->num_filters = filters;
      one.model->num_blocks = blocks;
      const std::string ckpt =
          a.out_ckpt + ".f" + std::to_string(filters) + "_n" + std::to_string(blocks);
      const auto res = run_one(one, ckpt);
      csv += std::to_string(filters) + "," + std::to_string(blocks) + "," +
             std::to_string(res.final_loss) + "," +
             std::to_string(res.eval_present ? res.eval_si_sdr_out_db : 0.0) + "\n";
      std::cerr << "sweep run F=" << filters << " N=" << blocks
                << " final_loss=" << res.final_loss << "\n";
    }
    const std::string csv_path = a.out_ckpt + ".sweep.csv";
    std::ofstream(csv_path, std::ios::trunc) << csv;
    std::cout << csv;
    std::cerr << "sweep CSV written to " << csv_path << "\n";
    return 0;
  }

  const auto res = run_one(rc, a.out_ckpt);
  if (a.json_out) {
    json j{{"checkpoint", a.out_ckpt},
           {"steps", res.steps},
           {"final_loss", res.final_loss},
           {"regime", e3net::regime_to_string(rc.regime)}};
    if (res.eval_present) {
      j["eval_si_sdr_out_db"] = res.eval_si_sdr_out_db;
      j["eval_si_sdr_in_db"] = res.eval_si_sdr_in_db;
    }
    std::cout << j << "\n";
  } else {
    std::cout << "trained " << res.steps << " steps (" << e3net::regime_to_string(rc.regime)
              << "), final loss " << res.final_loss << ", checkpoint " << a.out_ckpt << "\n";
    if (res.eval_present)
      std::cout << "eval SI-SDR: " << res.eval_si_sdr_out_db << " dB (input "
                << res.eval_si_sdr_in_db << " dB)\n";
  }
  return 0;
}

struct EnhanceArgs {
  std::string model, input, enroll, embedding, output;
  bool streaming = false;
  bool json_out = false;
};

int cmd_enhance(const EnhanceArgs& a) {
  if (a.enroll.empty() == a.embedding.empty())
    throw e3net::ConfigError("enhance needs exactly one of --enroll or --embedding");
  auto [params, cfg] = e3net::load_checkpoint(a.model);
  const e3net::AudioFile in = e3net::load_wav(a.input);

  e3net::SpeakerEmbedding emb;
  if (!a.enroll.empty())
    emb = e3net::builtin_embedding(e3net::load_wav(a.enroll).samples, cfg);
  else
    emb = e3net::embedding_from_json_string(read_file(a.embedding), cfg.emb_dim);

  std::vector<float> enhanced;
  const auto t0 = std::chrono::steady_clock::now();
  if (a.streaming) {
    auto shared = std::make_shared<const e3net::ModelParams>(std::move(params));
    e3net::Streamer s(shared, cfg, emb.vec);
    const std::int64_t hop = cfg.hop_samples();
    std::int64_t at = 0;
    const std::int64_t n = static_cast<std::int64_t>(in.samples.size());
    while (at < n) {
      const std::int64_t len = std::min(hop, n - at);
      auto chunk = s.push(in.samples.data() + at, len);
      enhanced.insert(enhanced.end(), chunk.begin(), chunk.end());
      at += len;
    }
    auto tail = s.flush();
    enhanced.insert(enhanced.end(), tail.begin(), tail.end());
  } else {
    const e3net::Tensor out = e3net::forward(params, cfg, to_tensor(in.samples), emb.vec);
    enhanced.assign(out.data(), out.data() + out.numel());
  }
  const auto t1 = std::chrono::steady_clock::now();
  const double proc = std::chrono::duration<double>(t1 - t0).count();
  const double dur = double(in.samples.size()) / cfg.sample_rate_hz;
  const double rtf = dur > 0 ? proc / dur : 0;

  e3net::save_wav(a.output, e3net::AudioFile{enhanced, cfg.sample_rate_hz});
  if (a.json_out) {
    std::cout << json{{"out", a.output},
                      {"samples", enhanced.size()},
                      {"audio_seconds", dur},
                      {"processing_seconds", proc},
                      {"rtf", rtf},
                      {"streaming", a.streaming}}
              << "\n";
  } else {
    std::cout << "wrote " << a.output << " (" << enhanced.size() << " samples); rtf = " << rtf
              << (a.streaming ? " [streaming]" : " [offline]") << "\n";
  }
  return 0;
}

struct BenchArgs {
  std::string model, config;
  double seconds = 10.0;
  int runs = 100;
  bool json_out = false;
};

int cmd_bench(const BenchArgs& a) {
  if (a.model.empty() == a.config.empty())
    throw e3net::ConfigError("bench needs exactly one of --model or --config");
  std::shared_ptr<const e3net::ModelParams> params;
  e3net::ModelConfig cfg;
  if (!a.model.empty()) {
    auto [p, c] = e3net::load_checkpoint(a.model);
    params = std::make_shared<const e3net::ModelParams>(std::move(p));
    cfg = c;
  } else {
    cfg = e3net::config_from_json_string(read_file(a.config));
    params =
        std::make_shared<const e3net::ModelParams>(e3net::init_params<float>(cfg, 1));
  }
  const e3net::RtfReport rep = e3net::bench_rtf(params, cfg, a.seconds, a.runs);
  if (a.json_out) {
    std::cout << e3net::rtf_report_json(rep) << "\n";
  } else {
    std::cout << "rtf mean " << rep.rtf << " (median " << rep.rtf_median << ", p95 "
              << rep.rtf_p95 << ") over " << rep.runs << " runs of " << rep.audio_seconds
              << " s audio\n";
  }
  return 0;
}

struct MetricsArgs {
  std::string ref, deg;
};

int cmd_metrics(const MetricsArgs& a) {
  const e3net::AudioFile ref = e3net::load_wav(a.ref);
  const e3net::AudioFile deg = e3net::load_wav(a.deg);
  if (ref.samples.size() != deg.samples.size())
    throw e3net::ShapeError("metrics: file lengths differ (" +
                            std::to_string(ref.samples.size()) + " vs " +
                            std::to_string(deg.samples.size()) + ")");
  const double si = e3net::si_sdr_db(deg.samples, ref.samples);
  std::vector<float> resid(ref.samples.size());
  for (std::size_t i = 0; i < resid.size(); ++i) resid[i] = deg.samples[i] - ref.samples[i];
  const double snr = e3net::snr_db(ref.samples, resid);
  e3net::TsosOptions topts;
  const e3net::TsosReport t = e3net::tsos(deg.samples, ref.samples, topts);
  std::cout << e3net::metric_report_json(a.deg, si, snr, t, topts) << "\n";
  return 0;
}

struct ParamsArgs {
  std::string model, config;
  bool json_out = false;
};

int cmd_params(const ParamsArgs& a) {
  if (a.model.empty() == a.config.empty())
    throw e3net::ConfigError("params needs exactly one of --model or --config");
  e3net::ModelConfig cfg;
  if (!a.model.empty())
    cfg = e3net::load_checkpoint(a.model).second;
  else
    cfg = e3net::config_from_json_string(read_file(a.config));
  const auto breakdown = e3net::count_params_breakdown(cfg);
  const std::int64_t total = e3net::count_params(cfg);
  if (a.json_out) {
    json per;
    for (const auto& [name, n] : breakdown) per[name] = n;
    std::cout << json{{"total", total}, {"per_module", per}} << "\n";
  } else {
    for (const auto& [name, n] : breakdown) std::cout << name << ": " << n << "\n";
    std::cout << "total: " << total << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"E3Net personalized speech enhancement toolkit"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic fixture set");
  simulate->add_option("--out", sim.out_dir, "Output directory")->required();
  simulate->add_option("--seed", sim.seed, "Fixture seed");
  simulate->add_option("--train", sim.n_train, "Train mixtures");
  simulate->add_option("--eval", sim.n_eval, "Held-out mixtures");
  simulate->add_option("--unlabeled", sim.n_unlabeled, "Noisy-only mixtures");
  simulate->add_option("--speakers", sim.n_speakers, "Synthetic speaker count");
  simulate->add_option("--seconds", sim.seconds, "Clip length in seconds");
  simulate->add_option("--scenario", sim.scenario, "ts1|ts2|ts3|mixed");
  simulate->add_option("--snr-min", sim.snr_min, "Min noise SNR (dB)");
  simulate->add_option("--snr-max", sim.snr_max, "Max noise SNR (dB)");
  simulate->add_option("--sir-min", sim.sir_min, "Min interferer SIR (dB)");
  simulate->add_option("--sir-max", sim.sir_max, "Max interferer SIR (dB)");
  simulate->add_flag("--json", sim.json_out, "Machine-readable stdout");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Run a training regime from a JSON config");
  train->add_option("--config", tr.config_path, "Train config JSON")->required();
  train->add_option("--data", tr.data_dir, "Fixture directory (overrides config)");
  train->add_option("--teacher", tr.teacher, "Teacher checkpoint (KD regimes)");
  train->add_option("--out", tr.out_ckpt, "Output checkpoint path")->required();
  train->add_flag("--json", tr.json_out, "Machine-readable stdout");

  TrainArgs di;
  di.distill = true;
  auto* distill = app.add_subcommand("distill", "Knowledge-distillation training");
  distill->add_option("--config", di.config_path, "Train config JSON")->required();
  distill->add_option("--data", di.data_dir, "Fixture directory (overrides config)");
  distill->add_option("--teacher", di.teacher, "Teacher checkpoint");
  distill->add_option("--out", di.out_ckpt, "Output checkpoint path")->required();
  distill->add_flag("--json", di.json_out, "Machine-readable stdout");

  EnhanceArgs en;
  auto* enhance = app.add_subcommand("enhance", "Enhance a WAV file");
  enhance->add_option("--model", en.model, "Model checkpoint")->required();
  enhance->add_option("--in", en.input, "Input WAV")->required();
  enhance->add_option("--enroll", en.enroll, "Enrollment WAV for the target speaker");
  enhance->add_option("--embedding", en.embedding, "Speaker embedding JSON file");
  enhance->add_option("--out", en.output, "Output WAV")->required();
  enhance->add_flag("--streaming", en.streaming, "Use the causal streaming engine");
  enhance->add_flag("--json", en.json_out, "Machine-readable stdout");

  BenchArgs be;
  auto* bench = app.add_subcommand("bench", "Real-time-factor benchmark");
  bench->add_option("--model", be.model, "Model checkpoint");
  bench->add_option("--config", be.config, "Model config JSON (random params)");
  bench->add_option("--seconds", be.seconds, "Audio seconds per run");
  bench->add_option("--runs", be.runs, "Timed runs (after 3 warm-ups)");
  bench->add_flag("--json", be.json_out, "Machine-readable stdout");

  MetricsArgs me;
  auto* metrics = app.add_subcommand("metrics", "SI-SDR / SNR / TSOS report");
  metrics->add_option("--ref", me.ref, "Reference (clean) WAV")->required();
  metrics->add_option("--deg", me.deg, "Degraded/enhanced WAV")->required();

  ParamsArgs pa;
  auto* params = app.add_subcommand("params", "Parameter count and breakdown");
  params->add_option("--model", pa.model, "Model checkpoint");
  params->add_option("--config", pa.config, "Model config JSON");
  params->add_flag("--json", pa.json_out, "Machine-readable stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand(simulate)) return cmd_simulate(sim);
    if (app.got_subcommand(train)) return cmd_train(tr);
    if (app.got_subcommand(distill)) return cmd_train(di);
    if (app.got_subcommand(enhance)) return cmd_enhance(en);
    if (app.got_subcommand(bench)) return cmd_bench(be);
    if (app.got_subcommand(metrics)) return cmd_metrics(me);
    if (app.got_subcommand(params)) return cmd_params(pa);
  } catch (const e3net::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const e3net::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const e3net::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
