#include <cmath>

#include <doctest.h>

#include "e3net/dsp.hpp"
#include "e3net/metrics.hpp"
#include "e3net/train.hpp"
#include "oracle.hpp"

using namespace e3net;

namespace {

ModelConfig tiny_config(std::int64_t blocks = 1) {
  ModelConfig c;
  c.sample_rate_hz = 8000;
  c.window_ms = 0.5;  // 4 samples
  c.hop_ms = 0.25;    // 2
  c.num_filters = 8;
  c.emb_dim = 4;
  c.model_dim = 4;
  c.fc_hidden = 8;
  c.num_blocks = blocks;
  return c;
}

std::vector<float> unit_embedding(std::int64_t e, std::uint64_t seed) {
  auto v = oracle::random_wave(e, seed, 1.0);
  double n = 0;
  for (float x : v) n += double(x) * x;
  n = std::sqrt(n);
  for (auto& x : v) x = float(x / n);
  return v;
}

// tone target buried in deterministic noise
TrainBatch tone_batch(std::int64_t len, int items, std::uint64_t seed, std::int64_t emb_dim,
                      Provenance prov = Provenance::GroundTruthClean) {
  TrainBatch b;
  for (int i = 0; i < items; ++i) {
    TrainItem it;
    it.provenance = prov;
    it.embedding = unit_embedding(emb_dim, seed + 100 + i);
    it.target.resize(std::size_t(len));
    it.input.resize(std::size_t(len));
    const auto noise = oracle::random_wave(len, seed + 200 + i, 0.05);
    for (std::int64_t j = 0; j < len; ++j) {
      const double t = double(j) / 8000.0;
      it.target[std::size_t(j)] = float(0.3 * std::sin(2 * 3.14159265 * (300 + 40 * i) * t));
      it.input[std::size_t(j)] = it.target[std::size_t(j)] + noise[std::size_t(j)];
    }
    b.items.push_back(std::move(it));
  }
  return b;
}

TrainSchedule quick_schedule(std::int64_t steps, double lr = 1e-3) {
  TrainSchedule s;
  s.peak_lr = lr;
  s.total_steps = steps;
  return s;
}

}  // namespace

TEST_CASE("cosine schedule hits the published endpoints") {
  TrainSchedule s;
  s.peak_lr = 1e-4;
  s.total_steps = 1000;
  CHECK(lr_at(s, 0) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_at(s, 500) == doctest::Approx(5e-5).epsilon(1e-9));
  CHECK(lr_at(s, 1000) == 0.0);
  CHECK(lr_at(s, 5000) == 0.0);  // past the end

  TrainSchedule w = s;
  w.warmup_steps = 100;
  CHECK(lr_at(w, 0) == doctest::Approx(1e-6));
  CHECK(lr_at(w, 99) == doctest::Approx(1e-4));
  CHECK(lr_at(w, 100) == doctest::Approx(1e-4));
}

TEST_CASE("se_loss_eval floors, scale invariance and the oracle") {
  const auto x = oracle::random_wave(2000, 1, 0.4);
  const auto parts = se_loss_eval(x.data(), x.data(), 2000, 1.0);
  CHECK(parts.total == doctest::Approx(-100.0));
  CHECK(parts.si_sdr_db == 100.0);
  CHECK(parts.l1 == 0.0);

  std::vector<float> x2(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) x2[i] = 2.0f * x[i];
  const auto parts2 = se_loss_eval(x2.data(), x.data(), 2000, 1.0);
  CHECK(parts2.si_sdr_db == parts.si_sdr_db);  // scale-invariant component
  CHECK(parts2.l1 > 0.0);

  const auto n = oracle::random_wave(2000, 2, 0.1);
  std::vector<float> mix(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = x[i] + n[i];
  const auto parts3 = se_loss_eval(mix.data(), x.data(), 2000, 1.0);
  oracle::Vec me(mix.begin(), mix.end()), xe(x.begin(), x.end());
  CHECK(parts3.si_sdr_db == doctest::Approx(oracle::si_sdr(me, xe)).epsilon(1e-6));

  std::vector<float> zeros(2000, 0.0f);
  const auto parts4 = se_loss_eval(x.data(), zeros.data(), 2000, 1.0);
  double l1 = 0;
  for (float v : x) l1 += std::abs(double(v));
  CHECK(parts4.total == doctest::Approx(l1 / 2000.0).epsilon(1e-9));
}

TEST_CASE("one step at lr 0 leaves parameters bitwise unchanged") {
  const ModelConfig cfg = tiny_config();
  ModelParams params = init_params<float>(cfg, 11);
  const std::uint64_t before = params_hash(params);
  TrainSchedule s = quick_schedule(10, 0.0);
  Trainer tr(std::move(params), cfg, s);
  tr.train_step_supervised(tone_batch(100, 1, 5, cfg.emb_dim));
  CHECK(params_hash(tr.params()) == before);
}

TEST_CASE("training is deterministic under a fixed seed and data order") {
  const ModelConfig cfg = tiny_config();
  auto run = [&]() {
    Trainer tr(init_params<float>(cfg, 21), cfg, quick_schedule(40));
    for (int i = 0; i < 15; ++i)
      tr.train_step_supervised(tone_batch(120, 2, 300 + i, cfg.emb_dim));
    return params_hash(tr.params());
  };
  CHECK(run() == run());
}

TEST_CASE("gradient accumulation of 2 equals one doubled batch") {
  const ModelConfig cfg = tiny_config();
  const TrainBatch half = tone_batch(120, 2, 31, cfg.emb_dim);
  TrainBatch doubled = half;
  for (const auto& it : half.items) doubled.items.push_back(it);

  TrainSchedule accum = quick_schedule(10);
  accum.grad_accumulation = 2;
  Trainer t1(init_params<float>(cfg, 33), cfg, accum);
  const auto s1a = t1.train_step_supervised(half);
  CHECK_FALSE(s1a.applied);
  const auto s1b = t1.train_step_supervised(half);
  CHECK(s1b.applied);

  Trainer t2(init_params<float>(cfg, 33), cfg, quick_schedule(10));
  const auto s2 = t2.train_step_supervised(doubled);
  CHECK(s2.applied);

  // parameter-wise relative difference bounded by float accumulation noise
  for (std::size_t k = 0; k < t1.params().named.size(); ++k) {
    const Tensor& a = t1.params().named[k].second;
    const Tensor& b = t2.params().named[k].second;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      const double rel = std::abs(double(a[i]) - double(b[i])) /
                         std::max(1e-8, std::abs(double(b[i])));
      CHECK(rel < 1e-6);
    }
  }
}

TEST_CASE("loss drops quickly when overfitting one small fixture") {
  const ModelConfig cfg = tiny_config();
  Trainer tr(init_params<float>(cfg, 41), cfg, quick_schedule(400, 2e-3));
  const TrainBatch batch = tone_batch(200, 1, 51, cfg.emb_dim);
  const double first = tr.train_step_supervised(batch).loss;
  double last = first;
  for (int i = 1; i < 400; ++i) last = tr.train_step_supervised(batch).loss;
  CHECK(last < first - 0.5 * std::abs(first));  // >= 50% reduction in a short smoke run
}

TEST_CASE("NaN input aborts with a numerical diagnostic instead of clamping") {
  const ModelConfig cfg = tiny_config();
  Trainer tr(init_params<float>(cfg, 61), cfg, quick_schedule(10));
  TrainBatch bad = tone_batch(60, 1, 62, cfg.emb_dim);
  bad.items[0].input[10] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(tr.train_step_supervised(bad), NumericError);
}

TEST_CASE("batch validation rejects ragged lengths and wrong embeddings") {
  const ModelConfig cfg = tiny_config();
  TrainBatch b = tone_batch(60, 2, 71, cfg.emb_dim);
  b.items[1].input.resize(50);
  CHECK_THROWS_AS(b.validate(cfg.emb_dim), ConfigError);

  TrainBatch b2 = tone_batch(60, 1, 72, cfg.emb_dim);
  b2.items[0].embedding.resize(2);
  CHECK_THROWS_AS(b2.validate(cfg.emb_dim), ConfigError);

  TrainBatch empty;
  CHECK_THROWS_AS(empty.validate(cfg.emb_dim), ConfigError);
}

TEST_CASE("kd_step: identical student and teacher sits at the loss floor") {
  const ModelConfig cfg = tiny_config();
  const ModelParams teacher = init_params<float>(cfg, 81);
  Trainer tr(init_params<float>(cfg, 81), cfg, quick_schedule(10, 0.0));
  const TrainBatch b = tone_batch(100, 1, 82, cfg.emb_dim, Provenance::TeacherPseudoLabel);
  const auto st = tr.kd_step(teacher, cfg, b);
  CHECK(st.loss == doctest::Approx(-100.0));  // pseudo-label == own output
}

TEST_CASE("kd_step leaves the teacher untouched and checks provenance/framing") {
  const ModelConfig cfg = tiny_config();
  const ModelParams teacher = init_params<float>(cfg, 91);
  const std::uint64_t teacher_before = params_hash(teacher);
  Trainer tr(init_params<float>(cfg, 92), cfg, quick_schedule(20));
  for (int i = 0; i < 5; ++i)
    tr.kd_step(teacher, cfg,
               tone_batch(100, 1, 900 + i, cfg.emb_dim, Provenance::TeacherPseudoLabel));
  CHECK(params_hash(teacher) == teacher_before);

  // wrong provenance
  CHECK_THROWS_AS(tr.kd_step(teacher, cfg, tone_batch(100, 1, 95, cfg.emb_dim)), ConfigError);

  // framing mismatch
  ModelConfig other = cfg;
  other.hop_ms = 0.5;
  const ModelParams teacher2 = init_params<float>(other, 96);
  CHECK_THROWS_AS(
      tr.kd_step(teacher2, other,
                 tone_batch(100, 1, 97, cfg.emb_dim, Provenance::TeacherPseudoLabel)),
      ConfigError);
}

TEST_CASE("teacher pseudo labels are bitwise stable across repeated evaluation") {
  const ModelConfig cfg = tiny_config();
  const ModelParams teacher = init_params<float>(cfg, 101);
  const TrainBatch b = tone_batch(100, 2, 102, cfg.emb_dim, Provenance::TeacherPseudoLabel);
  auto wave = [&](const TrainItem& it) {
    Tensor w({static_cast<std::int64_t>(it.input.size())});
    std::copy(it.input.begin(), it.input.end(), w.data());
    Tensor e({cfg.emb_dim});
    std::copy(it.embedding.begin(), it.embedding.end(), e.data());
    return forward(teacher, cfg, w, e);
  };
  const Tensor a = wave(b.items[0]);
  const Tensor c = wave(b.items[0]);
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == c[i]);
}

TEST_CASE("kd_unlabeled_step degenerates bitwise to its single-batch forms") {
  const ModelConfig cfg = tiny_config();
  const ModelParams teacher = init_params<float>(cfg, 111);

  const TrainBatch sim = tone_batch(100, 2, 112, cfg.emb_dim);
  const TrainBatch unlab = tone_batch(100, 2, 113, cfg.emb_dim, Provenance::TeacherPseudoLabel);

  // empty unlabeled == supervised
  Trainer a1(init_params<float>(cfg, 114), cfg, quick_schedule(10));
  a1.kd_unlabeled_step(teacher, cfg, sim, TrainBatch{});
  Trainer a2(init_params<float>(cfg, 114), cfg, quick_schedule(10));
  a2.train_step_supervised(sim);
  CHECK(params_hash(a1.params()) == params_hash(a2.params()));

  // empty sim == vanilla KD
  Trainer b1(init_params<float>(cfg, 115), cfg, quick_schedule(10));
  b1.kd_unlabeled_step(teacher, cfg, TrainBatch{}, unlab);
  Trainer b2(init_params<float>(cfg, 115), cfg, quick_schedule(10));
  b2.kd_step(teacher, cfg, unlab);
  CHECK(params_hash(b1.params()) == params_hash(b2.params()));

  // both present: one combined half/half update, loss is the blend
  Trainer c1(init_params<float>(cfg, 116), cfg, quick_schedule(10));
  const auto st = c1.kd_unlabeled_step(teacher, cfg, sim, unlab);
  CHECK(st.applied);
  CHECK(std::isfinite(st.loss));
}

TEST_CASE("mtl_kd_round runs SE, ASR, KD in order") {
  const ModelConfig cfg = tiny_config();
  const ModelParams teacher = init_params<float>(cfg, 121);
  Trainer tr(init_params<float>(cfg, 122), cfg, quick_schedule(30));
  const TrainBatch sim = tone_batch(100, 1, 123, cfg.emb_dim);
  const TrainBatch unlab = tone_batch(100, 1, 124, cfg.emb_dim, Provenance::TeacherPseudoLabel);

  std::vector<std::string> phases;
  const auto stats = tr.mtl_kd_round(teacher, cfg, sim, unlab, envelope_stub_hook(cfg.sample_rate_hz),
                                     [&](MtlPhase p) { phases.push_back(mtl_phase_name(p)); });
  REQUIRE(phases.size() == 3);
  CHECK(phases[0] == "SE");
  CHECK(phases[1] == "ASR");
  CHECK(phases[2] == "KD");
  REQUIRE(stats.size() == 3);
  CHECK(stats[0].applied);
  CHECK(stats[1].applied);  // envelope hook carries gradients
  CHECK(stats[2].applied);
  for (const auto& st : stats) CHECK(std::isfinite(st.loss));
}

TEST_CASE("zero stub hook makes the round equal SE+KD exactly") {
  const ModelConfig cfg = tiny_config();
  const ModelParams teacher = init_params<float>(cfg, 131);
  const TrainBatch sim = tone_batch(100, 1, 132, cfg.emb_dim);
  const TrainBatch unlab = tone_batch(100, 1, 133, cfg.emb_dim, Provenance::TeacherPseudoLabel);

  Trainer with_hook(init_params<float>(cfg, 134), cfg, quick_schedule(30));
  for (int i = 0; i < 3; ++i) {
    const auto stats = with_hook.mtl_kd_round(teacher, cfg, sim, unlab, zero_stub_hook());
    CHECK_FALSE(stats[1].applied);  // ASR step skipped: no gradient path
    CHECK(stats[1].loss == 0.0);
  }

  Trainer plain(init_params<float>(cfg, 134), cfg, quick_schedule(30));
  for (int i = 0; i < 3; ++i) {
    plain.train_step_supervised(sim);
    plain.kd_step(teacher, cfg, unlab);
  }
  CHECK(params_hash(with_hook.params()) == params_hash(plain.params()));
}

TEST_CASE("mtl rounds stay finite over many iterations with the envelope hook") {
  const ModelConfig cfg = tiny_config();
  const ModelParams teacher = init_params<float>(cfg, 141);
  Trainer tr(init_params<float>(cfg, 142), cfg, quick_schedule(200, 5e-4));
  const TrainBatch sim = tone_batch(200, 1, 143, cfg.emb_dim);
  const TrainBatch unlab = tone_batch(200, 1, 144, cfg.emb_dim, Provenance::TeacherPseudoLabel);
  for (int i = 0; i < 25; ++i) {
    const auto stats = tr.mtl_kd_round(teacher, cfg, sim, unlab, envelope_stub_hook(cfg.sample_rate_hz));
    for (const auto& st : stats) REQUIRE(std::isfinite(st.loss));
  }
  CHECK(tr.update_steps() == 75);
}

TEST_CASE("train run config parsing and regime defaults") {
  const std::string text = R"({
    "regime": "kd_on_sup",
    "model": {"num_filters": 64, "num_blocks": 2, "model_dim": 8, "emb_dim": 8, "fc_hidden": 16},
    "data_dir": "/tmp/x",
    "steps": 100,
    "peak_lr": 2e-4,
    "seed": 9
  })";
  const TrainRunConfig rc = parse_train_run_config(text);
  CHECK(rc.regime == Regime::KDonSup);
  CHECK(rc.model->num_filters == 64);
  CHECK(rc.steps == 100);
  CHECK(rc.peak_lr == doctest::Approx(2e-4));
  CHECK(rc.seed == 9);
  CHECK(rc.grad_accumulation == 0);  // resolved to the KD default (2) at run time

  CHECK_THROWS_AS(parse_train_run_config("{bad"), ConfigError);
  CHECK_THROWS_AS(parse_train_run_config(R"({"regime":"nope"})"), ConfigError);

  const std::string sweep = R"({
    "model": {"num_filters": 32},
    "sweep": [{"num_filters": 16, "num_blocks": 1}, {"num_filters": 32, "num_blocks": 2}]
  })";
  const TrainRunConfig rs = parse_train_run_config(sweep);
  REQUIRE(rs.sweep.size() == 2);
  CHECK(rs.sweep[0].first == 16);
  CHECK(rs.sweep[1].second == 2);
}

TEST_CASE("progress log emits one json line per micro step") {
  const ModelConfig cfg = tiny_config();
  Trainer tr(init_params<float>(cfg, 151), cfg, quick_schedule(10));
  std::vector<std::string> lines;
  tr.set_log_sink([&](const std::string& l) { lines.push_back(l); });
  tr.train_step_supervised(tone_batch(60, 1, 152, cfg.emb_dim));
  tr.train_step_supervised(tone_batch(60, 1, 153, cfg.emb_dim));
  REQUIRE(lines.size() == 2);
  CHECK(lines[0].find("\"loss\"") != std::string::npos);
  CHECK(lines[0].find("\"lr\"") != std::string::npos);
  CHECK(lines[0].find("\"grad_norm\"") != std::string::npos);
  CHECK(lines[0].find("\"wall_ms\"") != std::string::npos);
}
