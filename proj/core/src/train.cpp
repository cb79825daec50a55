#include "e3net/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "e3net/checkpoint.hpp"
#include "e3net/data.hpp"
#include "e3net/dsp.hpp"
#include "e3net/metrics.hpp"
#include "e3net/nnops.hpp"

namespace e3net {

using json = nlohmann::json;

Regime regime_from_string(const std::string& s) {
  if (s == "supervised_se" || s == "supervised") return Regime::SupervisedSE;
  if (s == "kd_on_sup" || s == "kd") return Regime::KDonSup;
  if (s == "kd_on_unlab") return Regime::KDonUnlab;
  if (s == "mtl_kd_on_unlab") return Regime::MtlKdOnUnlab;
  throw ConfigError("unknown regime '" + s +
                    "' (expected supervised_se, kd_on_sup, kd_on_unlab or mtl_kd_on_unlab)");
}

std::string regime_to_string(Regime r) {
  switch (r) {
    case Regime::SupervisedSE: return "supervised_se";
    case Regime::KDonSup: return "kd_on_sup";
    case Regime::KDonUnlab: return "kd_on_unlab";
    case Regime::MtlKdOnUnlab: return "mtl_kd_on_unlab";
  }
  return "supervised_se";
}

const char* mtl_phase_name(MtlPhase p) {
  switch (p) {
    case MtlPhase::SE: return "SE";
    case MtlPhase::ASR: return "ASR";
    case MtlPhase::KD: return "KD";
  }
  return "?";
}

void TrainBatch::validate(std::int64_t emb_dim) const {
  if (items.empty()) throw ConfigError("batch: no items");
  const std::size_t len = items.front().input.size();
  for (const auto& it : items) {
    if (it.input.size() != len)
      throw ConfigError("batch: items have different input lengths");
    if (static_cast<std::int64_t>(it.embedding.size()) != emb_dim)
      throw ConfigError("batch: embedding length " + std::to_string(it.embedding.size()) +
                        " does not match emb_dim " + std::to_string(emb_dim));
  }
}

double lr_at(const TrainSchedule& s, std::int64_t step) {
  if (s.total_steps < 1) throw ConfigError("schedule: total_steps must be >= 1");
  if (step >= s.total_steps) return 0.0;
  if (step < 0) throw ConfigError("schedule: negative step");
  if (s.warmup_steps > 0 && step < s.warmup_steps)
    return s.peak_lr * double(step + 1) / double(s.warmup_steps);
  const double span = double(s.total_steps - s.warmup_steps);
  const double progress = double(step - s.warmup_steps) / span;
  return s.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

SeLossParts se_loss_eval(const float* enhanced, const float* target, std::int64_t n,
                         double lambda) {
  double et = 0, tt = 0, ee = 0, l1 = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    et += double(enhanced[i]) * double(target[i]);
    tt += double(target[i]) * double(target[i]);
    ee += double(enhanced[i]) * double(enhanced[i]);
    l1 += std::abs(double(enhanced[i]) - double(target[i]));
  }
  l1 /= double(n);
  SeLossParts parts;
  parts.l1 = l1;
  if (tt == 0) {
    parts.si_sdr_db = 0;  // no SI-SDR term for an all-zero target
    parts.total = lambda * l1;
    return parts;
  }
  const double s2 = et * et / tt;
  const double err2 = ee - s2;
  double si;
  if (err2 <= 0 || err2 < s2 * 1e-10)
    si = 100.0;
  else if (s2 == 0 || s2 < err2 * 1e-10)
    si = -100.0;
  else
    si = std::min(100.0, std::max(-100.0, 10.0 * std::log10(s2 / err2)));
  parts.si_sdr_db = si;
  parts.total = -si + lambda * l1;
  return parts;
}

// --------------------------------------------------------------------------

Trainer::Trainer(ModelParams params, ModelConfig cfg, TrainSchedule schedule)
    : params_(std::move(params)), cfg_(cfg), schedule_(schedule) {
  cfg_.validate();
  if (schedule_.total_steps < 1) throw ConfigError("schedule: total_steps must be >= 1");
  if (schedule_.grad_accumulation < 1)
    throw ConfigError("schedule: grad_accumulation must be >= 1");
  grad_accum_.reserve(params_.named.size());
  adam_m_.reserve(params_.named.size());
  adam_v_.reserve(params_.named.size());
  for (const auto& [name, t] : params_.named) {
    grad_accum_.emplace_back(Tensor(t.shape()));
    adam_m_.emplace_back(Tensor(t.shape()));
    adam_v_.emplace_back(Tensor(t.shape()));
  }
}

Tensor Trainer::batch_inputs(const TrainBatch& b) const {
  const std::int64_t n = static_cast<std::int64_t>(b.items.front().input.size());
  Tensor t({static_cast<std::int64_t>(b.items.size()), n});
  for (std::size_t i = 0; i < b.items.size(); ++i)
    std::copy(b.items[i].input.begin(), b.items[i].input.end(),
              t.data() + static_cast<std::int64_t>(i) * n);
  return t;
}

Tensor Trainer::batch_embeddings(const TrainBatch& b) const {
  Tensor t({static_cast<std::int64_t>(b.items.size()), cfg_.emb_dim});
  for (std::size_t i = 0; i < b.items.size(); ++i)
    std::copy(b.items[i].embedding.begin(), b.items[i].embedding.end(),
              t.data() + static_cast<std::int64_t>(i) * cfg_.emb_dim);
  return t;
}

Tensor Trainer::batch_targets(const TrainBatch& b, std::int64_t out_len) const {
  Tensor t({static_cast<std::int64_t>(b.items.size()), out_len});
  for (std::size_t i = 0; i < b.items.size(); ++i) {
    const auto& tgt = b.items[i].target;
    if (static_cast<std::int64_t>(tgt.size()) < out_len)
      throw ConfigError("batch: target shorter than the model output (" +
                        std::to_string(tgt.size()) + " < " + std::to_string(out_len) + ")");
    std::copy(tgt.begin(), tgt.begin() + out_len,
              t.data() + static_cast<std::int64_t>(i) * out_len);
  }
  return t;
}

std::vector<std::vector<float>> Trainer::teacher_labels(const ModelParams& teacher,
                                                        const ModelConfig& teacher_cfg,
                                                        const TrainBatch& batch) const {
  std::vector<std::vector<float>> labels;
  labels.reserve(batch.items.size());
  for (const auto& it : batch.items) {
    Tensor wave({static_cast<std::int64_t>(it.input.size())});
    std::copy(it.input.begin(), it.input.end(), wave.data());
    Tensor emb({teacher_cfg.emb_dim});
    std::copy(it.embedding.begin(), it.embedding.end(), emb.data());
    const Tensor out = forward(teacher, teacher_cfg, wave, emb);
    labels.emplace_back(out.data(), out.data() + out.numel());
  }
  return labels;
}

StepStats Trainer::run_micro_step(
    const std::function<LossBuild(GradTape&, const ParamVarsT<float>&)>& build_loss,
    const char* phase, bool force_update) {
  const auto t0 = std::chrono::steady_clock::now();
  GradTape tape;
  const ParamVarsT<float> pv = register_params(tape, params_);
  const LossBuild lb = build_loss(tape, pv);
  if (!std::isfinite(lb.loss_value))
    throw NumericError("non-finite loss at micro step " + std::to_string(micro_steps_) +
                       " (phase " + phase + "); aborting");
  tape.backward(lb.loss);
  for (std::size_t i = 0; i < params_.named.size(); ++i) {
    const Tensor& g = tape.grad(pv.named[i].second);
    Tensor& acc = grad_accum_[i];
    for (std::int64_t j = 0; j < g.numel(); ++j) acc[j] += g[j];
  }
  ++accum_count_;
  ++micro_steps_;

  StepStats st;
  st.micro_step = micro_steps_;
  st.phase = phase;
  st.loss = lb.loss_value;
  st.si_component = lb.si_component;
  st.l1_component = lb.l1_component;
  st.lr = lr_at(schedule_, update_steps_);
  if (force_update || accum_count_ >= schedule_.grad_accumulation)
    apply_update(1.0 / double(accum_count_), st);
  st.update_step = update_steps_;
  const auto t1 = std::chrono::steady_clock::now();
  st.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  if (log_sink_) {
    json j{{"step", st.micro_step},     {"update_step", st.update_step},
           {"phase", st.phase},         {"lr", st.lr},
           {"loss", st.loss},           {"si_component", st.si_component},
           {"l1_component", st.l1_component}, {"grad_norm", st.grad_norm},
           {"wall_ms", st.wall_ms},     {"applied", st.applied}};
    log_sink_(j.dump());
  }
  return st;
}

void Trainer::apply_update(double grad_scale, StepStats& st) {
  double norm2 = 0;
  for (auto& g : grad_accum_) {
    for (std::int64_t j = 0; j < g.numel(); ++j) {
      const double v = double(g[j]) * grad_scale;
      g[j] = float(v);
      norm2 += v * v;
    }
  }
  const double norm = std::sqrt(norm2);
  if (!std::isfinite(norm))
    throw NumericError("non-finite gradient norm at update " + std::to_string(update_steps_) +
                       "; aborting");
  double clip_mult = 1.0;
  if (schedule_.clip_norm > 0 && norm > schedule_.clip_norm)
    clip_mult = schedule_.clip_norm / norm;

  const double lr = lr_at(schedule_, update_steps_);
  ++adam_t_;
  const double bc1 = 1.0 - std::pow(schedule_.adam_beta1, double(adam_t_));
  const double bc2 = 1.0 - std::pow(schedule_.adam_beta2, double(adam_t_));
  for (std::size_t i = 0; i < params_.named.size(); ++i) {
    Tensor& p = params_.named[i].second;
    Tensor& g = grad_accum_[i];
    Tensor& m = adam_m_[i];
    Tensor& v = adam_v_[i];
    for (std::int64_t j = 0; j < p.numel(); ++j) {
      const double gj = double(g[j]) * clip_mult;
      const double mj = schedule_.adam_beta1 * double(m[j]) + (1.0 - schedule_.adam_beta1) * gj;
      const double vj =
          schedule_.adam_beta2 * double(v[j]) + (1.0 - schedule_.adam_beta2) * gj * gj;
      m[j] = float(mj);
      v[j] = float(vj);
      const double upd = lr * (mj / bc1) / (std::sqrt(vj / bc2) + schedule_.adam_eps);
      p[j] = float(double(p[j]) - upd);
      g[j] = 0.0f;
    }
  }
  accum_count_ = 0;
  ++update_steps_;
  st.applied = true;
  st.grad_norm = norm;
  st.update_step = update_steps_;
}

StepStats Trainer::train_step_supervised(const TrainBatch& batch) {
  batch.validate(cfg_.emb_dim);
  for (const auto& it : batch.items)
    if (it.provenance != Provenance::GroundTruthClean)
      throw ConfigError("supervised step expects GroundTruthClean items");
  return run_micro_step(
      [&](GradTape& tape, const ParamVarsT<float>& pv) {
        const Tensor inputs = batch_inputs(batch);
        const Tensor embs = batch_embeddings(batch);
        GradTape::Var out = forward_tape(tape, pv, cfg_, inputs, embs);
        const std::int64_t out_len = tape.value(out).dim(1);
        GradTape::Var loss =
            tape.se_loss(out, batch_targets(batch, out_len), float(schedule_.loss_lambda));
        const auto& info = tape.se_loss_info(loss);
        return LossBuild{loss, double(tape.value(loss)[0]), info.si_component,
                         info.l1_component};
      },
      "se", false);
}

StepStats Trainer::kd_step(const ModelParams& teacher, const ModelConfig& teacher_cfg,
                           const TrainBatch& batch) {
  batch.validate(cfg_.emb_dim);
  for (const auto& it : batch.items)
    if (it.provenance != Provenance::TeacherPseudoLabel)
      throw ConfigError("kd_step expects TeacherPseudoLabel items");
  if (!cfg_.same_framing(teacher_cfg) || cfg_.emb_dim != teacher_cfg.emb_dim)
    throw ConfigError("kd_step: teacher/student sample rate, framing or emb_dim mismatch");
  const auto pseudo = teacher_labels(teacher, teacher_cfg, batch);
  return run_micro_step(
      [&](GradTape& tape, const ParamVarsT<float>& pv) {
        const Tensor inputs = batch_inputs(batch);
        const Tensor embs = batch_embeddings(batch);
        GradTape::Var out = forward_tape(tape, pv, cfg_, inputs, embs);
        const std::int64_t out_len = tape.value(out).dim(1);
        Tensor targets({static_cast<std::int64_t>(pseudo.size()), out_len});
        for (std::size_t i = 0; i < pseudo.size(); ++i) {
          if (static_cast<std::int64_t>(pseudo[i].size()) != out_len)
            throw ConfigError("kd_step: teacher output length mismatch");
          std::copy(pseudo[i].begin(), pseudo[i].end(),
                    targets.data() + static_cast<std::int64_t>(i) * out_len);
        }
        GradTape::Var loss = tape.se_loss(out, targets, float(schedule_.loss_lambda));
        const auto& info = tape.se_loss_info(loss);
        return LossBuild{loss, double(tape.value(loss)[0]), info.si_component,
                         info.l1_component};
      },
      "kd", false);
}

StepStats Trainer::kd_unlabeled_step(const ModelParams& teacher, const ModelConfig& teacher_cfg,
                                     const TrainBatch& sim_batch,
                                     const TrainBatch& unlabeled_batch) {
  // Degenerate compositions reduce to the exact single-batch code paths.
  if (unlabeled_batch.empty()) return train_step_supervised(sim_batch);
  if (sim_batch.empty()) return kd_step(teacher, teacher_cfg, unlabeled_batch);

  sim_batch.validate(cfg_.emb_dim);
  unlabeled_batch.validate(cfg_.emb_dim);
  if (!cfg_.same_framing(teacher_cfg) || cfg_.emb_dim != teacher_cfg.emb_dim)
    throw ConfigError("kd_unlabeled_step: teacher/student framing mismatch");
  const auto pseudo = teacher_labels(teacher, teacher_cfg, unlabeled_batch);
  return run_micro_step(
      [&](GradTape& tape, const ParamVarsT<float>& pv) {
        GradTape::Var out_sim =
            forward_tape(tape, pv, cfg_, batch_inputs(sim_batch), batch_embeddings(sim_batch));
        GradTape::Var loss_sim =
            tape.se_loss(out_sim, batch_targets(sim_batch, tape.value(out_sim).dim(1)),
                         float(schedule_.loss_lambda));
        GradTape::Var out_unlab = forward_tape(tape, pv, cfg_, batch_inputs(unlabeled_batch),
                                               batch_embeddings(unlabeled_batch));
        const std::int64_t out_len = tape.value(out_unlab).dim(1);
        Tensor targets({static_cast<std::int64_t>(pseudo.size()), out_len});
        for (std::size_t i = 0; i < pseudo.size(); ++i)
          std::copy(pseudo[i].begin(), pseudo[i].begin() + out_len,
                    targets.data() + static_cast<std::int64_t>(i) * out_len);
        GradTape::Var loss_kd = tape.se_loss(out_unlab, targets, float(schedule_.loss_lambda));
        GradTape::Var total =
            tape.add(tape.scale(loss_sim, 0.5f), tape.scale(loss_kd, 0.5f));
        const auto& i1 = tape.se_loss_info(loss_sim);
        const auto& i2 = tape.se_loss_info(loss_kd);
        return LossBuild{total, double(tape.value(total)[0]),
                         0.5 * (i1.si_component + i2.si_component),
                         0.5 * (i1.l1_component + i2.l1_component)};
      },
      "kd_unlab", false);
}

std::vector<StepStats> Trainer::mtl_kd_round(const ModelParams& teacher,
                                             const ModelConfig& teacher_cfg,
                                             const TrainBatch& sim_batch,
                                             const TrainBatch& unlabeled_batch,
                                             const AsrLossHook& hook,
                                             const PhaseObserver& observer) {
  if (schedule_.grad_accumulation != 1)
    throw ConfigError("mtl_kd_round: gradient accumulation must be 1 (three updates per round)");
  if (!hook) throw ConfigError("mtl_kd_round: null ASR hook");
  std::vector<StepStats> stats;

  if (observer) observer(MtlPhase::SE);
  stats.push_back(train_step_supervised(sim_batch));

  if (observer) observer(MtlPhase::ASR);
  {
    unlabeled_batch.validate(cfg_.emb_dim);
    const auto t0 = std::chrono::steady_clock::now();
    GradTape tape;
    const ParamVarsT<float> pv = register_params(tape, params_);
    GradTape::Var out = forward_tape(tape, pv, cfg_, batch_inputs(unlabeled_batch),
                                     batch_embeddings(unlabeled_batch));
    GradTape::Var hv = hook(tape, out, unlabeled_batch);
    if (tape.value(hv).numel() != 1) throw ShapeError("ASR hook must return a scalar loss");
    const double v = double(tape.value(hv)[0]);
    if (!std::isfinite(v)) throw NumericError("ASR hook returned a non-finite loss; aborting");
    StepStats st;
    st.phase = "asr";
    st.loss = v;
    st.lr = lr_at(schedule_, update_steps_);
    if (tape.requires_grad(hv)) {
      tape.backward(hv);
      for (std::size_t i = 0; i < params_.named.size(); ++i) {
        const Tensor& g = tape.grad(pv.named[i].second);
        Tensor& acc = grad_accum_[i];
        for (std::int64_t j = 0; j < g.numel(); ++j) acc[j] += g[j];
      }
      ++accum_count_;
      apply_update(1.0 / double(accum_count_), st);
    }
    // A constant hook loss (no gradient path into the student) is a no-op:
    // no Adam tick, so the trajectory matches an SE+KD-only run.
    ++micro_steps_;
    st.micro_step = micro_steps_;
    st.update_step = update_steps_;
    const auto t1 = std::chrono::steady_clock::now();
    st.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (log_sink_) {
      json j{{"step", st.micro_step}, {"update_step", st.update_step}, {"phase", st.phase},
             {"lr", st.lr},           {"loss", st.loss},               {"grad_norm", st.grad_norm},
             {"wall_ms", st.wall_ms}, {"applied", st.applied}};
      log_sink_(j.dump());
    }
    stats.push_back(st);
  }

  if (observer) observer(MtlPhase::KD);
  stats.push_back(kd_step(teacher, teacher_cfg, unlabeled_batch));
  return stats;
}

// --------------------------------------------------------------------------
// Hooks

AsrLossHook zero_stub_hook() {
  return [](GradTape& tape, GradTape::Var, const TrainBatch&) {
    return tape.constant(Tensor({1}));
  };
}

AsrLossHook envelope_stub_hook(int sample_rate_hz) {
  return [sample_rate_hz](GradTape& tape, GradTape::Var enhanced,
                          const TrainBatch& batch) -> GradTape::Var {
    const Tensor& ev = tape.value(enhanced);
    const std::int64_t items = ev.dim(0), len = ev.dim(1);
    dsp::LogMelConfig mc;
    mc.frame_len = int(std::min<std::int64_t>(sample_rate_hz / 40, len));  // 25 ms
    mc.hop = std::max(1, std::min(sample_rate_hz / 100, mc.frame_len / 2));
    if (mc.frame_len < 8) return tape.constant(Tensor({1}));
    const std::int64_t t_frames = nnops::num_frames(len, mc.frame_len, mc.hop);

    const auto window = dsp::hann_window(mc.frame_len);
    GradTape::Var cosm = tape.constant(dsp::dft_cos_matrix(mc.frame_len, window));
    GradTape::Var sinm = tape.constant(dsp::dft_sin_matrix(mc.frame_len, window));
    GradTape::Var melw = tape.constant(dsp::mel_filterbank(
        mc.bands, mc.frame_len, sample_rate_hz, 0.0, sample_rate_hz / 2.0));

    GradTape::Var fr = tape.frame_rows(enhanced, mc.frame_len, mc.hop);
    GradTape::Var re = tape.linear(fr, cosm);
    GradTape::Var im = tape.linear(fr, sinm);
    GradTape::Var power = tape.add(tape.mul(re, re), tape.mul(im, im));
    GradTape::Var logmel = tape.log_plus(tape.linear(power, melw), mc.log_floor);

    // Constant targets: envelopes of the (noisy) inputs over speech-active
    // frames only.
    Tensor target({items * t_frames, mc.bands});
    std::vector<float> weights(static_cast<std::size_t>(items * t_frames), 0.0f);
    const double thresh = std::pow(10.0, -40.0 / 20.0);
    std::int64_t active_count = 0;
    for (std::int64_t b = 0; b < items; ++b) {
      const auto& input = batch.items[static_cast<std::size_t>(b)].input;
      const Tensor lm = dsp::logmel_frames(input.data(), len, sample_rate_hz, mc);
      for (std::int64_t f = 0; f < t_frames; ++f) {
        for (int m = 0; m < mc.bands; ++m)
          target.at(b * t_frames + f, m) = lm.at(f, m);
        const double level = dsp::rms(input.data() + f * mc.hop, mc.frame_len);
        if (level > thresh) {
          weights[static_cast<std::size_t>(b * t_frames + f)] = 1.0f;
          ++active_count;
        }
      }
    }
    const float norm = float(std::max<std::int64_t>(1, active_count) * mc.bands);
    return tape.weighted_l1(logmel, target, weights, norm);
  };
}

// --------------------------------------------------------------------------
// Run orchestration

TrainRunConfig parse_train_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: invalid JSON: ") + e.what());
  }
  TrainRunConfig c;
  if (j.contains("regime")) c.regime = regime_from_string(j["regime"].get<std::string>());
  if (j.contains("model")) c.model = config_from_json_string(j["model"].dump());
  c.init_checkpoint = j.value("init_checkpoint", "");
  c.teacher_checkpoint = j.value("teacher_checkpoint", "");
  c.data_dir = j.value("data_dir", "");
  c.steps = j.value("steps", c.steps);
  c.peak_lr = j.value("peak_lr", c.peak_lr);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.grad_accumulation = j.value("grad_accumulation", c.grad_accumulation);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.crop_seconds = j.value("crop_seconds", c.crop_seconds);
  c.loss_lambda = j.value("loss_lambda", c.loss_lambda);
  c.seed = j.value("seed", c.seed);
  c.log_every = j.value("log_every", c.log_every);
  if (j.contains("sweep")) {
    if (!j["sweep"].is_array()) throw ConfigError("train config: sweep must be an array");
    for (const auto& e : j["sweep"])
      c.sweep.emplace_back(e.value("num_filters", std::int64_t(2048)),
                           e.value("num_blocks", std::int64_t(4)));
  }
  if (c.batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (c.steps < 1) throw ConfigError("train config: steps must be >= 1");
  return c;
}

namespace {

struct LoadedItem {
  std::vector<float> noisy;
  std::vector<float> clean;  // empty for unlabeled items
  std::vector<float> embedding;
};

struct FixturePool {
  std::vector<LoadedItem> train;
  std::vector<LoadedItem> unlabeled;
};

FixturePool load_pool(const std::string& data_dir, const ModelConfig& cfg) {
  const FixtureManifest manifest = load_manifest(data_dir);
  FixturePool pool;
  std::unordered_map<std::string, std::vector<float>> emb_cache;
  auto embedding_for = [&](const std::string& enroll_path) -> const std::vector<float>& {
    auto it = emb_cache.find(enroll_path);
    if (it != emb_cache.end()) return it->second;
    const AudioFile enroll = load_wav(enroll_path);
    const SpeakerEmbedding emb = builtin_embedding(enroll.samples, cfg);
    auto [pos, ok] = emb_cache.emplace(
        enroll_path, std::vector<float>(emb.vec.data(), emb.vec.data() + emb.vec.numel()));
    return pos->second;
  };
  for (const auto& item : manifest.items) {
    if (item.split == "eval") continue;
    LoadedItem li;
    li.noisy = load_wav(item.noisy_path).samples;
    li.embedding = embedding_for(item.enrollment_path);
    if (item.split == "train") {
      if (item.clean_path.empty()) continue;
      li.clean = load_wav(item.clean_path).samples;
      pool.train.push_back(std::move(li));
    } else {
      pool.unlabeled.push_back(std::move(li));
    }
  }
  return pool;
}

TrainBatch draw_batch(const std::vector<LoadedItem>& pool, int batch_size,
                      std::int64_t crop_len, Provenance prov, dsp::SplitMix64& rng) {
  TrainBatch b;
  for (int i = 0; i < batch_size; ++i) {
    const LoadedItem& src = pool[static_cast<std::size_t>(rng.next() % pool.size())];
    const std::int64_t n = static_cast<std::int64_t>(src.noisy.size());
    const std::int64_t len = std::min(crop_len, n);
    const std::int64_t off = n > len ? std::int64_t(rng.next() % std::uint64_t(n - len + 1)) : 0;
    TrainItem it;
    it.provenance = prov;
    it.embedding = src.embedding;
    it.input.assign(src.noisy.begin() + off, src.noisy.begin() + off + len);
    if (!src.clean.empty())
      it.target.assign(src.clean.begin() + off, src.clean.begin() + off + len);
    b.items.push_back(std::move(it));
  }
  return b;
}

}  // namespace

EvalSummary evaluate_on_fixtures(const ModelParams& params, const ModelConfig& cfg,
                                 const std::string& data_dir, const std::string& split) {
  const FixtureManifest manifest = load_manifest(data_dir);
  std::unordered_map<std::string, Tensor> emb_cache;
  EvalSummary summary;
  double sum_out = 0, sum_in = 0;
  for (const auto& item : manifest.items) {
    if (item.split != split || item.clean_path.empty()) continue;
    const AudioFile noisy = load_wav(item.noisy_path);
    const AudioFile clean = load_wav(item.clean_path);
    Tensor emb;
    auto it = emb_cache.find(item.enrollment_path);
    if (it != emb_cache.end()) {
      emb = it->second;
    } else {
      emb = builtin_embedding(load_wav(item.enrollment_path).samples, cfg).vec;
      emb_cache.emplace(item.enrollment_path, emb);
    }
    Tensor wave({static_cast<std::int64_t>(noisy.samples.size())});
    std::copy(noisy.samples.begin(), noisy.samples.end(), wave.data());
    const Tensor out = forward(params, cfg, wave, emb);
    const std::int64_t n = out.numel();
    std::vector<float> outv(out.data(), out.data() + n);
    std::vector<float> cleanv(clean.samples.begin(), clean.samples.begin() + n);
    std::vector<float> noisyv(noisy.samples.begin(), noisy.samples.begin() + n);
    sum_out += si_sdr_db(outv, cleanv);
    sum_in += si_sdr_db(noisyv, cleanv);
    ++summary.items;
  }
  if (summary.items > 0) {
    summary.mean_si_sdr_out_db = sum_out / summary.items;
    summary.mean_si_sdr_in_db = sum_in / summary.items;
  }
  return summary;
}

TrainRunResult run_training(const TrainRunConfig& rc,
                            const std::function<void(const std::string&)>& log_sink) {
  ModelParams params;
  ModelConfig cfg;
  if (!rc.init_checkpoint.empty()) {
    auto [p, c] = load_checkpoint(rc.init_checkpoint);
    params = std::move(p);
    cfg = c;
    if (rc.model && !(*rc.model == cfg))
      throw ConfigError("train config: model config conflicts with init_checkpoint");
  } else if (rc.model) {
    cfg = *rc.model;
    params = init_params<float>(cfg, rc.seed);
  } else {
    throw ConfigError("train config: need either model or init_checkpoint");
  }

  const bool needs_teacher = rc.regime != Regime::SupervisedSE;
  ModelParams teacher;
  ModelConfig teacher_cfg;
  if (needs_teacher) {
    if (rc.teacher_checkpoint.empty())
      throw ConfigError("regime " + regime_to_string(rc.regime) + " requires a teacher checkpoint");
    auto [tp, tc] = load_checkpoint(rc.teacher_checkpoint);
    teacher = std::move(tp);
    teacher_cfg = tc;
  }
  if (rc.data_dir.empty()) throw ConfigError("train config: data_dir is required");
  const FixturePool pool = load_pool(rc.data_dir, cfg);
  if (pool.train.empty()) throw ConfigError("no usable train items in '" + rc.data_dir + "'");
  const bool needs_unlabeled =
      rc.regime == Regime::KDonUnlab || rc.regime == Regime::MtlKdOnUnlab;
  if (needs_unlabeled && pool.unlabeled.empty())
    throw ConfigError("regime " + regime_to_string(rc.regime) +
                      " needs an 'unlabeled' split in the fixture set");

  TrainSchedule sched;
  sched.peak_lr = rc.peak_lr;
  sched.total_steps = rc.steps;
  sched.warmup_steps = rc.warmup_steps;
  sched.loss_lambda = rc.loss_lambda;
  sched.regime = rc.regime;
  if (rc.grad_accumulation > 0)
    sched.grad_accumulation = rc.grad_accumulation;
  else if (rc.regime == Regime::KDonSup || rc.regime == Regime::KDonUnlab)
    sched.grad_accumulation = 2;  // KD default
  else
    sched.grad_accumulation = 1;
  if (rc.regime == Regime::MtlKdOnUnlab) sched.grad_accumulation = 1;

  Trainer trainer(std::move(params), cfg, sched);
  std::int64_t logged = 0;
  if (log_sink)
    trainer.set_log_sink([&](const std::string& line) {
      if (rc.log_every <= 1 || (logged % rc.log_every) == 0) log_sink(line);
      ++logged;
    });

  dsp::SplitMix64 rng(rc.seed ^ 0x545241494eull);
  const std::int64_t crop_len = std::llround(rc.crop_seconds * cfg.sample_rate_hz);
  std::deque<double> recent_losses;
  auto note_loss = [&](double l) {
    recent_losses.push_back(l);
    if (recent_losses.size() > 100) recent_losses.pop_front();
  };

  const AsrLossHook hook = envelope_stub_hook(cfg.sample_rate_hz);
  while (trainer.update_steps() < rc.steps) {
    switch (rc.regime) {
      case Regime::SupervisedSE: {
        note_loss(trainer
                      .train_step_supervised(draw_batch(pool.train, rc.batch_size, crop_len,
                                                        Provenance::GroundTruthClean, rng))
                      .loss);
        break;
      }
      case Regime::KDonSup: {
        note_loss(trainer
                      .kd_step(teacher, teacher_cfg,
                               draw_batch(pool.train, rc.batch_size, crop_len,
                                          Provenance::TeacherPseudoLabel, rng))
                      .loss);
        break;
      }
      case Regime::KDonUnlab: {
        TrainBatch sim = draw_batch(pool.train, rc.batch_size, crop_len,
                                    Provenance::GroundTruthClean, rng);
        TrainBatch unlab = draw_batch(pool.unlabeled, rc.batch_size, crop_len,
                                      Provenance::TeacherPseudoLabel, rng);
        note_loss(trainer.kd_unlabeled_step(teacher, teacher_cfg, sim, unlab).loss);
        break;
      }
      case Regime::MtlKdOnUnlab: {
        TrainBatch sim = draw_batch(pool.train, rc.batch_size, crop_len,
                                    Provenance::GroundTruthClean, rng);
        TrainBatch unlab = draw_batch(pool.unlabeled, rc.batch_size, crop_len,
                                      Provenance::TeacherPseudoLabel, rng);
        const auto stats = trainer.mtl_kd_round(teacher, teacher_cfg, sim, unlab, hook);
        note_loss(stats.back().loss);
        break;
      }
    }
  }

  TrainRunResult res;
  res.config = trainer.config();
  res.steps = trainer.update_steps();
  double acc = 0;
  for (double l : recent_losses) acc += l;
  res.final_loss = recent_losses.empty() ? 0 : acc / double(recent_losses.size());
  res.params = trainer.take_params();

  const EvalSummary ev = evaluate_on_fixtures(res.params, res.config, rc.data_dir, "eval");
  if (ev.items > 0) {
    res.eval_present = true;
    res.eval_si_sdr_out_db = ev.mean_si_sdr_out_db;
    res.eval_si_sdr_in_db = ev.mean_si_sdr_in_db;
  }
  return res;
}

}  // namespace e3net
