#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "e3net/autodiff.hpp"
#include "e3net/model.hpp"

namespace e3net {

enum class Provenance { GroundTruthClean, TeacherPseudoLabel };

enum class Regime { SupervisedSE, KDonSup, KDonUnlab, MtlKdOnUnlab };

Regime regime_from_string(const std::string& s);
std::string regime_to_string(Regime r);

struct TrainItem {
  std::vector<float> input;      // noisy waveform
  std::vector<float> embedding;  // [E]
  std::vector<float> target;     // clean reference or teacher pseudo label
  Provenance provenance = Provenance::GroundTruthClean;
  std::string transcription;     // opaque payload handed to the MTL hook
};

struct TrainBatch {
  std::vector<TrainItem> items;
  bool empty() const { return items.empty(); }
  std::size_t size() const { return items.size(); }
  void validate(std::int64_t emb_dim) const;  // equal lengths, B >= 1
};

struct TrainSchedule {
  double peak_lr = 1e-4;
  std::int64_t total_steps = 1;
  std::int64_t warmup_steps = 0;
  int grad_accumulation = 1;  // 2 for KD regimes
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;
  double loss_lambda = 1.0;  // L1 weight inside the SE loss
  Regime regime = Regime::SupervisedSE;
};

// Cosine annealing from peak to zero: peak * 0.5 * (1 + cos(pi*step/total)).
// Steps past the end give 0; warmup, when configured, ramps linearly first.
double lr_at(const TrainSchedule& s, std::int64_t step);

struct SeLossParts {
  double total = 0;
  double si_sdr_db = 0;  // capped at +/-100
  double l1 = 0;         // mean |e - t|
};

// Evaluation-side counterpart of the training loss:
// total = -si_sdr + lambda * mean|e - t|; an all-zero target degenerates to
// the pure L1 term.
SeLossParts se_loss_eval(const float* enhanced, const float* target, std::int64_t n,
                         double lambda = 1.0);

struct StepStats {
  std::int64_t micro_step = 0;    // micro-batches seen
  std::int64_t update_step = 0;   // optimizer updates applied
  double lr = 0;
  double loss = 0;
  double si_component = 0;
  double l1_component = 0;
  double grad_norm = 0;  // pre-clip global L2 norm (at update boundaries)
  double wall_ms = 0;
  bool applied = false;  // true when this micro-step hit an update boundary
  std::string phase = "train";
};

// Loss hook for the ASR step of MTL training: builds a differentiable scalar
// from the enhanced batch on the caller's tape. The built-in stub preserves
// 40-band log-mel envelopes over speech-active regions of the input; a real
// sequence-to-sequence ASR loss would plug in the same way.
using AsrLossHook =
    std::function<GradTape::Var(GradTape&, GradTape::Var enhanced, const TrainBatch& batch)>;

AsrLossHook envelope_stub_hook(int sample_rate_hz = 16000);
AsrLossHook zero_stub_hook();

enum class MtlPhase { SE, ASR, KD };
const char* mtl_phase_name(MtlPhase p);
using PhaseObserver = std::function<void(MtlPhase)>;

// Owns the student parameters, Adam state, and step counters for one run.
// Deterministic: same seed, data order and schedule give a bitwise-identical
// parameter trajectory.
class Trainer {
 public:
  Trainer(ModelParams params, ModelConfig cfg, TrainSchedule schedule);

  // One JSON line per micro step.
  void set_log_sink(std::function<void(const std::string&)> sink) { log_sink_ = std::move(sink); }

  StepStats train_step_supervised(const TrainBatch& batch);

  // Pseudo labels are produced here by running the frozen teacher on the
  // batch inputs; clean references in the batch are never read.
  StepStats kd_step(const ModelParams& teacher, const ModelConfig& teacher_cfg,
                    const TrainBatch& batch);

  // Two-batch KD: 0.5 * supervised loss on simulated data + 0.5 * pseudo-label
  // loss on unlabeled data, one combined update. An empty unlabeled batch is
  // exactly a supervised step; an empty simulated batch is exactly a KD step.
  StepStats kd_unlabeled_step(const ModelParams& teacher, const ModelConfig& teacher_cfg,
                              const TrainBatch& sim_batch, const TrainBatch& unlabeled_batch);

  // Three updates in order: SE on simulated data, ASR-hook on enhanced
  // unlabeled audio (gradients reach only the student), KD on unlabeled data
  // with teacher pseudo labels. A hook loss with no gradient path (e.g. the
  // zero stub) skips its update entirely so the trajectory matches SE+KD.
  std::vector<StepStats> mtl_kd_round(const ModelParams& teacher,
                                      const ModelConfig& teacher_cfg,
                                      const TrainBatch& sim_batch,
                                      const TrainBatch& unlabeled_batch,
                                      const AsrLossHook& hook,
                                      const PhaseObserver& observer = {});

  const ModelParams& params() const { return params_; }
  ModelParams take_params() { return std::move(params_); }
  const ModelConfig& config() const { return cfg_; }
  const TrainSchedule& schedule() const { return schedule_; }
  std::int64_t update_steps() const { return update_steps_; }
  std::int64_t micro_steps() const { return micro_steps_; }

 private:
  struct LossBuild {
    GradTape::Var loss;
    double loss_value = 0;
    double si_component = 0;
    double l1_component = 0;
  };

  StepStats run_micro_step(const std::function<LossBuild(GradTape&, const ParamVarsT<float>&)>&
                               build_loss,
                           const char* phase, bool force_update);
  Tensor batch_inputs(const TrainBatch& b) const;
  Tensor batch_embeddings(const TrainBatch& b) const;
  Tensor batch_targets(const TrainBatch& b, std::int64_t out_len) const;
  std::vector<std::vector<float>> teacher_labels(const ModelParams& teacher,
                                                 const ModelConfig& teacher_cfg,
                                                 const TrainBatch& batch) const;
  void apply_update(double grad_scale, StepStats& stats);

  ModelParams params_;
  ModelConfig cfg_;
  TrainSchedule schedule_;
  std::vector<Tensor> grad_accum_;  // aligned with params_.named
  std::vector<Tensor> adam_m_, adam_v_;
  int accum_count_ = 0;
  std::int64_t adam_t_ = 0;
  std::int64_t update_steps_ = 0;
  std::int64_t micro_steps_ = 0;
  std::function<void(const std::string&)> log_sink_;
};

// --------------------------------------------------------------------------
// Run orchestration: fixture-backed training driven by a JSON config.

struct TrainRunConfig {
  Regime regime = Regime::SupervisedSE;
  std::optional<ModelConfig> model;
  std::string init_checkpoint;
  std::string teacher_checkpoint;
  std::string data_dir;
  std::int64_t steps = 1000;
  double peak_lr = 1e-4;
  std::int64_t warmup_steps = 0;
  int grad_accumulation = 0;  // 0: regime default (2 for KD, 1 otherwise)
  int batch_size = 2;
  double crop_seconds = 2.0;
  double loss_lambda = 1.0;
  std::uint64_t seed = 17;
  std::int64_t log_every = 50;
  // Fig.-2-style sweep: overrides of (num_filters, num_blocks) expanded into
  // one run each, sharing the seed.
  std::vector<std::pair<std::int64_t, std::int64_t>> sweep;
};

TrainRunConfig parse_train_run_config(const std::string& json_text);

struct TrainRunResult {
  ModelParams params;
  ModelConfig config;
  double final_loss = 0;
  std::int64_t steps = 0;
  double eval_si_sdr_out_db = 0;  // against eval split, when present
  double eval_si_sdr_in_db = 0;
  bool eval_present = false;
};

TrainRunResult run_training(const TrainRunConfig& cfg,
                            const std::function<void(const std::string&)>& log_sink = {});

// Mean SI-SDR of model output vs clean, and of noisy input vs clean, over a
// manifest split.
struct EvalSummary {
  double mean_si_sdr_out_db = 0;
  double mean_si_sdr_in_db = 0;
  int items = 0;
};

EvalSummary evaluate_on_fixtures(const ModelParams& params, const ModelConfig& cfg,
                                 const std::string& data_dir, const std::string& split);

}  // namespace e3net
