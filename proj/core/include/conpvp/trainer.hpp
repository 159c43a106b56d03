#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conpvp/corpus.hpp"
#include "conpvp/encoder.hpp"
#include "conpvp/objective.hpp"
#include "conpvp/prompting.hpp"

namespace conpvp {

struct TrainConfig {
  int batch_size = 8;
  double learning_rate = 1e-3;
  int epochs = 1;
  int eval_every_steps = 125;
  double temperature = 0.05;  // the underlying contrastive framework's default
  LossMode loss_mode = LossMode::full;
  TemplateSamplingMode template_mode = TemplateSamplingMode::independent;
  uint64_t seed = 0;
  std::string dev_path;        // STS tsv; empty disables periodic dev evaluation
  std::string checkpoint_dir;  // empty disables checkpointing and log files
  long max_steps = -1;         // -1: run `epochs` full passes
  double weight_decay = 0.01;
  double grad_clip = 1.0;

  void validate() const;
};

struct TrainLogRecord {
  long step = 0;
  double loss = 0.0;
  std::optional<double> dev_spearman;
  double wall_time_sec = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRecord> log;
  double best_dev = 0.0;
  long best_step = -1;  // -1 when no dev evaluation ran
  std::string best_checkpoint_dir;
};

// Owns the optimizer and the template-sampling stream; the encoder's
// parameters are updated in place.
class Trainer {
 public:
  Trainer(TrainConfig cfg, MaskEncoder& encoder, TemplateSets templates);

  TrainResult train(const SentenceCorpus& corpus);

  // One optimizer update on one batch; returns the batch loss. Exposed for
  // step-level tests.
  double training_step(std::span<const std::string> batch);

  // Dev STS Spearman with evaluation-mode anchors; no parameter updates.
  double dev_spearman();

  const TrainConfig& config() const { return cfg_; }
  long step() const { return step_; }

 private:
  double lr_scale() const;
  void write_log(const std::vector<TrainLogRecord>& log) const;

  TrainConfig cfg_;
  MaskEncoder* encoder_;
  TemplateSets templates_;
  nn::AdamW optimizer_;
  std::mt19937_64 template_rng_;
  std::vector<STSExample> dev_;
  long step_ = 0;
  long total_steps_ = 0;  // 0 until train() fixes the schedule
};

void save_train_log(const std::string& path, const std::vector<TrainLogRecord>& log);
std::vector<TrainLogRecord> load_train_log(const std::string& path);

}  // namespace conpvp
