#include "conpvp/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "conpvp/evalsuite.hpp"
#include "conpvp/util.hpp"

namespace conpvp {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

double elapsed_seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be > 0");
  if (eval_every_steps < 1) throw std::invalid_argument("eval_every_steps must be >= 1");
  if (temperature <= 0.0) throw std::invalid_argument("temperature must be > 0");
  if (epochs < 1 && max_steps <= 0) {
    throw std::invalid_argument("either epochs >= 1 or max_steps > 0 required");
  }
}

Trainer::Trainer(TrainConfig cfg, MaskEncoder& encoder, TemplateSets templates)
    : cfg_(std::move(cfg)),
      encoder_(&encoder),
      templates_(std::move(templates)),
      optimizer_(encoder.trainable_parameters(), cfg_.learning_rate, 0.9, 0.999, 1e-8,
                 cfg_.weight_decay),
      template_rng_(mix_seed(cfg_.seed, 2)) {
  cfg_.validate();
  if (!cfg_.dev_path.empty()) {
    dev_ = load_sts(cfg_.dev_path);
  }
}

double Trainer::lr_scale() const {
  if (total_steps_ <= 0) return 1.0;
  // Linear decay to zero over the run, no warmup.
  return 1.0 - static_cast<double>(step_) / static_cast<double>(total_steps_);
}

double Trainer::training_step(std::span<const std::string> batch) {
  if (batch.size() < 2) {
    throw std::invalid_argument("training batch must contain at least two sentences");
  }
  MaskEncoder& enc = *encoder_;
  std::vector<std::vector<int>> ids;
  ids.reserve(batch.size());
  for (const std::string& s : batch) ids.push_back(enc.tokenizer().encode(s));

  const double scale = lr_scale();
  enc.zero_grads();
  double loss = 0.0;

  if (cfg_.loss_mode == LossMode::instance_dropout) {
    DebiasedTape tape_a, tape_b;
    BatchTriple views;
    views.v = enc.anchor_embed_tokens(ids, EncodePhase::training, true, &tape_a);
    views.c_plus = enc.anchor_embed_tokens(ids, EncodePhase::training, true, &tape_b);
    const LossReport report = loss_variant(views, cfg_.temperature, cfg_.loss_mode);
    const TripleGrads grads = loss_variant_grad(views, cfg_.temperature, cfg_.loss_mode);
    enc.debiased_backward(tape_a, grads.v);
    enc.debiased_backward(tape_b, grads.c_plus);
    loss = report.loss;
  } else {
    std::vector<const Template*> positive, negative;
    positive.reserve(batch.size());
    negative.reserve(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
      const auto [tp, tn] = sample_templates(templates_, template_rng_, cfg_.template_mode);
      positive.push_back(tp);
      negative.push_back(tn);
    }

    DebiasedTape anchor_tape, pos_tape, neg_tape;
    BatchTriple triple;
    triple.v = enc.anchor_embed_tokens(ids, EncodePhase::training, true, &anchor_tape);
    triple.c_plus = enc.prototype_embed_side(ids, positive, true, &pos_tape);
    if (cfg_.loss_mode == LossMode::full) {
      // no_neg_proto skips negative-prototype encoding entirely
      triple.c_minus = enc.prototype_embed_side(ids, negative, true, &neg_tape);
    }
    const LossReport report = loss_variant(triple, cfg_.temperature, cfg_.loss_mode);
    const TripleGrads grads = loss_variant_grad(triple, cfg_.temperature, cfg_.loss_mode);
    enc.debiased_backward(anchor_tape, grads.v);
    enc.debiased_backward(pos_tape, grads.c_plus);
    if (cfg_.loss_mode == LossMode::full) {
      enc.debiased_backward(neg_tape, grads.c_minus);
    }
    loss = report.loss;
  }

  if (!std::isfinite(loss)) {
    throw std::runtime_error("non-finite training loss at step " + std::to_string(step_ + 1));
  }
  nn::clip_global_norm(enc.trainable_parameters(), cfg_.grad_clip);
  optimizer_.step(scale);
  optimizer_.zero_grads();
  ++step_;
  return loss;
}

double Trainer::dev_spearman() {
  if (dev_.empty()) {
    throw std::runtime_error("no dev dataset configured");
  }
  std::vector<std::string> a_side, b_side;
  a_side.reserve(dev_.size());
  b_side.reserve(dev_.size());
  for (const STSExample& ex : dev_) {
    a_side.push_back(ex.sentence_a);
    b_side.push_back(ex.sentence_b);
  }
  const Mat ea = embed_sentences(*encoder_, a_side);
  const Mat eb = embed_sentences(*encoder_, b_side);
  std::vector<double> pred(dev_.size()), gold(dev_.size());
  for (size_t i = 0; i < dev_.size(); ++i) {
    const double na = ea.row(static_cast<Eigen::Index>(i)).norm();
    const double nb = eb.row(static_cast<Eigen::Index>(i)).norm();
    pred[i] = ea.row(static_cast<Eigen::Index>(i)).dot(eb.row(static_cast<Eigen::Index>(i))) /
              (na * nb);
    gold[i] = dev_[i].gold_score;
  }
  return spearman(pred, gold);
}

TrainResult Trainer::train(const SentenceCorpus& corpus) {
  if (corpus.size() == 0) throw std::invalid_argument("empty training corpus");
  BatchIterator batches(corpus, cfg_.batch_size, mix_seed(cfg_.seed, 11));
  const long steps_per_epoch = static_cast<long>(batches.batches_per_epoch());
  if (steps_per_epoch == 0) {
    throw std::invalid_argument("corpus smaller than one training batch");
  }
  total_steps_ = cfg_.max_steps > 0 ? cfg_.max_steps
                                    : steps_per_epoch * static_cast<long>(cfg_.epochs);

  TrainResult result;
  result.best_dev = -2.0;  // below any valid correlation
  const auto started = std::chrono::steady_clock::now();
  std::vector<std::string> batch;

  while (step_ < total_steps_) {
    if (!batches.next(batch)) {
      if (cfg_.max_steps <= 0 && batches.epoch() + 1 >= cfg_.epochs) break;
      batches.start_epoch();
      continue;
    }
    TrainLogRecord record;
    try {
      record.loss = training_step(batch);
    } catch (const std::exception& e) {
      if (!cfg_.checkpoint_dir.empty()) {
        fs::create_directories(cfg_.checkpoint_dir);
        json dump;
        dump["step"] = step_ + 1;
        dump["error"] = e.what();
        dump["batch"] = batch;
        std::ofstream out(cfg_.checkpoint_dir + "/abort_dump.json");
        out << dump.dump(2) << "\n";
      }
      throw std::runtime_error(std::string("training aborted: ") + e.what());
    }
    record.step = step_;
    record.wall_time_sec = elapsed_seconds(started);

    if (!dev_.empty() && step_ % cfg_.eval_every_steps == 0) {
      const double score = dev_spearman();
      record.dev_spearman = score;
      if (score > result.best_dev) {
        result.best_dev = score;
        result.best_step = step_;
        if (!cfg_.checkpoint_dir.empty()) {
          const std::string dir = cfg_.checkpoint_dir + "/best";
          encoder_->save_checkpoint(dir);
          json best;
          best["step"] = step_;
          best["dev_spearman"] = score;
          best["metric"] = "spearman_dev";
          std::ofstream out(dir + "/best.json");
          out << best.dump(2) << "\n";
          result.best_checkpoint_dir = dir;
        }
      }
    }
    result.log.push_back(record);
  }

  if (result.best_step < 0) {
    // No dev evaluation ran; persist the final parameters so the run still
    // produces a usable checkpoint.
    if (!cfg_.checkpoint_dir.empty()) {
      const std::string dir = cfg_.checkpoint_dir + "/best";
      encoder_->save_checkpoint(dir);
      result.best_checkpoint_dir = dir;
      if (dev_.empty()) {
        log_warn("no dev dataset: saved final parameters as the checkpoint");
      }
    }
  }
  write_log(result.log);
  return result;
}

void Trainer::write_log(const std::vector<TrainLogRecord>& log) const {
  if (cfg_.checkpoint_dir.empty()) return;
  fs::create_directories(cfg_.checkpoint_dir);
  save_train_log(cfg_.checkpoint_dir + "/train_log.jsonl", log);
}

void save_train_log(const std::string& path, const std::vector<TrainLogRecord>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training log: " + path);
  for (const TrainLogRecord& r : log) {
    json doc;
    doc["step"] = r.step;
    doc["loss"] = r.loss;
    if (r.dev_spearman) doc["dev_spearman"] = *r.dev_spearman;
    doc["wall_time_sec"] = r.wall_time_sec;
    out << doc.dump() << "\n";
  }
}

std::vector<TrainLogRecord> load_train_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open training log: " + path);
  std::vector<TrainLogRecord> log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json doc = json::parse(line);
    TrainLogRecord r;
    r.step = doc.at("step").get<long>();
    r.loss = doc.at("loss").get<double>();
    if (doc.contains("dev_spearman")) r.dev_spearman = doc.at("dev_spearman").get<double>();
    r.wall_time_sec = doc.value("wall_time_sec", 0.0);
    log.push_back(r);
  }
  return log;
}

}  // namespace conpvp
