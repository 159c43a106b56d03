#include "conpvp/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "conpvp/config.hpp"
#include "conpvp/corpus.hpp"
#include "conpvp/diagnostics.hpp"
#include "conpvp/encoder.hpp"
#include "conpvp/evalsuite.hpp"
#include "conpvp/report.hpp"
#include "conpvp/trainer.hpp"
#include "conpvp/util.hpp"

namespace conpvp {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

// Relative paths fall back to $CONPVP_DATA_ROOT when they do not resolve
// directly.
std::string resolve_data_path(const std::string& path) {
  if (path.empty() || fs::exists(path)) return path;
  const char* root = std::getenv("CONPVP_DATA_ROOT");
  if (root != nullptr) {
    const fs::path joined = fs::path(root) / path;
    if (fs::exists(joined)) return joined.string();
  }
  return path;
}

TemplateSets templates_from_config(const std::string& template_file) {
  if (template_file.empty()) return builtin_template_sets();
  return load_template_file(resolve_data_path(template_file));
}

EncoderConfig encoder_config_from(const RunConfig& cfg) {
  EncoderConfig ec;
  ec.hidden_dim = static_cast<int>(cfg.get_int("hidden_dim"));
  ec.num_layers = static_cast<int>(cfg.get_int("num_layers"));
  ec.num_heads = static_cast<int>(cfg.get_int("num_heads"));
  ec.max_length = static_cast<int>(cfg.get_int("max_length"));
  ec.dropout_rate = cfg.get_double("dropout_rate");
  ec.prompt_length = static_cast<int>(cfg.get_int("prompt_length"));
  const std::string backbone = cfg.get_string("backbone");
  if (backbone == "builtin-tiny") {
    ec.backbone = BackboneKind::builtin_tiny;
  } else if (backbone == "pretrained") {
    ec.backbone = BackboneKind::pretrained;
    ec.pretrained_path = cfg.get_string("pretrained_path");
  } else {
    throw std::invalid_argument("unknown backbone \"" + backbone + "\"");
  }
  const std::string anchor = cfg.get_string("anchor_mode");
  if (anchor == "continuous") {
    ec.anchor_mode = AnchorMode::continuous;
  } else if (anchor == "manual") {
    ec.anchor_mode = AnchorMode::manual;
  } else {
    throw std::invalid_argument("unknown anchor_mode \"" + anchor + "\"");
  }
  ec.debias_prototypes = cfg.get_bool("debias_prototypes");
  ec.eval_debias = cfg.get_bool("eval_debias");
  return ec;
}

TrainConfig train_config_from(const RunConfig& cfg) {
  TrainConfig tc;
  tc.batch_size = static_cast<int>(cfg.get_int("batch_size"));
  tc.learning_rate = cfg.get_double("learning_rate");
  tc.epochs = static_cast<int>(cfg.get_int("epochs"));
  tc.eval_every_steps = static_cast<int>(cfg.get_int("eval_every_steps"));
  tc.temperature = cfg.get_double("temperature");
  tc.loss_mode = loss_mode_from_name(cfg.get_string("loss_mode"));
  const std::string tmode = cfg.get_string("template_mode");
  if (tmode == "independent") {
    tc.template_mode = TemplateSamplingMode::independent;
  } else if (tmode == "paired") {
    tc.template_mode = TemplateSamplingMode::paired;
  } else {
    throw std::invalid_argument("unknown template_mode \"" + tmode + "\"");
  }
  tc.seed = static_cast<uint64_t>(cfg.get_int("seed"));
  tc.dev_path = resolve_data_path(cfg.get_string("dev_path"));
  tc.checkpoint_dir = cfg.get_string("checkpoint_dir");
  tc.max_steps = cfg.get_int("max_steps");
  tc.weight_decay = cfg.get_double("weight_decay");
  tc.grad_clip = cfg.get_double("grad_clip");
  return tc;
}

std::string default_report_path(const std::string& checkpoint,
                                const std::string& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  return (fs::path(checkpoint) / "reports.jsonl").string();
}

// config_hash travels with the checkpoint (written by cmd_train); evaluation
// commands stamp it into every record they emit.
std::string checkpoint_config_hash(const std::string& checkpoint_dir) {
  const fs::path path = fs::path(checkpoint_dir) / "run_config.json";
  if (!fs::exists(path)) return "unknown";
  std::ifstream in(path);
  json doc = json::parse(in);
  return doc.value("config_hash", "unknown");
}

void stamp_and_append(EvalReport report, const std::string& store,
                      const std::string& checkpoint_id, const std::string& config_hash,
                      uint64_t seed) {
  report.metadata["checkpoint"] = checkpoint_id;
  report.metadata["config_hash"] = config_hash;
  report.metadata["seed"] = std::to_string(seed);
  append_report(store, report);
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides) {
  RunConfig cfg = RunConfig::from_file(config_path);
  for (const std::string& o : overrides) cfg.apply_override(o);
  const std::string required[] = {"train_path", "checkpoint_dir", "learning_rate"};
  cfg.require(required);

  const TemplateSets templates = templates_from_config(cfg.get_string("template_file"));
  const SentenceCorpus corpus = load_sentences(resolve_data_path(cfg.get_string("train_path")));
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed"));

  EncoderConfig ec = encoder_config_from(cfg);
  std::unique_ptr<MaskEncoder> encoder;
  if (ec.backbone == BackboneKind::builtin_tiny) {
    auto tokenizer = std::make_shared<BasicTokenizer>(
        BasicTokenizer::build(corpus.sentences, template_texts_for_vocab(templates),
                              static_cast<int>(cfg.get_int("max_vocab"))));
    encoder = std::make_unique<MaskEncoder>(ec, tokenizer, seed);
  } else {
    if (ec.pretrained_path.empty()) {
      throw std::invalid_argument("backbone=pretrained requires pretrained_path");
    }
    encoder = std::make_unique<MaskEncoder>(
        MaskEncoder::load_pretrained(resolve_data_path(ec.pretrained_path), ec, seed));
  }

  Trainer trainer(train_config_from(cfg), *encoder, templates);
  const TrainResult result = trainer.train(corpus);

  const std::string checkpoint_dir = cfg.get_string("checkpoint_dir");
  fs::create_directories(checkpoint_dir);
  {
    json snapshot;
    snapshot["config_hash"] = cfg.config_hash();
    snapshot["config"] = json::parse(cfg.canonical_json());
    for (const std::string& dir :
         {checkpoint_dir, result.best_checkpoint_dir.empty() ? checkpoint_dir
                                                             : result.best_checkpoint_dir}) {
      std::ofstream out(fs::path(dir) / "run_config.json");
      out << snapshot.dump(2) << "\n";
    }
  }

  std::cout << "trained " << result.log.size() << " steps";
  if (!result.log.empty()) {
    std::cout << ", final loss " << result.log.back().loss;
  }
  if (result.best_step >= 0) {
    std::cout << ", best dev spearman " << result.best_dev << " at step " << result.best_step;
  }
  std::cout << "\ncheckpoint: " << result.best_checkpoint_dir << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string task;
  std::vector<std::string> data;
  std::string test_data;
  std::string aggregation = "mean";
  int few_shot = 0;
  int runs = 1;
  long seed = 13;
  std::string report_path;
  std::string export_embeddings;
};

int cmd_eval(const EvalArgs& args) {
  MaskEncoder encoder = MaskEncoder::load_checkpoint(args.checkpoint);
  const std::string store = default_report_path(args.checkpoint, args.report_path);
  const std::string config_hash = checkpoint_config_hash(args.checkpoint);
  const std::string checkpoint_id = encoder.checkpoint_id();
  const uint64_t seed = static_cast<uint64_t>(args.seed);

  if (args.data.empty()) throw std::invalid_argument("--data is required");

  if (args.task == "sts") {
    std::vector<std::string> specs;
    for (const std::string& d : args.data) specs.push_back(resolve_data_path(d));
    const std::vector<StsTask> tasks = load_sts_tasks(specs);
    std::vector<StsAggregation> aggregations;
    if (args.aggregation == "both") {
      aggregations = {StsAggregation::per_subset_then_mean, StsAggregation::concat_all};
    } else {
      aggregations = {sts_aggregation_from_name(args.aggregation)};
    }
    for (StsAggregation agg : aggregations) {
      const StsResult result = sts_eval(encoder, tasks, agg);
      for (const EvalReport& r : result.reports) {
        std::cout << r.task_name << "\t" << r.metric_name << "\t" << r.value * 100.0 << "\t("
                  << sts_aggregation_name(agg) << ")\n";
        stamp_and_append(r, store, checkpoint_id, config_hash, seed);
      }
    }
    return kExitOk;
  }

  const std::string data_path = resolve_data_path(args.data.front());
  const LabeledDataset dataset = load_labeled(data_path);
  std::vector<std::string> texts;
  std::vector<int> labels;
  for (const LabeledExample& ex : dataset.examples) {
    texts.push_back(ex.text);
    labels.push_back(ex.label);
  }
  const Mat embeddings = embed_sentences(encoder, texts);
  if (!args.export_embeddings.empty()) {
    write_embeddings(args.export_embeddings, embeddings);
  }

  EvalReport report;
  if (args.task == "transfer") {
    TransferOptions options;
    options.few_shot = args.few_shot;
    options.runs = args.runs;
    options.seed = seed;
    if (!args.test_data.empty()) {
      const LabeledDataset test = load_labeled(resolve_data_path(args.test_data));
      std::vector<std::string> test_texts;
      std::vector<int> test_labels;
      for (const LabeledExample& ex : test.examples) {
        test_texts.push_back(ex.text);
        test_labels.push_back(ex.label);
      }
      const Mat test_embeddings = embed_sentences(encoder, test_texts);
      report = transfer_probe_split(embeddings, labels, test_embeddings, test_labels, options);
    } else {
      report = transfer_probe(embeddings, labels, options);
    }
  } else if (args.task == "cluster") {
    report = kmeans_cluster_accuracy(embeddings, labels, args.runs, seed);
  } else {
    throw std::invalid_argument("unknown eval task \"" + args.task + "\"");
  }
  report.task_name = fs::path(data_path).stem().string();
  // the compacted label ids 0..C-1 travel with the record
  std::string mapping;
  for (size_t i = 0; i < dataset.label_names.size(); ++i) {
    if (i > 0) mapping += ",";
    mapping += std::to_string(i) + ":" + dataset.label_names[i];
  }
  report.metadata["label_mapping"] = mapping;
  std::cout << report.task_name << "\t" << report.metric_name << "\t" << report.value * 100.0
            << "\n";
  stamp_and_append(report, store, checkpoint_id, config_hash, seed);
  return kExitOk;
}

struct DiagnoseArgs {
  std::string checkpoint;
  std::string analysis;
  std::vector<std::string> data;
  std::string freq_data;
  std::string k_grid = "0,10,20,30,40,50,60,70,80,90,100";
  int bins = 10;
  std::string out_dir = ".";
  long seed = 13;
  int pairs_per_group = 10;
  std::string aggregation = "mean";
};

std::vector<int> parse_k_grid(const std::string& text) {
  std::vector<int> grid;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, ',')) {
    if (token.empty()) continue;
    grid.push_back(std::stoi(token));
  }
  if (grid.empty()) throw std::invalid_argument("empty k grid");
  return grid;
}

// The visualization setup: pairs_per_group pairs nearest to each gold target,
// seeded shuffle breaking distance ties, groups disjoint.
std::vector<size_t> select_projection_pairs(const std::vector<STSExample>& examples,
                                            std::span<const double> targets, int per_group,
                                            uint64_t seed, std::vector<double>& group_of) {
  std::vector<size_t> selected;
  std::vector<bool> used(examples.size(), false);
  std::mt19937_64 rng(seed);
  for (double target : targets) {
    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return std::abs(examples[a].gold_score - target) <
             std::abs(examples[b].gold_score - target);
    });
    int taken = 0;
    for (size_t idx : order) {
      if (taken == per_group) break;
      if (used[idx]) continue;
      used[idx] = true;
      selected.push_back(idx);
      group_of.push_back(target);
      ++taken;
    }
    if (taken < per_group) {
      throw std::invalid_argument("not enough distinct pairs near gold score " +
                                  std::to_string(target));
    }
  }
  return selected;
}

int cmd_diagnose(const DiagnoseArgs& args) {
  MaskEncoder encoder = MaskEncoder::load_checkpoint(args.checkpoint);
  fs::create_directories(args.out_dir);
  if (args.data.empty()) throw std::invalid_argument("--data is required");

  if (args.analysis == "simdist") {
    const std::vector<STSExample> examples = load_sts(resolve_data_path(args.data.front()));
    const SimilarityBins bins = similarity_distribution(encoder, examples, args.bins);
    const std::string path = (fs::path(args.out_dir) / "similarity_distribution.csv").string();
    write_similarity_csv(path, bins);
    std::cout << "wrote " << path << " (" << bins.scaled.size() << " pairs)\n";
    return kExitOk;
  }

  if (args.analysis == "freqcurve") {
    std::vector<std::string> specs;
    for (const std::string& d : args.data) specs.push_back(resolve_data_path(d));
    const std::vector<StsTask> tasks = load_sts_tasks(specs);
    std::vector<STSExample> freq_source;
    if (!args.freq_data.empty()) {
      freq_source = load_sts(resolve_data_path(args.freq_data));
    } else {
      for (const StsSubset& subset : tasks.front().subsets) {
        freq_source.insert(freq_source.end(), subset.examples.begin(), subset.examples.end());
      }
    }
    const TokenFrequencyTable frequency = token_frequency(freq_source, encoder.tokenizer());
    const RemovalCurve curve =
        frequency_removal_curve(encoder, tasks, parse_k_grid(args.k_grid), frequency,
                                sts_aggregation_from_name(args.aggregation));
    const std::string path = (fs::path(args.out_dir) / "frequency_removal_curve.csv").string();
    write_curve_csv(path, curve);
    std::cout << "wrote " << path << " (" << curve.k_values.size() << " points)\n";
    return kExitOk;
  }

  if (args.analysis == "project") {
    const std::vector<STSExample> examples = load_sts(resolve_data_path(args.data.front()));
    const double targets[] = {0.0, 3.0, 5.0};
    std::vector<double> group_of;
    const std::vector<size_t> picked = select_projection_pairs(
        examples, targets, args.pairs_per_group, static_cast<uint64_t>(args.seed), group_of);

    std::vector<std::string> sentences;
    std::vector<ProjectedPoint> points;
    for (size_t i = 0; i < picked.size(); ++i) {
      const STSExample& ex = examples[picked[i]];
      for (char side : {'a', 'b'}) {
        ProjectedPoint p;
        p.point_id = static_cast<int>(sentences.size());
        p.pair_id = static_cast<int>(i);
        p.gold_score = group_of[i];
        p.side = side;
        points.push_back(p);
        sentences.push_back(side == 'a' ? ex.sentence_a : ex.sentence_b);
      }
    }
    const Mat embeddings = embed_sentences(encoder, sentences);
    const Mat coords = project_2d(embeddings, static_cast<uint64_t>(args.seed));
    const std::string path = (fs::path(args.out_dir) / "projection.csv").string();
    write_projection_csv(path, coords, points);
    std::cout << "wrote " << path << " (" << points.size() << " points)\n";
    return kExitOk;
  }

  throw std::invalid_argument("unknown analysis \"" + args.analysis + "\"");
}

int cmd_templates(const std::string& file, bool validate_only) {
  const TemplateSets sets = file.empty() ? builtin_template_sets()
                                         : load_template_file(resolve_data_path(file));
  if (!validate_only) {
    auto print = [](const Template& t) {
      std::cout << t.id << "\t" << (t.polarity == Polarity::positive ? "+" : "-") << "\t"
                << (t.pair_id ? *t.pair_id : std::string("-")) << "\t" << t.pattern << "\n";
    };
    std::cout << "# id\tpolarity\tpair\tpattern\n";
    for (const Template& t : sets.positives) print(t);
    for (const Template& t : sets.negatives) print(t);
  }
  std::cout << sets.positives.size() << " positive, " << sets.negatives.size()
            << " negative templates OK\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"prototypical contrastive sentence-embedding training and evaluation"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string config_path;
  std::vector<std::string> overrides;
  train->add_option("--config", config_path, "JSON configuration file")->required();
  train->add_option("overrides", overrides, "key=value configuration overrides");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  EvalArgs eval_args;
  eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint directory")->required();
  eval->add_option("--task", eval_args.task, "sts | transfer | cluster")->required();
  eval->add_option("--data", eval_args.data, "dataset paths (sts: name=path specs)")
      ->required();
  eval->add_option("--test-data", eval_args.test_data, "held-out labeled file (transfer)");
  eval->add_option("--aggregation", eval_args.aggregation, "mean | concat | both");
  eval->add_option("--few-shot", eval_args.few_shot, "labeled examples per class");
  eval->add_option("--runs", eval_args.runs, "independent runs");
  eval->add_option("--seed", eval_args.seed, "random seed");
  eval->add_option("--report", eval_args.report_path, "report store (JSONL)");
  eval->add_option("--export-embeddings", eval_args.export_embeddings,
                   "write the dataset embeddings to this file");

  // diagnose
  auto* diagnose = app.add_subcommand("diagnose", "embedding-space analyses");
  DiagnoseArgs diag_args;
  diagnose->add_option("--checkpoint", diag_args.checkpoint, "checkpoint directory")->required();
  diagnose->add_option("--analysis", diag_args.analysis, "simdist | freqcurve | project")
      ->required();
  diagnose->add_option("--data", diag_args.data, "dataset paths")->required();
  diagnose->add_option("--freq-data", diag_args.freq_data,
                       "dataset for the token frequency table (freqcurve)");
  diagnose->add_option("--k-grid", diag_args.k_grid, "comma-separated removal counts");
  diagnose->add_option("--bins", diag_args.bins, "similarity distribution bins");
  diagnose->add_option("--out", diag_args.out_dir, "output directory");
  diagnose->add_option("--seed", diag_args.seed, "random seed");
  diagnose->add_option("--pairs-per-group", diag_args.pairs_per_group,
                       "pairs per gold-score group (project)");
  diagnose->add_option("--aggregation", diag_args.aggregation, "mean | concat");

  // templates
  auto* templates = app.add_subcommand("templates", "list or validate template sets");
  std::string template_file;
  bool validate_only = false;
  templates->add_option("--file", template_file, "user template file");
  templates->add_flag("--validate", validate_only, "only validate, do not print");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, overrides);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (diagnose->parsed()) return cmd_diagnose(diag_args);
    if (templates->parsed()) return cmd_templates(template_file, validate_only);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace conpvp
