#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "conpvp/corpus.hpp"
#include "conpvp/encoder.hpp"
#include "conpvp/linalg.hpp"
#include "conpvp/report.hpp"

namespace conpvp {

struct EvalOptions {
  int batch_size = 64;
  // Token ids deleted from each sentence before wrapping (frequency-removal
  // analysis); null or empty means no filtering.
  const std::unordered_set<int>* drop_tokens = nullptr;
};

// Evaluation-mode anchors: no dropout, debias only when the encoder's
// eval_debias flag is set.
Mat embed_sentences(MaskEncoder& encoder, std::span<const std::string> sentences,
                    const EvalOptions& options = {});

// Rank correlation with average-rank tie handling. Throws on a constant
// sequence (correlation undefined).
double spearman(std::span<const double> pred, std::span<const double> gold);

struct StsSubset {
  std::string name;
  std::vector<STSExample> examples;
};
struct StsTask {
  std::string name;
  std::vector<StsSubset> subsets;
  size_t pair_count() const;
};

// "name=path"; path may be a single .tsv file or a directory whose *.tsv
// files become the task's subsets (sorted by filename).
StsTask load_sts_task(const std::string& spec);
std::vector<StsTask> load_sts_tasks(std::span<const std::string> specs);

enum class StsAggregation { per_subset_then_mean, concat_all };
StsAggregation sts_aggregation_from_name(const std::string& name);
std::string sts_aggregation_name(StsAggregation aggregation);

struct StsResult {
  std::vector<EvalReport> reports;  // one per task, then the "Avg." row
  double average = 0.0;
};
StsResult sts_eval(MaskEncoder& encoder, const std::vector<StsTask>& tasks,
                   StsAggregation aggregation, const EvalOptions& options = {});

struct TransferOptions {
  int few_shot = 0;  // per-class examples drawn from the training split; 0 = all
  int runs = 1;
  uint64_t seed = 0;
  double test_fraction = 0.2;       // for the seeded stratified split
  std::vector<double> l2_grid;      // empty -> {2^-4 .. 2^4}
  int cv_folds = 5;
};

// Frozen-embedding logistic-regression probe; L2 strength chosen by
// cross-validation on the training split.
EvalReport transfer_probe(const Mat& embeddings, const std::vector<int>& labels,
                          const TransferOptions& options);
EvalReport transfer_probe_split(const Mat& train_embeddings, const std::vector<int>& train_labels,
                                const Mat& test_embeddings, const std::vector<int>& test_labels,
                                const TransferOptions& options);

struct KMeansOptions {
  int max_iterations = 100;
  int restarts = 10;
  double tolerance = 1e-4;  // relative inertia improvement
};

// k-means++ seeded Lloyd iterations; best of `restarts` inits by inertia.
std::vector<int> kmeans(const Mat& points, int k, uint64_t seed, const KMeansOptions& = {});

// Maximum total agreement over one-to-one cluster-to-label assignments.
long long hungarian_max_agreement(const std::vector<std::vector<long long>>& contingency);
double cluster_accuracy(const std::vector<int>& assignment, const std::vector<int>& gold);

EvalReport kmeans_cluster_accuracy(const Mat& embeddings, const std::vector<int>& gold_labels,
                                   int runs, uint64_t seed, const KMeansOptions& = {});

// Multinomial logistic regression, L2 on weights only, L-BFGS from zero init.
struct LogisticModel {
  Mat weights;  // d x C
  Vec bias;     // C
};
LogisticModel fit_logistic(const Mat& x, const std::vector<int>& labels, int num_classes,
                           double l2, int max_iterations = 500);
std::vector<int> predict_logistic(const LogisticModel& model, const Mat& x);

}  // namespace conpvp
