#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "conpvp/corpus.hpp"
#include "conpvp/encoder.hpp"
#include "conpvp/evalsuite.hpp"
#include "conpvp/linalg.hpp"

namespace conpvp {

struct SimilarityBins {
  std::vector<double> bin_edges;  // num_bins+1 edges spanning gold scores [0,5]
  std::vector<std::vector<double>> per_bin_scaled;
  std::vector<double> gold;
  std::vector<double> raw_cosine;
  std::vector<double> scaled;  // min-max scaled to [0,1] over the dataset
  std::vector<int> bin_index;
};

// Predicted cosine per pair, min-max scaled, binned by gold score. Throws when
// all predictions coincide (embedding-space collapse).
SimilarityBins similarity_distribution(MaskEncoder& encoder,
                                       std::span<const STSExample> examples, int num_bins,
                                       const EvalOptions& options = {});

struct TokenFrequencyTable {
  std::vector<long long> counts;  // indexed by token id

  long long total() const;
  int nonzero_tokens() const;
  // (count desc, id asc); at most k ids, only tokens that occur
  std::vector<int> top_k(int k) const;
};

// Counts over the tokenized sentences of both sides of each pair.
TokenFrequencyTable token_frequency(std::span<const STSExample> examples,
                                    const Tokenizer& tokenizer);

struct RemovalCurve {
  std::vector<int> k_values;
  std::vector<double> avg_spearman;
};

// For each k, delete the k most frequent tokens from every input sentence
// before wrapping (templates are never stripped) and re-run the STS
// evaluation. k_grid must start at 0; entries beyond the observed vocabulary
// truncate the curve with a warning.
RemovalCurve frequency_removal_curve(MaskEncoder& encoder, const std::vector<StsTask>& tasks,
                                     std::span<const int> k_grid,
                                     const TokenFrequencyTable& frequency,
                                     StsAggregation aggregation,
                                     const EvalOptions& options = {});

struct ProjectionOptions {
  double perplexity = 15.0;
  int iterations = 500;
  double learning_rate = 100.0;
  double early_exaggeration = 4.0;
  int exaggeration_iterations = 100;
};

// Seeded stochastic neighbor embedding into 2-D (exact pairwise affinities;
// intended for the small visualization samples this tool exports).
Mat project_2d(const Mat& embeddings, uint64_t seed, const ProjectionOptions& options = {});

struct ProjectedPoint {
  int point_id = 0;
  int pair_id = 0;
  double gold_score = 0.0;
  char side = 'a';
};

void write_similarity_csv(const std::string& path, const SimilarityBins& bins);
void write_curve_csv(const std::string& path, const RemovalCurve& curve);
void write_projection_csv(const std::string& path, const Mat& coords,
                          std::span<const ProjectedPoint> points);

}  // namespace conpvp
