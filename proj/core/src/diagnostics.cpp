#include "conpvp/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <unordered_set>

#include "conpvp/util.hpp"

namespace conpvp {
namespace {

std::vector<double> pair_cosines(MaskEncoder& encoder, std::span<const STSExample> examples,
                                 const EvalOptions& options) {
  std::vector<std::string> a_side, b_side;
  a_side.reserve(examples.size());
  b_side.reserve(examples.size());
  for (const STSExample& ex : examples) {
    a_side.push_back(ex.sentence_a);
    b_side.push_back(ex.sentence_b);
  }
  const Mat ea = embed_sentences(encoder, a_side, options);
  const Mat eb = embed_sentences(encoder, b_side, options);
  std::vector<double> cosines(examples.size());
  for (size_t i = 0; i < examples.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    cosines[i] = ea.row(r).dot(eb.row(r)) / (ea.row(r).norm() * eb.row(r).norm());
  }
  return cosines;
}

}  // namespace

SimilarityBins similarity_distribution(MaskEncoder& encoder, std::span<const STSExample> examples,
                                       int num_bins, const EvalOptions& options) {
  if (examples.empty()) throw std::invalid_argument("empty dataset");
  if (num_bins < 1) throw std::invalid_argument("num_bins must be >= 1");

  SimilarityBins bins;
  bins.raw_cosine = pair_cosines(encoder, examples, options);
  const auto [min_it, max_it] = std::minmax_element(bins.raw_cosine.begin(),
                                                    bins.raw_cosine.end());
  const double lo = *min_it, hi = *max_it;
  if (hi - lo <= 1e-12) {
    throw std::runtime_error(
        "all predicted similarities are identical; the embedding space has collapsed");
  }
  bins.bin_edges.resize(num_bins + 1);
  for (int b = 0; b <= num_bins; ++b) {
    bins.bin_edges[b] = 5.0 * static_cast<double>(b) / static_cast<double>(num_bins);
  }
  bins.per_bin_scaled.resize(num_bins);
  bins.gold.reserve(examples.size());
  bins.scaled.reserve(examples.size());
  bins.bin_index.reserve(examples.size());
  for (size_t i = 0; i < examples.size(); ++i) {
    const double gold = examples[i].gold_score;
    const double scaled = (bins.raw_cosine[i] - lo) / (hi - lo);
    int b = static_cast<int>(gold / 5.0 * num_bins);
    if (b == num_bins) b = num_bins - 1;  // gold == 5 falls into the last bin
    bins.gold.push_back(gold);
    bins.scaled.push_back(scaled);
    bins.bin_index.push_back(b);
    bins.per_bin_scaled[b].push_back(scaled);
  }
  return bins;
}

long long TokenFrequencyTable::total() const {
  long long sum = 0;
  for (long long c : counts) sum += c;
  return sum;
}

int TokenFrequencyTable::nonzero_tokens() const {
  int n = 0;
  for (long long c : counts) {
    if (c > 0) ++n;
  }
  return n;
}

std::vector<int> TokenFrequencyTable::top_k(int k) const {
  std::vector<int> ids;
  for (size_t id = 0; id < counts.size(); ++id) {
    if (counts[id] > 0) ids.push_back(static_cast<int>(id));
  }
  std::sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return a < b;  // frequency ties break by ascending token id
  });
  if (static_cast<int>(ids.size()) > k) ids.resize(k);
  return ids;
}

TokenFrequencyTable token_frequency(std::span<const STSExample> examples,
                                    const Tokenizer& tokenizer) {
  TokenFrequencyTable table;
  table.counts.assign(tokenizer.vocab_size(), 0);
  for (const STSExample& ex : examples) {
    for (const std::string* text : {&ex.sentence_a, &ex.sentence_b}) {
      for (int id : tokenizer.encode(*text)) {
        ++table.counts[id];
      }
    }
  }
  return table;
}

RemovalCurve frequency_removal_curve(MaskEncoder& encoder, const std::vector<StsTask>& tasks,
                                     std::span<const int> k_grid,
                                     const TokenFrequencyTable& frequency,
                                     StsAggregation aggregation, const EvalOptions& options) {
  if (k_grid.empty() || k_grid[0] != 0) {
    throw std::invalid_argument("k grid must start at 0");
  }
  for (size_t i = 1; i < k_grid.size(); ++i) {
    if (k_grid[i] <= k_grid[i - 1]) {
      throw std::invalid_argument("k grid must be strictly increasing");
    }
  }
  const int available = frequency.nonzero_tokens();
  RemovalCurve curve;
  for (int k : k_grid) {
    if (k > available) {
      log_warn("removal curve truncated: k=" + std::to_string(k) + " exceeds the " +
               std::to_string(available) + " observed tokens");
      break;
    }
    const std::vector<int> top = frequency.top_k(k);
    const std::unordered_set<int> removed(top.begin(), top.end());
    EvalOptions opts = options;
    opts.drop_tokens = &removed;
    const StsResult result = sts_eval(encoder, tasks, aggregation, opts);
    curve.k_values.push_back(k);
    curve.avg_spearman.push_back(result.average);
  }
  return curve;
}

Mat project_2d(const Mat& embeddings, uint64_t seed, const ProjectionOptions& options) {
  const Eigen::Index n = embeddings.rows();
  if (n < 3) throw std::invalid_argument("projection needs at least 3 points");

  Mat d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d2(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = (embeddings.row(i) - embeddings.row(j)).squaredNorm();
      d2(i, j) = d;
      d2(j, i) = d;
    }
  }

  // Per-point Gaussian bandwidths calibrated to the target perplexity.
  const double perplexity =
      std::min(options.perplexity, (static_cast<double>(n) - 1.0) / 3.0);
  const double target_entropy = std::log(perplexity);
  Mat p = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
    Eigen::ArrayXd row(n);
    for (int it = 0; it < 64; ++it) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        row(j) = j == i ? 0.0 : std::exp(-beta * d2(i, j));
        sum += row(j);
      }
      if (sum <= 0.0) break;
      double entropy = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (row(j) > 0.0) {
          const double q = row(j) / sum;
          entropy -= q * std::log(q);
        }
      }
      if (std::abs(entropy - target_entropy) < 1e-5) break;
      if (entropy > target_entropy) {
        beta_lo = beta;
        beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta + beta_hi);
      } else {
        beta_hi = beta;
        beta = 0.5 * (beta + beta_lo);
      }
    }
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      row(j) = j == i ? 0.0 : std::exp(-beta * d2(i, j));
      sum += row(j);
    }
    if (sum <= 0.0) {
      // Coincident points: fall back to uniform affinities.
      for (Eigen::Index j = 0; j < n; ++j) row(j) = j == i ? 0.0 : 1.0;
      sum = static_cast<double>(n - 1);
    }
    p.row(i) = (row / sum).matrix();
  }
  Mat joint = (p + p.transpose()) / (2.0 * static_cast<double>(n));
  joint = joint.cwiseMax(1e-12);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1e-4);
  Mat y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, 0) = normal(rng);
    y(i, 1) = normal(rng);
  }

  Mat velocity = Mat::Zero(n, 2);
  for (int iter = 0; iter < options.iterations; ++iter) {
    const double exaggeration =
        iter < options.exaggeration_iterations ? options.early_exaggeration : 1.0;
    Mat w(n, n);
    double qsum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      w(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        w(i, j) = v;
        w(j, i) = v;
        qsum += 2.0 * v;
      }
    }
    Mat grad = Mat::Zero(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = w(i, j) / qsum;
        const double coeff = 4.0 * (exaggeration * joint(i, j) - q) * w(i, j);
        grad.row(i) += coeff * (y.row(i) - y.row(j));
      }
    }
    const double momentum = iter < 250 ? 0.5 : 0.8;
    velocity = momentum * velocity - options.learning_rate * grad;
    y += velocity;
    y.rowwise() -= y.colwise().mean();
  }
  return y;
}

void write_similarity_csv(const std::string& path, const SimilarityBins& bins) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(10);
  out << "pair,gold,raw_cosine,scaled,bin\n";
  for (size_t i = 0; i < bins.scaled.size(); ++i) {
    out << i << "," << bins.gold[i] << "," << bins.raw_cosine[i] << "," << bins.scaled[i] << ","
        << bins.bin_index[i] << "\n";
  }
}

void write_curve_csv(const std::string& path, const RemovalCurve& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(10);
  out << "k,avg_spearman\n";
  for (size_t i = 0; i < curve.k_values.size(); ++i) {
    out << curve.k_values[i] << "," << curve.avg_spearman[i] << "\n";
  }
}

void write_projection_csv(const std::string& path, const Mat& coords,
                          std::span<const ProjectedPoint> points) {
  if (coords.rows() != static_cast<Eigen::Index>(points.size())) {
    throw std::invalid_argument("coordinate/metadata count mismatch");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(10);
  out << "point,pair,gold,side,x,y\n";
  for (size_t i = 0; i < points.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << points[i].point_id << "," << points[i].pair_id << "," << points[i].gold_score << ","
        << points[i].side << "," << coords(r, 0) << "," << coords(r, 1) << "\n";
  }
}

}  // namespace conpvp
