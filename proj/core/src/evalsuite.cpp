#include "conpvp/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "conpvp/util.hpp"

namespace conpvp {
namespace {

namespace fs = std::filesystem;

std::vector<double> average_ranks(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const size_t n = x.size();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return sxy / std::sqrt(sxx * syy);
}

double cosine_pair(const Mat& a, const Mat& b, Eigen::Index row) {
  const double na = a.row(row).norm();
  const double nb = b.row(row).norm();
  if (na <= 1e-12 || nb <= 1e-12) {
    throw std::runtime_error("zero-norm embedding in similarity prediction");
  }
  return a.row(row).dot(b.row(row)) / (na * nb);
}

int num_classes_of(const std::vector<int>& labels) {
  int max_label = -1;
  for (int label : labels) {
    if (label < 0) throw std::invalid_argument("negative class label");
    max_label = std::max(max_label, label);
  }
  return max_label + 1;
}

std::vector<std::vector<size_t>> indices_by_class(const std::vector<int>& labels,
                                                  int num_classes) {
  std::vector<std::vector<size_t>> by_class(num_classes);
  for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  return by_class;
}

Mat gather_rows(const Mat& m, const std::vector<size_t>& idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (size_t i : idx) out.push_back(labels[i]);
  return out;
}

// --- L-BFGS for the probe objective ---

struct Objective {
  const Mat& x;
  const std::vector<int>& labels;
  int num_classes;
  double l2;

  // theta = [W (d*C, column-major) ; b (C)]
  double eval(const Vec& theta, Vec& grad) const {
    const Eigen::Index n = x.rows(), d = x.cols(), c = num_classes;
    const Eigen::Map<const Mat> w(theta.data(), d, c);
    const Eigen::Map<const Vec> b(theta.data() + d * c, c);
    Mat logits = (x * w).rowwise() + b.transpose();
    double loss = 0.0;
    Mat p(n, c);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double rowmax = logits.row(i).maxCoeff();
      Eigen::ArrayXd e = (logits.row(i).array() - rowmax).exp();
      const double z = e.sum();
      p.row(i) = (e / z).matrix();
      loss -= logits(i, labels[i]) - rowmax - std::log(z);
    }
    loss /= static_cast<double>(n);
    loss += 0.5 * l2 * w.squaredNorm();
    for (Eigen::Index i = 0; i < n; ++i) p(i, labels[i]) -= 1.0;
    p /= static_cast<double>(n);
    grad.resize(theta.size());
    Eigen::Map<Mat> gw(grad.data(), d, c);
    Eigen::Map<Vec> gb(grad.data() + d * c, c);
    gw = x.transpose() * p + l2 * w;
    gb = p.colwise().sum().transpose();
    return loss;
  }
};

Vec lbfgs_minimize(const Objective& objective, Eigen::Index dim, int max_iterations) {
  constexpr int kHistory = 10;
  constexpr double kArmijo = 1e-4;
  Vec theta = Vec::Zero(dim);
  Vec grad;
  double f = objective.eval(theta, grad);
  std::vector<Vec> s_hist, y_hist;
  std::vector<double> rho_hist;

  for (int iter = 0; iter < max_iterations; ++iter) {
    if (grad.norm() <= 1e-7 * std::max(1.0, theta.norm())) break;

    // Two-loop recursion.
    Vec q = grad;
    const int h = static_cast<int>(s_hist.size());
    std::vector<double> alpha(h);
    for (int i = h - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (h > 0) {
      const double gamma = s_hist[h - 1].dot(y_hist[h - 1]) / y_hist[h - 1].squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < h; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Vec direction = -q;
    double descent = grad.dot(direction);
    if (descent >= 0.0) {
      direction = -grad;
      descent = -grad.squaredNorm();
    }

    double step = 1.0;
    Vec theta_next;
    Vec grad_next;
    double f_next = f;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      theta_next = theta + step * direction;
      f_next = objective.eval(theta_next, grad_next);
      if (f_next <= f + kArmijo * step * descent) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    const Vec s = theta_next - theta;
    const Vec y = grad_next - grad;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      s_hist.push_back(s);
      y_hist.push_back(y);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > kHistory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }
    theta = std::move(theta_next);
    grad = std::move(grad_next);
    f = f_next;
  }
  return theta;
}

std::vector<double> default_l2_grid() {
  std::vector<double> grid;
  for (int e = -4; e <= 4; ++e) grid.push_back(std::pow(2.0, e));
  return grid;
}

double accuracy_of(const std::vector<int>& predictions, const std::vector<int>& labels) {
  size_t correct = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (predictions[i] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// Per-class round-robin fold assignment over a seeded shuffle.
std::vector<int> stratified_folds(const std::vector<int>& labels, int num_classes, int folds,
                                  std::mt19937_64& rng) {
  std::vector<int> fold_of(labels.size(), 0);
  auto by_class = indices_by_class(labels, num_classes);
  for (auto& pool : by_class) {
    std::shuffle(pool.begin(), pool.end(), rng);
    for (size_t i = 0; i < pool.size(); ++i) {
      fold_of[pool[i]] = static_cast<int>(i % static_cast<size_t>(folds));
    }
  }
  return fold_of;
}

double cross_validated_accuracy(const Mat& x, const std::vector<int>& labels, int num_classes,
                                double l2, const std::vector<int>& fold_of, int folds) {
  size_t correct = 0;
  for (int fold = 0; fold < folds; ++fold) {
    std::vector<size_t> train_idx, val_idx;
    for (size_t i = 0; i < labels.size(); ++i) {
      (fold_of[i] == fold ? val_idx : train_idx).push_back(i);
    }
    const LogisticModel model =
        fit_logistic(gather_rows(x, train_idx), gather_labels(labels, train_idx), num_classes, l2);
    const std::vector<int> pred = predict_logistic(model, gather_rows(x, val_idx));
    for (size_t i = 0; i < val_idx.size(); ++i) {
      if (pred[i] == labels[val_idx[i]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// --- k-means internals ---

Mat kmeanspp_init(const Mat& points, int k, std::mt19937_64& rng) {
  const Eigen::Index n = points.rows();
  std::uniform_int_distribution<Eigen::Index> pick_first(0, n - 1);
  Mat centers(k, points.cols());
  centers.row(0) = points.row(pick_first(rng));
  Vec d2(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d2(i) = (points.row(i) - centers.row(0)).squaredNorm();
  }
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      const double r = uniform(rng) * total;
      double acc = 0.0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc >= r) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick_first(rng);  // all points coincide with chosen centers
    }
    centers.row(c) = points.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) {
      d2(i) = std::min(d2(i), (points.row(i) - centers.row(c)).squaredNorm());
    }
  }
  return centers;
}

double lloyd_assign(const Mat& points, const Mat& centers, std::vector<int>& assignment,
                    Vec& point_d2) {
  const Eigen::Index n = points.rows();
  const int k = static_cast<int>(centers.rows());
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_c = 0;
    for (int c = 0; c < k; ++c) {
      const double d = (points.row(i) - centers.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        best_c = c;
      }
    }
    assignment[static_cast<size_t>(i)] = best_c;
    point_d2(i) = best;
    inertia += best;
  }
  return inertia;
}

}  // namespace

Mat embed_sentences(MaskEncoder& encoder, std::span<const std::string> sentences,
                    const EvalOptions& options) {
  const Eigen::Index n = static_cast<Eigen::Index>(sentences.size());
  Mat out(n, encoder.config().hidden_dim);
  const int chunk = std::max(options.batch_size, 1);
  for (Eigen::Index begin = 0; begin < n; begin += chunk) {
    const Eigen::Index count = std::min<Eigen::Index>(chunk, n - begin);
    std::vector<std::vector<int>> ids(static_cast<size_t>(count));
    for (Eigen::Index i = 0; i < count; ++i) {
      ids[static_cast<size_t>(i)] = encoder.tokenizer().encode(sentences[begin + i]);
      if (options.drop_tokens != nullptr) {
        auto& v = ids[static_cast<size_t>(i)];
        v.erase(std::remove_if(v.begin(), v.end(),
                               [&](int id) { return options.drop_tokens->count(id) > 0; }),
                v.end());
      }
    }
    out.middleRows(begin, count) =
        encoder.anchor_embed_tokens(ids, EncodePhase::evaluation, false);
  }
  return out;
}

double spearman(std::span<const double> pred, std::span<const double> gold) {
  if (pred.size() != gold.size()) {
    throw std::invalid_argument("spearman inputs differ in length");
  }
  if (pred.size() < 2) {
    throw std::invalid_argument("spearman needs at least two observations");
  }
  auto is_constant = [](std::span<const double> v) {
    return *std::max_element(v.begin(), v.end()) == *std::min_element(v.begin(), v.end());
  };
  if (is_constant(pred) || is_constant(gold)) {
    throw std::invalid_argument("spearman undefined for a constant sequence");
  }
  const std::vector<double> rp = average_ranks(pred);
  const std::vector<double> rg = average_ranks(gold);
  return pearson(rp, rg);
}

size_t StsTask::pair_count() const {
  size_t n = 0;
  for (const StsSubset& s : subsets) n += s.examples.size();
  return n;
}

StsTask load_sts_task(const std::string& spec) {
  std::string name, path;
  const size_t eq = spec.find('=');
  if (eq == std::string::npos) {
    path = spec;
    name = fs::path(spec).stem().string();
  } else {
    name = spec.substr(0, eq);
    path = spec.substr(eq + 1);
  }
  StsTask task;
  task.name = name;
  if (fs::is_directory(path)) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".tsv") {
        files.push_back(entry.path().string());
      }
    }
    std::sort(files.begin(), files.end());
    for (const std::string& file : files) {
      task.subsets.push_back({fs::path(file).stem().string(), load_sts(file)});
    }
    if (task.subsets.empty()) {
      throw std::invalid_argument("no .tsv subsets in directory " + path);
    }
  } else {
    task.subsets.push_back({name, load_sts(path)});
  }
  return task;
}

std::vector<StsTask> load_sts_tasks(std::span<const std::string> specs) {
  std::vector<StsTask> tasks;
  for (const std::string& spec : specs) tasks.push_back(load_sts_task(spec));
  return tasks;
}

StsAggregation sts_aggregation_from_name(const std::string& name) {
  if (name == "mean" || name == "per_subset_then_mean") {
    return StsAggregation::per_subset_then_mean;
  }
  if (name == "concat" || name == "concat_all") return StsAggregation::concat_all;
  throw std::invalid_argument("unknown sts aggregation: " + name);
}

std::string sts_aggregation_name(StsAggregation aggregation) {
  return aggregation == StsAggregation::per_subset_then_mean ? "per_subset_then_mean"
                                                             : "concat_all";
}

StsResult sts_eval(MaskEncoder& encoder, const std::vector<StsTask>& tasks,
                   StsAggregation aggregation, const EvalOptions& options) {
  if (tasks.empty()) throw std::invalid_argument("no STS tasks given");
  StsResult result;
  std::vector<double> task_values;
  for (const StsTask& task : tasks) {
    std::vector<double> subset_scores;
    std::vector<double> pooled_pred, pooled_gold;
    for (const StsSubset& subset : task.subsets) {
      std::vector<std::string> a_side, b_side;
      a_side.reserve(subset.examples.size());
      b_side.reserve(subset.examples.size());
      for (const STSExample& ex : subset.examples) {
        a_side.push_back(ex.sentence_a);
        b_side.push_back(ex.sentence_b);
      }
      const Mat ea = embed_sentences(encoder, a_side, options);
      const Mat eb = embed_sentences(encoder, b_side, options);
      std::vector<double> pred(subset.examples.size());
      std::vector<double> gold(subset.examples.size());
      for (size_t i = 0; i < subset.examples.size(); ++i) {
        pred[i] = cosine_pair(ea, eb, static_cast<Eigen::Index>(i));
        gold[i] = subset.examples[i].gold_score;
      }
      subset_scores.push_back(spearman(pred, gold));
      pooled_pred.insert(pooled_pred.end(), pred.begin(), pred.end());
      pooled_gold.insert(pooled_gold.end(), gold.begin(), gold.end());
    }
    double value = 0.0;
    if (aggregation == StsAggregation::per_subset_then_mean) {
      value = std::accumulate(subset_scores.begin(), subset_scores.end(), 0.0) /
              static_cast<double>(subset_scores.size());
    } else {
      value = spearman(pooled_pred, pooled_gold);
    }
    task_values.push_back(value);
    EvalReport report;
    report.task_name = task.name;
    report.metric_name = "spearman";
    report.value = value;
    report.metadata["aggregation"] = sts_aggregation_name(aggregation);
    report.metadata["pairs"] = std::to_string(task.pair_count());
    result.reports.push_back(std::move(report));
  }
  result.average = std::accumulate(task_values.begin(), task_values.end(), 0.0) /
                   static_cast<double>(task_values.size());
  EvalReport avg;
  avg.task_name = "Avg.";
  avg.metric_name = "spearman";
  avg.value = result.average;
  avg.metadata["aggregation"] = sts_aggregation_name(aggregation);
  avg.metadata["tasks"] = std::to_string(tasks.size());
  result.reports.push_back(std::move(avg));
  return result;
}

LogisticModel fit_logistic(const Mat& x, const std::vector<int>& labels, int num_classes,
                           double l2, int max_iterations) {
  if (x.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw std::invalid_argument("embedding/label count mismatch");
  }
  if (num_classes < 2) throw std::invalid_argument("need at least two classes");
  const Objective objective{x, labels, num_classes, l2};
  const Vec theta =
      lbfgs_minimize(objective, x.cols() * num_classes + num_classes, max_iterations);
  LogisticModel model;
  model.weights = Eigen::Map<const Mat>(theta.data(), x.cols(), num_classes);
  model.bias = Eigen::Map<const Vec>(theta.data() + x.cols() * num_classes, num_classes);
  return model;
}

std::vector<int> predict_logistic(const LogisticModel& model, const Mat& x) {
  const Mat logits = (x * model.weights).rowwise() + model.bias.transpose();
  std::vector<int> predictions(static_cast<size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    predictions[static_cast<size_t>(i)] = static_cast<int>(best);
  }
  return predictions;
}

EvalReport transfer_probe(const Mat& embeddings, const std::vector<int>& labels,
                          const TransferOptions& options) {
  const int num_classes = num_classes_of(labels);
  if (num_classes < 2) throw std::invalid_argument("transfer probe needs at least two classes");
  auto by_class = indices_by_class(labels, num_classes);
  std::mt19937_64 rng(mix_seed(options.seed, 7));
  std::vector<size_t> train_idx, test_idx;
  for (auto& pool : by_class) {
    if (pool.size() < 2) {
      throw std::invalid_argument("every class needs at least two examples to split");
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    const size_t test_count = std::max<size_t>(
        1, static_cast<size_t>(std::lround(options.test_fraction *
                                           static_cast<double>(pool.size()))));
    for (size_t i = 0; i < pool.size(); ++i) {
      (i < test_count ? test_idx : train_idx).push_back(pool[i]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return transfer_probe_split(gather_rows(embeddings, train_idx),
                              gather_labels(labels, train_idx),
                              gather_rows(embeddings, test_idx), gather_labels(labels, test_idx),
                              options);
}

EvalReport transfer_probe_split(const Mat& train_embeddings, const std::vector<int>& train_labels,
                                const Mat& test_embeddings, const std::vector<int>& test_labels,
                                const TransferOptions& options) {
  const int num_classes = std::max(num_classes_of(train_labels), num_classes_of(test_labels));
  if (num_classes < 2) throw std::invalid_argument("transfer probe needs at least two classes");
  const std::vector<double> grid = options.l2_grid.empty() ? default_l2_grid() : options.l2_grid;
  const int runs = std::max(options.runs, 1);

  std::vector<double> per_run;
  std::vector<std::string> chosen_l2;
  for (int run = 0; run < runs; ++run) {
    std::mt19937_64 rng(mix_seed(options.seed, 1000 + static_cast<uint64_t>(run)));
    std::vector<size_t> subset;
    if (options.few_shot > 0) {
      auto by_class = indices_by_class(train_labels, num_classes);
      for (auto& pool : by_class) {
        if (static_cast<int>(pool.size()) < options.few_shot) {
          throw std::invalid_argument("class has fewer than few_shot training examples");
        }
        std::shuffle(pool.begin(), pool.end(), rng);
        subset.insert(subset.end(), pool.begin(), pool.begin() + options.few_shot);
      }
      std::sort(subset.begin(), subset.end());
    } else {
      subset.resize(train_labels.size());
      std::iota(subset.begin(), subset.end(), size_t{0});
    }
    const Mat x = gather_rows(train_embeddings, subset);
    const std::vector<int> y = gather_labels(train_labels, subset);

    size_t min_class = std::numeric_limits<size_t>::max();
    for (const auto& pool : indices_by_class(y, num_classes)) {
      min_class = std::min(min_class, pool.size());
    }
    const int folds = static_cast<int>(
        std::min<size_t>(static_cast<size_t>(options.cv_folds), min_class));
    double best_l2 = 1.0;
    if (folds >= 2) {
      const std::vector<int> fold_of = stratified_folds(y, num_classes, folds, rng);
      double best_acc = -1.0;
      for (double l2 : grid) {  // ties resolve to the larger strength
        const double acc = cross_validated_accuracy(x, y, num_classes, l2, fold_of, folds);
        if (acc >= best_acc) {
          best_acc = acc;
          best_l2 = l2;
        }
      }
    }
    const LogisticModel model = fit_logistic(x, y, num_classes, best_l2);
    const std::vector<int> pred = predict_logistic(model, test_embeddings);
    per_run.push_back(accuracy_of(pred, test_labels));
    chosen_l2.push_back(std::to_string(best_l2));
  }

  EvalReport report;
  report.metric_name = "accuracy";
  report.value = std::accumulate(per_run.begin(), per_run.end(), 0.0) /
                 static_cast<double>(per_run.size());
  if (runs > 1) report.per_run_values = per_run;
  report.metadata["classes"] = std::to_string(num_classes);
  report.metadata["few_shot"] = std::to_string(options.few_shot);
  report.metadata["runs"] = std::to_string(runs);
  std::string l2s = chosen_l2.empty() ? "" : chosen_l2.front();
  for (size_t i = 1; i < chosen_l2.size(); ++i) l2s += "," + chosen_l2[i];
  report.metadata["l2"] = l2s;
  return report;
}

std::vector<int> kmeans(const Mat& points, int k, uint64_t seed, const KMeansOptions& options) {
  const Eigen::Index n = points.rows();
  if (k < 1 || k > n) {
    throw std::invalid_argument("k must be in [1, number of points]");
  }
  std::mt19937_64 rng(seed);
  std::vector<int> best_assignment(static_cast<size_t>(n), 0);
  double best_inertia = std::numeric_limits<double>::infinity();

  for (int restart = 0; restart < std::max(options.restarts, 1); ++restart) {
    Mat centers = kmeanspp_init(points, k, rng);
    std::vector<int> assignment(static_cast<size_t>(n), 0);
    Vec point_d2(n);
    double prev_inertia = std::numeric_limits<double>::infinity();
    double inertia = 0.0;
    for (int iter = 0; iter < options.max_iterations; ++iter) {
      inertia = lloyd_assign(points, centers, assignment, point_d2);
      if (prev_inertia - inertia <= options.tolerance * prev_inertia) break;
      prev_inertia = inertia;

      Mat sums = Mat::Zero(k, points.cols());
      std::vector<Eigen::Index> counts(static_cast<size_t>(k), 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(assignment[static_cast<size_t>(i)]) += points.row(i);
        ++counts[static_cast<size_t>(assignment[static_cast<size_t>(i)])];
      }
      Vec claimable = point_d2;  // farthest points reseed empty clusters
      for (int c = 0; c < k; ++c) {
        if (counts[static_cast<size_t>(c)] > 0) {
          centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<size_t>(c)]);
        } else {
          Eigen::Index farthest = 0;
          claimable.maxCoeff(&farthest);
          centers.row(c) = points.row(farthest);
          claimable(farthest) = -1.0;
        }
      }
    }
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_assignment = assignment;
    }
  }
  return best_assignment;
}

long long hungarian_max_agreement(const std::vector<std::vector<long long>>& contingency) {
  const int rows = static_cast<int>(contingency.size());
  if (rows == 0) return 0;
  const int cols = static_cast<int>(contingency[0].size());
  const int n = std::max(rows, cols);
  long long max_entry = 0;
  for (const auto& row : contingency) {
    if (static_cast<int>(row.size()) != cols) {
      throw std::invalid_argument("ragged contingency matrix");
    }
    for (long long v : row) {
      if (v < 0) throw std::invalid_argument("negative contingency count");
      max_entry = std::max(max_entry, v);
    }
  }
  // Square min-cost assignment on cost = max_entry - count (padding = max_entry).
  auto cost = [&](int i, int j) -> long long {
    if (i < rows && j < cols) return max_entry - contingency[i][j];
    return max_entry;
  };
  const long long kInf = std::numeric_limits<long long>::max() / 4;
  std::vector<long long> u(n + 1, 0), v(n + 1, 0), minv(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      long long delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const long long cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  long long agreement = 0;
  for (int j = 1; j <= n; ++j) {
    const int i = p[j];
    if (i >= 1 && i <= rows && j <= cols) {
      agreement += contingency[i - 1][j - 1];
    }
  }
  return agreement;
}

double cluster_accuracy(const std::vector<int>& assignment, const std::vector<int>& gold) {
  if (assignment.size() != gold.size() || assignment.empty()) {
    throw std::invalid_argument("assignment/gold size mismatch");
  }
  const int clusters = num_classes_of(assignment);
  const int classes = num_classes_of(gold);
  std::vector<std::vector<long long>> contingency(
      static_cast<size_t>(clusters), std::vector<long long>(static_cast<size_t>(classes), 0));
  for (size_t i = 0; i < gold.size(); ++i) {
    ++contingency[assignment[i]][gold[i]];
  }
  return static_cast<double>(hungarian_max_agreement(contingency)) /
         static_cast<double>(gold.size());
}

EvalReport kmeans_cluster_accuracy(const Mat& embeddings, const std::vector<int>& gold_labels,
                                   int runs, uint64_t seed, const KMeansOptions& options) {
  const int k = num_classes_of(gold_labels);
  if (k > embeddings.rows()) {
    throw std::invalid_argument("more gold classes than points");
  }
  std::vector<double> per_run;
  for (int run = 0; run < std::max(runs, 1); ++run) {
    const std::vector<int> assignment =
        kmeans(embeddings, k, mix_seed(seed, static_cast<uint64_t>(run)), options);
    per_run.push_back(cluster_accuracy(assignment, gold_labels));
  }
  EvalReport report;
  report.metric_name = "accuracy";
  report.value = std::accumulate(per_run.begin(), per_run.end(), 0.0) /
                 static_cast<double>(per_run.size());
  if (per_run.size() > 1) report.per_run_values = per_run;
  report.metadata["k"] = std::to_string(k);
  report.metadata["runs"] = std::to_string(per_run.size());
  return report;
}

}  // namespace conpvp
