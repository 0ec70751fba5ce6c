#include "qvuln/vuln_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"
#include "qvuln/neural_net.hpp"
#include "qvuln/rng.hpp"

namespace qvuln {
namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr int kFormatVersion = 1;

// Class 0 = the LLM answers the question correctly, class 1 = it does not.
int label_class(bool llm_correct) { return llm_correct ? 0 : 1; }

ProbPair make_probs(double p_correct) {
  p_correct = std::clamp(p_correct, 0.0, 1.0);
  return ProbPair{p_correct, 1.0 - p_correct};
}

// ---------------------------------------------------------------------------
// Bag-of-words feature space shared by the non-neural families.

struct BowVocab {
  std::vector<std::string> words;  // sorted unique
  std::unordered_map<std::string, int> index;

  static BowVocab from_words(std::vector<std::string> sorted_words) {
    BowVocab v;
    v.words = std::move(sorted_words);
    for (std::size_t i = 0; i < v.words.size(); ++i)
      v.index.emplace(v.words[i], static_cast<int>(i));
    return v;
  }
};

std::vector<std::string> text_words(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& w : segment(text).words) {
    std::string lw = w;
    for (char& c : lw) {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    out.push_back(std::move(lw));
  }
  return out;
}

BowVocab build_bow(const LabeledSet& train) {
  std::vector<std::string> all;
  for (const auto& item : train) {
    auto ws = text_words(item.question.stem);
    all.insert(all.end(), ws.begin(), ws.end());
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return BowVocab::from_words(std::move(all));
}

std::vector<double> bow_counts(const std::string& text, const BowVocab& vocab) {
  std::vector<double> counts(vocab.words.size(), 0.0);
  for (const auto& w : text_words(text)) {
    auto it = vocab.index.find(w);
    if (it != vocab.index.end()) counts[static_cast<std::size_t>(it->second)] += 1.0;
  }
  return counts;
}

void require_both_classes(const LabeledSet& train) {
  bool has_true = false, has_false = false;
  for (const auto& item : train) (item.llm_correct ? has_true : has_false) = true;
  if (!has_true || !has_false)
    throw std::invalid_argument("training data has an empty class");
}

// ---------------------------------------------------------------------------
// Naive Bayes (multinomial, Laplace alpha = 1)

class NbcClassifier final : public TrainedClassifier {
 public:
  ModelFamily family() const override { return ModelFamily::nbc; }

  ProbPair predict_proba(const Question& q) const override {
    std::array<double, 2> logp = log_prior;
    for (const auto& w : text_words(q.stem)) {
      auto it = vocab.index.find(w);
      if (it == vocab.index.end()) continue;
      std::size_t wi = static_cast<std::size_t>(it->second);
      logp[0] += log_lik[wi];
      logp[1] += log_lik[vocab.words.size() + wi];
    }
    double m = std::max(logp[0], logp[1]);
    double e0 = std::exp(logp[0] - m), e1 = std::exp(logp[1] - m);
    return make_probs(e0 / (e0 + e1));
  }

  BowVocab vocab;
  std::array<double, 2> log_prior{};
  std::vector<double> log_lik;  // class 0 block, then class 1 block
};

std::unique_ptr<TrainedClassifier> train_nbc(const LabeledSet& train) {
  require_both_classes(train);
  auto model = std::make_unique<NbcClassifier>();
  model->vocab = build_bow(train);
  const std::size_t V = model->vocab.words.size();

  std::array<double, 2> doc_count{};
  std::vector<double> word_count(2 * V, 0.0);
  std::array<double, 2> total_words{};
  for (const auto& item : train) {
    int c = label_class(item.llm_correct);
    doc_count[static_cast<std::size_t>(c)] += 1.0;
    for (const auto& w : text_words(item.question.stem)) {
      auto it = model->vocab.index.find(w);
      std::size_t wi = static_cast<std::size_t>(it->second);
      word_count[static_cast<std::size_t>(c) * V + wi] += 1.0;
      total_words[static_cast<std::size_t>(c)] += 1.0;
    }
  }
  const double n_docs = doc_count[0] + doc_count[1];
  model->log_prior = {std::log(doc_count[0] / n_docs), std::log(doc_count[1] / n_docs)};
  model->log_lik.resize(2 * V);
  for (std::size_t c = 0; c < 2; ++c) {
    double denom = total_words[c] + static_cast<double>(V);  // Laplace alpha=1
    for (std::size_t w = 0; w < V; ++w)
      model->log_lik[c * V + w] = std::log((word_count[c * V + w] + 1.0) / denom);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Logistic regression (full-batch gradient descent, 200 epochs, lr 0.1)

class LogisticClassifier final : public TrainedClassifier {
 public:
  ModelFamily family() const override { return ModelFamily::logistic; }

  ProbPair predict_proba(const Question& q) const override {
    auto x = bow_counts(q.stem, vocab);
    double z = bias;
    for (std::size_t i = 0; i < x.size(); ++i) z += weights[i] * x[i];
    return make_probs(1.0 / (1.0 + std::exp(-z)));
  }

  BowVocab vocab;
  std::vector<double> weights;
  double bias = 0.0;
};

std::unique_ptr<TrainedClassifier> train_logistic(const LabeledSet& train) {
  require_both_classes(train);
  auto model = std::make_unique<LogisticClassifier>();
  model->vocab = build_bow(train);
  const std::size_t V = model->vocab.words.size();
  const std::size_t N = train.size();

  std::vector<std::vector<double>> X;
  std::vector<double> y;
  X.reserve(N);
  y.reserve(N);
  for (const auto& item : train) {
    X.push_back(bow_counts(item.question.stem, model->vocab));
    y.push_back(item.llm_correct ? 1.0 : 0.0);
  }

  model->weights.assign(V, 0.0);
  constexpr int kEpochs = 200;
  constexpr double kLr = 0.1;
  std::vector<double> grad(V);
  for (int epoch = 0; epoch < kEpochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_b = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      double z = model->bias;
      for (std::size_t j = 0; j < V; ++j) z += model->weights[j] * X[i][j];
      double err = 1.0 / (1.0 + std::exp(-z)) - y[i];
      for (std::size_t j = 0; j < V; ++j) grad[j] += err * X[i][j];
      grad_b += err;
    }
    for (std::size_t j = 0; j < V; ++j)
      model->weights[j] -= kLr * grad[j] / static_cast<double>(N);
    model->bias -= kLr * grad_b / static_cast<double>(N);
  }
  return model;
}

// ---------------------------------------------------------------------------
// CART / random forest over text-metric features + bag-of-words counts

struct TreeFeatureSpace {
  BowVocab vocab;
  WordList familiar;

  std::size_t dimension() const { return kFeatureIds.size() + vocab.words.size(); }

  std::vector<double> features(const Question& q) const {
    FeatureVector fv = readability(q.stem, familiar);
    std::vector<double> out(fv.values.begin(), fv.values.end());
    auto counts = bow_counts(q.stem, vocab);
    out.insert(out.end(), counts.begin(), counts.end());
    return out;
  }
};

struct TreeNode {
  int feature = -1;  // -1 = leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  std::array<double, 2> probs{};
};

struct DecisionTreeImpl {
  std::vector<TreeNode> nodes;

  std::array<double, 2> predict(const std::vector<double>& x) const {
    int at = 0;
    while (nodes[static_cast<std::size_t>(at)].feature >= 0) {
      const TreeNode& n = nodes[static_cast<std::size_t>(at)];
      at = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(at)].probs;
  }
};

constexpr int kTreeMaxDepth = 16;
constexpr int kTreeMinLeaf = 2;

struct TreeBuilder {
  const std::vector<std::vector<double>>& X;
  const std::vector<int>& y;
  bool subsample_sqrt = false;
  Rng* rng = nullptr;
  DecisionTreeImpl tree;

  std::vector<int> candidate_features() {
    const std::size_t d = X.front().size();
    std::vector<int> all(d);
    std::iota(all.begin(), all.end(), 0);
    if (!subsample_sqrt || rng == nullptr) return all;
    std::size_t k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::sqrt(static_cast<double>(d))));
    // partial Fisher-Yates, then sorted for a deterministic scan order
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng->below(d - i));
      std::swap(all[i], all[j]);
    }
    all.resize(k);
    std::sort(all.begin(), all.end());
    return all;
  }

  int build(std::vector<std::size_t> indices, int depth) {
    const std::size_t n = indices.size();
    std::array<double, 2> counts{};
    for (std::size_t i : indices) counts[static_cast<std::size_t>(y[i])] += 1.0;

    TreeNode node;
    node.probs = {counts[0] / static_cast<double>(n), counts[1] / static_cast<double>(n)};
    int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(node);

    bool pure = counts[0] == 0.0 || counts[1] == 0.0;
    if (pure || depth >= kTreeMaxDepth || n < 2 * kTreeMinLeaf) return node_id;

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_gini = std::numeric_limits<double>::infinity();

    std::vector<std::pair<double, int>> column(n);
    for (int f : candidate_features()) {
      for (std::size_t i = 0; i < n; ++i)
        column[i] = {X[indices[i]][static_cast<std::size_t>(f)], y[indices[i]]};
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;

      double left0 = 0, left1 = 0;
      const double total0 = counts[0], total1 = counts[1];
      for (std::size_t i = 0; i + 1 < n; ++i) {
        if (column[i].second == 0) ++left0;
        else ++left1;
        if (column[i].first == column[i + 1].first) continue;
        double nl = static_cast<double>(i + 1), nr = static_cast<double>(n - i - 1);
        if (nl < kTreeMinLeaf || nr < kTreeMinLeaf) continue;
        double r0 = total0 - left0, r1 = total1 - left1;
        double gl = 1.0 - (left0 / nl) * (left0 / nl) - (left1 / nl) * (left1 / nl);
        double gr = 1.0 - (r0 / nr) * (r0 / nr) - (r1 / nr) * (r1 / nr);
        double g = (nl * gl + nr * gr) / static_cast<double>(n);
        if (g < best_gini - 1e-12) {
          best_gini = g;
          best_feature = f;
          best_threshold = (column[i].first + column[i + 1].first) / 2.0;
        }
      }
    }
    if (best_feature < 0) return node_id;

    std::vector<std::size_t> left_idx, right_idx;
    for (std::size_t i : indices) {
      if (X[i][static_cast<std::size_t>(best_feature)] <= best_threshold)
        left_idx.push_back(i);
      else
        right_idx.push_back(i);
    }
    indices.clear();
    indices.shrink_to_fit();

    tree.nodes[static_cast<std::size_t>(node_id)].feature = best_feature;
    tree.nodes[static_cast<std::size_t>(node_id)].threshold = best_threshold;
    int left = build(std::move(left_idx), depth + 1);
    tree.nodes[static_cast<std::size_t>(node_id)].left = left;
    int right = build(std::move(right_idx), depth + 1);
    tree.nodes[static_cast<std::size_t>(node_id)].right = right;
    return node_id;
  }
};

DecisionTreeImpl build_tree(const std::vector<std::vector<double>>& X,
                            const std::vector<int>& y,
                            std::vector<std::size_t> indices, bool subsample_sqrt,
                            Rng* rng) {
  TreeBuilder builder{X, y, subsample_sqrt, rng, {}};
  builder.build(std::move(indices), 0);
  return std::move(builder.tree);
}

class TreeClassifier final : public TrainedClassifier {
 public:
  ModelFamily family() const override { return ModelFamily::tree; }

  ProbPair predict_proba(const Question& q) const override {
    auto probs = tree.predict(space.features(q));
    return make_probs(probs[0]);
  }

  TreeFeatureSpace space;
  DecisionTreeImpl tree;
};

class ForestClassifier final : public TrainedClassifier {
 public:
  ModelFamily family() const override { return ModelFamily::forest; }

  ProbPair predict_proba(const Question& q) const override {
    auto x = space.features(q);
    double p0 = 0.0;
    for (const auto& t : trees) p0 += t.predict(x)[0];
    return make_probs(p0 / static_cast<double>(trees.size()));
  }

  TreeFeatureSpace space;
  std::vector<DecisionTreeImpl> trees;
  ForestOptions options;
};

TreeFeatureSpace make_feature_space(const LabeledSet& train, const WordList& familiar) {
  TreeFeatureSpace space;
  space.vocab = build_bow(train);
  space.familiar = familiar;
  return space;
}

void build_design_matrix(const LabeledSet& train, const TreeFeatureSpace& space,
                         std::vector<std::vector<double>>& X, std::vector<int>& y) {
  X.reserve(train.size());
  y.reserve(train.size());
  for (const auto& item : train) {
    X.push_back(space.features(item.question));
    y.push_back(label_class(item.llm_correct));
  }
}

std::unique_ptr<TrainedClassifier> train_tree(const LabeledSet& train,
                                              const WordList& familiar) {
  require_both_classes(train);
  auto model = std::make_unique<TreeClassifier>();
  model->space = make_feature_space(train, familiar);
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  build_design_matrix(train, model->space, X, y);
  std::vector<std::size_t> all(train.size());
  std::iota(all.begin(), all.end(), 0);
  model->tree = build_tree(X, y, std::move(all), false, nullptr);
  return model;
}

// ---------------------------------------------------------------------------
// KNN (cosine distance over tf-idf)

class KnnClassifier final : public TrainedClassifier {
 public:
  ModelFamily family() const override { return ModelFamily::knn; }

  ProbPair predict_proba(const Question& q) const override {
    std::vector<double> v = transform(q.stem);
    std::vector<std::pair<double, std::size_t>> dists(train_vectors.size());
    for (std::size_t i = 0; i < train_vectors.size(); ++i) {
      double dot = 0.0;
      const auto& t = train_vectors[i];
      for (std::size_t j = 0; j < v.size(); ++j) dot += v[j] * t[j];
      dists[i] = {1.0 - dot, i};
    }
    std::sort(dists.begin(), dists.end());
    std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), dists.size());
    double votes0 = 0.0;
    for (std::size_t i = 0; i < kk; ++i) {
      if (labels[dists[i].second] == 0) votes0 += 1.0;
    }
    return make_probs(votes0 / static_cast<double>(kk));
  }

  std::vector<double> transform(const std::string& text) const {
    std::vector<double> v = bow_counts(text, vocab);
    double norm = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] *= idf[j];
      norm += v[j] * v[j];
    }
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
    }
    return v;
  }

  BowVocab vocab;
  std::vector<double> idf;
  std::vector<std::vector<double>> train_vectors;  // tf-idf, l2-normalized
  std::vector<int> labels;
  int k = 5;
};

std::unique_ptr<TrainedClassifier> train_knn_impl(const LabeledSet& train, int k) {
  require_both_classes(train);
  if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
  auto model = std::make_unique<KnnClassifier>();
  model->k = k;
  model->vocab = build_bow(train);
  const std::size_t V = model->vocab.words.size();
  const double N = static_cast<double>(train.size());

  std::vector<double> df(V, 0.0);
  std::vector<std::vector<double>> counts;
  counts.reserve(train.size());
  for (const auto& item : train) {
    counts.push_back(bow_counts(item.question.stem, model->vocab));
    for (std::size_t j = 0; j < V; ++j) {
      if (counts.back()[j] > 0.0) df[j] += 1.0;
    }
    model->labels.push_back(label_class(item.llm_correct));
  }
  model->idf.resize(V);
  for (std::size_t j = 0; j < V; ++j)
    model->idf[j] = std::log((1.0 + N) / (1.0 + df[j])) + 1.0;

  for (auto& c : counts) {
    double norm = 0.0;
    for (std::size_t j = 0; j < V; ++j) {
      c[j] *= model->idf[j];
      norm += c[j] * c[j];
    }
    if (norm > 0.0) {
      norm = std::sqrt(norm);
      for (double& x : c) x /= norm;
    }
    model->train_vectors.push_back(std::move(c));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Neural classifier wrapper

class NeuralClassifier final : public TrainedClassifier {
 public:
  NeuralClassifier(Vocab vocab, NeuralNet net, std::size_t max_len)
      : vocab_(std::move(vocab)), net_(std::move(net)), max_len_(max_len) {}

  ModelFamily family() const override { return ModelFamily::neural; }

  ProbPair predict_proba(const Question& q) const override {
    Encoding enc = encode(q.stem, vocab_, max_len_);
    auto probs = net_.predict_proba(enc.ids, enc.attention_mask);
    return make_probs(probs[0]);
  }

  const Vocab& vocab() const { return vocab_; }
  const NeuralNet& net() const { return net_; }
  std::size_t max_len() const { return max_len_; }

 private:
  Vocab vocab_;
  NeuralNet net_;
  std::size_t max_len_;
};

}  // namespace

ModelFamily model_family_from_string(const std::string& name) {
  if (name == "neural") return ModelFamily::neural;
  if (name == "nbc") return ModelFamily::nbc;
  if (name == "logistic") return ModelFamily::logistic;
  if (name == "tree") return ModelFamily::tree;
  if (name == "forest") return ModelFamily::forest;
  if (name == "knn") return ModelFamily::knn;
  throw std::invalid_argument("unknown model family \"" + name + "\"");
}

std::string to_string(ModelFamily family) {
  switch (family) {
    case ModelFamily::neural: return "neural";
    case ModelFamily::nbc: return "nbc";
    case ModelFamily::logistic: return "logistic";
    case ModelFamily::tree: return "tree";
    case ModelFamily::forest: return "forest";
    case ModelFamily::knn: return "knn";
  }
  throw std::logic_error("unreachable family");
}

std::map<std::string, bool> labels_from_responses(
    const std::vector<ModelResponse>& responses) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> votes;  // correct, total
  for (const auto& r : responses) {
    auto& v = votes[r.question_id];
    if (r.correct.value_or(false)) ++v.first;
    ++v.second;
  }
  std::map<std::string, bool> labels;
  for (const auto& [id, v] : votes) labels[id] = v.first * 2 >= v.second;
  return labels;
}

double majority_baseline(const LabeledSet& set) {
  if (set.empty()) return 0.0;
  std::size_t n_true = 0;
  for (const auto& item : set) {
    if (item.llm_correct) ++n_true;
  }
  return static_cast<double>(std::max(n_true, set.size() - n_true)) /
         static_cast<double>(set.size());
}

SplitResult split(const QuestionBank& bank, const std::map<std::string, bool>& labels,
                  const SplitSpec& spec) {
  const std::size_t n = bank.size();
  if (n < 20) throw std::invalid_argument("split: need at least 20 questions");
  if (spec.train_frac < 0 || spec.val_frac < 0 || spec.test_frac < 0 ||
      std::abs(spec.train_frac + spec.val_frac + spec.test_frac - 1.0) > 1e-9)
    throw std::invalid_argument("split: fractions must be nonnegative and sum to 1");
  for (const auto& q : bank.questions) {
    if (!labels.count(q.id))
      throw std::invalid_argument("split: missing label for question " + q.id);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  rng.shuffle(order);

  auto floor_frac = [n](double frac) {
    return static_cast<std::size_t>(
        std::floor(frac * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_test = floor_frac(spec.test_frac);
  const std::size_t n_val = floor_frac(spec.val_frac);

  SplitResult out;
  for (std::size_t i = 0; i < n; ++i) {
    const Question& q = bank.questions[order[i]];
    LabeledQuestion item{q, labels.at(q.id)};
    if (i < n_test) out.test.push_back(std::move(item));
    else if (i < n_test + n_val) out.val.push_back(std::move(item));
    else out.train.push_back(std::move(item));
  }
  return out;
}

std::unique_ptr<TrainedClassifier> train_neural(const LabeledSet& train,
                                                const LabeledSet& val,
                                                const TrainingConfig& cfg,
                                                const Vocab& vocab,
                                                std::vector<EpochLog>* log) {
  if (train.empty()) throw std::invalid_argument("train_neural: empty training set");
  if (cfg.learning_rate <= 0 || cfg.epsilon <= 0 || cfg.epochs < 1 ||
      cfg.batch_size < 1 || cfg.embed_dim < 1)
    throw std::invalid_argument("train_neural: bad training config");

  auto encode_set = [&](const LabeledSet& set) {
    std::vector<NeuralNet::Sample> samples;
    samples.reserve(set.size());
    for (const auto& item : set) {
      Encoding enc = encode(item.question.stem, vocab, cfg.max_len);
      samples.push_back({enc.ids, enc.attention_mask, label_class(item.llm_correct)});
    }
    return samples;
  };
  std::vector<NeuralNet::Sample> train_samples = encode_set(train);
  std::vector<NeuralNet::Sample> val_samples = encode_set(val);

  NeuralNet net(vocab.size(), static_cast<std::size_t>(cfg.embed_dim));
  net.init_random(cfg.seed);
  Rng rng(cfg.seed ^ 0x5DEECE66Dull);

  std::vector<double> m(net.params().size(), 0.0);
  std::vector<double> v(net.params().size(), 0.0);
  std::vector<double> grad;
  std::size_t adam_t = 0;

  auto val_accuracy = [&]() {
    if (val_samples.empty()) return 0.0;
    std::size_t hit = 0;
    for (const auto& s : val_samples) {
      auto p = net.predict_proba(s.ids, s.mask);
      int pred = p[0] >= p[1] ? 0 : 1;
      if (pred == s.label) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(val_samples.size());
  };

  std::vector<double> best_params = net.params();
  double best_val = -1.0;

  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<NeuralNet::Sample> batch;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      batch.clear();
      for (std::size_t i = at;
           i < std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size)); ++i)
        batch.push_back(train_samples[order[i]]);
      double loss = net.batch_loss_and_grad(batch, grad, cfg.dropout_prob, &rng);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_neural: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " +
                                 std::to_string(n_batches) + " (lr=" +
                                 std::to_string(cfg.learning_rate) + ")");
      epoch_loss += loss;
      ++n_batches;

      ++adam_t;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_t));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_t));
      auto& params = net.params();
      for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        params[i] -= cfg.learning_rate * (m[i] / bc1) /
                     (std::sqrt(v[i] / bc2) + cfg.epsilon);
      }
    }
    double acc = val_accuracy();
    if (log != nullptr)
      log->push_back({epoch, epoch_loss / static_cast<double>(std::max<std::size_t>(n_batches, 1)), acc});
    if (acc > best_val) {
      best_val = acc;
      best_params = net.params();
    }
  }
  net.params() = std::move(best_params);

  Vocab vocab_copy = Vocab::from_tokens(vocab.tokens());
  return std::make_unique<NeuralClassifier>(std::move(vocab_copy), std::move(net),
                                            cfg.max_len);
}

std::unique_ptr<TrainedClassifier> train_baseline(ModelFamily family,
                                                  const LabeledSet& train,
                                                  const WordList& familiar) {
  switch (family) {
    case ModelFamily::nbc: return train_nbc(train);
    case ModelFamily::logistic: return train_logistic(train);
    case ModelFamily::tree: return train_tree(train, familiar);
    case ModelFamily::forest: return train_forest(train, familiar, ForestOptions{});
    case ModelFamily::knn: return train_knn_impl(train, 5);
    case ModelFamily::neural:
      throw std::invalid_argument("use train_neural for the neural family");
  }
  throw std::logic_error("unreachable family");
}

std::unique_ptr<TrainedClassifier> train_forest(const LabeledSet& train,
                                                const WordList& familiar,
                                                const ForestOptions& options) {
  require_both_classes(train);
  if (options.n_trees < 1) throw std::invalid_argument("forest: n_trees must be >= 1");
  auto model = std::make_unique<ForestClassifier>();
  model->options = options;
  model->space = make_feature_space(train, familiar);
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  build_design_matrix(train, model->space, X, y);

  const std::size_t n = train.size();
  Rng master(options.seed);
  for (int t = 0; t < options.n_trees; ++t) {
    Rng tree_rng(master.next_u64());
    std::vector<std::size_t> indices(n);
    if (options.bootstrap) {
      for (std::size_t i = 0; i < n; ++i)
        indices[i] = static_cast<std::size_t>(tree_rng.below(n));
    } else {
      std::iota(indices.begin(), indices.end(), 0);
    }
    model->trees.push_back(build_tree(X, y, std::move(indices),
                                      options.feature_subsample_sqrt,
                                      options.feature_subsample_sqrt ? &tree_rng
                                                                     : nullptr));
  }
  return model;
}

std::unique_ptr<TrainedClassifier> train_knn(const LabeledSet& train, int k) {
  return train_knn_impl(train, k);
}

EvalResult evaluate(const TrainedClassifier& model, const LabeledSet& test) {
  if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
  struct Scored {
    bool predicted_correct;
    bool label;
    double confidence;
  };
  std::vector<Scored> scored;
  scored.reserve(test.size());
  EvalResult out;
  for (const auto& item : test) {
    ProbPair p = model.predict_proba(item.question);
    bool pred = p.p_correct >= 0.5;
    double conf = std::max(p.p_correct, p.p_incorrect);
    scored.push_back({pred, item.llm_correct, conf});
    if (pred && item.llm_correct) ++out.tp;
    else if (pred && !item.llm_correct) ++out.fp;
    else if (!pred && item.llm_correct) ++out.fn;
    else ++out.tn;
  }
  out.accuracy = static_cast<double>(out.tp + out.tn) / static_cast<double>(test.size());

  for (int k = 50; k <= 95; k += 5) {
    ThresholdRow row;
    row.tau = static_cast<double>(k) / 100.0;
    std::size_t hit = 0;
    for (const auto& s : scored) {
      if (s.confidence + 1e-12 < row.tau) continue;
      ++row.covered;
      if (s.predicted_correct == s.label) ++hit;
    }
    row.coverage = static_cast<double>(row.covered) / static_cast<double>(test.size());
    row.accuracy = row.covered == 0
                       ? 0.0
                       : static_cast<double>(hit) / static_cast<double>(row.covered);
    out.thresholds.push_back(row);
  }
  return out;
}

std::vector<VulnScore> score_bank(const TrainedClassifier& model,
                                  const QuestionBank& bank,
                                  std::vector<std::string>* errors) {
  std::vector<VulnScore> out;
  out.reserve(bank.size());
  for (const auto& q : bank.questions) {
    try {
      ProbPair p = model.predict_proba(q);
      out.push_back({q.id, p.p_correct, std::max(p.p_correct, p.p_incorrect)});
    } catch (const std::exception& ex) {
      if (errors != nullptr) errors->push_back(q.id + ": " + ex.what());
    }
  }
  return out;
}

FilterResult filter_bank(const QuestionBank& bank,
                         const std::vector<VulnScore>& scores, double remove_frac) {
  if (remove_frac < 0.0 || remove_frac > 1.0)
    throw std::invalid_argument("remove_frac must be in [0,1]");
  std::map<std::string, double> by_id;
  for (const auto& s : scores) by_id[s.question_id] = s.p_llm_correct;
  for (const auto& q : bank.questions) {
    if (!by_id.count(q.id))
      throw std::invalid_argument("missing score for question " + q.id);
  }

  std::vector<std::pair<double, std::string>> ranked;  // (-p, id): highest first
  ranked.reserve(bank.size());
  for (const auto& q : bank.questions) ranked.emplace_back(-by_id[q.id], q.id);
  std::sort(ranked.begin(), ranked.end());

  const std::size_t n = bank.size();
  const std::size_t n_remove = static_cast<std::size_t>(std::ceil(
      remove_frac * static_cast<double>(n) - 1e-9));

  std::set<std::string> removed_ids;
  for (std::size_t i = 0; i < std::min(n_remove, ranked.size()); ++i)
    removed_ids.insert(ranked[i].second);

  FilterResult out;
  out.kept.name = bank.name;
  out.removed.name = bank.name.empty() ? "removed" : bank.name + "-removed";
  for (const auto& q : bank.questions) {
    if (removed_ids.count(q.id)) out.removed.questions.push_back(q);
    else out.kept.questions.push_back(q);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void write_weights(const std::filesystem::path& path, const std::vector<double>& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write weights file " + path.string());
  std::uint64_t count = w.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof count);
  out.write(reinterpret_cast<const char*>(w.data()),
            static_cast<std::streamsize>(w.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failure on " + path.string());
}

std::vector<double> read_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read weights file " + path.string());
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  std::vector<double> w(count);
  in.read(reinterpret_cast<char*>(w.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("truncated weights file " + path.string());
  return w;
}

ordered_json bow_to_json(const BowVocab& v) { return ordered_json(v.words); }

BowVocab bow_from_json(const json& j) {
  return BowVocab::from_words(j.get<std::vector<std::string>>());
}

ordered_json tree_to_json(const DecisionTreeImpl& tree) {
  ordered_json arr = ordered_json::array();
  for (const auto& n : tree.nodes) {
    arr.push_back({{"f", n.feature},
                   {"t", n.threshold},
                   {"l", n.left},
                   {"r", n.right},
                   {"p0", n.probs[0]},
                   {"p1", n.probs[1]}});
  }
  return arr;
}

DecisionTreeImpl tree_from_json(const json& arr) {
  DecisionTreeImpl tree;
  for (const auto& j : arr) {
    TreeNode n;
    n.feature = j.at("f").get<int>();
    n.threshold = j.at("t").get<double>();
    n.left = j.at("l").get<int>();
    n.right = j.at("r").get<int>();
    n.probs = {j.at("p0").get<double>(), j.at("p1").get<double>()};
    tree.nodes.push_back(n);
  }
  return tree;
}

std::filesystem::path json_path(const std::filesystem::path& base) {
  auto p = base;
  p += ".json";
  return p;
}
std::filesystem::path bin_path(const std::filesystem::path& base) {
  auto p = base;
  p += ".bin";
  return p;
}

}  // namespace

void save_model(const TrainedClassifier& model, const std::filesystem::path& base) {
  ordered_json meta;
  meta["format_version"] = kFormatVersion;
  meta["family"] = to_string(model.family());
  std::vector<double> weights;

  if (const auto* nbc = dynamic_cast<const NbcClassifier*>(&model)) {
    meta["vocab"] = bow_to_json(nbc->vocab);
    weights.push_back(nbc->log_prior[0]);
    weights.push_back(nbc->log_prior[1]);
    weights.insert(weights.end(), nbc->log_lik.begin(), nbc->log_lik.end());
  } else if (const auto* lo = dynamic_cast<const LogisticClassifier*>(&model)) {
    meta["vocab"] = bow_to_json(lo->vocab);
    weights = lo->weights;
    weights.push_back(lo->bias);
  } else if (const auto* tr = dynamic_cast<const TreeClassifier*>(&model)) {
    meta["vocab"] = bow_to_json(tr->space.vocab);
    meta["familiar_words"] = tr->space.familiar.words();
    meta["nodes"] = tree_to_json(tr->tree);
  } else if (const auto* fo = dynamic_cast<const ForestClassifier*>(&model)) {
    meta["vocab"] = bow_to_json(fo->space.vocab);
    meta["familiar_words"] = fo->space.familiar.words();
    meta["options"] = {{"n_trees", fo->options.n_trees},
                       {"bootstrap", fo->options.bootstrap},
                       {"feature_subsample_sqrt", fo->options.feature_subsample_sqrt},
                       {"seed", fo->options.seed}};
    ordered_json trees = ordered_json::array();
    for (const auto& t : fo->trees) trees.push_back(tree_to_json(t));
    meta["trees"] = std::move(trees);
  } else if (const auto* kn = dynamic_cast<const KnnClassifier*>(&model)) {
    meta["vocab"] = bow_to_json(kn->vocab);
    meta["labels"] = kn->labels;
    meta["k"] = kn->k;
    weights = kn->idf;
    for (const auto& v : kn->train_vectors)
      weights.insert(weights.end(), v.begin(), v.end());
  } else if (const auto* ne = dynamic_cast<const NeuralClassifier*>(&model)) {
    meta["vocab"] = ne->vocab().tokens();
    meta["embed_dim"] = ne->net().embed_dim();
    meta["max_len"] = ne->max_len();
    weights = ne->net().params();
  } else {
    throw std::invalid_argument("save_model: unknown classifier implementation");
  }

  meta["weights_file"] = bin_path(base).filename().string();
  meta["weights_count"] = weights.size();

  std::ofstream out(json_path(base), std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file " + json_path(base).string());
  out << meta.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failure on " + json_path(base).string());
  write_weights(bin_path(base), weights);
}

std::unique_ptr<TrainedClassifier> load_model(const std::filesystem::path& base) {
  std::ifstream in(json_path(base));
  if (!in) throw std::runtime_error("cannot read model file " + json_path(base).string());
  json meta = json::parse(in);
  if (meta.at("format_version").get<int>() != kFormatVersion)
    throw std::runtime_error("unsupported model format version");
  std::vector<double> weights = read_weights(bin_path(base));
  if (weights.size() != meta.at("weights_count").get<std::size_t>())
    throw std::runtime_error("weights count mismatch in " + bin_path(base).string());

  ModelFamily family = model_family_from_string(meta.at("family").get<std::string>());
  switch (family) {
    case ModelFamily::nbc: {
      auto model = std::make_unique<NbcClassifier>();
      model->vocab = bow_from_json(meta.at("vocab"));
      const std::size_t V = model->vocab.words.size();
      if (weights.size() != 2 + 2 * V) throw std::runtime_error("bad nbc weights");
      model->log_prior = {weights[0], weights[1]};
      model->log_lik.assign(weights.begin() + 2, weights.end());
      return model;
    }
    case ModelFamily::logistic: {
      auto model = std::make_unique<LogisticClassifier>();
      model->vocab = bow_from_json(meta.at("vocab"));
      const std::size_t V = model->vocab.words.size();
      if (weights.size() != V + 1) throw std::runtime_error("bad logistic weights");
      model->bias = weights.back();
      weights.pop_back();
      model->weights = std::move(weights);
      return model;
    }
    case ModelFamily::tree: {
      auto model = std::make_unique<TreeClassifier>();
      model->space.vocab = bow_from_json(meta.at("vocab"));
      model->space.familiar =
          WordList::from_words(meta.at("familiar_words").get<std::vector<std::string>>());
      model->tree = tree_from_json(meta.at("nodes"));
      return model;
    }
    case ModelFamily::forest: {
      auto model = std::make_unique<ForestClassifier>();
      model->space.vocab = bow_from_json(meta.at("vocab"));
      model->space.familiar =
          WordList::from_words(meta.at("familiar_words").get<std::vector<std::string>>());
      const auto& opt = meta.at("options");
      model->options.n_trees = opt.at("n_trees").get<int>();
      model->options.bootstrap = opt.at("bootstrap").get<bool>();
      model->options.feature_subsample_sqrt =
          opt.at("feature_subsample_sqrt").get<bool>();
      model->options.seed = opt.at("seed").get<std::uint64_t>();
      for (const auto& t : meta.at("trees")) model->trees.push_back(tree_from_json(t));
      return model;
    }
    case ModelFamily::knn: {
      auto model = std::make_unique<KnnClassifier>();
      model->vocab = bow_from_json(meta.at("vocab"));
      model->labels = meta.at("labels").get<std::vector<int>>();
      model->k = meta.at("k").get<int>();
      const std::size_t V = model->vocab.words.size();
      const std::size_t N = model->labels.size();
      if (weights.size() != V + N * V) throw std::runtime_error("bad knn weights");
      model->idf.assign(weights.begin(), weights.begin() + static_cast<std::ptrdiff_t>(V));
      for (std::size_t i = 0; i < N; ++i) {
        auto begin = weights.begin() + static_cast<std::ptrdiff_t>(V + i * V);
        model->train_vectors.emplace_back(begin, begin + static_cast<std::ptrdiff_t>(V));
      }
      return model;
    }
    case ModelFamily::neural: {
      Vocab vocab = Vocab::from_tokens(meta.at("vocab").get<std::vector<std::string>>());
      std::size_t dim = meta.at("embed_dim").get<std::size_t>();
      NeuralNet net(vocab.size(), dim);
      if (weights.size() != net.params().size())
        throw std::runtime_error("bad neural weights");
      net.params() = std::move(weights);
      return std::make_unique<NeuralClassifier>(std::move(vocab), std::move(net),
                                                meta.at("max_len").get<std::size_t>());
    }
  }
  throw std::logic_error("unreachable family");
}

}  // namespace qvuln
