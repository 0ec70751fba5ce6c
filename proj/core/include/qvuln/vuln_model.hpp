#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qvuln/question.hpp"
#include "qvuln/text_metrics.hpp"
#include "qvuln/wordpiece.hpp"

namespace qvuln {

struct SplitSpec {
  double train_frac = 0.75;
  double val_frac = 0.20;
  double test_frac = 0.05;
  std::uint64_t seed = 42;
};

struct TrainingConfig {
  double learning_rate = 2e-5;
  double epsilon = 1e-8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int epochs = 4;
  int batch_size = 32;
  double dropout_prob = 0.1;
  int embed_dim = 64;
  std::size_t max_len = 128;
  std::uint64_t seed = 42;
};

enum class ModelFamily { neural, nbc, logistic, tree, forest, knn };

ModelFamily model_family_from_string(const std::string& name);
std::string to_string(ModelFamily family);

struct ProbPair {
  double p_correct = 0.0;    // probability the LLM answers correctly
  double p_incorrect = 0.0;  // sums with p_correct to 1 within 1e-9
};

struct LabeledQuestion {
  Question question;
  bool llm_correct = false;
};
using LabeledSet = std::vector<LabeledQuestion>;

/// Labels from graded responses: per question, the majority of trial
/// correctness; ties label the question correct.
std::map<std::string, bool> labels_from_responses(
    const std::vector<ModelResponse>& responses);

/// Fraction of the majority label; the floor any classifier must beat.
double majority_baseline(const LabeledSet& set);

struct SplitResult {
  LabeledSet train, val, test;
};

/// Seed-deterministic shuffle, then sizes test = floor(0.05 N),
/// val = floor(0.20 N), train = remainder (with the configured fractions).
/// Throws when N < 20 or a question lacks a label.
SplitResult split(const QuestionBank& bank,
                  const std::map<std::string, bool>& labels,
                  const SplitSpec& spec);

class TrainedClassifier {
 public:
  virtual ~TrainedClassifier() = default;
  virtual ModelFamily family() const = 0;
  virtual ProbPair predict_proba(const Question& q) const = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

/// Trains the embedding + pooler-tanh + dropout + linear head with Adam and
/// returns the best-validation-accuracy checkpoint. Throws on non-finite
/// loss.
std::unique_ptr<TrainedClassifier> train_neural(const LabeledSet& train,
                                                const LabeledSet& val,
                                                const TrainingConfig& cfg,
                                                const Vocab& vocab,
                                                std::vector<EpochLog>* log = nullptr);

struct ForestOptions {
  int n_trees = 100;
  bool bootstrap = true;
  bool feature_subsample_sqrt = true;
  std::uint64_t seed = 42;
};

/// Fixed-default baselines: multinomial NBC (Laplace alpha=1), logistic
/// regression (full-batch GD, 200 epochs, lr 0.1), CART (Gini, depth 16,
/// min leaf 2), random forest (100 trees, sqrt-feature subsample,
/// bootstrap), KNN (k=5, cosine distance over tf-idf). Trees and forests see
/// the 16 text-metric features plus bag-of-words counts; the word list feeds
/// the Dale-Chall feature. Throws when a class is empty in training data.
std::unique_ptr<TrainedClassifier> train_baseline(ModelFamily family,
                                                  const LabeledSet& train,
                                                  const WordList& familiar);

std::unique_ptr<TrainedClassifier> train_forest(const LabeledSet& train,
                                                const WordList& familiar,
                                                const ForestOptions& options);
std::unique_ptr<TrainedClassifier> train_knn(const LabeledSet& train, int k);

struct ThresholdRow {
  double tau = 0.0;
  std::size_t covered = 0;
  double coverage = 0.0;
  double accuracy = 0.0;  // on the covered subset; 0 when nothing covered
};

struct EvalResult {
  double accuracy = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;  // positive = LLM correct
  std::vector<ThresholdRow> thresholds;        // tau = 0.50 .. 0.95 step 0.05
};

EvalResult evaluate(const TrainedClassifier& model, const LabeledSet& test);

struct VulnScore {
  std::string question_id;
  double p_llm_correct = 0.0;
  double confidence = 0.0;  // max(p, 1-p), always >= 0.5
};

/// One score per question, deterministic. Per-question failures are
/// reported through `errors` and the question skipped.
std::vector<VulnScore> score_bank(const TrainedClassifier& model,
                                  const QuestionBank& bank,
                                  std::vector<std::string>* errors = nullptr);

struct FilterResult {
  QuestionBank kept;
  QuestionBank removed;
};

/// Removes the ceil(remove_frac * N) highest p_llm_correct questions (ties
/// broken by ascending question id). Both outputs preserve bank order.
FilterResult filter_bank(const QuestionBank& bank,
                         const std::vector<VulnScore>& scores,
                         double remove_frac);

/// Model artifacts: <base>.json (structure, versioned) + <base>.bin (flat
/// little-endian doubles).
void save_model(const TrainedClassifier& model, const std::filesystem::path& base);
std::unique_ptr<TrainedClassifier> load_model(const std::filesystem::path& base);

}  // namespace qvuln
