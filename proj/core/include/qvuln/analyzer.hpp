#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qvuln/llm_client.hpp"
#include "qvuln/question.hpp"

namespace qvuln {

enum class Dimension {
  topic,
  has_except,
  none_above,
  all_above,
  option_count,
  multi_select,
  model_id,
};

Dimension dimension_from_string(const std::string& name);
std::string to_string(Dimension dim);

/// One stratum. n_correct is a sum of per-question mean trial correctness,
/// so it is fractional once trials_per_question > 1.
struct StratRow {
  std::string label;
  std::size_t n_questions = 0;
  double n_correct = 0.0;
  double accuracy = 0.0;  // n_correct / n_questions, exactly

  bool operator==(const StratRow&) const = default;
};

struct ReportFooter {
  std::size_t total = 0;        // responses joined to the bank
  std::size_t graded = 0;       // graded (question, model) units
  std::size_t unparseable = 0;  // responses graded incorrect for parsing

  bool operator==(const ReportFooter&) const = default;
};

struct StratReport {
  Dimension dimension = Dimension::topic;
  std::vector<StratRow> rows;  // sorted by label, empty strata omitted
  double baseline_accuracy = 0.0;
  ReportFooter footer;

  bool operator==(const StratReport&) const = default;
};

struct OverallAccuracy {
  std::size_t n = 0;
  double correct = 0.0;
  double accuracy = 0.0;
  ReportFooter footer;
};

/// Joins responses to the bank and averages per-question trial correctness.
/// Unparseable responses count as incorrect. Throws on a response whose
/// question_id is not in the bank.
OverallAccuracy overall_accuracy(const std::vector<ModelResponse>& responses,
                                 const QuestionBank& bank);

struct PhraseOptions {
  std::vector<std::string> synonyms;  // extra phrase variants, default none
};

StratReport stratify(const std::vector<ModelResponse>& responses,
                     const QuestionBank& bank, Dimension dimension,
                     const PhraseOptions& phrase_opts = {});

struct PhraseSplit {
  std::string phrase;
  std::size_t n_when_correct = 0;
  std::size_t n_when_incorrect = 0;
  std::size_t n_when_absent = 0;
  double acc_when_correct = 0.0;
  double acc_when_incorrect = 0.0;
  double acc_when_absent = 0.0;
  double pick_rate_when_correct = 0.0;
  double pick_rate_when_incorrect = 0.0;
  ReportFooter footer;
};

/// Partitions the bank by whether any option text contains the phrase
/// (case-insensitive substring) and whether that option is the correct
/// answer. Pick rate = fraction of responses choosing the phrase option.
PhraseSplit phrase_split(const std::vector<ModelResponse>& responses,
                         const QuestionBank& bank, const std::string& phrase,
                         const PhraseOptions& opts = {});

/// One row per model id found in the cache; models without responses are
/// omitted and reported through `warnings`.
StratReport compare_models(const ResponseCache& cache, const QuestionBank& bank,
                           const std::vector<std::string>& model_ids,
                           std::vector<std::string>* warnings = nullptr);

enum class ReportFormat { csv, json, markdown };

ReportFormat report_format_from_string(const std::string& name);
std::string to_string(ReportFormat fmt);

std::string render_report(const StratReport& report, ReportFormat format);
void emit_report(const StratReport& report, const std::filesystem::path& path,
                 ReportFormat format);

/// Inverse of render_report for csv/json (markdown is render-only).
StratReport parse_report(const std::string& text, ReportFormat format);

std::string render_phrase_split(const PhraseSplit& split, ReportFormat format);
void emit_phrase_split(const PhraseSplit& split, const std::filesystem::path& path,
                       ReportFormat format);

}  // namespace qvuln
