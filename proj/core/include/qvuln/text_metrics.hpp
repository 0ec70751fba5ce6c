#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qvuln/question.hpp"

namespace qvuln {

/// Fixed feature ids, in emission order.
inline constexpr std::array<std::string_view, 16> kFeatureIds = {
    "words",
    "chars",
    "sentences",
    "words_per_sentence",
    "chars_per_sentence",
    "chars_per_word",
    "special_figures",
    "numeric_figures",
    "flesch_reading_ease",
    "flesch_kincaid_grade",
    "smog",
    "coleman_liau",
    "ari",
    "dale_chall",
    "gunning_fog",
    "gulpease",
};

struct FeatureVector {
  std::array<double, kFeatureIds.size()> values{};

  double at(std::string_view feature_id) const;
  double& at(std::string_view feature_id);

  bool operator==(const FeatureVector&) const = default;
};

/// Surface segmentation of a text. Sentences split on . ! ? followed by
/// whitespace or end; a trailing fragment without a terminator is one
/// sentence. Words are maximal runs of alphanumerics/apostrophes (non-ASCII
/// codepoints count as letters). Counts are per codepoint, not per byte.
struct SegmentResult {
  std::vector<std::string> sentences;
  std::vector<std::string> words;
  std::size_t letters = 0;
  std::size_t special = 0;  // neither alphanumeric nor whitespace
  std::size_t digits = 0;
  std::size_t chars = 0;  // total codepoints
};

SegmentResult segment(std::string_view text);

/// Vowel-group heuristic: runs of [aeiouy] count one each; a trailing silent
/// 'e' is dropped unless the word ends consonant+"le"; minimum 1.
std::size_t count_syllables(std::string_view word);

/// Familiar-word list for the Dale-Chall score: plain text, one lowercase
/// word per line.
class WordList {
 public:
  WordList() = default;
  static WordList load(const std::filesystem::path& path);
  static WordList from_words(std::vector<std::string> words);

  bool contains(std::string_view lowercase_word) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return sorted_; }

 private:
  std::map<std::string, bool, std::less<>> words_;
  std::vector<std::string> sorted_;
};

/// All 16 features for one text. Throws std::invalid_argument on a text with
/// zero words. Gulpease is clamped to [0,100]; other indices are not.
FeatureVector readability(std::string_view text, const WordList& familiar);

/// Cosine similarity of two same-dimension vectors. Throws on dimension
/// mismatch or a zero vector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Lowercased term-frequency map of a text, using the same word rule as
/// segment().
std::map<std::string, double> term_frequency(std::string_view text);

/// Cosine similarity of two texts over the union vocabulary of the pair.
double cosine_similarity_texts(std::string_view a, std::string_view b);

struct FeatureRow {
  std::string question_id;
  std::optional<FeatureVector> features;
  std::string error;  // set when features is empty

  bool operator==(const FeatureRow&) const = default;
};

struct FeatureTable {
  std::vector<FeatureRow> rows;

  bool operator==(const FeatureTable&) const = default;
};

/// One row per question, in bank order. Per-question failures become the
/// error column instead of aborting the table.
FeatureTable featurize_bank(const QuestionBank& bank, const WordList& familiar);

std::string feature_table_csv(const FeatureTable& table);
std::string feature_table_json(const FeatureTable& table);

}  // namespace qvuln
