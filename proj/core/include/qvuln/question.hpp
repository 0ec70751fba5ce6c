#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace qvuln {

inline constexpr std::size_t kMinOptions = 2;
inline constexpr std::size_t kMaxOptions = 8;

/// Letter assigned to an option by position: 0 -> 'A', 1 -> 'B', ...
char option_letter(std::size_t index);

/// A multiple-choice question. `correct` holds 0-based option indices;
/// more than one index makes the question multi-select.
struct Question {
  std::string id;
  std::string stem;
  std::vector<std::string> options;
  std::set<std::size_t> correct;
  std::optional<std::string> topic;
  std::map<std::string, std::string> meta;

  bool multi_select() const { return correct.size() > 1; }

  bool operator==(const Question&) const = default;
};

/// Throws std::invalid_argument when the question violates its invariants
/// (option count outside [2,8], empty or out-of-range correct set, empty id).
void validate_question(const Question& q);

/// Returns a copy with `distractor` appended and "+opt" suffixed to the id.
/// The correct set is unchanged. Throws on the option cap or a duplicate
/// option text.
Question add_option(const Question& q, const std::string& distractor);

/// Exact-match grading: true iff `parsed` equals the correct set. No partial
/// credit for multi-select.
bool grade(const Question& q, const std::set<std::size_t>& parsed);

struct QuestionBank {
  std::string name;
  std::vector<Question> questions;

  std::size_t size() const { return questions.size(); }
  bool empty() const { return questions.empty(); }
  const Question* find(const std::string& id) const;

  bool operator==(const QuestionBank&) const = default;
};

/// Validates every question plus bank-level invariants (unique ids).
void validate_bank(const QuestionBank& bank);

/// One model reply to one question. `parsed` is empty (nullopt) when the
/// reply could not be mapped to option letters; `correct` is unknown exactly
/// in that case.
struct ModelResponse {
  std::string question_id;
  std::string model_id;
  int trial = 0;
  std::string raw_text;
  std::optional<std::set<std::size_t>> parsed;
  std::optional<bool> correct;

  bool unparseable() const { return !parsed.has_value(); }

  bool operator==(const ModelResponse&) const = default;
};

}  // namespace qvuln
