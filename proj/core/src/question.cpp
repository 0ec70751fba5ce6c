#include "qvuln/question.hpp"

#include <stdexcept>
#include <unordered_set>

namespace qvuln {

char option_letter(std::size_t index) {
  if (index >= kMaxOptions) throw std::out_of_range("option index beyond H");
  return static_cast<char>('A' + index);
}

void validate_question(const Question& q) {
  if (q.id.empty()) throw std::invalid_argument("question id is empty");
  if (q.options.size() < kMinOptions || q.options.size() > kMaxOptions)
    throw std::invalid_argument("question " + q.id + ": option count " +
                                std::to_string(q.options.size()) + " outside [2,8]");
  if (q.correct.empty())
    throw std::invalid_argument("question " + q.id + ": empty correct set");
  for (std::size_t idx : q.correct) {
    if (idx >= q.options.size())
      throw std::invalid_argument("question " + q.id + ": correct index " +
                                  std::to_string(idx) + " out of range");
  }
}

Question add_option(const Question& q, const std::string& distractor) {
  if (q.options.size() >= kMaxOptions)
    throw std::invalid_argument("question " + q.id + ": option cap of " +
                                std::to_string(kMaxOptions) + " reached");
  for (const auto& opt : q.options) {
    if (opt == distractor)
      throw std::invalid_argument("question " + q.id + ": duplicate option \"" +
                                  distractor + "\"");
  }
  Question out = q;
  out.options.push_back(distractor);
  out.id += "+opt";
  return out;
}

bool grade(const Question& q, const std::set<std::size_t>& parsed) {
  return parsed == q.correct;
}

const Question* QuestionBank::find(const std::string& id) const {
  for (const auto& q : questions) {
    if (q.id == id) return &q;
  }
  return nullptr;
}

void validate_bank(const QuestionBank& bank) {
  std::unordered_set<std::string> seen;
  for (const auto& q : bank.questions) {
    validate_question(q);
    if (!seen.insert(q.id).second)
      throw std::invalid_argument("duplicate question id \"" + q.id + "\"");
  }
}

}  // namespace qvuln
