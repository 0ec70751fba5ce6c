#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "qvuln/question.hpp"

namespace qvuln {

enum class BankFormat { jsonl, csv };

BankFormat bank_format_from_string(const std::string& name);
std::string to_string(BankFormat fmt);

/// A record that could not be ingested, with its 1-based line number.
struct RecordError {
  std::size_t line = 0;
  std::string message;

  bool operator==(const RecordError&) const = default;
};

struct LoadResult {
  QuestionBank bank;
  std::vector<RecordError> errors;
  std::size_t records = 0;  // total input records seen (bank + errors)
};

/// Loads a question bank. Invalid records land in `errors` with their line
/// number; valid ones in the bank. JSONL accepts both the canonical schema
/// (id/stem/options/correct/topic/meta) and MedMCQA-shaped records
/// (question/opa..opd/cop/subject_name). Throws only when the file itself
/// cannot be read.
LoadResult load_bank(const std::filesystem::path& path, BankFormat format);

/// Writes the bank. JSONL is lossless; CSV uses the fixed columns
/// id,stem,optionA..optionH,correct,topic (correct = semicolon-joined
/// letters) and does not carry `meta`.
void save_bank(const QuestionBank& bank, const std::filesystem::path& path,
               BankFormat format);

}  // namespace qvuln
