#include "qvuln/bank_io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "csv_util.hpp"
#include "json.hpp"

namespace qvuln {
namespace {

using detail::csv_escape;
using detail::csv_quotes_balanced;
using detail::csv_split;

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

Question question_from_canonical(const json& rec) {
  Question q;
  q.id = rec.at("id").get<std::string>();
  q.stem = rec.at("stem").get<std::string>();
  q.options = rec.at("options").get<std::vector<std::string>>();
  for (const auto& idx : rec.at("correct")) {
    auto v = idx.get<long long>();
    if (v < 0) throw std::invalid_argument("negative correct index");
    q.correct.insert(static_cast<std::size_t>(v));
  }
  if (rec.contains("topic") && !rec.at("topic").is_null())
    q.topic = rec.at("topic").get<std::string>();
  if (rec.contains("meta") && !rec.at("meta").is_null()) {
    for (const auto& [k, v] : rec.at("meta").items())
      q.meta[k] = v.get<std::string>();
  }
  return q;
}

Question question_from_medmcqa(const json& rec) {
  Question q;
  q.id = rec.at("id").is_string() ? rec.at("id").get<std::string>()
                                  : rec.at("id").dump();
  q.stem = rec.at("question").get<std::string>();
  for (const char* key : {"opa", "opb", "opc", "opd"}) {
    if (rec.contains(key) && !rec.at(key).is_null())
      q.options.push_back(rec.at(key).get<std::string>());
  }
  auto cop = rec.at("cop").get<long long>();  // 0-based single index
  if (cop < 0) throw std::invalid_argument("negative cop");
  q.correct.insert(static_cast<std::size_t>(cop));
  if (rec.contains("subject_name") && !rec.at("subject_name").is_null())
    q.topic = rec.at("subject_name").get<std::string>();
  return q;
}

constexpr const char* kCsvHeader =
    "id,stem,optionA,optionB,optionC,optionD,optionE,optionF,optionG,optionH,"
    "correct,topic";

LoadResult load_jsonl(std::istream& in) {
  LoadResult result;
  std::string line;
  std::size_t lineno = 0;
  std::unordered_set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ++result.records;
    try {
      json rec = json::parse(line);
      Question q;
      if (rec.contains("stem") && rec.contains("options")) {
        q = question_from_canonical(rec);
      } else if (rec.contains("question") && rec.contains("opa")) {
        q = question_from_medmcqa(rec);
      } else {
        throw std::invalid_argument(
            "record missing required fields (stem/options or question/opa)");
      }
      validate_question(q);
      if (!ids.insert(q.id).second)
        throw std::invalid_argument("duplicate question id \"" + q.id + "\"");
      result.bank.questions.push_back(std::move(q));
    } catch (const std::exception& ex) {
      result.errors.push_back({lineno, ex.what()});
    }
  }
  return result;
}

LoadResult load_csv(std::istream& in) {
  LoadResult result;
  std::string physical, record;
  std::size_t lineno = 0, record_line = 0;
  bool header_seen = false;
  std::unordered_set<std::string> ids;
  while (std::getline(in, physical)) {
    ++lineno;
    if (!physical.empty() && physical.back() == '\r') physical.pop_back();
    if (record.empty()) {
      record = physical;
      record_line = lineno;
    } else {
      record += '\n';
      record += physical;
    }
    if (!csv_quotes_balanced(record)) continue;  // field spans lines
    std::string rec = std::move(record);
    record.clear();
    if (rec.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      continue;  // fixed header, not validated strictly
    }
    ++result.records;
    try {
      auto fields = csv_split(rec);
      if (fields.size() != 12)
        throw std::invalid_argument("expected 12 columns, got " +
                                    std::to_string(fields.size()));
      Question q;
      q.id = fields[0];
      q.stem = fields[1];
      for (std::size_t i = 0; i < kMaxOptions; ++i) {
        if (!fields[2 + i].empty()) {
          if (q.options.size() != i)
            throw std::invalid_argument("gap in option columns");
          q.options.push_back(fields[2 + i]);
        }
      }
      if (fields[10].empty()) throw std::invalid_argument("empty correct column");
      std::stringstream ss(fields[10]);
      std::string letter;
      while (std::getline(ss, letter, ';')) {
        if (letter.size() != 1 || letter[0] < 'A' || letter[0] > 'H')
          throw std::invalid_argument("bad correct letter \"" + letter + "\"");
        q.correct.insert(static_cast<std::size_t>(letter[0] - 'A'));
      }
      if (!fields[11].empty()) q.topic = fields[11];
      validate_question(q);
      if (!ids.insert(q.id).second)
        throw std::invalid_argument("duplicate question id \"" + q.id + "\"");
      result.bank.questions.push_back(std::move(q));
    } catch (const std::exception& ex) {
      result.errors.push_back({record_line, ex.what()});
    }
  }
  return result;
}

}  // namespace

BankFormat bank_format_from_string(const std::string& name) {
  if (name == "jsonl") return BankFormat::jsonl;
  if (name == "csv") return BankFormat::csv;
  throw std::invalid_argument("unknown bank format \"" + name + "\"");
}

std::string to_string(BankFormat fmt) {
  return fmt == BankFormat::jsonl ? "jsonl" : "csv";
}

LoadResult load_bank(const std::filesystem::path& path, BankFormat format) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read bank file " + path.string());
  LoadResult result =
      format == BankFormat::jsonl ? load_jsonl(in) : load_csv(in);
  result.bank.name = path.stem().string();
  return result;
}

void save_bank(const QuestionBank& bank, const std::filesystem::path& path,
               BankFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write bank file " + path.string());
  if (format == BankFormat::jsonl) {
    for (const auto& q : bank.questions) {
      ordered_json rec;
      rec["id"] = q.id;
      rec["stem"] = q.stem;
      rec["options"] = q.options;
      rec["correct"] = std::vector<std::size_t>(q.correct.begin(), q.correct.end());
      if (q.topic) rec["topic"] = *q.topic;
      else rec["topic"] = nullptr;
      rec["meta"] = q.meta.empty() ? ordered_json::object()
                                   : ordered_json(q.meta);
      out << rec.dump() << '\n';
    }
  } else {
    out << kCsvHeader << '\n';
    for (const auto& q : bank.questions) {
      std::string correct;
      for (std::size_t idx : q.correct) {
        if (!correct.empty()) correct += ';';
        correct += option_letter(idx);
      }
      out << csv_escape(q.id) << ',' << csv_escape(q.stem);
      for (std::size_t i = 0; i < kMaxOptions; ++i)
        out << ',' << (i < q.options.size() ? csv_escape(q.options[i]) : "");
      out << ',' << correct << ','
          << csv_escape(q.topic ? *q.topic : "") << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failure on " + path.string());
}

}  // namespace qvuln
