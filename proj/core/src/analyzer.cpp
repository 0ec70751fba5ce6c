#include "qvuln/analyzer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "csv_util.hpp"
#include "json.hpp"

namespace qvuln {
namespace {

using detail::csv_escape;
using detail::csv_split;
using detail::format_double;
using detail::parse_double;
using detail::parse_size;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

/// Case-insensitive whole-word match of `word` inside `text`.
bool contains_word(std::string_view text, std::string_view word) {
  std::string t = lower_ascii(text);
  std::string w = lower_ascii(word);
  std::size_t pos = 0;
  while ((pos = t.find(w, pos)) != std::string::npos) {
    bool left_ok = pos == 0 || !is_alnum(t[pos - 1]);
    std::size_t end = pos + w.size();
    bool right_ok = end == t.size() || !is_alnum(t[end]);
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

bool contains_substring_ci(std::string_view text, std::string_view needle) {
  return lower_ascii(text).find(lower_ascii(needle)) != std::string::npos;
}

/// One graded (question, model) unit: all trials for that pair.
struct Unit {
  const Question* question = nullptr;
  std::string model_id;
  std::vector<const ModelResponse*> responses;

  double mean_correct() const {
    if (responses.empty()) return 0.0;
    double sum = 0.0;
    for (const auto* r : responses) sum += r->correct.value_or(false) ? 1.0 : 0.0;
    return sum / static_cast<double>(responses.size());
  }
};

struct Joined {
  std::vector<Unit> units;  // deterministic: bank order, then model id
  ReportFooter footer;
};

Joined join(const std::vector<ModelResponse>& responses, const QuestionBank& bank) {
  std::unordered_map<std::string, const Question*> by_id;
  by_id.reserve(bank.size());
  for (const auto& q : bank.questions) by_id.emplace(q.id, &q);

  std::map<std::pair<std::string, std::string>, std::vector<const ModelResponse*>>
      grouped;  // (question_id, model_id) -> responses
  ReportFooter footer;
  for (const auto& r : responses) {
    if (!by_id.count(r.question_id))
      throw std::invalid_argument("response references unknown question \"" +
                                  r.question_id + "\"");
    grouped[{r.question_id, r.model_id}].push_back(&r);
    ++footer.total;
    if (r.unparseable()) ++footer.unparseable;
  }

  Joined out;
  out.footer = footer;
  // bank order first, then model id (map order within a question id is fine
  // because the outer loop is over the bank)
  std::map<std::string, std::vector<std::pair<std::string, std::vector<const ModelResponse*>>>>
      by_question;
  for (auto& [key, vec] : grouped)
    by_question[key.first].emplace_back(key.second, std::move(vec));
  for (const auto& q : bank.questions) {
    auto it = by_question.find(q.id);
    if (it == by_question.end()) continue;
    for (auto& [model, vec] : it->second) {
      Unit u;
      u.question = &q;
      u.model_id = model;
      u.responses = std::move(vec);
      out.units.push_back(std::move(u));
    }
  }
  out.footer.graded = out.units.size();
  return out;
}

double safe_ratio(double num, std::size_t den) {
  return den == 0 ? 0.0 : num / static_cast<double>(den);
}

std::vector<std::string> phrase_variants(const std::string& canonical,
                                         const PhraseOptions& opts) {
  std::vector<std::string> v{canonical};
  v.insert(v.end(), opts.synonyms.begin(), opts.synonyms.end());
  return v;
}

std::vector<std::size_t> phrase_option_indices(const Question& q,
                                               const std::vector<std::string>& variants) {
  std::vector<std::size_t> idxs;
  for (std::size_t i = 0; i < q.options.size(); ++i) {
    for (const auto& p : variants) {
      if (contains_substring_ci(q.options[i], p)) {
        idxs.push_back(i);
        break;
      }
    }
  }
  return idxs;
}

std::string phrase_stratum(const Question& q, const std::vector<std::string>& variants) {
  auto idxs = phrase_option_indices(q, variants);
  if (idxs.empty()) return "absent";
  for (std::size_t i : idxs) {
    if (q.correct.count(i)) return "correct_option";
  }
  return "incorrect_option";
}

constexpr const char* kNoneAbove = "none of the above";
constexpr const char* kAllAbove = "all of the above";

}  // namespace

Dimension dimension_from_string(const std::string& name) {
  if (name == "topic") return Dimension::topic;
  if (name == "has_except") return Dimension::has_except;
  if (name == "none_above") return Dimension::none_above;
  if (name == "all_above") return Dimension::all_above;
  if (name == "option_count") return Dimension::option_count;
  if (name == "multi_select") return Dimension::multi_select;
  if (name == "model_id") return Dimension::model_id;
  throw std::invalid_argument("unknown dimension \"" + name + "\"");
}

std::string to_string(Dimension dim) {
  switch (dim) {
    case Dimension::topic: return "topic";
    case Dimension::has_except: return "has_except";
    case Dimension::none_above: return "none_above";
    case Dimension::all_above: return "all_above";
    case Dimension::option_count: return "option_count";
    case Dimension::multi_select: return "multi_select";
    case Dimension::model_id: return "model_id";
  }
  throw std::logic_error("unreachable dimension");
}

OverallAccuracy overall_accuracy(const std::vector<ModelResponse>& responses,
                                 const QuestionBank& bank) {
  Joined joined = join(responses, bank);
  OverallAccuracy out;
  out.n = joined.units.size();
  for (const auto& u : joined.units) out.correct += u.mean_correct();
  out.accuracy = safe_ratio(out.correct, out.n);
  out.footer = joined.footer;
  return out;
}

StratReport stratify(const std::vector<ModelResponse>& responses,
                     const QuestionBank& bank, Dimension dimension,
                     const PhraseOptions& phrase_opts) {
  Joined joined = join(responses, bank);

  auto label_of = [&](const Unit& u) -> std::string {
    const Question& q = *u.question;
    switch (dimension) {
      case Dimension::topic:
        return q.topic.value_or("(untagged)");
      case Dimension::has_except:
        return contains_word(q.stem, "except") ? "except" : "no_except";
      case Dimension::none_above:
        return phrase_stratum(q, phrase_variants(kNoneAbove, phrase_opts));
      case Dimension::all_above:
        return phrase_stratum(q, phrase_variants(kAllAbove, phrase_opts));
      case Dimension::option_count:
        return std::to_string(q.options.size());
      case Dimension::multi_select:
        return q.multi_select() ? "multi" : "single";
      case Dimension::model_id:
        return u.model_id;
    }
    throw std::logic_error("unreachable dimension");
  };

  std::map<std::string, StratRow> strata;
  double total_correct = 0.0;
  for (const auto& u : joined.units) {
    StratRow& row = strata[label_of(u)];
    row.n_questions += 1;
    double m = u.mean_correct();
    row.n_correct += m;
    total_correct += m;
  }

  StratReport report;
  report.dimension = dimension;
  report.baseline_accuracy = safe_ratio(total_correct, joined.units.size());
  report.footer = joined.footer;
  for (auto& [label, row] : strata) {
    row.label = label;
    row.accuracy = safe_ratio(row.n_correct, row.n_questions);
    report.rows.push_back(std::move(row));
  }
  return report;  // std::map iteration is already label-sorted
}

PhraseSplit phrase_split(const std::vector<ModelResponse>& responses,
                         const QuestionBank& bank, const std::string& phrase,
                         const PhraseOptions& opts) {
  std::string canonical = lower_ascii(phrase);
  if (canonical != kNoneAbove && canonical != kAllAbove)
    throw std::invalid_argument("phrase must be \"none of the above\" or \"all of the above\"");
  auto variants = phrase_variants(canonical, opts);

  Joined joined = join(responses, bank);
  PhraseSplit out;
  out.phrase = canonical;
  out.footer = joined.footer;

  double acc_c = 0, acc_i = 0, acc_a = 0;
  std::size_t resp_c = 0, resp_i = 0, picked_c = 0, picked_i = 0;
  for (const auto& u : joined.units) {
    const Question& q = *u.question;
    auto idxs = phrase_option_indices(q, variants);
    auto picked = [&](const ModelResponse& r) {
      if (!r.parsed) return false;
      for (std::size_t i : idxs) {
        if (r.parsed->count(i)) return true;
      }
      return false;
    };
    std::string stratum = phrase_stratum(q, variants);
    if (stratum == "absent") {
      ++out.n_when_absent;
      acc_a += u.mean_correct();
    } else if (stratum == "correct_option") {
      ++out.n_when_correct;
      acc_c += u.mean_correct();
      for (const auto* r : u.responses) {
        ++resp_c;
        if (picked(*r)) ++picked_c;
      }
    } else {
      ++out.n_when_incorrect;
      acc_i += u.mean_correct();
      for (const auto* r : u.responses) {
        ++resp_i;
        if (picked(*r)) ++picked_i;
      }
    }
  }
  out.acc_when_correct = safe_ratio(acc_c, out.n_when_correct);
  out.acc_when_incorrect = safe_ratio(acc_i, out.n_when_incorrect);
  out.acc_when_absent = safe_ratio(acc_a, out.n_when_absent);
  out.pick_rate_when_correct = safe_ratio(static_cast<double>(picked_c), resp_c);
  out.pick_rate_when_incorrect = safe_ratio(static_cast<double>(picked_i), resp_i);
  return out;
}

StratReport compare_models(const ResponseCache& cache, const QuestionBank& bank,
                           const std::vector<std::string>& model_ids,
                           std::vector<std::string>* warnings) {
  StratReport report;
  report.dimension = Dimension::model_id;
  double total_correct = 0.0;
  std::size_t total_units = 0;
  for (const auto& model : model_ids) {
    auto responses = cache.entries_for_model(model);
    if (responses.empty()) {
      if (warnings != nullptr)
        warnings->push_back("no cached responses for model \"" + model + "\"; row omitted");
      continue;
    }
    Joined joined = join(responses, bank);
    StratRow row;
    row.label = model;
    row.n_questions = joined.units.size();
    for (const auto& u : joined.units) row.n_correct += u.mean_correct();
    row.accuracy = safe_ratio(row.n_correct, row.n_questions);
    report.rows.push_back(std::move(row));
    total_correct += report.rows.back().n_correct;
    total_units += report.rows.back().n_questions;
    report.footer.total += joined.footer.total;
    report.footer.unparseable += joined.footer.unparseable;
  }
  report.footer.graded = total_units;
  report.baseline_accuracy = safe_ratio(total_correct, total_units);
  std::sort(report.rows.begin(), report.rows.end(),
            [](const StratRow& a, const StratRow& b) { return a.label < b.label; });
  return report;
}

ReportFormat report_format_from_string(const std::string& name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "json") return ReportFormat::json;
  if (name == "markdown" || name == "md") return ReportFormat::markdown;
  throw std::invalid_argument("unknown report format \"" + name + "\"");
}

std::string to_string(ReportFormat fmt) {
  switch (fmt) {
    case ReportFormat::csv: return "csv";
    case ReportFormat::json: return "json";
    case ReportFormat::markdown: return "markdown";
  }
  throw std::logic_error("unreachable format");
}

namespace {

std::string percent(double x) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << x * 100.0;
  return os.str();
}

}  // namespace

std::string render_report(const StratReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::csv: {
      std::string out;
      out += "# dimension=" + to_string(report.dimension) + "\n";
      out += "# baseline_accuracy=" + format_double(report.baseline_accuracy) + "\n";
      out += "# total=" + std::to_string(report.footer.total) +
             " graded=" + std::to_string(report.footer.graded) +
             " unparseable=" + std::to_string(report.footer.unparseable) + "\n";
      out += "stratum,n_questions,n_correct,accuracy,delta_vs_baseline\n";
      for (const auto& row : report.rows) {
        out += csv_escape(row.label) + ',' + std::to_string(row.n_questions) + ',' +
               format_double(row.n_correct) + ',' + format_double(row.accuracy) +
               ',' + format_double(row.accuracy - report.baseline_accuracy) + '\n';
      }
      return out;
    }
    case ReportFormat::json: {
      ordered_json j;
      j["dimension"] = to_string(report.dimension);
      j["baseline_accuracy"] = report.baseline_accuracy;
      j["footer"] = {{"total", report.footer.total},
                     {"graded", report.footer.graded},
                     {"unparseable", report.footer.unparseable}};
      j["rows"] = ordered_json::array();
      for (const auto& row : report.rows) {
        j["rows"].push_back({{"stratum", row.label},
                             {"n_questions", row.n_questions},
                             {"n_correct", row.n_correct},
                             {"accuracy", row.accuracy}});
      }
      return j.dump(2) + "\n";
    }
    case ReportFormat::markdown: {
      std::string out;
      out += "### Accuracy by " + to_string(report.dimension) + "\n\n";
      out += "| Stratum | Questions | Correct | Accuracy (%) | vs baseline (pp) |\n";
      out += "|---|---:|---:|---:|---:|\n";
      for (const auto& row : report.rows) {
        out += "| " + row.label + " | " + std::to_string(row.n_questions) + " | " +
               format_double(row.n_correct) + " | " + percent(row.accuracy) + " | " +
               percent(row.accuracy - report.baseline_accuracy) + " |\n";
      }
      out += "\nBaseline accuracy: " + percent(report.baseline_accuracy) + "% over " +
             std::to_string(report.footer.graded) + " graded questions. Responses: " +
             std::to_string(report.footer.total) + ", unparseable: " +
             std::to_string(report.footer.unparseable) + ".\n";
      return out;
    }
  }
  throw std::logic_error("unreachable format");
}

void emit_report(const StratReport& report, const std::filesystem::path& path,
                 ReportFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << render_report(report, format);
  if (!out) throw std::runtime_error("write failure on " + path.string());
}

StratReport parse_report(const std::string& text, ReportFormat format) {
  StratReport report;
  if (format == ReportFormat::markdown)
    throw std::invalid_argument("markdown reports are render-only");
  if (format == ReportFormat::json) {
    json j = json::parse(text);
    report.dimension = dimension_from_string(j.at("dimension").get<std::string>());
    report.baseline_accuracy = j.at("baseline_accuracy").get<double>();
    report.footer.total = j.at("footer").at("total").get<std::size_t>();
    report.footer.graded = j.at("footer").at("graded").get<std::size_t>();
    report.footer.unparseable = j.at("footer").at("unparseable").get<std::size_t>();
    for (const auto& row : j.at("rows")) {
      StratRow r;
      r.label = row.at("stratum").get<std::string>();
      r.n_questions = row.at("n_questions").get<std::size_t>();
      r.n_correct = row.at("n_correct").get<double>();
      r.accuracy = safe_ratio(r.n_correct, r.n_questions);
      report.rows.push_back(std::move(r));
    }
    return report;
  }
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string body = line.substr(1);
      std::istringstream fields(body);
      std::string kv;
      while (fields >> kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
        if (key == "dimension") report.dimension = dimension_from_string(value);
        else if (key == "baseline_accuracy") report.baseline_accuracy = parse_double(value);
        else if (key == "total") report.footer.total = parse_size(value);
        else if (key == "graded") report.footer.graded = parse_size(value);
        else if (key == "unparseable") report.footer.unparseable = parse_size(value);
      }
      continue;
    }
    if (!header_seen) {
      header_seen = true;  // column header
      continue;
    }
    auto fields = csv_split(line);
    if (fields.size() < 4)
      throw std::invalid_argument("bad report row \"" + line + "\"");
    StratRow r;
    r.label = fields[0];
    r.n_questions = parse_size(fields[1]);
    r.n_correct = parse_double(fields[2]);
    r.accuracy = safe_ratio(r.n_correct, r.n_questions);
    report.rows.push_back(std::move(r));
  }
  return report;
}

std::string render_phrase_split(const PhraseSplit& split, ReportFormat format) {
  switch (format) {
    case ReportFormat::csv: {
      std::string out;
      out += "# phrase=" + split.phrase + "\n";
      out += "# total=" + std::to_string(split.footer.total) +
             " graded=" + std::to_string(split.footer.graded) +
             " unparseable=" + std::to_string(split.footer.unparseable) + "\n";
      out += "stratum,n_questions,accuracy,delta_vs_absent,pick_rate\n";
      out += "correct_option," + std::to_string(split.n_when_correct) + ',' +
             format_double(split.acc_when_correct) + ',' +
             format_double(split.acc_when_correct - split.acc_when_absent) + ',' +
             format_double(split.pick_rate_when_correct) + '\n';
      out += "incorrect_option," + std::to_string(split.n_when_incorrect) + ',' +
             format_double(split.acc_when_incorrect) + ',' +
             format_double(split.acc_when_incorrect - split.acc_when_absent) + ',' +
             format_double(split.pick_rate_when_incorrect) + '\n';
      out += "absent," + std::to_string(split.n_when_absent) + ',' +
             format_double(split.acc_when_absent) + ",0,\n";
      return out;
    }
    case ReportFormat::json: {
      ordered_json j;
      j["phrase"] = split.phrase;
      j["n_when_correct"] = split.n_when_correct;
      j["n_when_incorrect"] = split.n_when_incorrect;
      j["n_when_absent"] = split.n_when_absent;
      j["acc_when_correct"] = split.acc_when_correct;
      j["acc_when_incorrect"] = split.acc_when_incorrect;
      j["acc_when_absent"] = split.acc_when_absent;
      j["pick_rate_when_correct"] = split.pick_rate_when_correct;
      j["pick_rate_when_incorrect"] = split.pick_rate_when_incorrect;
      j["footer"] = {{"total", split.footer.total},
                     {"graded", split.footer.graded},
                     {"unparseable", split.footer.unparseable}};
      return j.dump(2) + "\n";
    }
    case ReportFormat::markdown: {
      std::string out;
      out += "### Accuracy vs. presence of \"" + split.phrase + "\" option\n\n";
      out += "| When it is the right answer | When it is not the right answer | When absent |\n";
      out += "|---:|---:|---:|\n";
      out += "| " + percent(split.acc_when_correct) + "% | " +
             percent(split.acc_when_incorrect) + "% | " +
             percent(split.acc_when_absent) + "% |\n\n";
      out += "Pick rate of the \"" + split.phrase + "\" option: " +
             percent(split.pick_rate_when_correct) + "% when it is the right answer, " +
             percent(split.pick_rate_when_incorrect) + "% when it is not.\n";
      return out;
    }
  }
  throw std::logic_error("unreachable format");
}

void emit_phrase_split(const PhraseSplit& split, const std::filesystem::path& path,
                       ReportFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report " + path.string());
  out << render_phrase_split(split, format);
  if (!out) throw std::runtime_error("write failure on " + path.string());
}

}  // namespace qvuln
