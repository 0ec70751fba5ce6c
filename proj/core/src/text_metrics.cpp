#include "qvuln/text_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace qvuln {
namespace {

// Minimal UTF-8 decoding: yields one codepoint per multibyte sequence.
// Invalid bytes are treated as single codepoints.
struct Utf8Cursor {
  std::string_view text;
  std::size_t pos = 0;

  bool done() const { return pos >= text.size(); }

  // Returns (codepoint, byte_length). Non-ASCII codepoints are only
  // classified as letters, so the exact value beyond 0x7F is irrelevant.
  std::pair<char32_t, std::size_t> peek() const {
    unsigned char c = static_cast<unsigned char>(text[pos]);
    if (c < 0x80) return {c, 1};
    std::size_t len = (c >= 0xF0) ? 4 : (c >= 0xE0) ? 3 : (c >= 0xC0) ? 2 : 1;
    len = std::min(len, text.size() - pos);
    return {0x80, len};
  }

  void advance(std::size_t len) { pos += len; }
};

bool is_ascii_alpha(char32_t c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}
bool is_ascii_digit(char32_t c) { return c >= '0' && c <= '9'; }
bool is_ascii_space(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
bool is_letter(char32_t c) { return is_ascii_alpha(c) || c >= 0x80; }
bool is_word_char(char32_t c) {
  return is_letter(c) || is_ascii_digit(c) || c == '\'';
}

bool is_vowel(char c) {
  switch (c) {
    case 'a': case 'e': case 'i': case 'o': case 'u': case 'y':
      return true;
    default:
      return false;
  }
}

std::string lower_ascii(std::string_view word) {
  std::string out(word);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_ascii_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_ascii_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

double FeatureVector::at(std::string_view feature_id) const {
  for (std::size_t i = 0; i < kFeatureIds.size(); ++i)
    if (kFeatureIds[i] == feature_id) return values[i];
  throw std::out_of_range("unknown feature id");
}

double& FeatureVector::at(std::string_view feature_id) {
  for (std::size_t i = 0; i < kFeatureIds.size(); ++i)
    if (kFeatureIds[i] == feature_id) return values[i];
  throw std::out_of_range("unknown feature id");
}

SegmentResult segment(std::string_view text) {
  SegmentResult out;
  Utf8Cursor cur{text};
  std::string sentence, word;
  auto flush_word = [&] {
    if (!word.empty()) {
      out.words.push_back(word);
      word.clear();
    }
  };
  while (!cur.done()) {
    auto [cp, len] = cur.peek();
    std::string_view bytes = text.substr(cur.pos, len);
    ++out.chars;
    if (is_letter(cp)) ++out.letters;
    if (is_ascii_digit(cp)) ++out.digits;
    if (cp < 0x80 && !is_ascii_alpha(cp) && !is_ascii_digit(cp) &&
        !is_ascii_space(cp))
      ++out.special;

    if (is_word_char(cp)) word.append(bytes);
    else flush_word();

    sentence.append(bytes);
    if (cp == '.' || cp == '!' || cp == '?') {
      // Terminator ends a sentence when followed by whitespace or end.
      std::size_t next = cur.pos + len;
      if (next >= text.size() ||
          is_ascii_space(static_cast<unsigned char>(text[next]))) {
        std::string s = trim(sentence);
        if (!s.empty()) out.sentences.push_back(std::move(s));
        sentence.clear();
      }
    }
    cur.advance(len);
  }
  flush_word();
  std::string tail = trim(sentence);
  if (!tail.empty()) out.sentences.push_back(std::move(tail));
  return out;
}

std::size_t count_syllables(std::string_view word) {
  if (word.empty()) throw std::invalid_argument("count_syllables: empty word");
  std::string w = lower_ascii(word);
  if (!w.empty() && w.back() == 'e') {
    bool keep = w.size() >= 3 && w[w.size() - 2] == 'l' &&
                is_ascii_alpha(static_cast<unsigned char>(w[w.size() - 3])) &&
                !is_vowel(w[w.size() - 3]);
    if (!keep) w.pop_back();
  }
  std::size_t runs = 0;
  bool prev = false;
  for (char c : w) {
    bool v = is_vowel(c);
    if (v && !prev) ++runs;
    prev = v;
  }
  return std::max<std::size_t>(runs, 1);
}

WordList WordList::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read word list " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string w = trim(line);
    if (!w.empty()) words.push_back(lower_ascii(w));
  }
  return from_words(std::move(words));
}

WordList WordList::from_words(std::vector<std::string> words) {
  WordList wl;
  for (auto& w : words) wl.words_.emplace(std::move(w), true);
  for (const auto& [w, _] : wl.words_) wl.sorted_.push_back(w);
  return wl;
}

bool WordList::contains(std::string_view lowercase_word) const {
  return words_.find(lowercase_word) != words_.end();
}

FeatureVector readability(std::string_view text, const WordList& familiar) {
  SegmentResult seg = segment(text);
  const double W = static_cast<double>(seg.words.size());
  if (seg.words.empty())
    throw std::invalid_argument("readability: empty text (zero words)");
  const double S = static_cast<double>(std::max<std::size_t>(seg.sentences.size(), 1));
  const double L = static_cast<double>(seg.letters);

  double syllables = 0, poly = 0, difficult = 0;
  for (const auto& word : seg.words) {
    std::size_t y = count_syllables(word);
    syllables += static_cast<double>(y);
    if (y >= 3) ++poly;  // also the Fog complex-word rule: no exclusions
    std::string lw = lower_ascii(word);
    if (lw.size() >= 2 && lw.compare(lw.size() - 2, 2, "'s") == 0)
      lw.erase(lw.size() - 2);
    else if (!lw.empty() && lw.back() == '\'')
      lw.pop_back();
    if (!familiar.contains(lw)) ++difficult;
  }
  const double Y = syllables, P = poly, C = poly, D = difficult;

  FeatureVector f;
  f.at("words") = W;
  f.at("chars") = static_cast<double>(seg.chars);
  f.at("sentences") = static_cast<double>(seg.sentences.size());
  f.at("words_per_sentence") = W / S;
  f.at("chars_per_sentence") = static_cast<double>(seg.chars) / S;
  f.at("chars_per_word") = static_cast<double>(seg.chars) / W;
  f.at("special_figures") = static_cast<double>(seg.special);
  f.at("numeric_figures") = static_cast<double>(seg.digits);

  f.at("flesch_reading_ease") = 206.835 - 1.015 * W / S - 84.6 * Y / W;
  f.at("flesch_kincaid_grade") = 0.39 * W / S + 11.8 * Y / W - 15.59;
  f.at("smog") = 1.0430 * std::sqrt(P * 30.0 / S) + 3.1291;
  f.at("coleman_liau") = 0.0588 * (100.0 * L / W) - 0.296 * (100.0 * S / W) - 15.8;
  f.at("ari") = 4.71 * L / W + 0.5 * W / S - 21.43;
  double dale = 0.1579 * (100.0 * D / W) + 0.0496 * W / S;
  if (100.0 * D / W > 5.0) dale += 3.6365;
  f.at("dale_chall") = dale;
  f.at("gunning_fog") = 0.4 * (W / S + 100.0 * C / W);
  f.at("gulpease") = std::clamp(89.0 + (300.0 * S - 10.0 * L) / W, 0.0, 100.0);
  return f;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_similarity: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::map<std::string, double> term_frequency(std::string_view text) {
  std::map<std::string, double> tf;
  for (const auto& word : segment(text).words) tf[lower_ascii(word)] += 1.0;
  return tf;
}

double cosine_similarity_texts(std::string_view a, std::string_view b) {
  auto ta = term_frequency(a), tb = term_frequency(b);
  std::set<std::string> vocab;
  for (const auto& [w, _] : ta) vocab.insert(w);
  for (const auto& [w, _] : tb) vocab.insert(w);
  std::vector<double> va, vb;
  va.reserve(vocab.size());
  vb.reserve(vocab.size());
  for (const auto& w : vocab) {
    auto ia = ta.find(w);
    auto ib = tb.find(w);
    va.push_back(ia == ta.end() ? 0.0 : ia->second);
    vb.push_back(ib == tb.end() ? 0.0 : ib->second);
  }
  return cosine_similarity(va, vb);
}

FeatureTable featurize_bank(const QuestionBank& bank, const WordList& familiar) {
  FeatureTable table;
  table.rows.reserve(bank.size());
  for (const auto& q : bank.questions) {
    FeatureRow row;
    row.question_id = q.id;
    try {
      row.features = readability(q.stem, familiar);
    } catch (const std::exception& ex) {
      row.error = ex.what();
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string feature_table_csv(const FeatureTable& table) {
  std::string out = "question_id";
  for (auto id : kFeatureIds) {
    out += ',';
    out += id;
  }
  out += ",error\n";
  for (const auto& row : table.rows) {
    out += row.question_id;
    if (row.features) {
      for (double v : row.features->values) {
        out += ',';
        out += format_number(v);
      }
      out += ",\n";
    } else {
      for (std::size_t i = 0; i < kFeatureIds.size(); ++i) out += ',';
      out += ',';
      out += row.error;
      out += '\n';
    }
  }
  return out;
}

std::string feature_table_json(const FeatureTable& table) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& row : table.rows) {
    nlohmann::ordered_json rec;
    rec["question_id"] = row.question_id;
    if (row.features) {
      nlohmann::ordered_json f;
      for (std::size_t i = 0; i < kFeatureIds.size(); ++i)
        f[std::string(kFeatureIds[i])] = row.features->values[i];
      rec["features"] = std::move(f);
    } else {
      rec["error"] = row.error;
    }
    arr.push_back(std::move(rec));
  }
  return arr.dump(2) + "\n";
}

}  // namespace qvuln
