#include "qvuln/wordpiece.hpp"

#include <fstream>
#include <stdexcept>

namespace qvuln {
namespace {

bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
bool is_ascii_alnum(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}
// Punctuation for pre-splitting: printable ASCII that is neither
// alphanumeric nor whitespace. Multi-byte UTF-8 stays inside words.
bool is_punct(unsigned char c) {
  return c < 0x80 && !is_ascii_alnum(c) && !is_ascii_space(c);
}

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

constexpr std::string_view kContinuation = "##";

bool is_continuation(std::string_view token) {
  return token.size() > 2 && token.substr(0, 2) == kContinuation;
}

}  // namespace

void Vocab::build_index() {
  index_.clear();
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
    if (!inserted)
      throw std::invalid_argument("duplicate vocab token \"" + tokens_[i] +
                                  "\" at line " + std::to_string(i + 1));
  }
  auto require = [&](std::string_view name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("vocab missing special token " + std::string(name));
    return it->second;
  };
  cls_ = require("[CLS]");
  sep_ = require("[SEP]");
  unk_ = require("[UNK]");
  pad_ = require("[PAD]");
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocab file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  // A trailing blank line is file formatting, not an empty token.
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  if (tokens.empty()) throw std::invalid_argument("empty vocab file " + path.string());
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.empty()) throw std::invalid_argument("empty vocab");
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.build_index();
  return v;
}

std::optional<int> Vocab::id(std::string_view token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> pre_split(std::string_view text, bool lowercase) {
  std::string src = lowercase ? lower_ascii(text) : std::string(text);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < src.size()) {
    if (is_ascii_space(static_cast<unsigned char>(src[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < src.size() && !is_ascii_space(static_cast<unsigned char>(src[j])))
      ++j;
    std::string_view chunk{src.data() + i, j - i};
    i = j;

    std::size_t b = 0, e = chunk.size();
    while (b < e && is_punct(static_cast<unsigned char>(chunk[b]))) ++b;
    while (e > b && is_punct(static_cast<unsigned char>(chunk[e - 1]))) --e;
    for (std::size_t k = 0; k < b; ++k) out.emplace_back(1, chunk[k]);
    std::string word;
    for (std::size_t k = b; k < e; ++k) {
      if (!is_punct(static_cast<unsigned char>(chunk[k]))) word += chunk[k];
    }
    if (!word.empty()) out.push_back(std::move(word));
    for (std::size_t k = e; k < chunk.size(); ++k) out.emplace_back(1, chunk[k]);
  }
  return out;
}

namespace {

// Greedy longest-match segmentation of a single word. Returns false when no
// valid segmentation exists (caller substitutes [UNK]).
bool segment_word(const std::string& word, const Vocab& vocab,
                  std::vector<std::string>& out) {
  std::vector<std::string> pieces;
  std::size_t start = 0;
  std::string candidate;
  while (start < word.size()) {
    std::size_t end = word.size();
    bool found = false;
    while (start < end) {
      candidate.clear();
      if (start > 0) candidate = kContinuation;
      candidate.append(word, start, end - start);
      if (vocab.id(candidate)) {
        found = true;
        break;
      }
      --end;
    }
    if (!found) return false;
    pieces.push_back(candidate);
    start = end;
  }
  out.insert(out.end(), std::make_move_iterator(pieces.begin()),
             std::make_move_iterator(pieces.end()));
  return true;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text, const Vocab& vocab,
                                  bool lowercase) {
  std::vector<std::string> out;
  for (const auto& unit : pre_split(text, lowercase)) {
    if (!segment_word(unit, vocab, out)) out.emplace_back("[UNK]");
  }
  return out;
}

Encoding encode(std::string_view text, const Vocab& vocab, std::size_t max_len,
                const std::set<std::string>* stoplist) {
  if (max_len < 2) throw std::invalid_argument("encode: max_len must be >= 2");
  std::vector<std::string> pieces;
  for (const auto& unit : pre_split(text, true)) {
    if (stoplist && stoplist->count(unit)) continue;  // word level, pre-subword
    if (!segment_word(unit, vocab, pieces)) pieces.emplace_back("[UNK]");
  }

  Encoding enc;
  enc.tokens.reserve(max_len);
  enc.tokens.emplace_back("[CLS]");
  for (auto& p : pieces) {
    if (enc.tokens.size() + 1 >= max_len) break;  // leave room for [SEP]
    enc.tokens.push_back(std::move(p));
  }
  enc.tokens.emplace_back("[SEP]");

  enc.ids.reserve(max_len);
  enc.attention_mask.reserve(max_len);
  for (const auto& t : enc.tokens) {
    auto fid = vocab.id(t);
    enc.ids.push_back(fid ? *fid : vocab.unk_id());
    enc.attention_mask.push_back(1);
  }
  while (enc.ids.size() < max_len) {
    enc.tokens.emplace_back("[PAD]");
    enc.ids.push_back(vocab.pad_id());
    enc.attention_mask.push_back(0);
  }
  return enc;
}

std::vector<std::string> remove_stopwords(const std::vector<std::string>& tokens,
                                          const std::set<std::string>& stoplist) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    bool fragment = is_continuation(t) ||
                    (i + 1 < tokens.size() && is_continuation(tokens[i + 1]));
    if (!fragment && stoplist.count(t)) continue;
    out.push_back(t);
  }
  return out;
}

std::set<std::string> load_stoplist(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read stop-word list " + path.string());
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.insert(lower_ascii(line));
  }
  return out;
}

}  // namespace qvuln
