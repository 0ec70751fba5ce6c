#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qvuln {

/// WordPiece vocabulary: one token per line, id = 0-based line number.
/// Requires the [CLS] [SEP] [UNK] [PAD] specials and rejects duplicates.
class Vocab {
 public:
  static Vocab load(const std::filesystem::path& path);
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::optional<int> id(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  int cls_id() const { return cls_; }
  int sep_id() const { return sep_; }
  int unk_id() const { return unk_; }
  int pad_id() const { return pad_; }

 private:
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int, StringHash, std::equal_to<>> index_;
  int cls_ = -1, sep_ = -1, unk_ = -1, pad_ = -1;

  void build_index();
};

struct Encoding {
  std::vector<std::string> tokens;
  std::vector<int> ids;
  std::vector<int> attention_mask;  // 1 for real tokens, then 0 padding

  bool operator==(const Encoding&) const = default;
};

/// Splits text into word/punctuation units ahead of subword segmentation:
/// whitespace-separated chunks; leading/trailing punctuation of a chunk
/// becomes standalone single-character tokens; punctuation inside a chunk is
/// dropped and the fragments joined ("hyper-parameters" -> "hyperparameters").
std::vector<std::string> pre_split(std::string_view text, bool lowercase = true);

/// Greedy longest-match-first subword segmentation; continuation pieces carry
/// the "##" prefix; a word with no valid segmentation becomes [UNK].
std::vector<std::string> tokenize(std::string_view text, const Vocab& vocab,
                                  bool lowercase = true);

/// [CLS] + pieces + [SEP], truncated to max_len keeping [SEP] last, right-
/// padded with [PAD]. Requires max_len >= 2. Optional stop-word removal is
/// applied at the pre-split word level, never to subword pieces.
Encoding encode(std::string_view text, const Vocab& vocab, std::size_t max_len,
                const std::set<std::string>* stoplist = nullptr);

/// Filters exact stop-word matches from a token sequence. Continuation
/// pieces ("##...") are never removed, and neither is a word-initial piece
/// that is continued by one (it is a fragment, not a whole word).
std::vector<std::string> remove_stopwords(const std::vector<std::string>& tokens,
                                          const std::set<std::string>& stoplist);

std::set<std::string> load_stoplist(const std::filesystem::path& path);

}  // namespace qvuln
