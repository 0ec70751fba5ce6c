#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "qvuln/question.hpp"

namespace qvuln {

struct ClientConfig {
  std::string endpoint_url;
  std::string model_id = "gpt-3.5-turbo";
  std::string api_key_env = "OPENAI_API_KEY";
  int trials_per_question = 1;
  int max_parallel = 1;
  std::chrono::milliseconds min_request_interval{0};
  std::chrono::milliseconds timeout{30000};
  double temperature = 1.0;
  // First retry delay; doubles on each of the (3 total) attempts.
  std::chrono::milliseconds retry_backoff{1000};
};

void validate_config(const ClientConfig& cfg);

enum class PromptStyle { plain, force_letter };

/// Deterministic prompt: stem, then options prefixed "(A) ", "(B) ", ... ;
/// force_letter appends an instruction to answer with the letter(s) only.
std::string build_prompt(const Question& q, PromptStyle style);

/// Extracts chosen option letters from a free-text reply. Returns nullopt
/// (Unparseable) when no rule fires or the rules conflict. Never returns an
/// index >= n_options.
std::optional<std::set<std::size_t>> parse_choice(const std::string& raw,
                                                  std::size_t n_options);

/// A chat-completion backend. complete() returns the raw reply text and
/// throws on failure; implementations count their invocations so tests can
/// observe cache behavior.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const std::string& prompt, const Question& q,
                               int trial, const ClientConfig& cfg) = 0;
  virtual std::string name() const = 0;

  int calls() const { return calls_.load(); }

 protected:
  std::atomic<int> calls_{0};
};

/// Offline backend, scriptable three ways: a constant letter, a
/// per-question-id reply map, or replay from a transcript JSONL file with
/// fields question_id, trial (optional), raw_text.
class MockBackend : public Backend {
 public:
  static MockBackend constant_letter(char letter);
  static MockBackend per_question(std::map<std::string, std::string> replies);
  static MockBackend replay(const std::filesystem::path& transcript_jsonl);

  /// Parses a CLI-style script: "constant:B", "map:<file>", "replay:<file>".
  static MockBackend from_script(const std::string& script);

  std::string complete(const std::string& prompt, const Question& q, int trial,
                       const ClientConfig& cfg) override;
  std::string name() const override { return "mock"; }

 private:
  enum class Mode { constant, per_question, replay };
  Mode mode_ = Mode::constant;
  std::string constant_reply_;
  std::map<std::string, std::string> by_question_;
  std::map<std::pair<std::string, int>, std::string> by_question_trial_;

  MockBackend() = default;
};

/// POSTs {"model", "messages", "temperature"} to endpoint_url with a bearer
/// token from the configured environment variable and reads
/// choices[0].message.content. 3 attempts with exponential backoff; enforces
/// min_request_interval between request starts across all threads.
class HttpBackend : public Backend {
 public:
  HttpBackend() = default;

  std::string complete(const std::string& prompt, const Question& q, int trial,
                       const ClientConfig& cfg) override;
  std::string name() const override { return "http"; }

 private:
  std::mutex pace_mutex_;
  std::chrono::steady_clock::time_point next_allowed_{};

  void pace(const ClientConfig& cfg);
};

/// Append-only JSONL response store keyed by (question_id, model_id, trial).
/// Existing entries are loaded on open; appends are serialized and fsynced;
/// a key can never be overwritten.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path file);
  ~ResponseCache();

  ResponseCache(const ResponseCache&) = delete;
  ResponseCache& operator=(const ResponseCache&) = delete;

  std::optional<ModelResponse> get(const std::string& question_id,
                                   const std::string& model_id, int trial) const;
  void append(const ModelResponse& response);
  bool contains(const std::string& question_id, const std::string& model_id,
                int trial) const;

  std::size_t size() const;
  std::vector<ModelResponse> entries() const;           // insertion order
  std::vector<std::string> model_ids() const;           // sorted unique
  std::vector<ModelResponse> entries_for_model(const std::string& model_id) const;

  const std::filesystem::path& path() const { return file_; }

 private:
  struct Key {
    std::string question_id;
    std::string model_id;
    int trial;
    bool operator<(const Key& o) const {
      if (question_id != o.question_id) return question_id < o.question_id;
      if (model_id != o.model_id) return model_id < o.model_id;
      return trial < o.trial;
    }
  };
  std::filesystem::path file_;
  mutable std::mutex mutex_;
  std::map<Key, std::size_t> index_;  // -> position in order_
  std::vector<ModelResponse> order_;
  std::FILE* out_ = nullptr;
};

/// Runs all trials for one question: cache hits are returned without backend
/// calls; fresh replies are parsed, graded, and appended to the cache before
/// returning. Backend failures degrade to an Unparseable response carrying an
/// error note.
std::vector<ModelResponse> ask(const Question& q, const ClientConfig& cfg,
                               ResponseCache& cache, Backend& backend);

struct CollectStats {
  std::size_t questions = 0;
  std::size_t responses = 0;
  std::size_t cache_hits = 0;
  std::size_t failures = 0;     // backend errors recorded as Unparseable
  std::size_t unparseable = 0;  // includes failures
};

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

/// Responses for every question x trial in deterministic order (bank order,
/// then trial index), running up to cfg.max_parallel questions in flight.
std::vector<ModelResponse> collect(const QuestionBank& bank,
                                   const ClientConfig& cfg, ResponseCache& cache,
                                   Backend& backend, CollectStats* stats = nullptr,
                                   const ProgressFn& progress = {});

}  // namespace qvuln
