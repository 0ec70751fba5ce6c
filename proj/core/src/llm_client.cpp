#include "qvuln/llm_client.hpp"

#include <unistd.h>

#include <atomic>
#include <cctype>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "qvuln/errors.hpp"

namespace qvuln {
namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::optional<std::size_t> letter_index(char ch, std::size_t n_options) {
  std::size_t idx;
  if (ch >= 'A' && ch <= 'H') idx = static_cast<std::size_t>(ch - 'A');
  else if (ch >= 'a' && ch <= 'h') idx = static_cast<std::size_t>(ch - 'a');
  else return std::nullopt;
  if (idx >= n_options) return std::nullopt;
  return idx;
}

bool standalone_before(const std::string& s, std::size_t pos) {
  return pos == 0 || !is_alnum(s[pos - 1]);
}

// Separator between letters of a multi-select group: "," [and] | "and" | "&".
// Returns chars consumed (0 = no separator). Caller has skipped blanks.
std::size_t match_separator(const std::string& s, std::size_t pos) {
  std::size_t i = pos;
  auto skip_ws = [&] { while (i < s.size() && is_space(s[i])) ++i; };
  auto try_and = [&]() -> bool {
    if (s.compare(i, 3, "and") == 0 && i + 3 < s.size() && is_space(s[i + 3])) {
      i += 3;
      skip_ws();
      return true;
    }
    return false;
  };
  if (i < s.size() && s[i] == ',') {
    ++i;
    skip_ws();
    try_and();
    return i - pos;
  }
  if (try_and()) return i - pos;
  if (i < s.size() && s[i] == '&') {
    ++i;
    skip_ws();
    return i - pos;
  }
  return 0;
}

// Parses a letter group ("(B)", "A and D", "a, c") starting at `pos`.
// A single bare letter is only accepted when `require_decor_single` is false
// or nothing alphanumeric follows it (so "A cat ..." is not a choice of A).
std::optional<std::set<std::size_t>> parse_group(const std::string& s,
                                                 std::size_t pos,
                                                 std::size_t n_options,
                                                 bool require_decor_single) {
  std::vector<std::size_t> items;
  std::vector<bool> decor;
  std::size_t i = pos;
  while (true) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    if (!items.empty()) {
      std::size_t sep = match_separator(s, i);
      if (sep == 0) break;
      j = i + sep;
    }
    std::optional<std::size_t> idx;
    std::size_t consumed = 0;
    bool decorated = false;
    if (j + 2 < s.size() && s[j] == '(' && s[j + 2] == ')') {
      idx = letter_index(s[j + 1], n_options);
      consumed = 3;
      decorated = true;
    }
    if (!idx && j < s.size()) {
      char next = j + 1 < s.size() ? s[j + 1] : '\0';
      if ((next == ')' || next == '.' || next == ':' || next == ',') &&
          standalone_before(s, j)) {
        idx = letter_index(s[j], n_options);
        consumed = 2;
        decorated = true;
      } else if ((j + 1 == s.size() || !is_alnum(next)) && standalone_before(s, j)) {
        idx = letter_index(s[j], n_options);
        consumed = 1;
        decorated = false;
      }
    }
    if (!idx) break;
    items.push_back(*idx);
    decor.push_back(decorated);
    i = j + consumed;
  }
  if (items.empty()) return std::nullopt;
  if (items.size() == 1 && !decor.front() && require_decor_single) {
    for (std::size_t k = i; k < s.size(); ++k) {
      if (is_alnum(s[k])) return std::nullopt;
    }
  }
  return std::set<std::size_t>(items.begin(), items.end());
}

// Positions right after an "answer is/are/was/:" anchor.
std::vector<std::size_t> anchor_sites(const std::string& s) {
  std::vector<std::size_t> sites;
  for (std::size_t i = 0; i + 6 <= s.size(); ++i) {
    if ((s[i] != 'a' && s[i] != 'A') || s.compare(i + 1, 5, "nswer") != 0) continue;
    std::size_t j = i + 6;
    if (j < s.size() && s[j] == 's') ++j;
    while (j < s.size() && is_space(s[j])) ++j;
    if (s.compare(j, 2, "is") == 0) j += 2;
    else if (s.compare(j, 3, "are") == 0) j += 3;
    else if (s.compare(j, 3, "was") == 0) j += 3;
    else if (j < s.size() && s[j] == ':') j += 1;
    else continue;
    while (j < s.size() && is_space(s[j])) ++j;
    sites.push_back(j);
  }
  return sites;
}

std::string iso_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ordered_json response_to_json(const ModelResponse& r) {
  ordered_json rec;
  rec["question_id"] = r.question_id;
  rec["model_id"] = r.model_id;
  rec["trial"] = r.trial;
  rec["raw_text"] = r.raw_text;
  if (r.parsed)
    rec["parsed"] = std::vector<std::size_t>(r.parsed->begin(), r.parsed->end());
  else
    rec["parsed"] = nullptr;
  if (r.correct) rec["correct"] = *r.correct;
  else rec["correct"] = nullptr;
  rec["timestamp"] = iso_timestamp();
  return rec;
}

ModelResponse response_from_json(const json& rec) {
  ModelResponse r;
  r.question_id = rec.at("question_id").get<std::string>();
  r.model_id = rec.at("model_id").get<std::string>();
  r.trial = rec.at("trial").get<int>();
  r.raw_text = rec.at("raw_text").get<std::string>();
  if (!rec.at("parsed").is_null()) {
    std::set<std::size_t> parsed;
    for (const auto& v : rec.at("parsed")) parsed.insert(v.get<std::size_t>());
    r.parsed = std::move(parsed);
  }
  if (!rec.at("correct").is_null()) r.correct = rec.at("correct").get<bool>();
  return r;
}

constexpr int kMaxAttempts = 3;
constexpr const char* kErrorPrefix = "[request-error] ";

}  // namespace

void validate_config(const ClientConfig& cfg) {
  if (cfg.trials_per_question < 1)
    throw ConfigError("trials_per_question must be >= 1");
  if (cfg.max_parallel < 1) throw ConfigError("max_parallel must be >= 1");
  if (cfg.min_request_interval.count() < 0)
    throw ConfigError("min_request_interval must be >= 0");
}

std::string build_prompt(const Question& q, PromptStyle style) {
  std::string out = q.stem;
  for (std::size_t i = 0; i < q.options.size(); ++i) {
    out += '\n';
    out += '(';
    out += option_letter(i);
    out += ") ";
    out += q.options[i];
  }
  if (style == PromptStyle::force_letter)
    out += "\nAnswer with the letter(s) of the correct option(s) only.";
  return out;
}

std::optional<std::set<std::size_t>> parse_choice(const std::string& raw,
                                                  std::size_t n_options) {
  if (n_options < kMinOptions || n_options > kMaxOptions)
    throw std::invalid_argument("parse_choice: n_options outside [2,8]");

  // Rule 1: a letter group right after "answer is" / "answer:" / "answers are".
  for (std::size_t site : anchor_sites(raw)) {
    auto group = parse_group(raw, site, n_options, /*require_decor_single=*/false);
    if (group) return group;
  }

  // Rule 2: a letter token at the start of the reply: "(B)", "B)", "B.",
  // or a bare letter (group) like "A and D ...".
  std::size_t start = 0;
  while (start < raw.size() &&
         (is_space(raw[start]) || raw[start] == '"' || raw[start] == '\''))
    ++start;
  if (auto group = parse_group(raw, start, n_options, /*require_decor_single=*/true))
    return group;

  // Rule 3: a unique uppercase option letter followed by ')' anywhere.
  std::set<std::size_t> found;
  for (std::size_t i = 0; i + 1 < raw.size(); ++i) {
    if (raw[i + 1] != ')') continue;
    if (raw[i] < 'A' || raw[i] > 'H') continue;
    if (!standalone_before(raw, i)) continue;
    if (auto idx = letter_index(raw[i], n_options)) found.insert(*idx);
  }
  if (found.size() == 1) return found;

  return std::nullopt;  // no rule fired, or rules conflict
}

// ---------------------------------------------------------------------------
// Mock backend

MockBackend MockBackend::constant_letter(char letter) {
  MockBackend b;
  b.mode_ = Mode::constant;
  b.constant_reply_ = std::string("(") + letter + ")";
  return b;
}

MockBackend MockBackend::per_question(std::map<std::string, std::string> replies) {
  MockBackend b;
  b.mode_ = Mode::per_question;
  b.by_question_ = std::move(replies);
  return b;
}

MockBackend MockBackend::replay(const std::filesystem::path& transcript_jsonl) {
  std::ifstream in(transcript_jsonl);
  if (!in)
    throw std::runtime_error("cannot read transcript " + transcript_jsonl.string());
  MockBackend b;
  b.mode_ = Mode::replay;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, true);
    std::string qid = rec.at("question_id").get<std::string>();
    std::string raw = rec.at("raw_text").get<std::string>();
    if (rec.contains("trial") && !rec.at("trial").is_null())
      b.by_question_trial_[{qid, rec.at("trial").get<int>()}] = raw;
    else
      b.by_question_[qid] = raw;
  }
  return b;
}

MockBackend MockBackend::from_script(const std::string& script) {
  auto colon = script.find(':');
  std::string kind = script.substr(0, colon == std::string::npos ? script.size() : colon);
  std::string arg = colon == std::string::npos ? "" : script.substr(colon + 1);
  if (kind == "constant") {
    if (arg.size() != 1 || arg[0] < 'A' || arg[0] > 'H')
      throw ConfigError("mock constant letter must be A..H, got \"" + arg + "\"");
    return constant_letter(arg[0]);
  }
  if (kind == "map") {
    std::ifstream in(arg);
    if (!in) throw ConfigError("cannot read mock map file " + arg);
    json obj = json::parse(in);
    std::map<std::string, std::string> replies;
    for (const auto& [k, v] : obj.items()) replies[k] = v.get<std::string>();
    return per_question(std::move(replies));
  }
  if (kind == "replay") return replay(arg);
  throw ConfigError("unknown mock script \"" + script +
                    "\" (expected constant:<L>, map:<file>, replay:<file>)");
}

std::string MockBackend::complete(const std::string&, const Question& q,
                                  int trial, const ClientConfig&) {
  ++calls_;
  switch (mode_) {
    case Mode::constant:
      return constant_reply_;
    case Mode::per_question: {
      auto it = by_question_.find(q.id);
      if (it == by_question_.end())
        throw std::runtime_error("mock has no reply for question " + q.id);
      return it->second;
    }
    case Mode::replay: {
      auto it = by_question_trial_.find({q.id, trial});
      if (it != by_question_trial_.end()) return it->second;
      auto fallback = by_question_.find(q.id);
      if (fallback != by_question_.end()) return fallback->second;
      throw std::runtime_error("transcript has no reply for question " + q.id +
                               " trial " + std::to_string(trial));
    }
  }
  throw std::logic_error("unreachable mock mode");
}

// ---------------------------------------------------------------------------
// HTTP backend

void HttpBackend::pace(const ClientConfig& cfg) {
  if (cfg.min_request_interval.count() <= 0) return;
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(pace_mutex_);
    auto now = std::chrono::steady_clock::now();
    slot = std::max(next_allowed_, now);
    next_allowed_ = slot + cfg.min_request_interval;
  }
  std::this_thread::sleep_until(slot);
}

std::string HttpBackend::complete(const std::string& prompt, const Question&,
                                  int, const ClientConfig& cfg) {
  ++calls_;
  const char* key = std::getenv(cfg.api_key_env.c_str());
  if (key == nullptr || *key == '\0')
    throw ConfigError("API key environment variable " + cfg.api_key_env +
                      " is not set");
  if (cfg.endpoint_url.empty()) throw ConfigError("endpoint_url is empty");

  auto scheme_end = cfg.endpoint_url.find("://");
  if (scheme_end == std::string::npos)
    throw ConfigError("endpoint_url must start with http:// or https://");
  auto path_start = cfg.endpoint_url.find('/', scheme_end + 3);
  std::string host = path_start == std::string::npos
                         ? cfg.endpoint_url
                         : cfg.endpoint_url.substr(0, path_start);
  std::string path = path_start == std::string::npos
                         ? std::string("/")
                         : cfg.endpoint_url.substr(path_start);

  ordered_json body;
  body["model"] = cfg.model_id;
  body["messages"] = json::array({{{"role", "user"}, {"content", prompt}}});
  body["temperature"] = cfg.temperature;
  const std::string payload = body.dump();

  httplib::Headers headers{{"Authorization", std::string("Bearer ") + key}};

  std::string last_error;
  auto backoff = cfg.retry_backoff;
  for (int attempt = 1; attempt <= kMaxAttempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    pace(cfg);
    httplib::Client client(host);
    client.set_connection_timeout(cfg.timeout);
    client.set_read_timeout(cfg.timeout);
    client.set_write_timeout(cfg.timeout);
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      json reply = json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& ex) {
      last_error = std::string("malformed reply: ") + ex.what();
    }
  }
  throw std::runtime_error(last_error + " after " + std::to_string(kMaxAttempts) +
                           " attempts");
}

// ---------------------------------------------------------------------------
// Response cache

ResponseCache::ResponseCache(std::filesystem::path file) : file_(std::move(file)) {
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  if (std::filesystem::exists(file_)) {
    std::ifstream in(file_);
    if (!in) throw std::runtime_error("cannot read cache file " + file_.string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ModelResponse r = response_from_json(json::parse(line));
      Key key{r.question_id, r.model_id, r.trial};
      if (index_.count(key)) continue;  // first write wins; never overwritten
      index_.emplace(std::move(key), order_.size());
      order_.push_back(std::move(r));
    }
  }
  out_ = std::fopen(file_.string().c_str(), "ab");
  if (out_ == nullptr)
    throw std::runtime_error("cannot open cache file for append: " + file_.string());
}

ResponseCache::~ResponseCache() {
  if (out_ != nullptr) std::fclose(out_);
}

std::optional<ModelResponse> ResponseCache::get(const std::string& question_id,
                                                const std::string& model_id,
                                                int trial) const {
  std::lock_guard lock(mutex_);
  auto it = index_.find(Key{question_id, model_id, trial});
  if (it == index_.end()) return std::nullopt;
  return order_[it->second];
}

bool ResponseCache::contains(const std::string& question_id,
                             const std::string& model_id, int trial) const {
  std::lock_guard lock(mutex_);
  return index_.count(Key{question_id, model_id, trial}) > 0;
}

void ResponseCache::append(const ModelResponse& response) {
  std::lock_guard lock(mutex_);
  Key key{response.question_id, response.model_id, response.trial};
  if (index_.count(key))
    throw std::logic_error("cache key already written: " + response.question_id +
                           "/" + response.model_id + "/" +
                           std::to_string(response.trial));
  std::string line = response_to_json(response).dump();
  line += '\n';
  if (std::fwrite(line.data(), 1, line.size(), out_) != line.size() ||
      std::fflush(out_) != 0)
    throw std::runtime_error("cache write failure on " + file_.string());
  ::fsync(::fileno(out_));
  index_.emplace(std::move(key), order_.size());
  order_.push_back(response);
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mutex_);
  return order_.size();
}

std::vector<ModelResponse> ResponseCache::entries() const {
  std::lock_guard lock(mutex_);
  return order_;
}

std::vector<std::string> ResponseCache::model_ids() const {
  std::lock_guard lock(mutex_);
  std::set<std::string> ids;
  for (const auto& r : order_) ids.insert(r.model_id);
  return {ids.begin(), ids.end()};
}

std::vector<ModelResponse> ResponseCache::entries_for_model(
    const std::string& model_id) const {
  std::lock_guard lock(mutex_);
  std::vector<ModelResponse> out;
  for (const auto& r : order_) {
    if (r.model_id == model_id) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// ask / collect

std::vector<ModelResponse> ask(const Question& q, const ClientConfig& cfg,
                               ResponseCache& cache, Backend& backend) {
  validate_config(cfg);
  std::vector<ModelResponse> out;
  out.reserve(static_cast<std::size_t>(cfg.trials_per_question));
  for (int trial = 0; trial < cfg.trials_per_question; ++trial) {
    if (auto cached = cache.get(q.id, cfg.model_id, trial)) {
      out.push_back(std::move(*cached));
      continue;
    }
    ModelResponse r;
    r.question_id = q.id;
    r.model_id = cfg.model_id;
    r.trial = trial;
    try {
      r.raw_text = backend.complete(build_prompt(q, PromptStyle::force_letter), q,
                                    trial, cfg);
      r.parsed = parse_choice(r.raw_text, q.options.size());
      if (r.parsed) r.correct = grade(q, *r.parsed);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      r.raw_text = kErrorPrefix + std::string(ex.what());
      r.parsed = std::nullopt;
      r.correct = std::nullopt;
    }
    cache.append(r);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ModelResponse> collect(const QuestionBank& bank,
                                   const ClientConfig& cfg, ResponseCache& cache,
                                   Backend& backend, CollectStats* stats,
                                   const ProgressFn& progress) {
  if (bank.empty()) throw std::invalid_argument("collect: empty bank");
  validate_config(cfg);

  const std::size_t n = bank.size();
  std::vector<std::vector<ModelResponse>> per_question(n);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::atomic<std::size_t> hits{0};
  std::mutex failure_mutex;
  std::exception_ptr failure;

  auto worker = [&] {
    while (true) {
      if (failure != nullptr) return;
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      const Question& q = bank.questions[i];
      try {
        for (int t = 0; t < cfg.trials_per_question; ++t) {
          if (cache.contains(q.id, cfg.model_id, t)) hits.fetch_add(1);
        }
        per_question[i] = ask(q, cfg, cache, backend);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (failure == nullptr) failure = std::current_exception();
        return;
      }
      std::size_t d = done.fetch_add(1) + 1;
      if (progress) progress(d, n);
    }
  };

  std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.max_parallel), n);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure != nullptr) std::rethrow_exception(failure);

  std::vector<ModelResponse> out;
  out.reserve(n * static_cast<std::size_t>(cfg.trials_per_question));
  CollectStats s;
  s.questions = n;
  s.cache_hits = hits.load();
  for (auto& responses : per_question) {
    for (auto& r : responses) {
      ++s.responses;
      if (r.unparseable()) {
        ++s.unparseable;
        if (r.raw_text.rfind(kErrorPrefix, 0) == 0) ++s.failures;
      }
      out.push_back(std::move(r));
    }
  }
  if (stats != nullptr) *stats = s;
  return out;
}

}  // namespace qvuln
