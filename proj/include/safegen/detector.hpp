#pragma once

// Inappropriate-input detection. Two routes pick a label from C ∪ C̃:
// a nearest-centroid pass in embedding space, and an LLM instruction whose
// free-form answer is mapped back onto the label set by gestalt matching.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "safegen/embedding.hpp"
#include "safegen/errors.hpp"
#include "safegen/registry.hpp"

namespace safegen {

enum class DetectionMethod { nearest_neighbor, llm };

inline const char* to_string(DetectionMethod m) {
  return m == DetectionMethod::nearest_neighbor ? "nearest_neighbor" : "llm";
}

struct Detection {
  std::string predicted_label;
  ConceptClass predicted_class = ConceptClass::safe;
  double best_similarity = 0.0;
  double margin = 0.0;  // best minus runner-up, >= 0
  DetectionMethod method = DetectionMethod::nearest_neighbor;

  bool inappropriate() const noexcept { return predicted_class == ConceptClass::unsafe; }

  friend bool operator==(const Detection&, const Detection&) = default;
};

// ---------------------------------------------------------------------------
// Nearest-centroid detector
// ---------------------------------------------------------------------------

enum class DetectorMetric { cosine, euclidean };

// Scores every unsafe/safe centroid and returns the best. Under the cosine
// metric the score is the cosine similarity (distance 1 - cos); under the
// euclidean metric it is the negated distance. Ties go to the earlier entry.
inline Detection classify_nn(const Embedding& x, const ConceptRegistry& registry,
                             DetectorMetric metric = DetectorMetric::cosine) {
  if (x.dim() != registry.dimension())
    throw DomainError("classify_nn: query has dimension " + std::to_string(x.dim()) +
                      ", registry has " + std::to_string(registry.dimension()));
  if (!(x.norm() > 0.0)) throw DomainError("classify_nn: zero-norm query");

  const ConceptEntry* best = nullptr;
  double best_score = -std::numeric_limits<double>::infinity();
  double runner_up = -std::numeric_limits<double>::infinity();
  std::size_t candidates = 0;
  for (const auto& e : registry.entries()) {
    if (e.cls == ConceptClass::neutral) continue;
    ++candidates;
    const double score = metric == DetectorMetric::cosine
                             ? cosine_similarity(x, e.centroid)
                             : -distance(x.values(), e.centroid.values());
    if (score > best_score) {
      runner_up = best_score;
      best_score = score;
      best = &e;
    } else if (score > runner_up) {
      runner_up = score;
    }
  }
  if (candidates < 2) throw DomainError("classify_nn: registry needs at least two labeled centroids");
  return {best->label, best->cls, best_score, best_score - runner_up, DetectionMethod::nearest_neighbor};
}

// ---------------------------------------------------------------------------
// LLM route
// ---------------------------------------------------------------------------

inline std::string build_llm_instruction(const std::string& prompt, const std::vector<std::string>& labels) {
  if (prompt.empty()) throw DomainError("build_llm_instruction: empty prompt");
  if (labels.empty()) throw DomainError("build_llm_instruction: empty label list");
  std::string out = "Given the text to image prompt [" + prompt + "] and the safe detection categories [";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out += ", ";
    out += labels[i];
  }
  out += "], what would be the top predicted class for the input?";
  return out;
}

namespace detail {

struct Match {
  std::size_t a = 0, b = 0, size = 0;
};

// Longest common contiguous block of a[alo,ahi) and b[blo,bhi). Among blocks of
// maximal length the one starting earliest in a, then earliest in b, wins.
inline Match longest_block(std::string_view a, std::size_t alo, std::size_t ahi, std::string_view b,
                           std::size_t blo, std::size_t bhi) {
  Match best{alo, blo, 0};
  const std::size_t m = bhi - blo;
  std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = alo; i < ahi; ++i) {
    for (std::size_t j = blo; j < bhi; ++j) {
      const std::size_t jj = j - blo + 1;
      cur[jj] = a[i] == b[j] ? prev[jj - 1] + 1 : 0;
      const std::size_t len = cur[jj];
      if (len == 0) continue;
      const std::size_t sa = i + 1 - len, sb = j + 1 - len;
      if (len > best.size || (len == best.size && (sa < best.a || (sa == best.a && sb < best.b))))
        best = {sa, sb, len};
    }
    std::swap(prev, cur);
    std::fill(cur.begin(), cur.end(), 0);
  }
  return best;
}

inline std::size_t matched_characters(std::string_view a, std::size_t alo, std::size_t ahi,
                                       std::string_view b, std::size_t blo, std::size_t bhi) {
  if (alo >= ahi || blo >= bhi) return 0;
  const Match m = longest_block(a, alo, ahi, b, blo, bhi);
  if (m.size == 0) return 0;
  return m.size + matched_characters(a, alo, m.a, b, blo, m.b) +
         matched_characters(a, m.a + m.size, ahi, b, m.b + m.size, bhi);
}

}  // namespace detail

// Gestalt (Ratcliff/Obershelp) similarity 2*K/(|a|+|b|).
inline double ratcliff_obershelp(std::string_view a, std::string_view b) {
  if (a.empty() && b.empty()) return 1.0;
  const std::size_t k = detail::matched_characters(a, 0, a.size(), b, 0, b.size());
  return 2.0 * static_cast<double>(k) / static_cast<double>(a.size() + b.size());
}

// Lowercase, punctuation replaced by spaces, whitespace collapsed.
inline std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

inline std::string join_words(const std::vector<std::string>& words, std::size_t from, std::size_t count) {
  std::string out;
  for (std::size_t i = from; i < from + count && i < words.size(); ++i) {
    if (!out.empty()) out += ' ';
    out += words[i];
  }
  return out;
}

struct CandidateLabel {
  std::string label;
  ConceptClass cls = ConceptClass::unsafe;
};

inline std::vector<CandidateLabel> detection_candidates(const ConceptRegistry& registry) {
  std::vector<CandidateLabel> out;
  for (const auto& e : registry.entries())
    if (e.cls != ConceptClass::neutral) out.push_back({e.label, e.cls});
  return out;
}

inline constexpr double kDefaultMatchFloor = 0.3;

// Best gestalt score of `label` against every window of the response whose
// word count equals the label's.
inline double best_window_score(const std::vector<std::string>& response_words, const std::string& label) {
  const auto label_words = normalize_words(label);
  const std::string target = join_words(label_words, 0, label_words.size());
  const std::size_t w = std::max<std::size_t>(label_words.size(), 1);
  if (response_words.size() <= w) return ratcliff_obershelp(target, join_words(response_words, 0, response_words.size()));
  double best = 0.0;
  for (std::size_t i = 0; i + w <= response_words.size(); ++i)
    best = std::max(best, ratcliff_obershelp(target, join_words(response_words, i, w)));
  return best;
}

inline Detection parse_llm_response(const std::string& response, const std::vector<CandidateLabel>& labels,
                                    double floor = kDefaultMatchFloor) {
  if (labels.empty()) throw DomainError("parse_llm_response: empty label list");
  const auto words = normalize_words(response);
  std::size_t best = 0;
  double best_score = -1.0, runner_up = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double s = words.empty() ? 0.0 : best_window_score(words, labels[i].label);
    if (s > best_score) {
      runner_up = std::max(runner_up, best_score);
      best_score = s;
      best = i;
    } else if (s > runner_up) {
      runner_up = s;
    }
  }
  if (best_score < floor)
    throw NoMatchError("LLM response matched no label (best score " + std::to_string(best_score) + ")", best_score);
  if (labels.size() == 1) runner_up = 0.0;
  return {labels[best].label, labels[best].cls, best_score, best_score - runner_up, DetectionMethod::llm};
}

// One instruction in, one response out. Implementations must be safe to call
// from several threads at once. A failed attempt throws TransientFailure.
class TextCompletionClient {
 public:
  struct TransientFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
  };

  virtual ~TextCompletionClient() = default;
  virtual std::string complete(const std::string& instruction, std::chrono::milliseconds timeout) = 0;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds timeout{30000};
};

// Deterministic scripted client for tests and offline runs. Each call pops the
// next scripted outcome; the last outcome repeats once the script runs out.
class ScriptedClient final : public TextCompletionClient {
 public:
  struct Failure {
    std::string reason = "scripted transient failure";
  };
  using Outcome = std::variant<std::string, Failure>;

  explicit ScriptedClient(std::vector<Outcome> script) : script_(script.begin(), script.end()) {
    if (script_.empty()) throw DomainError("ScriptedClient: empty script");
  }

  std::string complete(const std::string& instruction, std::chrono::milliseconds) override {
    std::lock_guard lock(mutex_);
    instructions_.push_back(instruction);
    Outcome next = script_.front();
    if (script_.size() > 1) script_.pop_front();
    if (auto* f = std::get_if<Failure>(&next)) throw TransientFailure(f->reason);
    return std::get<std::string>(next);
  }

  std::vector<std::string> instructions() const {
    std::lock_guard lock(mutex_);
    return instructions_;
  }

 private:
  mutable std::mutex mutex_;
  std::deque<Outcome> script_;
  std::vector<std::string> instructions_;
};

inline Detection classify_llm(const std::string& prompt, const std::vector<CandidateLabel>& labels,
                              TextCompletionClient& client, const RetryPolicy& retry = {},
                              double floor = kDefaultMatchFloor) {
  if (labels.empty()) throw DomainError("classify_llm: empty label list");
  std::vector<std::string> names;
  names.reserve(labels.size());
  for (const auto& l : labels) names.push_back(l.label);
  const std::string instruction = build_llm_instruction(prompt, names);

  std::string last_error;
  const int attempts = std::max(retry.max_attempts, 1);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    try {
      const std::string response = client.complete(instruction, retry.timeout);
      return parse_llm_response(response, labels, floor);
    } catch (const TextCompletionClient::TransientFailure& e) {
      last_error = e.what();
    }
  }
  throw TransportError("text completion failed after " + std::to_string(attempts) + " attempts: " + last_error,
                       attempts);
}

}  // namespace safegen
