#include "odqa/reader.hpp"

#include "odqa/eval.hpp"
#include "odqa/supervision.hpp"

#include <algorithm>
#include <regex>
#include <stdexcept>

namespace odqa {

namespace {

std::string join_span(const std::vector<std::string>& tokens, uint32_t start, uint32_t end) {
  std::string out;
  for (uint32_t i = start; i < end; ++i) {
    if (!out.empty()) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

}  // namespace

std::optional<ReaderOutput> oracle_read(const std::vector<const Passage*>& ranked,
                                        const Question& question) {
  for (const Passage* p : ranked) {
    for (const auto& ans : question.answer_strings) {
      auto needle = tokenize(normalize_answer(ans));
      if (needle.empty() || needle.size() > p->tokens.size()) continue;
      auto it = std::search(p->tokens.begin(), p->tokens.end(), needle.begin(), needle.end());
      if (it != p->tokens.end()) {
        const auto start = static_cast<uint32_t>(it - p->tokens.begin());
        return ReaderOutput{ans, p->id, start, start + static_cast<uint32_t>(needle.size()), 1.0};
      }
    }
    if (question.answer_pattern) {
      std::regex re(*question.answer_pattern, std::regex::icase);
      std::smatch match;
      if (std::regex_search(p->text, match, re) && !p->tokens.empty()) {
        return ReaderOutput{match.str(), p->id, 0, 1, 1.0};
      }
    }
  }
  return std::nullopt;
}

ReaderOutput lexical_read(const std::vector<const Passage*>& ranked,
                          const std::vector<float>& retrieval_scores,
                          const Question& question, const ReaderConfig& cfg) {
  if (ranked.empty()) throw std::invalid_argument("lexical_read: no passages");
  if (retrieval_scores.size() != ranked.size()) {
    throw std::invalid_argument("lexical_read: score/passage length mismatch");
  }

  std::vector<std::string> q_tokens = tokenize(question.text);
  std::vector<std::string> q_vocab(q_tokens);
  std::sort(q_vocab.begin(), q_vocab.end());
  q_vocab.erase(std::unique(q_vocab.begin(), q_vocab.end()), q_vocab.end());

  bool found = false;
  double best_score = 0.0;
  size_t best_rank = 0;
  uint32_t best_start = 0, best_len = 0;

  constexpr uint32_t kWindow = 10;
  for (size_t rank = 0; rank < ranked.size(); ++rank) {
    const auto& tokens = ranked[rank]->tokens;
    const auto n = static_cast<uint32_t>(tokens.size());
    const double tie_bonus = static_cast<double>(retrieval_scores[rank]) * 1e-6;
    for (uint32_t start = 0; start < n; ++start) {
      const uint32_t max_len = std::min(cfg.max_span_tokens, n - start);
      for (uint32_t len = 1; len <= max_len; ++len) {
        const uint32_t lo = start > kWindow ? start - kWindow : 0;
        const uint32_t hi = std::min(n, start + len + kWindow);
        size_t overlap = 0;
        for (const auto& qt : q_vocab) {
          for (uint32_t i = lo; i < hi; ++i) {
            if (tokens[i] == qt) {
              ++overlap;
              break;
            }
          }
        }
        const double score = static_cast<double>(overlap) + tie_bonus;
        if (!found || score > best_score) {
          found = true;
          best_score = score;
          best_rank = rank;
          best_start = start;
          best_len = len;
        }
      }
    }
  }
  if (!found) throw std::invalid_argument("lexical_read: all passages empty");

  const Passage* p = ranked[best_rank];
  return ReaderOutput{join_span(p->tokens, best_start, best_start + best_len), p->id,
                      best_start, best_start + best_len, best_score};
}

std::vector<KSweepPoint> sweep_k(const std::vector<std::vector<const Passage*>>& ranked,
                                 const std::vector<std::vector<float>>& retrieval_scores,
                                 const std::vector<Question>& questions,
                                 const std::vector<uint32_t>& ks, bool use_lexical_reader,
                                 const ReaderConfig& cfg) {
  if (ranked.size() != questions.size()) {
    throw std::invalid_argument("sweep_k: question/retrieval count mismatch");
  }
  if (questions.empty()) throw std::invalid_argument("sweep_k: empty question set");

  std::vector<KSweepPoint> curve;
  for (uint32_t k : ks) {
    size_t em_hits = 0;
    size_t oracle_hits = 0;
    for (size_t qi = 0; qi < questions.size(); ++qi) {
      if (k > ranked[qi].size()) {
        throw std::invalid_argument("sweep_k: k exceeds retrieval depth");
      }
      std::vector<const Passage*> top(ranked[qi].begin(), ranked[qi].begin() + k);
      auto oracle = oracle_read(top, questions[qi]);
      if (oracle) ++oracle_hits;
      if (use_lexical_reader) {
        std::vector<float> scores(retrieval_scores[qi].begin(),
                                  retrieval_scores[qi].begin() + k);
        auto out = lexical_read(top, scores, questions[qi], cfg);
        if (exact_match(out.answer_text, questions[qi])) ++em_hits;
      } else if (oracle) {
        ++em_hits;
      }
    }
    const auto n = static_cast<double>(questions.size());
    curve.push_back({k, em_hits / n, oracle_hits / n});
  }
  return curve;
}

}  // namespace odqa
