#include "odqa/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <stdexcept>
#include <unordered_set>

namespace odqa {

namespace {

bool contains_subsequence(const std::vector<std::string>& haystack,
                          const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

}  // namespace

bool contains_answer(const Passage& passage, const Question& question) {
  for (const auto& ans : question.answer_strings) {
    auto needle = tokenize(normalize_answer(ans));
    if (contains_subsequence(passage.tokens, needle)) return true;
  }
  if (question.answer_pattern) {
    std::regex re(*question.answer_pattern, std::regex::icase);
    if (std::regex_search(passage.text, re)) return true;
  }
  return false;
}

std::vector<uint8_t> distant_labels(const std::vector<const Passage*>& retrieved,
                                    const Question& question) {
  std::vector<uint8_t> labels(retrieved.size());
  for (size_t i = 0; i < retrieved.size(); ++i) {
    labels[i] = contains_answer(*retrieved[i], question) ? 1 : 0;
  }
  return labels;
}

double word_overlap(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (b.empty()) throw std::invalid_argument("word_overlap: annotated side is empty");
  std::unordered_set<std::string> b_set(b.begin(), b.end());
  std::unordered_set<std::string> a_set(a.begin(), a.end());
  size_t hits = 0;
  for (const auto& t : b_set) {
    if (a_set.count(t)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(b_set.size());
}

std::vector<uint8_t> strong_labels(const std::vector<const Passage*>& retrieved,
                                   const Question& question, const OverlapConfig& cfg) {
  std::vector<uint8_t> labels(retrieved.size(), 0);
  if (question.annotated_passage_texts.empty()) return labels;
  std::vector<std::vector<std::string>> annotated;
  for (const auto& text : question.annotated_passage_texts) {
    annotated.push_back(tokenize(text));
  }
  for (size_t i = 0; i < retrieved.size(); ++i) {
    for (const auto& ann : annotated) {
      if (!ann.empty() && word_overlap(retrieved[i]->tokens, ann) >= cfg.threshold) {
        labels[i] = 1;
        break;
      }
    }
  }
  return labels;
}

SupervisionLabels label_retrieved(const std::vector<const Passage*>& retrieved,
                                  const Question& question, const OverlapConfig& cfg) {
  return SupervisionLabels{distant_labels(retrieved, question),
                           strong_labels(retrieved, question, cfg)};
}

std::optional<PSLossResult> ps_loss(const std::vector<float>& scores,
                                    const std::vector<uint8_t>& positives) {
  if (scores.size() != positives.size()) {
    throw std::invalid_argument("ps_loss: score/label length mismatch");
  }
  if (scores.empty()) throw std::invalid_argument("ps_loss: empty retrieved set");
  if (std::find(positives.begin(), positives.end(), 1) == positives.end()) {
    return std::nullopt;
  }

  const size_t n = scores.size();
  double max_s = -std::numeric_limits<double>::infinity();
  for (float s : scores) max_s = std::max(max_s, static_cast<double>(s));

  std::vector<double> p(n);
  double z = 0.0;
  for (size_t i = 0; i < n; ++i) {
    p[i] = std::exp(static_cast<double>(scores[i]) - max_s);
    z += p[i];
  }
  double pos_mass = 0.0;
  for (size_t i = 0; i < n; ++i) {
    p[i] /= z;
    if (positives[i]) pos_mass += p[i];
  }

  PSLossResult result;
  result.loss = -std::log(pos_mass);
  result.grad_scores.resize(n);
  for (size_t i = 0; i < n; ++i) {
    result.grad_scores[i] = p[i] - (positives[i] ? p[i] / pos_mass : 0.0);
  }
  return result;
}

std::optional<PSLossResult> retriever_loss(const std::vector<float>& scores,
                                           const SupervisionLabels& labels,
                                           double strong_weight) {
  auto distant = ps_loss(scores, labels.distant);
  std::optional<PSLossResult> strong;
  if (strong_weight != 0.0) strong = ps_loss(scores, labels.strong);
  if (!distant && !strong) return std::nullopt;

  PSLossResult out;
  out.grad_scores.assign(scores.size(), 0.0);
  if (distant) {
    out.loss += distant->loss;
    for (size_t i = 0; i < scores.size(); ++i) out.grad_scores[i] += distant->grad_scores[i];
  }
  if (strong) {
    out.loss += strong_weight * strong->loss;
    for (size_t i = 0; i < scores.size(); ++i) {
      out.grad_scores[i] += strong_weight * strong->grad_scores[i];
    }
  }
  return out;
}

}  // namespace odqa
