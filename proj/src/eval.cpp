#include "odqa/eval.hpp"

#include "odqa/reader.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <regex>
#include <stdexcept>
#include <unordered_set>

using json = nlohmann::ordered_json;

namespace odqa {

bool exact_match(const std::string& prediction, const Question& question) {
  const std::string norm = normalize_answer(prediction);
  for (const auto& ans : question.answer_strings) {
    if (norm == normalize_answer(ans)) return true;
  }
  if (question.answer_pattern) {
    std::regex re(*question.answer_pattern, std::regex::icase);
    if (std::regex_match(prediction, re)) return true;
  }
  return false;
}

std::map<uint32_t, double> recall_at_k(const std::vector<std::vector<uint32_t>>& ranked_ids,
                                       const std::vector<std::vector<uint32_t>>& positive_ids,
                                       const std::vector<uint32_t>& ks) {
  if (ranked_ids.size() != positive_ids.size()) {
    throw std::invalid_argument("recall_at_k: ranked/positive count mismatch");
  }
  if (ranked_ids.empty()) throw std::invalid_argument("recall_at_k: no questions");

  std::map<uint32_t, double> out;
  for (uint32_t k : ks) {
    size_t hits = 0;
    for (size_t qi = 0; qi < ranked_ids.size(); ++qi) {
      if (k > ranked_ids[qi].size()) {
        throw std::invalid_argument("recall_at_k: k exceeds retrieval depth");
      }
      std::unordered_set<uint32_t> pos(positive_ids[qi].begin(), positive_ids[qi].end());
      bool hit = false;
      for (uint32_t i = 0; i < k && !hit; ++i) hit = pos.count(ranked_ids[qi][i]) > 0;
      if (hit) ++hits;
    }
    out[k] = static_cast<double>(hits) / static_cast<double>(ranked_ids.size());
  }
  return out;
}

std::vector<uint32_t> positive_ids(const Corpus& corpus, const Question& question,
                                   bool strong, const OverlapConfig& overlap) {
  std::vector<const Passage*> all;
  all.reserve(corpus.passages.size());
  for (const auto& p : corpus.passages) all.push_back(&p);
  auto labels = strong ? strong_labels(all, question, overlap) : distant_labels(all, question);
  std::vector<uint32_t> ids;
  for (size_t i = 0; i < all.size(); ++i) {
    if (labels[i]) ids.push_back(all[i]->id);
  }
  return ids;
}

EvalReport evaluate_run(const Corpus& corpus, const std::vector<TopKResult>& retrieved,
                        const std::vector<std::optional<std::string>>& predictions,
                        const std::vector<Question>& questions,
                        const std::vector<uint32_t>& ks, uint32_t reader_k,
                        bool strong_positives, const OverlapConfig& overlap) {
  if (questions.empty()) throw std::invalid_argument("evaluate_run: empty question set");
  if (retrieved.size() != questions.size() || predictions.size() != questions.size()) {
    throw std::invalid_argument("evaluate_run: misaligned inputs");
  }

  EvalReport report;
  report.n_questions = static_cast<uint32_t>(questions.size());
  report.reader_k = reader_k;
  report.positive_kind = strong_positives ? "strong" : "distant";

  size_t em_hits = 0;
  size_t oracle_hits = 0;
  std::vector<std::vector<uint32_t>> ranked_ids;
  std::vector<std::vector<uint32_t>> positives;
  for (size_t qi = 0; qi < questions.size(); ++qi) {
    if (reader_k > retrieved[qi].ids.size()) {
      throw std::invalid_argument("evaluate_run: reader_k exceeds retrieval depth");
    }
    if (predictions[qi] && exact_match(*predictions[qi], questions[qi])) ++em_hits;

    std::vector<const Passage*> top;
    for (uint32_t i = 0; i < reader_k; ++i) {
      top.push_back(&corpus.passages.at(retrieved[qi].ids[i]));
    }
    if (oracle_read(top, questions[qi])) ++oracle_hits;

    ranked_ids.push_back(retrieved[qi].ids);
    positives.push_back(positive_ids(corpus, questions[qi], strong_positives, overlap));
  }
  const auto n = static_cast<double>(questions.size());
  report.em = em_hits / n;
  report.em_upper_bound = oracle_hits / n;
  report.recall_at = recall_at_k(ranked_ids, positives, ks);
  return report;
}

namespace {

// Full-precision, locale-independent float formatting shared by both
// writers so repeated runs are byte-identical.
std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_report_json(const EvalReport& report, const std::string& path) {
  json j;
  j["n_questions"] = report.n_questions;
  j["reader_k"] = report.reader_k;
  j["positive_kind"] = report.positive_kind;
  j["em"] = fmt(report.em);
  j["em_upper_bound"] = fmt(report.em_upper_bound);
  json recall = json::object();
  for (const auto& [k, v] : report.recall_at) recall[std::to_string(k)] = fmt(v);
  j["recall_at"] = recall;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

void write_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "metric,k,value\n";
  out << "em,," << fmt(report.em) << "\n";
  out << "em_upper_bound,," << fmt(report.em_upper_bound) << "\n";
  for (const auto& [k, v] : report.recall_at) {
    out << "recall," << k << "," << fmt(v) << "\n";
  }
}

}  // namespace odqa
