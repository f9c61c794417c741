#pragma once

#include "odqa/corpus.hpp"
#include "odqa/mips.hpp"
#include "odqa/supervision.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace odqa {

struct EvalReport {
  double em = 0.0;
  double em_upper_bound = 0.0;
  std::map<uint32_t, double> recall_at;
  uint32_t n_questions = 0;
  uint32_t reader_k = 0;
  std::string positive_kind;  // "distant" or "strong"
};

/// True iff the normalized prediction equals a normalized answer string,
/// or the answer pattern full-matches the raw prediction (case-insensitive).
bool exact_match(const std::string& prediction, const Question& question);

/// Fraction of questions whose top-k ids intersect the positive id set.
std::map<uint32_t, double> recall_at_k(const std::vector<std::vector<uint32_t>>& ranked_ids,
                                       const std::vector<std::vector<uint32_t>>& positive_ids,
                                       const std::vector<uint32_t>& ks);

/// "Positive" passage ids over the whole corpus, by distant containment or
/// by strong overlap against the question's annotations.
std::vector<uint32_t> positive_ids(const Corpus& corpus, const Question& question,
                                   bool strong, const OverlapConfig& overlap);

/// Assembles EM (from supplied predictions), the oracle EM upper bound at
/// reader_k, and recall@k from the retrieval. Retrieval results, predictions
/// and questions are aligned by position.
EvalReport evaluate_run(const Corpus& corpus, const std::vector<TopKResult>& retrieved,
                        const std::vector<std::optional<std::string>>& predictions,
                        const std::vector<Question>& questions,
                        const std::vector<uint32_t>& ks, uint32_t reader_k,
                        bool strong_positives, const OverlapConfig& overlap);

void write_report_json(const EvalReport& report, const std::string& path);
void write_report_csv(const EvalReport& report, const std::string& path);

}  // namespace odqa
