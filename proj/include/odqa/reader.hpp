#pragma once

#include "odqa/corpus.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace odqa {

struct ReaderOutput {
  std::string answer_text;
  uint32_t passage_id = 0;
  uint32_t span_start = 0;  // token indices, [start, end)
  uint32_t span_end = 0;
  double score = 0.0;
};

struct ReaderConfig {
  uint32_t k_inference = 10;   // sweepable 10..180
  uint32_t max_span_tokens = 5;
};

/// Upper-bound reader: the first passage by rank that contains an
/// acceptable answer, with that answer as the prediction.
std::optional<ReaderOutput> oracle_read(const std::vector<const Passage*>& ranked,
                                        const Question& question);

/// Deterministic lexical span reader. Scores every span of at most
/// max_span_tokens by the question-vocabulary overlap of a +/-10 token
/// context window, plus a retrieval-score tie bonus; ties resolve by
/// (passage rank, start index, shorter span).
ReaderOutput lexical_read(const std::vector<const Passage*>& ranked,
                          const std::vector<float>& retrieval_scores,
                          const Question& question, const ReaderConfig& cfg);

struct KSweepPoint {
  uint32_t k = 0;
  double em = 0.0;
  double em_upper_bound = 0.0;
};

/// EM at each k over one fixed retrieval (ranked passages at depth >= max k).
/// With use_lexical_reader false the EM column is the oracle reader's.
std::vector<KSweepPoint> sweep_k(const std::vector<std::vector<const Passage*>>& ranked,
                                 const std::vector<std::vector<float>>& retrieval_scores,
                                 const std::vector<Question>& questions,
                                 const std::vector<uint32_t>& ks, bool use_lexical_reader,
                                 const ReaderConfig& cfg);

}  // namespace odqa
