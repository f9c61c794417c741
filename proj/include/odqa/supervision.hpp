#pragma once

#include "odqa/corpus.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace odqa {

struct SupervisionLabels {
  std::vector<uint8_t> distant;  // passage contains the target answer
  std::vector<uint8_t> strong;   // passage overlaps an annotated passage
};

struct OverlapConfig {
  double threshold = 0.5;  // paper-documented alternatives: 0.3, 0.75
};

struct PSLossResult {
  double loss = 0.0;
  std::vector<double> grad_scores;  // dL/dS_retr per retrieved passage
};

/// True iff any normalized answer string occurs as a token-contiguous
/// subsequence of the passage tokens, or the answer pattern matches the
/// passage text (case-insensitive).
bool contains_answer(const Passage& passage, const Question& question);

std::vector<uint8_t> distant_labels(const std::vector<const Passage*>& retrieved,
                                    const Question& question);

/// Coverage of the annotated side's vocabulary: |set(a) ∩ set(b)| / |set(b)|.
/// Throws if b is empty.
double word_overlap(const std::vector<std::string>& a, const std::vector<std::string>& b);

std::vector<uint8_t> strong_labels(const std::vector<const Passage*>& retrieved,
                                   const Question& question, const OverlapConfig& cfg);

SupervisionLabels label_retrieved(const std::vector<const Passage*>& retrieved,
                                  const Question& question, const OverlapConfig& cfg);

/// Marginal log-likelihood passage-supervision loss over the retrieved set:
/// loss = -log sum_{i positive} softmax(scores)_i, with its exact gradient
/// w.r.t. the scores. 64-bit internally, max-subtracted softmax.
/// Returns nullopt when no retrieved passage is positive (caller skips).
std::optional<PSLossResult> ps_loss(const std::vector<float>& scores,
                                    const std::vector<uint8_t>& positives);

/// Distant term plus strong_weight times the strong term, skipping whichever
/// term has no positives; nullopt when both are positive-free.
std::optional<PSLossResult> retriever_loss(const std::vector<float>& scores,
                                           const SupervisionLabels& labels,
                                           double strong_weight);

}  // namespace odqa
