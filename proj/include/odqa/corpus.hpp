#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace odqa {

/// Lowercase, strip punctuation, split on whitespace. ASCII alphanumerics
/// are kept; every other byte acts as a separator. Deterministic.
std::vector<std::string> tokenize(const std::string& text);

/// Standard Open-QA exact-match normalization: lowercase, drop punctuation,
/// drop the articles a/an/the, collapse whitespace.
std::string normalize_answer(const std::string& text);

struct Passage {
  uint32_t id = 0;
  std::string text;
  std::vector<std::string> tokens;  // cached tokenize(text)

  Passage() = default;
  Passage(uint32_t id_, std::string text_);
};

struct Question {
  uint32_t id = 0;
  std::string text;
  std::vector<std::string> answer_strings;
  std::optional<std::string> answer_pattern;
  std::vector<std::string> annotated_passage_texts;

  // Throws std::invalid_argument on an empty answer spec or a bad regex.
  void validate() const;
};

struct Corpus {
  std::vector<Passage> passages;

  size_t size() const { return passages.size(); }
};

struct SyntheticSpec {
  uint32_t n_questions = 200;
  uint32_t decoys_per_question = 2;
  uint32_t distractors = 10;
  uint32_t vocab_size = 2000;
  uint64_t seed = 1;
};

// Line-delimited JSON loaders. Errors name the offending line.
Corpus ingest_corpus(const std::string& path);
std::vector<Question> ingest_questions(const std::string& path);

void write_corpus(const Corpus& corpus, const std::string& path);
void write_questions(const std::vector<Question>& questions, const std::string& path);

struct SyntheticData {
  Corpus corpus;
  std::vector<Question> questions;
};

/// Builds a corpus where each question has one gold passage (on-topic,
/// contains the answer, recorded as its annotation), `decoys_per_question`
/// passages carrying the answer string in off-topic context, and
/// `distractors` passages without the answer. Deterministic in seed.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace odqa
