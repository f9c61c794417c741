#include "odqa/corpus.hpp"

#include <nlohmann/json.hpp>

#include <cctype>
#include <fstream>
#include <random>
#include <regex>
#include <stdexcept>
#include <unordered_set>

using json = nlohmann::ordered_json;

namespace odqa {

namespace {

bool is_word_byte(unsigned char c) {
  // ASCII alphanumerics are word characters; bytes >= 0x80 (UTF-8
  // continuation/lead bytes) are kept so non-ASCII words survive intact.
  return std::isalnum(c) || c >= 0x80;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (is_word_byte(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::string normalize_answer(const std::string& text) {
  std::string out;
  for (const auto& tok : tokenize(text)) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

Passage::Passage(uint32_t id_, std::string text_)
    : id(id_), text(std::move(text_)), tokens(tokenize(text)) {}

void Question::validate() const {
  if (answer_strings.empty() && !answer_pattern.has_value()) {
    throw std::invalid_argument("question " + std::to_string(id) +
                                ": needs answer strings or an answer pattern");
  }
  if (answer_pattern) {
    try {
      std::regex re(*answer_pattern, std::regex::icase);
    } catch (const std::regex_error& e) {
      throw std::invalid_argument("question " + std::to_string(id) +
                                  ": bad answer pattern: " + e.what());
    }
  }
}

namespace {

json parse_line(const std::string& line, const std::string& path, size_t lineno) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) +
                             ": malformed record: " + e.what());
  }
}

// Ids must be unique and, once assembled, form 0..n-1.
void check_id_range(const std::vector<uint32_t>& ids, const std::string& path) {
  std::unordered_set<uint32_t> seen;
  for (uint32_t id : ids) {
    if (!seen.insert(id).second) {
      throw std::runtime_error(path + ": duplicate id " + std::to_string(id));
    }
    if (id >= ids.size()) {
      throw std::runtime_error(path + ": ids must form 0.." +
                               std::to_string(ids.size() - 1) + ", got " +
                               std::to_string(id));
    }
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

}  // namespace

Corpus ingest_corpus(const std::string& path) {
  auto in = open_input(path);
  Corpus corpus;
  std::vector<uint32_t> ids;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = parse_line(line, path, lineno);
    if (!rec.contains("text") || !rec["text"].is_string()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": missing string field 'text'");
    }
    uint32_t id = rec.contains("id") ? rec["id"].get<uint32_t>()
                                     : static_cast<uint32_t>(corpus.passages.size());
    corpus.passages.emplace_back(id, rec["text"].get<std::string>());
    ids.push_back(id);
  }
  check_id_range(ids, path);
  return corpus;
}

std::vector<Question> ingest_questions(const std::string& path) {
  auto in = open_input(path);
  std::vector<Question> questions;
  std::vector<uint32_t> ids;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec = parse_line(line, path, lineno);
    Question q;
    q.id = rec.contains("id") ? rec["id"].get<uint32_t>()
                              : static_cast<uint32_t>(questions.size());
    q.text = rec.value("question", std::string{});
    if (rec.contains("answers")) {
      q.answer_strings = rec["answers"].get<std::vector<std::string>>();
    }
    if (rec.contains("answer_pattern")) {
      q.answer_pattern = rec["answer_pattern"].get<std::string>();
    }
    if (rec.contains("annotated_passages")) {
      q.annotated_passage_texts = rec["annotated_passages"].get<std::vector<std::string>>();
    }
    try {
      q.validate();
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    ids.push_back(q.id);
    questions.push_back(std::move(q));
  }
  check_id_range(ids, path);
  return questions;
}

void write_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& p : corpus.passages) {
    json rec;
    rec["id"] = p.id;
    rec["text"] = p.text;
    out << rec.dump() << "\n";
  }
}

void write_questions(const std::vector<Question>& questions, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& q : questions) {
    json rec;
    rec["id"] = q.id;
    rec["question"] = q.text;
    rec["answers"] = q.answer_strings;
    if (q.answer_pattern) rec["answer_pattern"] = *q.answer_pattern;
    if (!q.annotated_passage_texts.empty()) {
      rec["annotated_passages"] = q.annotated_passage_texts;
    }
    out << rec.dump() << "\n";
  }
}

namespace {

// mt19937_64 output is fully specified by the standard, so generation is
// reproducible across platforms as long as we avoid <random> distributions.
uint64_t draw(std::mt19937_64& rng, uint64_t n) { return rng() % n; }

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_questions == 0 || spec.decoys_per_question == 0 ||
      spec.distractors == 0 || spec.vocab_size == 0) {
    throw std::invalid_argument("synthetic spec counts must be positive");
  }
  std::mt19937_64 rng(spec.seed);

  // Two disjoint filler pools keep gold annotations free of accidental
  // vocabulary overlap with decoys and distractors, so the strong-positive
  // set of each question is exactly its gold passage.
  const uint32_t gold_pool = std::max<uint32_t>(1, spec.vocab_size / 10);
  auto gold_filler = [&] { return "gf" + std::to_string(draw(rng, gold_pool)); };
  auto filler = [&] { return "w" + std::to_string(draw(rng, spec.vocab_size)); };

  // Small shared bait vocabulary: decoys carry the same bait tokens as
  // their question, modeling topically-wrong passages that still look
  // superficially query-relevant (the corpus noise the decoys exist for).
  constexpr uint32_t kBaitVocab = 8;
  constexpr uint32_t kBaitPerQuestion = 4;
  constexpr uint32_t kTopicTokens = 6;

  SyntheticData data;
  for (uint32_t qi = 0; qi < spec.n_questions; ++qi) {
    std::vector<std::string> topic;
    for (uint32_t t = 0; t < kTopicTokens; ++t) {
      topic.push_back("t" + std::to_string(qi) + "x" + std::to_string(t));
    }
    const std::string answer = "ans" + std::to_string(qi);

    std::vector<std::string> bait;
    uint32_t start = static_cast<uint32_t>(draw(rng, kBaitVocab));
    for (uint32_t b = 0; b < kBaitPerQuestion; ++b) {
      bait.push_back("bait" + std::to_string((start + b) % kBaitVocab));
    }

    // Gold: all topic tokens, the answer, reserved-pool filler.
    std::vector<std::string> gold_toks = topic;
    gold_toks.push_back(answer);
    gold_toks.push_back(gold_filler());
    gold_toks.push_back(gold_filler());
    const std::string gold_text = join(gold_toks);

    Question q;
    q.id = qi;
    // The question names only half the topic but all of its bait, so decoys
    // start out lexically closer to it than the gold passage does; pure
    // answer-containment supervision therefore rewards the bait vocabulary.
    std::vector<std::string> q_toks = {"what", "is"};
    q_toks.insert(q_toks.end(), topic.begin(), topic.begin() + kTopicTokens / 2);
    q_toks.insert(q_toks.end(), bait.begin(), bait.end());
    q.text = join(q_toks);
    q.answer_strings = {answer};
    q.annotated_passage_texts = {gold_text};
    data.questions.push_back(std::move(q));

    auto add_passage = [&](const std::vector<std::string>& toks) {
      data.corpus.passages.emplace_back(
          static_cast<uint32_t>(data.corpus.passages.size()), join(toks));
    };

    add_passage(gold_toks);
    for (uint32_t dcount = 0; dcount < spec.decoys_per_question; ++dcount) {
      std::vector<std::string> toks = {answer};
      toks.insert(toks.end(), bait.begin(), bait.end());
      for (int f = 0; f < 5; ++f) toks.push_back(filler());
      add_passage(toks);
    }
    for (uint32_t dcount = 0; dcount < spec.distractors; ++dcount) {
      std::vector<std::string> toks;
      for (uint32_t t = 0; t < 3; ++t) {
        toks.push_back(topic[draw(rng, kTopicTokens)]);
      }
      for (int f = 0; f < 7; ++f) toks.push_back(filler());
      add_passage(toks);
    }
  }
  return data;
}

}  // namespace odqa
