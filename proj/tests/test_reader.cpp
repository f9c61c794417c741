#include "odqa/reader.hpp"

#include "odqa/eval.hpp"

#include <doctest.h>

#include <stdexcept>
#include <vector>

using namespace odqa;

namespace {

Question make_question(std::string text, std::vector<std::string> answers) {
  Question q;
  q.text = std::move(text);
  q.answer_strings = std::move(answers);
  return q;
}

std::vector<const Passage*> refs(const std::vector<Passage>& v) {
  std::vector<const Passage*> out;
  for (const auto& p : v) out.push_back(&p);
  return out;
}

}  // namespace

TEST_CASE("oracle_read") {
  std::vector<Passage> passages = {
      {0, "the capital of spain is madrid"},
      {1, "france borders italy and germany"},
      {2, "paris is the capital of france"},
  };
  auto q = make_question("what is the capital of france", {"Paris"});

  SUBCASE("picks the first rank whose passage contains an answer") {
    auto ranked = refs(passages);
    auto out = oracle_read(ranked, q);
    REQUIRE(out.has_value());
    CHECK(out->passage_id == 2);
    CHECK(out->answer_text == "Paris");
    // "paris" is token 0 of passage 2
    CHECK(out->span_start == 0);
    CHECK(out->span_end == 1);
    CHECK(exact_match(out->answer_text, q));
  }

  SUBCASE("no containing passage means no output") {
    std::vector<const Passage*> ranked = {&passages[0], &passages[1]};
    CHECK_FALSE(oracle_read(ranked, q).has_value());
  }

  SUBCASE("multi-token answers report the whole span") {
    std::vector<Passage> docs = {{5, "he met richard nixon in 1970"}};
    auto q2 = make_question("who", {"Richard Nixon"});
    auto out = oracle_read(refs(docs), q2);
    REQUIRE(out.has_value());
    CHECK(out->span_start == 2);
    CHECK(out->span_end == 4);
  }

  SUBCASE("answer presence equals recall of distant positives") {
    // oracle_read succeeds exactly when some ranked passage is a
    // distant positive, so oracle EM at depth k must equal recall@k.
    Corpus corpus;
    corpus.passages = passages;
    auto pos = positive_ids(corpus, q, false, {});
    auto ranked = refs(passages);
    bool hit = oracle_read(ranked, q).has_value();
    bool any_pos = !pos.empty();
    CHECK(hit == any_pos);
  }
}

TEST_CASE("lexical_read") {
  auto q = make_question("what color is the sky", {"blue"});

  SUBCASE("prefers the span inside the densest question-word cluster") {
    std::vector<Passage> docs = {
        {0, "grass is green and cows eat it all day long in big fields near town"},
        {1, "the sky is blue and the color of the sky changes at night"},
    };
    auto out = lexical_read(refs(docs), {1.0f, 1.0f}, q, {2, 3});
    CHECK(out.passage_id == 1);
    // all of "sky is blue" sits among the question words
    CHECK(out.span_start < 6);
  }

  SUBCASE("exact score ties resolve to earlier rank, then earlier start") {
    std::vector<Passage> docs = {
        {3, "alpha beta gamma"},
        {4, "alpha beta gamma"},
    };
    auto q2 = make_question("delta epsilon", {"zeta"});
    auto out = lexical_read(refs(docs), {0.0f, 0.0f}, q2, {2, 2});
    CHECK(out.passage_id == 3);
    CHECK(out.span_start == 0);
  }

  SUBCASE("max_span_tokens = 1 yields single tokens") {
    std::vector<Passage> docs = {{0, "the quick brown fox"}};
    auto out = lexical_read(refs(docs), {1.0f}, q, {1, 1});
    CHECK(out.span_end == out.span_start + 1);
  }

  SUBCASE("higher retrieval score breaks otherwise equal spans") {
    std::vector<Passage> docs = {
        {0, "alpha beta gamma"},
        {1, "alpha beta gamma"},
    };
    auto q2 = make_question("delta", {"zeta"});
    auto lo_hi = lexical_read(refs(docs), {0.0f, 5.0f}, q2, {2, 2});
    CHECK(lo_hi.passage_id == 1);
  }
}

TEST_CASE("sweep_k") {
  // Three questions over a shared ranked list; the answer sits at rank 2
  // for q0, rank 0 for q1, nowhere for q2.
  std::vector<Passage> docs = {
      {0, "paris is in france"},
      {1, "rome hosts the vatican"},
      {2, "the answer is forty two here"},
  };
  auto ranked_one = refs(docs);
  std::vector<std::vector<const Passage*>> ranked = {ranked_one, ranked_one, ranked_one};
  std::vector<std::vector<float>> scores(3, std::vector<float>{3.0f, 2.0f, 1.0f});
  std::vector<Question> qs = {
      make_question("what is the answer", {"forty two"}),
      make_question("which city is in france", {"paris"}),
      make_question("who wrote it", {"nobody says"}),
  };

  SUBCASE("oracle EM upper bound is monotone nondecreasing in k") {
    auto pts = sweep_k(ranked, scores, qs, {1, 2, 3}, false, {3, 5});
    REQUIRE(pts.size() == 3);
    CHECK(pts[0].k == 1);
    CHECK(pts[0].em_upper_bound == doctest::Approx(1.0 / 3.0));
    CHECK(pts[1].em_upper_bound == doctest::Approx(1.0 / 3.0));
    CHECK(pts[2].em_upper_bound == doctest::Approx(2.0 / 3.0));
    for (size_t i = 1; i < pts.size(); ++i) {
      CHECK(pts[i].em_upper_bound >= pts[i - 1].em_upper_bound);
    }
  }

  SUBCASE("oracle reader EM equals its own upper bound") {
    auto pts = sweep_k(ranked, scores, qs, {1, 3}, false, {3, 5});
    for (const auto& p : pts) CHECK(p.em == doctest::Approx(p.em_upper_bound));
  }

  SUBCASE("lexical EM never exceeds the upper bound") {
    auto pts = sweep_k(ranked, scores, qs, {1, 2, 3}, true, {3, 5});
    for (const auto& p : pts) CHECK(p.em <= p.em_upper_bound + 1e-12);
  }

  SUBCASE("k beyond the retrieval depth throws") {
    CHECK_THROWS_AS(sweep_k(ranked, scores, qs, {4}, false, {4, 5}), std::invalid_argument);
  }

  SUBCASE("no questions throws") {
    std::vector<std::vector<const Passage*>> no_ranked;
    std::vector<std::vector<float>> no_scores;
    std::vector<Question> no_qs;
    ReaderConfig rc{1, 5};
    CHECK_THROWS_AS(sweep_k(no_ranked, no_scores, no_qs, {1}, false, rc), std::invalid_argument);
  }
}
