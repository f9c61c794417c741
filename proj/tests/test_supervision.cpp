#include "odqa/supervision.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace odqa;

namespace {

std::vector<float> random_scores(size_t n, std::mt19937_64& rng, float span = 4.0f) {
  std::vector<float> s(n);
  for (auto& v : s) {
    v = (static_cast<float>(static_cast<int64_t>(rng() >> 11)) * 0x1p-52f - 0.5f) * span;
  }
  return s;
}

// 64-bit loss evaluation used as the finite-difference target.
double eval_ps_loss(const std::vector<double>& scores, const std::vector<uint8_t>& pos) {
  double mx = scores[0];
  for (double s : scores) mx = std::max(mx, s);
  double z = 0.0, m = 0.0;
  std::vector<double> e(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) {
    e[i] = std::exp(scores[i] - mx);
    z += e[i];
  }
  for (size_t i = 0; i < scores.size(); ++i) {
    if (pos[i]) m += e[i] / z;
  }
  return -std::log(m);
}

}  // namespace

TEST_CASE("distant_labels") {
  Passage with(0, "richard nixon proposed the epa");
  Passage without(1, "completely unrelated words here");
  Question q;
  q.id = 0;
  q.answer_strings = {"Nixon"};

  auto labels = distant_labels({&with, &without}, q);
  CHECK(labels == std::vector<uint8_t>{1, 0});

  SUBCASE("decoy containment is about the string, not the topic") {
    // answer-bearing but topically wrong passage still labels positive;
    // string-free gold-topic passage labels negative
    Question lizard;
    lizard.id = 1;
    lizard.answer_strings = {"whiptail"};
    Passage decoy(2, "mlb whiparound hosts discuss the whiptail trade on fox");
    Passage gold(3, "the new mexico whiptail is a female species of lizard");
    Passage offtopic(4, "baseball scores from last night");
    auto l = distant_labels({&decoy, &gold, &offtopic}, lizard);
    CHECK(l == std::vector<uint8_t>{1, 1, 0});
  }

  SUBCASE("answer pattern matches case-insensitively") {
    Question pat;
    pat.id = 2;
    pat.answer_pattern = "richard\\s+nixon";
    Passage text(5, "Richard Nixon proposed it");
    auto l = distant_labels({&text, &without}, pat);
    CHECK(l == std::vector<uint8_t>{1, 0});
  }

  SUBCASE("multi-token answers need a contiguous token match") {
    Question multi;
    multi.id = 3;
    multi.answer_strings = {"richard nixon"};
    Passage split(6, "richard proposed while nixon watched");
    Passage contiguous(7, "it was richard nixon who proposed");
    auto l = distant_labels({&split, &contiguous}, multi);
    CHECK(l == std::vector<uint8_t>{0, 1});
  }
}

TEST_CASE("word_overlap") {
  std::vector<std::string> b = {"one", "two", "three", "four"};
  CHECK(word_overlap(b, b) == 1.0);
  CHECK(word_overlap({"x", "y"}, b) == 0.0);
  CHECK(word_overlap({"one", "two", "zzz"}, b) == 0.5);
  CHECK_THROWS_AS(word_overlap(b, {}), std::invalid_argument);
  // coverage counts unique tokens of the annotated side
  CHECK(word_overlap({"one", "one", "one"}, {"one", "one", "two"}) == 0.5);
}

TEST_CASE("strong_labels") {
  Question q;
  q.id = 0;
  q.answer_strings = {"x"};
  q.annotated_passage_texts = {"alpha beta gamma delta"};

  Passage identical(0, "alpha beta gamma delta");
  Passage half(1, "alpha beta zz ww");
  Passage none(2, "pp qq rr ss");

  auto labels = strong_labels({&identical, &half, &none}, q, OverlapConfig{0.5});
  CHECK(labels == std::vector<uint8_t>{1, 1, 0});

  SUBCASE("no annotations means all false") {
    Question bare;
    bare.id = 1;
    bare.answer_strings = {"x"};
    auto l = strong_labels({&identical, &half}, bare, OverlapConfig{0.5});
    CHECK(l == std::vector<uint8_t>{0, 0});
  }

  SUBCASE("monotone in threshold") {
    for (double lo : {0.3, 0.5}) {
      for (double hi : {0.5, 0.75, 1.0}) {
        if (lo >= hi) continue;
        auto loose = strong_labels({&identical, &half, &none}, q, OverlapConfig{lo});
        auto tight = strong_labels({&identical, &half, &none}, q, OverlapConfig{hi});
        for (size_t i = 0; i < loose.size(); ++i) {
          if (tight[i]) CHECK(loose[i]);  // raising the threshold never adds positives
        }
      }
    }
  }
}

TEST_CASE("ps_loss closed-form examples") {
  SUBCASE("uniform scores, one positive") {
    auto r = ps_loss({0.0f, 0.0f, 0.0f}, {1, 0, 0});
    REQUIRE(r.has_value());
    CHECK(r->loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
  SUBCASE("all positive gives zero loss and zero gradient") {
    auto r = ps_loss({0.5f, -1.0f, 2.0f}, {1, 1, 1});
    REQUIRE(r.has_value());
    CHECK(r->loss == doctest::Approx(0.0).epsilon(1e-12));
    for (double g : r->grad_scores) CHECK(g == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("scores 1,2,3 with positive at index 2") {
    auto r = ps_loss({1.0f, 2.0f, 3.0f}, {0, 0, 1});
    REQUIRE(r.has_value());
    // -log softmax_2 evaluated in 64-bit
    const double expect = eval_ps_loss({1.0, 2.0, 3.0}, {0, 0, 1});
    CHECK(r->loss == doctest::Approx(expect).epsilon(1e-12));
    CHECK(r->loss == doctest::Approx(0.40760596444438).epsilon(1e-10));

    std::vector<double> flat = {1.0, 2.0, 3.0};
    auto f = [&](const std::vector<double>& s) { return eval_ps_loss(s, {0, 0, 1}); };
    CHECK(oracles::fd_max_rel_error(flat, f, r->grad_scores, 1e-5) < 1e-6);
  }
  SUBCASE("no positive yields the no-positive outcome") {
    CHECK_FALSE(ps_loss({1.0f, 2.0f}, {0, 0}).has_value());
  }
}

TEST_CASE("ps_loss softmax contracts and properties") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const size_t n = 2 + rng() % 8;
    auto scores = random_scores(n, rng);
    // snap to multiples of 1/8 so the shift below is exact in float
    for (auto& s : scores) s = std::round(s * 8.0f) / 8.0f;
    std::vector<uint8_t> pos(n, 0);
    for (auto& p : pos) p = rng() % 2;
    pos[rng() % n] = 1;  // at least one positive

    auto r = ps_loss(scores, pos);
    REQUIRE(r.has_value());
    CHECK(r->loss >= 0.0);

    // shift invariance within 1e-9
    auto shifted = scores;
    for (auto& s : shifted) s += 7.5f;
    auto r2 = ps_loss(shifted, pos);
    REQUIRE(r2.has_value());
    CHECK(std::abs(r->loss - r2->loss) < 1e-9);

    // positive gradient on every non-positive entry
    for (size_t i = 0; i < n; ++i) {
      if (!pos[i]) CHECK(r->grad_scores[i] > 0.0);
    }

    // finite-difference agreement
    std::vector<double> flat(scores.begin(), scores.end());
    auto f = [&](const std::vector<double>& s) { return eval_ps_loss(s, pos); };
    CHECK(oracles::fd_max_rel_error(flat, f, r->grad_scores, 1e-4) < 1e-5);
  }
}

TEST_CASE("one small gradient step decreases ps_loss on mixed instances") {
  std::mt19937_64 rng(57);
  for (int trial = 0; trial < 30; ++trial) {
    const size_t n = 3 + rng() % 6;
    auto scores = random_scores(n, rng);
    std::vector<uint8_t> pos(n, 0);
    pos[rng() % n] = 1;
    size_t neg = rng() % n;
    pos[neg] = 0;  // mixed labels guaranteed: at least one 0, one 1
    if (std::find(pos.begin(), pos.end(), 1) == pos.end()) pos[(neg + 1) % n] = 1;

    auto before = ps_loss(scores, pos);
    REQUIRE(before.has_value());
    auto stepped = scores;
    for (size_t i = 0; i < n; ++i) {
      stepped[i] -= static_cast<float>(1e-3 * before->grad_scores[i]);
    }
    auto after = ps_loss(stepped, pos);
    REQUIRE(after.has_value());
    CHECK(after->loss < before->loss);
  }
}

TEST_CASE("retriever_loss") {
  std::mt19937_64 rng(71);
  auto scores = random_scores(5, rng);
  SupervisionLabels labels;
  labels.distant = {1, 1, 0, 0, 0};
  labels.strong = {1, 0, 0, 0, 0};

  SUBCASE("strong_weight 0 equals distant-only") {
    auto combined = retriever_loss(scores, labels, 0.0);
    auto distant = ps_loss(scores, labels.distant);
    REQUIRE(combined.has_value());
    REQUIRE(distant.has_value());
    CHECK(combined->loss == doctest::Approx(distant->loss).epsilon(1e-12));
  }
  SUBCASE("identical masks scale by 1+w") {
    SupervisionLabels same;
    same.distant = labels.distant;
    same.strong = labels.distant;
    auto combined = retriever_loss(scores, same, 0.5);
    auto single = ps_loss(scores, labels.distant);
    REQUIRE(combined.has_value());
    CHECK(combined->loss == doctest::Approx(1.5 * single->loss).epsilon(1e-12));
  }
  SUBCASE("positive-free strong term is skipped") {
    SupervisionLabels l2;
    l2.distant = labels.distant;
    l2.strong = {0, 0, 0, 0, 0};
    auto combined = retriever_loss(scores, l2, 1.0);
    auto distant = ps_loss(scores, labels.distant);
    REQUIRE(combined.has_value());
    CHECK(combined->loss == doctest::Approx(distant->loss).epsilon(1e-12));
  }
  SUBCASE("both terms positive-free") {
    SupervisionLabels none;
    none.distant = {0, 0, 0, 0, 0};
    none.strong = {0, 0, 0, 0, 0};
    CHECK_FALSE(retriever_loss(scores, none, 1.0).has_value());
  }
  SUBCASE("combined gradient matches finite differences") {
    for (int trial = 0; trial < 20; ++trial) {
      const size_t n = 3 + rng() % 5;
      auto s = random_scores(n, rng);
      SupervisionLabels l;
      l.distant.resize(n);
      l.strong.resize(n);
      for (size_t i = 0; i < n; ++i) {
        l.distant[i] = rng() % 2;
        l.strong[i] = l.distant[i] && (rng() % 2);
      }
      l.distant[rng() % n] = 1;
      const double w = 0.7;
      auto r = retriever_loss(s, l, w);
      REQUIRE(r.has_value());

      auto f = [&](const std::vector<double>& sc) {
        double total = eval_ps_loss(sc, l.distant);
        if (std::find(l.strong.begin(), l.strong.end(), 1) != l.strong.end()) {
          total += w * eval_ps_loss(sc, l.strong);
        }
        return total;
      };
      std::vector<double> flat(s.begin(), s.end());
      CHECK(oracles::fd_max_rel_error(flat, f, r->grad_scores, 1e-3) < 1e-4);
    }
  }
}
