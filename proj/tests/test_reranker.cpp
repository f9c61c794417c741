#include "odqa/reranker.hpp"

#include "odqa/supervision.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace odqa;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double span = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      m(i, j) = (static_cast<double>(rng() >> 11) * 0x1p-52 - 0.5) * span;
    }
  }
  return m;
}

}  // namespace

TEST_CASE("transf_block shapes and the single-key case") {
  std::mt19937_64 rng(1);
  auto p = RerankerParams::init(1, 4, 2, 8, 3);
  const auto& block = p.layer[0].self_block;

  SUBCASE("n=1, m=1: attention weight is exactly 1") {
    Mat q = random_mat(1, 4, rng);
    Mat s = random_mat(1, 4, rng);
    BlockCache cache;
    transf_block(q, s, block, 2, &cache);
    for (const auto& a : cache.attn) {
      CHECK(a.rows() == 1);
      CHECK(a.cols() == 1);
      CHECK(a(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
  SUBCASE("output shape equals query shape") {
    Mat q = random_mat(5, 4, rng);
    Mat s = random_mat(7, 4, rng);
    Mat out = transf_block(q, s, block, 2);
    CHECK(out.rows() == 5);
    CHECK(out.cols() == 4);
  }
  SUBCASE("shape mismatch throws") {
    Mat q = random_mat(2, 4, rng);
    Mat s = random_mat(3, 6, rng);
    CHECK_THROWS_AS(transf_block(q, s, block, 2), std::invalid_argument);
  }
}

TEST_CASE("transf_block matches the naive per-head oracle") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = RerankerParams::init(1, 4, 2, 8, 100 + trial);
    const auto& block = p.layer[0].self_block;
    Mat q = random_mat(2, 4, rng);
    Mat s = random_mat(3, 4, rng);
    Mat fast = transf_block(q, s, block, 2);
    Mat slow = oracles::naive_transf_block(q, s, block, 2);
    CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("rerank_forward") {
  std::mt19937_64 rng(7);

  SUBCASE("L=0 reproduces inner products") {
    RerankerParams p;
    p.layers = 0;
    p.dim = 4;
    Mat docs = random_mat(5, 4, rng);
    Vec q = random_mat(4, 1, rng).col(0);
    auto fwd = rerank_forward(docs, q, p);
    for (int i = 0; i < 5; ++i) {
      CHECK(fwd.scores[static_cast<size_t>(i)] ==
            doctest::Approx(docs.row(i).dot(q)).epsilon(1e-6));
    }
  }

  SUBCASE("matches the naive oracle on c=3, d=4, L=1") {
    auto p = RerankerParams::init(1, 4, 2, 8, 55);
    Mat docs = random_mat(3, 4, rng);
    Vec q = random_mat(4, 1, rng).col(0);
    auto fwd = rerank_forward(docs, q, p);
    auto slow = oracles::naive_rerank_scores(docs, q, p);
    for (size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(fwd.scores[i] - slow[i]) < 1e-6);
    }
  }

  SUBCASE("permutation equivariance is exact") {
    auto p = RerankerParams::init(2, 8, 2, 16, 9);
    Mat docs = random_mat(6, 8, rng);
    Vec q = random_mat(8, 1, rng).col(0);
    auto base = rerank_forward(docs, q, p);

    std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    Mat shuffled(6, 8);
    for (int i = 0; i < 6; ++i) shuffled.row(i) = docs.row(perm[i]);
    auto permuted = rerank_forward(shuffled, q, p);
    for (int i = 0; i < 6; ++i) {
      CHECK(permuted.scores[static_cast<size_t>(i)] ==
            base.scores[static_cast<size_t>(perm[i])]);  // bit-exact
      CHECK((permuted.u.row(i) - base.u.row(perm[i])).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("rerank_top_k") {
  SUBCASE("identical scores give ascending ids") {
    auto r = rerank_top_k({1.0f, 1.0f, 1.0f}, {9, 4, 7}, 3);
    CHECK(r.ids == std::vector<uint32_t>{4, 7, 9});
  }
  SUBCASE("k=c is a permutation of the input ids") {
    auto r = rerank_top_k({0.5f, 2.0f, -1.0f}, {10, 11, 12}, 3);
    CHECK(r.ids == std::vector<uint32_t>{11, 10, 12});
  }
  SUBCASE("matches full-sort oracle on random scores") {
    std::mt19937_64 rng(17);
    PassageIndex index;
    index.rows = 40;
    index.dim = 1;
    index.matrix.resize(40);
    index.ids.resize(40);
    std::vector<float> scores(40);
    for (uint32_t i = 0; i < 40; ++i) {
      scores[i] = static_cast<float>(rng() % 7);  // many ties
      index.matrix[i] = scores[i];
      index.ids[i] = i;
    }
    Embedding one{{1.0f}};
    auto oracle = oracles::full_sort_top_k(index, one, 15);
    auto fast = rerank_top_k(scores, index.ids, 15);
    CHECK(fast.ids == oracle.ids);
  }
  SUBCASE("k > c throws") {
    CHECK_THROWS_AS(rerank_top_k({1.0f}, {0}, 2), std::invalid_argument);
  }
}

TEST_CASE("reranker parameter gradients match finite differences") {
  std::mt19937_64 rng(23);
  Mat docs = random_mat(3, 4, rng);
  Vec q = random_mat(4, 1, rng).col(0);
  std::vector<uint8_t> positives = {1, 0, 0};

  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    auto params = RerankerParams::init(1, 4, 2, 8, seed);
    auto fwd = rerank_forward(docs, q, params, true);
    auto l = ps_loss(fwd.scores, positives);
    REQUIRE(l.has_value());
    auto grad = RerankerParams::zeros_like(params);
    rerank_backward(fwd, docs, l->grad_scores, params, grad);

    auto analytic = flatten_params(grad);
    auto flat = flatten_params(params);
    auto f = [&](const std::vector<double>& vals) {
      RerankerParams p2 = params;
      unflatten_params(vals, p2);
      return oracles::rerank_marginal_loss(docs, q, p2, positives);
    };
    // relative error floor 1e-4 separates FD noise from real mismatches
    CHECK(oracles::fd_max_rel_error(flat, f, analytic, 1e-3, 1e-4) < 1e-3);
  }
}

TEST_CASE("rerank_train_step") {
  std::mt19937_64 rng(67);
  RerankExample ex;
  ex.docs = random_mat(4, 4, rng);
  ex.query = random_mat(4, 1, rng).col(0);
  ex.positives = {0, 1, 0, 0};

  SUBCASE("step_size 0 leaves params unchanged") {
    auto params = RerankerParams::init(1, 4, 2, 8, 5);
    auto before = flatten_params(params);
    auto fwd = rerank_forward(ex.docs, ex.query, params);
    auto expected = ps_loss(fwd.scores, ex.positives);
    REQUIRE(expected.has_value());
    double loss = rerank_train_step({ex}, params, 0.0);
    CHECK(loss == doctest::Approx(expected->loss).epsilon(1e-12));
    CHECK(flatten_params(params) == before);
  }

  SUBCASE("positive-free batch throws") {
    auto params = RerankerParams::init(1, 4, 2, 8, 5);
    RerankExample bad = ex;
    bad.positives = {0, 0, 0, 0};
    CHECK_THROWS_AS(rerank_train_step({bad}, params, 0.1), std::invalid_argument);
  }

  SUBCASE("training reduces loss on a small batch") {
    auto params = RerankerParams::init(1, 4, 2, 8, 5);
    std::vector<RerankExample> batch;
    for (int i = 0; i < 6; ++i) {
      RerankExample e;
      e.docs = random_mat(5, 4, rng);
      e.query = random_mat(4, 1, rng).col(0);
      e.positives = {0, 0, 0, 0, 0};
      e.positives[static_cast<size_t>(rng() % 5)] = 1;
      batch.push_back(std::move(e));
    }
    const double initial = rerank_train_step(batch, params, 0.05);
    double last = initial;
    for (int step = 0; step < 200; ++step) last = rerank_train_step(batch, params, 0.05);
    CHECK(last < initial);
  }
}

TEST_CASE("reranker params save/load round trip") {
  namespace fs = std::filesystem;
  auto params = RerankerParams::init(2, 8, 4, 16, 77);
  auto path = (fs::temp_directory_path() / "odqa_reranker.bin").string();
  save_reranker(params, path);
  auto loaded = load_reranker(path);
  CHECK(loaded.layers == params.layers);
  CHECK(loaded.dim == params.dim);
  CHECK(loaded.heads == params.heads);
  CHECK(loaded.ffn_dim == params.ffn_dim);
  auto a = flatten_params(params);
  auto b = flatten_params(loaded);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-6));  // stored as f32
  }

  fs::resize_file(path, 64);
  CHECK_THROWS_AS(load_reranker(path), std::runtime_error);
}
