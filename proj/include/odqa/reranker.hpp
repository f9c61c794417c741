#pragma once

#include "odqa/embed.hpp"
#include "odqa/mips.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace odqa {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct LayerNormParams {
  Vec gain, offset;
};

// Per-head query/key/value projections stored concatenated as d x d;
// column block h*d_h..(h+1)*d_h is head h.
struct AttentionParams {
  Mat wq, wk, wv, wo;
};

struct FfnParams {
  Mat w1;  // d x f
  Vec b1;
  Mat w2;  // f x d
  Vec b2;
};

// One Transf block: multi-head attention + residual + layernorm,
// then a two-layer ReLU feed-forward + residual + layernorm (post-norm).
struct TransfBlockParams {
  AttentionParams attn;
  LayerNormParams ln1;
  FfnParams ffn;
  LayerNormParams ln2;
};

struct RerankerLayer {
  TransfBlockParams self_block;   // documents attend to documents
  TransfBlockParams cross_block;  // query attends to documents
};

struct RerankerParams {
  uint32_t layers = 2;
  uint32_t dim = 64;
  uint32_t heads = 4;
  uint32_t ffn_dim = 128;
  std::vector<RerankerLayer> layer;

  uint32_t head_dim() const { return dim / heads; }

  /// Scaled-uniform fan-in init from a seeded generator; layernorm
  /// gains 1, offsets 0. Throws unless heads divides dim.
  static RerankerParams init(uint32_t layers, uint32_t dim, uint32_t heads,
                             uint32_t ffn_dim, uint64_t seed);

  /// Same shapes, all entries zero (gradient accumulator).
  static RerankerParams zeros_like(const RerankerParams& p);
};

// Fixed traversal order shared by flatten/unflatten, serialization, and the
// SGD update: per layer, self block then cross block; within a block
// wq, wk, wv, wo, ln1 gain, ln1 offset, w1, b1, w2, b2, ln2 gain, ln2 offset.
std::vector<double> flatten_params(const RerankerParams& p);
void unflatten_params(const std::vector<double>& flat, RerankerParams& p);

struct BlockCache {
  Mat queries, source;            // block inputs (n x d, m x d)
  Mat q, k, v;                    // projections
  std::vector<Mat> attn;          // per-head softmax weights, n x m
  Mat ctx, attn_out;              // concatenated context, output projection
  Mat r1, x1hat, x1;              // first residual + layernorm
  Vec inv1;                       // per-row 1/sigma for ln1
  Mat f1, a1;                     // ffn pre/post activation
  Mat r2, x2hat, out;             // second residual + layernorm
  Vec inv2;
};

/// One Transf block forward. Keys and values share the `source` rows
/// (Eq.-style usage: K = V). Reductions over source rows use sorted
/// summation, so the output is exactly equivariant under row permutation.
Mat transf_block(const Mat& queries, const Mat& source, const TransfBlockParams& p,
                 uint32_t heads, BlockCache* cache = nullptr);

/// Backward through one block. dOut is n x d. Accumulates parameter
/// gradients into `grad` and returns gradients w.r.t. the block inputs.
struct BlockInputGrads {
  Mat d_queries;
  Mat d_source;
};
BlockInputGrads transf_block_backward(const BlockCache& cache, const Mat& d_out,
                                      const TransfBlockParams& p, uint32_t heads,
                                      TransfBlockParams& grad);

struct RerankForward {
  Mat u;                       // c x d final document representations
  Vec v;                       // final query representation
  std::vector<float> scores;   // v^T u_i per document
  // caches per layer, filled only when requested
  std::vector<BlockCache> self_cache, cross_cache;
};

RerankForward rerank_forward(const Mat& doc_embs, const Vec& q_emb,
                             const RerankerParams& params, bool keep_cache = false);

/// Convenience overload over float embeddings.
RerankForward rerank_forward(const std::vector<Embedding>& doc_embs, const Embedding& q_emb,
                             const RerankerParams& params, bool keep_cache = false);

struct RerankInputGrads {
  Mat d_docs;
  Vec d_query;
};

/// Backward through the full stack given dL/dscore per document.
RerankInputGrads rerank_backward(const RerankForward& fwd, const Mat& doc_embs,
                                 const std::vector<double>& d_scores,
                                 const RerankerParams& params, RerankerParams& grad);

/// Top-k over reranked scores with the retriever's tie contract
/// (descending score, ascending id).
TopKResult rerank_top_k(const std::vector<float>& new_scores,
                        const std::vector<uint32_t>& ids, uint32_t k);

struct RerankExample {
  Mat docs;                      // c x d retrieved embeddings
  Vec query;
  std::vector<uint8_t> positives;
};

/// One SGD step of the marginal log-likelihood loss on reranked scores.
/// Examples without a positive are skipped; throws if none remain.
/// Returns the mean loss before the update.
double rerank_train_step(const std::vector<RerankExample>& batch, RerankerParams& params,
                         double step_size);

void save_reranker(const RerankerParams& params, const std::string& path);
RerankerParams load_reranker(const std::string& path);

}  // namespace odqa
