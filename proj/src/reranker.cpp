#include "odqa/reranker.hpp"

#include "odqa/supervision.hpp"

#include "binio.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace odqa {

namespace {

constexpr double kLnEps = 1e-5;

// Sum of a multiset of doubles in a canonical (sorted) order. Reductions
// over document rows go through this, which makes block outputs exactly
// equivariant under permutation of the documents.
double stable_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

// Plain sequential per-entry product. Eigen's GEMM rounds an entry
// differently depending on its row position (vectorized vs peeled rows),
// which would break exact permutation equivariance; this keeps every
// output row a pure function of the corresponding input row.
Mat ordered_product(const Mat& a, const Mat& b) {
  Mat out(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
      double s = 0.0;
      for (Eigen::Index t = 0; t < a.cols(); ++t) s += a(i, t) * b(t, c);
      out(i, c) = s;
    }
  }
  return out;
}

float uniform_pm1(std::mt19937_64& rng) {
  return static_cast<float>(static_cast<int64_t>(rng() >> 11)) * 0x1p-52f * 2.0f - 1.0f;
}

template <class FnM, class FnV>
void visit_block(TransfBlockParams& b, FnM fm, FnV fv) {
  fm(b.attn.wq);
  fm(b.attn.wk);
  fm(b.attn.wv);
  fm(b.attn.wo);
  fv(b.ln1.gain);
  fv(b.ln1.offset);
  fm(b.ffn.w1);
  fv(b.ffn.b1);
  fm(b.ffn.w2);
  fv(b.ffn.b2);
  fv(b.ln2.gain);
  fv(b.ln2.offset);
}

template <class FnM, class FnV>
void visit_params(RerankerParams& p, FnM fm, FnV fv) {
  for (auto& layer : p.layer) {
    visit_block(layer.self_block, fm, fv);
    visit_block(layer.cross_block, fm, fv);
  }
}

RerankerParams make_shaped(uint32_t layers, uint32_t dim, uint32_t heads, uint32_t ffn_dim) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("reranker: heads must divide dim");
  }
  RerankerParams p;
  p.layers = layers;
  p.dim = dim;
  p.heads = heads;
  p.ffn_dim = ffn_dim;
  p.layer.resize(layers);
  auto shape_block = [&](TransfBlockParams& b) {
    b.attn.wq = Mat::Zero(dim, dim);
    b.attn.wk = Mat::Zero(dim, dim);
    b.attn.wv = Mat::Zero(dim, dim);
    b.attn.wo = Mat::Zero(dim, dim);
    b.ln1.gain = Vec::Zero(dim);
    b.ln1.offset = Vec::Zero(dim);
    b.ffn.w1 = Mat::Zero(dim, ffn_dim);
    b.ffn.b1 = Vec::Zero(ffn_dim);
    b.ffn.w2 = Mat::Zero(ffn_dim, dim);
    b.ffn.b2 = Vec::Zero(dim);
    b.ln2.gain = Vec::Zero(dim);
    b.ln2.offset = Vec::Zero(dim);
  };
  for (auto& layer : p.layer) {
    shape_block(layer.self_block);
    shape_block(layer.cross_block);
  }
  return p;
}

// Row-wise layer normalization; caches xhat and 1/sigma.
Mat layer_norm(const Mat& x, const LayerNormParams& ln, Mat& xhat, Vec& inv) {
  const auto n = x.rows();
  const auto d = x.cols();
  xhat.resize(n, d);
  inv.resize(n);
  Mat y(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv[i] = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = (x.row(i).array() - mu) * inv[i];
    y.row(i) = xhat.row(i).array() * ln.gain.transpose().array() +
               ln.offset.transpose().array();
  }
  return y;
}

Mat layer_norm_backward(const Mat& xhat, const Vec& inv, const Mat& dy,
                        const LayerNormParams& ln, LayerNormParams& grad) {
  const auto n = dy.rows();
  const auto d = dy.cols();
  grad.gain += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
  grad.offset += dy.colwise().sum().transpose();
  Mat dx(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::RowVectorXd dxhat = dy.row(i).array() * ln.gain.transpose().array();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat.array() * xhat.row(i).array()).mean();
    dx.row(i) = inv[i] * (dxhat.array() - m1 - xhat.row(i).array() * m2);
  }
  return dx;
}

}  // namespace

RerankerParams RerankerParams::init(uint32_t layers, uint32_t dim, uint32_t heads,
                                    uint32_t ffn_dim, uint64_t seed) {
  RerankerParams p = make_shaped(layers, dim, heads, ffn_dim);
  std::mt19937_64 rng(seed);
  visit_params(
      p,
      [&](Mat& m) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(m.rows()));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
          for (Eigen::Index c = 0; c < m.cols(); ++c) {
            m(r, c) = uniform_pm1(rng) * scale;
          }
        }
      },
      [&](Vec& v) { v.setZero(); });
  // layernorm gains start at 1
  for (auto& layer : p.layer) {
    layer.self_block.ln1.gain.setOnes();
    layer.self_block.ln2.gain.setOnes();
    layer.cross_block.ln1.gain.setOnes();
    layer.cross_block.ln2.gain.setOnes();
  }
  return p;
}

RerankerParams RerankerParams::zeros_like(const RerankerParams& p) {
  return make_shaped(p.layers, p.dim, p.heads, p.ffn_dim);
}

std::vector<double> flatten_params(const RerankerParams& p) {
  std::vector<double> flat;
  visit_params(
      const_cast<RerankerParams&>(p),
      [&](Mat& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
          for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
        }
      },
      [&](Vec& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) flat.push_back(v[i]);
      });
  return flat;
}

void unflatten_params(const std::vector<double>& flat, RerankerParams& p) {
  size_t pos = 0;
  visit_params(
      p,
      [&](Mat& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
          for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = flat.at(pos++);
        }
      },
      [&](Vec& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = flat.at(pos++);
      });
  if (pos != flat.size()) {
    throw std::invalid_argument("unflatten_params: size mismatch");
  }
}

Mat transf_block(const Mat& queries, const Mat& source, const TransfBlockParams& p,
                 uint32_t heads, BlockCache* cache) {
  const auto n = queries.rows();
  const auto m = source.rows();
  const auto d = queries.cols();
  if (source.cols() != d || p.attn.wq.rows() != d) {
    throw std::invalid_argument("transf_block: shape mismatch");
  }
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("transf_block: heads must divide dim");
  }
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat q = ordered_product(queries, p.attn.wq);
  Mat k = ordered_product(source, p.attn.wk);
  Mat v = ordered_product(source, p.attn.wv);

  std::vector<Mat> attn(heads);
  Mat ctx(n, d);
  std::vector<double> terms;
  for (uint32_t h = 0; h < heads; ++h) {
    auto qh = q.middleCols(h * dh, dh);
    auto kh = k.middleCols(h * dh, dh);
    auto vh = v.middleCols(h * dh, dh);
    Mat logits = ordered_product(qh, Mat(kh.transpose())) * scale;  // n x m
    Mat& a = attn[h];
    a.resize(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = logits.row(i).maxCoeff();
      terms.resize(static_cast<size_t>(m));
      for (Eigen::Index j = 0; j < m; ++j) {
        a(i, j) = std::exp(logits(i, j) - mx);
        terms[static_cast<size_t>(j)] = a(i, j);
      }
      const double z = stable_sum(terms);
      a.row(i) /= z;
    }
    // context via sorted accumulation over source rows
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index col = 0; col < dh; ++col) {
        terms.resize(static_cast<size_t>(m));
        for (Eigen::Index j = 0; j < m; ++j) {
          terms[static_cast<size_t>(j)] = a(i, j) * vh(j, col);
        }
        ctx(i, h * dh + col) = stable_sum(terms);
      }
    }
  }

  Mat attn_out = ordered_product(ctx, p.attn.wo);
  Mat r1 = queries + attn_out;
  Mat x1hat;
  Vec inv1;
  Mat x1 = layer_norm(r1, p.ln1, x1hat, inv1);

  Mat f1 = ordered_product(x1, p.ffn.w1).rowwise() + p.ffn.b1.transpose();
  Mat a1 = f1.cwiseMax(0.0);
  Mat f2 = ordered_product(a1, p.ffn.w2).rowwise() + p.ffn.b2.transpose();
  Mat r2 = x1 + f2;
  Mat x2hat;
  Vec inv2;
  Mat out = layer_norm(r2, p.ln2, x2hat, inv2);

  if (cache) {
    cache->queries = queries;
    cache->source = source;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attn = std::move(attn);
    cache->ctx = std::move(ctx);
    cache->attn_out = std::move(attn_out);
    cache->r1 = std::move(r1);
    cache->x1hat = std::move(x1hat);
    cache->inv1 = std::move(inv1);
    cache->x1 = x1;
    cache->f1 = std::move(f1);
    cache->a1 = std::move(a1);
    cache->r2 = std::move(r2);
    cache->x2hat = std::move(x2hat);
    cache->inv2 = std::move(inv2);
    cache->out = out;
  }
  return out;
}

BlockInputGrads transf_block_backward(const BlockCache& cache, const Mat& d_out,
                                      const TransfBlockParams& p, uint32_t heads,
                                      TransfBlockParams& grad) {
  const auto n = cache.queries.rows();
  const auto m = cache.source.rows();
  const auto d = cache.queries.cols();
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // second layernorm + ffn
  Mat dr2 = layer_norm_backward(cache.x2hat, cache.inv2, d_out, p.ln2, grad.ln2);
  Mat dx1 = dr2;
  const Mat& df2 = dr2;
  grad.ffn.w2 += cache.a1.transpose() * df2;
  grad.ffn.b2 += df2.colwise().sum().transpose();
  Mat da1 = df2 * p.ffn.w2.transpose();
  Mat df1 = (cache.f1.array() > 0.0).select(da1, 0.0);
  grad.ffn.w1 += cache.x1.transpose() * df1;
  grad.ffn.b1 += df1.colwise().sum().transpose();
  dx1 += df1 * p.ffn.w1.transpose();

  // first layernorm + attention
  Mat dr1 = layer_norm_backward(cache.x1hat, cache.inv1, dx1, p.ln1, grad.ln1);
  Mat d_queries = dr1;
  const Mat& d_attn_out = dr1;
  grad.attn.wo += cache.ctx.transpose() * d_attn_out;
  Mat dctx = d_attn_out * p.attn.wo.transpose();

  Mat dq = Mat::Zero(n, d);
  Mat dk = Mat::Zero(m, d);
  Mat dv = Mat::Zero(m, d);
  for (uint32_t h = 0; h < heads; ++h) {
    auto qh = cache.q.middleCols(h * dh, dh);
    auto kh = cache.k.middleCols(h * dh, dh);
    auto vh = cache.v.middleCols(h * dh, dh);
    const Mat& a = cache.attn[h];
    Mat dctx_h = dctx.middleCols(h * dh, dh);

    Mat da = dctx_h * vh.transpose();           // n x m
    dv.middleCols(h * dh, dh) += a.transpose() * dctx_h;

    Mat dlogits(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dot = (da.row(i).array() * a.row(i).array()).sum();
      dlogits.row(i) = a.row(i).array() * (da.row(i).array() - dot);
    }
    dq.middleCols(h * dh, dh) += dlogits * kh * scale;
    dk.middleCols(h * dh, dh) += dlogits.transpose() * qh * scale;
  }

  grad.attn.wq += cache.queries.transpose() * dq;
  grad.attn.wk += cache.source.transpose() * dk;
  grad.attn.wv += cache.source.transpose() * dv;

  d_queries += dq * p.attn.wq.transpose();
  Mat d_source = dk * p.attn.wk.transpose() + dv * p.attn.wv.transpose();
  return {std::move(d_queries), std::move(d_source)};
}

RerankForward rerank_forward(const Mat& doc_embs, const Vec& q_emb,
                             const RerankerParams& params, bool keep_cache) {
  const auto c = doc_embs.rows();
  if (c < 1) throw std::invalid_argument("rerank_forward: need at least one document");
  if (doc_embs.cols() != q_emb.size() ||
      (params.layers > 0 && static_cast<uint32_t>(q_emb.size()) != params.dim)) {
    throw std::invalid_argument("rerank_forward: shape mismatch");
  }

  RerankForward fwd;
  fwd.u = doc_embs;
  fwd.v = q_emb;
  if (keep_cache) {
    fwd.self_cache.resize(params.layers);
    fwd.cross_cache.resize(params.layers);
  }
  for (uint32_t l = 0; l < params.layers; ++l) {
    BlockCache* sc = keep_cache ? &fwd.self_cache[l] : nullptr;
    BlockCache* cc = keep_cache ? &fwd.cross_cache[l] : nullptr;
    fwd.u = transf_block(fwd.u, fwd.u, params.layer[l].self_block, params.heads, sc);
    Mat v_row = transf_block(fwd.v.transpose(), fwd.u, params.layer[l].cross_block,
                             params.heads, cc);
    fwd.v = v_row.row(0).transpose();
  }
  fwd.scores.resize(static_cast<size_t>(c));
  for (Eigen::Index i = 0; i < c; ++i) {
    fwd.scores[static_cast<size_t>(i)] = static_cast<float>(fwd.u.row(i).dot(fwd.v));
  }
  return fwd;
}

RerankForward rerank_forward(const std::vector<Embedding>& doc_embs, const Embedding& q_emb,
                             const RerankerParams& params, bool keep_cache) {
  if (doc_embs.empty()) throw std::invalid_argument("rerank_forward: empty document set");
  Mat docs(static_cast<Eigen::Index>(doc_embs.size()),
           static_cast<Eigen::Index>(doc_embs[0].dim()));
  for (size_t i = 0; i < doc_embs.size(); ++i) {
    for (size_t j = 0; j < doc_embs[i].dim(); ++j) {
      docs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = doc_embs[i].values[j];
    }
  }
  Vec q(static_cast<Eigen::Index>(q_emb.dim()));
  for (size_t j = 0; j < q_emb.dim(); ++j) q[static_cast<Eigen::Index>(j)] = q_emb.values[j];
  return rerank_forward(docs, q, params, keep_cache);
}

RerankInputGrads rerank_backward(const RerankForward& fwd, const Mat& doc_embs,
                                 const std::vector<double>& d_scores,
                                 const RerankerParams& params, RerankerParams& grad) {
  const auto c = fwd.u.rows();
  if (static_cast<Eigen::Index>(d_scores.size()) != c) {
    throw std::invalid_argument("rerank_backward: gradient length mismatch");
  }
  // scores_i = v . u_i
  Mat du(c, fwd.u.cols());
  Vec dv = Vec::Zero(fwd.v.size());
  for (Eigen::Index i = 0; i < c; ++i) {
    du.row(i) = d_scores[static_cast<size_t>(i)] * fwd.v.transpose();
    dv += d_scores[static_cast<size_t>(i)] * fwd.u.row(i).transpose();
  }

  for (uint32_t l = params.layers; l-- > 0;) {
    auto cg = transf_block_backward(fwd.cross_cache[l], dv.transpose(),
                                    params.layer[l].cross_block, params.heads,
                                    grad.layer[l].cross_block);
    dv = cg.d_queries.row(0).transpose();
    du += cg.d_source;
    auto sg = transf_block_backward(fwd.self_cache[l], du, params.layer[l].self_block,
                                    params.heads, grad.layer[l].self_block);
    du = sg.d_queries + sg.d_source;
  }
  (void)doc_embs;
  return {std::move(du), std::move(dv)};
}

TopKResult rerank_top_k(const std::vector<float>& new_scores,
                        const std::vector<uint32_t>& ids, uint32_t k) {
  if (new_scores.size() != ids.size()) {
    throw std::invalid_argument("rerank_top_k: score/id length mismatch");
  }
  if (k == 0 || k > new_scores.size()) {
    throw std::invalid_argument("rerank_top_k: need 1 <= k <= c");
  }
  std::vector<size_t> order(new_scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (new_scores[a] != new_scores[b]) return new_scores[a] > new_scores[b];
    return ids[a] < ids[b];
  });
  TopKResult result;
  result.ids.reserve(k);
  result.scores.reserve(k);
  for (uint32_t i = 0; i < k; ++i) {
    result.ids.push_back(ids[order[i]]);
    result.scores.push_back(new_scores[order[i]]);
  }
  return result;
}

double rerank_train_step(const std::vector<RerankExample>& batch, RerankerParams& params,
                         double step_size) {
  RerankerParams grad = RerankerParams::zeros_like(params);
  double total_loss = 0.0;
  size_t effective = 0;
  for (const auto& ex : batch) {
    RerankForward fwd = rerank_forward(ex.docs, ex.query, params, true);
    auto loss = ps_loss(fwd.scores, ex.positives);
    if (!loss) continue;
    total_loss += loss->loss;
    rerank_backward(fwd, ex.docs, loss->grad_scores, params, grad);
    ++effective;
  }
  if (effective == 0) {
    throw std::invalid_argument("rerank_train_step: no example with a positive");
  }

  auto w = flatten_params(params);
  auto g = flatten_params(grad);
  const double lr = step_size / static_cast<double>(effective);
  for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  unflatten_params(w, params);
  return total_loss / static_cast<double>(effective);
}

void save_reranker(const RerankerParams& params, const std::string& path) {
  auto out = detail::open_out(path);
  detail::write_magic(out, "ODQR");
  detail::write_u32(out, params.layers);
  detail::write_u32(out, params.dim);
  detail::write_u32(out, params.heads);
  detail::write_u32(out, params.ffn_dim);
  auto flat = flatten_params(params);
  std::vector<float> f32(flat.begin(), flat.end());
  detail::write_f32(out, f32.data(), f32.size());
}

RerankerParams load_reranker(const std::string& path) {
  auto in = detail::open_in(path);
  detail::expect_magic(in, "ODQR", path);
  const uint32_t layers = detail::read_u32(in, path);
  const uint32_t dim = detail::read_u32(in, path);
  const uint32_t heads = detail::read_u32(in, path);
  const uint32_t ffn_dim = detail::read_u32(in, path);
  RerankerParams p = RerankerParams::zeros_like(
      [&] {
        RerankerParams shape;
        shape.layers = layers;
        shape.dim = dim;
        shape.heads = heads;
        shape.ffn_dim = ffn_dim;
        return shape;
      }());
  auto flat = flatten_params(p);
  std::vector<float> f32(flat.size());
  detail::read_f32(in, f32.data(), f32.size(), path);
  for (size_t i = 0; i < flat.size(); ++i) flat[i] = f32[i];
  unflatten_params(flat, p);
  return p;
}

}  // namespace odqa
