#include "odqa/embed.hpp"

#include "binio.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>

namespace odqa {

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Uniform float in [-1, 1) from one mt19937_64 draw.
float uniform_pm1(std::mt19937_64& rng) {
  return static_cast<float>(static_cast<int64_t>(rng() >> 11)) * 0x1p-52f * 2.0f - 1.0f;
}

using MatD = Eigen::MatrixXd;
using VecD = Eigen::VectorXd;

VecD to_vecd(const Embedding& e) {
  return Eigen::Map<const Eigen::VectorXf>(e.values.data(),
                                           static_cast<Eigen::Index>(e.dim()))
      .cast<double>();
}

MatD to_matd(const ProjectionParams& p) {
  return Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
             p.w.data(), p.dim, p.dim)
      .cast<double>();
}

}  // namespace

ProjectionParams ProjectionParams::identity(uint32_t dim) {
  ProjectionParams p;
  p.dim = dim;
  p.w.assign(static_cast<size_t>(dim) * dim, 0.0f);
  for (uint32_t i = 0; i < dim; ++i) p.w[static_cast<size_t>(i) * dim + i] = 1.0f;
  return p;
}

ProjectionParams ProjectionParams::random(uint32_t dim, uint64_t seed, float scale) {
  ProjectionParams p;
  p.dim = dim;
  p.w.resize(static_cast<size_t>(dim) * dim);
  std::mt19937_64 rng(seed);
  const float s = scale / std::sqrt(static_cast<float>(dim));
  for (auto& v : p.w) v = uniform_pm1(rng) * s;
  return p;
}

Embedder::Embedder(const EmbedderConfig& cfg) : cfg_(cfg) {
  if (cfg.dim == 0 || cfg.buckets == 0 || cfg.dim > cfg.buckets) {
    throw std::invalid_argument("embedder config: need 0 < dim <= buckets");
  }
  proj_.resize(static_cast<size_t>(cfg.dim) * cfg.buckets);
  std::mt19937_64 rng(cfg.seed);
  for (auto& v : proj_) v = uniform_pm1(rng);
}

Embedding Embedder::embed(const std::vector<std::string>& tokens) const {
  Embedding e;
  e.values.assign(cfg_.dim, 0.0f);
  if (tokens.empty()) return e;

  std::vector<float> counts(cfg_.buckets, 0.0f);
  for (const auto& t : tokens) counts[fnv1a(t) % cfg_.buckets] += 1.0f;

  // Accumulate in double, fixed order over buckets.
  std::vector<double> acc(cfg_.dim, 0.0);
  for (uint32_t b = 0; b < cfg_.buckets; ++b) {
    const float c = counts[b];
    if (c == 0.0f) continue;
    for (uint32_t r = 0; r < cfg_.dim; ++r) {
      acc[r] += static_cast<double>(proj_[static_cast<size_t>(r) * cfg_.buckets + b]) * c;
    }
  }
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) return e;
  for (uint32_t r = 0; r < cfg_.dim; ++r) {
    e.values[r] = static_cast<float>(acc[r] / norm);
  }
  return e;
}

Embedding embed_text(const std::vector<std::string>& tokens, const EmbedderConfig& cfg) {
  return Embedder(cfg).embed(tokens);
}

Embedding project(const Embedding& e, const ProjectionParams& params) {
  if (e.dim() != params.dim) {
    throw std::invalid_argument("project: dimension mismatch");
  }
  VecD out = to_matd(params) * to_vecd(e);
  Embedding r;
  r.values.resize(e.dim());
  for (size_t i = 0; i < e.dim(); ++i) r.values[i] = static_cast<float>(out[static_cast<Eigen::Index>(i)]);
  return r;
}

std::vector<double> projection_gradient(const std::vector<double>& loss_grad_scores,
                                        const Embedding& query,
                                        const std::vector<Embedding>& passages,
                                        const ProjectionParams& params) {
  if (loss_grad_scores.size() != passages.size()) {
    throw std::invalid_argument("projection_gradient: grad/passage count mismatch");
  }
  const auto d = static_cast<Eigen::Index>(params.dim);
  if (query.dim() != params.dim) {
    throw std::invalid_argument("projection_gradient: query dimension mismatch");
  }
  VecD q = to_vecd(query);
  VecD m = VecD::Zero(d);
  for (size_t i = 0; i < passages.size(); ++i) {
    if (passages[i].dim() != params.dim) {
      throw std::invalid_argument("projection_gradient: passage dimension mismatch");
    }
    m += loss_grad_scores[i] * to_vecd(passages[i]);
  }
  // d/dW of sum_i g_i q^T W^T W p_i  =  W (m q^T + q m^T)
  MatD grad = to_matd(params) * (m * q.transpose() + q * m.transpose());
  std::vector<double> out(static_cast<size_t>(d) * d);
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) {
      out[static_cast<size_t>(r) * d + c] = grad(r, c);
    }
  }
  return out;
}

void save_embeddings(const std::vector<Embedding>& embs, const std::string& path) {
  auto out = detail::open_out(path);
  detail::write_magic(out, "ODQE");
  const uint32_t n = static_cast<uint32_t>(embs.size());
  const uint32_t d = embs.empty() ? 0 : static_cast<uint32_t>(embs[0].dim());
  detail::write_u32(out, n);
  detail::write_u32(out, d);
  for (const auto& e : embs) {
    if (e.dim() != d) throw std::invalid_argument("save_embeddings: ragged dimensions");
    detail::write_f32(out, e.values.data(), d);
  }
}

std::vector<Embedding> load_embeddings(const std::string& path, uint32_t expected_dim) {
  auto in = detail::open_in(path);
  detail::expect_magic(in, "ODQE", path);
  const uint32_t n = detail::read_u32(in, path);
  const uint32_t d = detail::read_u32(in, path);
  if (d != expected_dim) {
    throw std::runtime_error(path + ": dimension " + std::to_string(d) +
                             " != expected " + std::to_string(expected_dim));
  }
  std::vector<Embedding> embs(n);
  for (auto& e : embs) {
    e.values.resize(d);
    detail::read_f32(in, e.values.data(), d, path);
  }
  return embs;
}

void save_projection(const ProjectionParams& params, const std::string& path) {
  auto out = detail::open_out(path);
  detail::write_magic(out, "ODQW");
  detail::write_u32(out, params.dim);
  detail::write_f32(out, params.w.data(), params.w.size());
}

ProjectionParams load_projection(const std::string& path) {
  auto in = detail::open_in(path);
  detail::expect_magic(in, "ODQW", path);
  ProjectionParams p;
  p.dim = detail::read_u32(in, path);
  p.w.resize(static_cast<size_t>(p.dim) * p.dim);
  detail::read_f32(in, p.w.data(), p.w.size(), path);
  return p;
}

}  // namespace odqa
