#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace odqa {

struct Embedding {
  std::vector<float> values;

  size_t dim() const { return values.size(); }
};

struct EmbedderConfig {
  uint32_t dim = 64;
  uint32_t buckets = 2048;
  uint64_t seed = 7;
};

/// Shared query/passage projection W (d x d, row-major).
struct ProjectionParams {
  uint32_t dim = 0;
  std::vector<float> w;

  static ProjectionParams identity(uint32_t dim);
  static ProjectionParams random(uint32_t dim, uint64_t seed, float scale = 1.0f);
};

/// Hashed bag-of-words embedder with a fixed seed-determined random
/// projection to `dim`. Output is L2-normalized; the empty token sequence
/// maps to the zero vector.
class Embedder {
 public:
  explicit Embedder(const EmbedderConfig& cfg);

  Embedding embed(const std::vector<std::string>& tokens) const;
  const EmbedderConfig& config() const { return cfg_; }

 private:
  EmbedderConfig cfg_;
  std::vector<float> proj_;  // dim x buckets, row-major
};

Embedding embed_text(const std::vector<std::string>& tokens, const EmbedderConfig& cfg);

/// Returns W * e. Throws on dimension mismatch.
Embedding project(const Embedding& e, const ProjectionParams& params);

/// Gradient of the scalar loss w.r.t. W for the bilinear retrieval score
/// S_i = (W q)^T (W p_i), given upstream dL/dS_i per retrieved passage.
/// Computed in 64-bit; returned row-major d x d.
std::vector<double> projection_gradient(const std::vector<double>& loss_grad_scores,
                                        const Embedding& query,
                                        const std::vector<Embedding>& passages,
                                        const ProjectionParams& params);

void save_embeddings(const std::vector<Embedding>& embs, const std::string& path);
std::vector<Embedding> load_embeddings(const std::string& path, uint32_t expected_dim);

void save_projection(const ProjectionParams& params, const std::string& path);
ProjectionParams load_projection(const std::string& path);

}  // namespace odqa
