#pragma once

#include "odqa/corpus.hpp"
#include "odqa/embed.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace odqa {

/// Immutable passage embedding table for exact inner-product search.
struct PassageIndex {
  uint32_t rows = 0;
  uint32_t dim = 0;
  std::vector<float> matrix;  // rows x dim, row-major
  std::vector<uint32_t> ids;  // aligned to rows

  const float* row(uint32_t r) const { return matrix.data() + static_cast<size_t>(r) * dim; }
};

struct TopKResult {
  std::vector<uint32_t> ids;
  std::vector<float> scores;  // non-increasing; ties broken by ascending id
};

struct RetrievalConfig {
  uint32_t c = 5000;     // candidates retrieved
  uint32_t k = 5;        // passages passed to the reader
  uint32_t batch_size = 1;
};

PassageIndex build_index(const Corpus& corpus, const Embedder& embedder,
                         const ProjectionParams& projection);

/// Exact top-c by inner product q^T h_p. O(m log c) via a bounded heap;
/// scores accumulate sequentially over dimensions in 32-bit.
TopKResult exact_top_k(const PassageIndex& index, const Embedding& query, uint32_t c);

std::vector<TopKResult> batched_top_k(const PassageIndex& index,
                                      const std::vector<Embedding>& queries, uint32_t c);

void save_index(const PassageIndex& index, const std::string& path);
PassageIndex load_index(const std::string& path);

}  // namespace odqa
