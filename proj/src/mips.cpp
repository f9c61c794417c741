#include "odqa/mips.hpp"

#include "binio.hpp"

#include <algorithm>
#include <queue>
#include <stdexcept>

namespace odqa {

namespace {

struct Scored {
  float score;
  uint32_t id;
};

// "Better" means higher score, then lower id.
bool better(const Scored& a, const Scored& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

}  // namespace

PassageIndex build_index(const Corpus& corpus, const Embedder& embedder,
                         const ProjectionParams& projection) {
  if (corpus.passages.empty()) throw std::invalid_argument("build_index: empty corpus");
  PassageIndex index;
  index.rows = static_cast<uint32_t>(corpus.passages.size());
  index.dim = embedder.config().dim;
  index.matrix.resize(static_cast<size_t>(index.rows) * index.dim);
  index.ids.reserve(index.rows);
  for (uint32_t r = 0; r < index.rows; ++r) {
    const auto& p = corpus.passages[r];
    Embedding e = project(embedder.embed(p.tokens), projection);
    std::copy(e.values.begin(), e.values.end(),
              index.matrix.begin() + static_cast<size_t>(r) * index.dim);
    index.ids.push_back(p.id);
  }
  return index;
}

TopKResult exact_top_k(const PassageIndex& index, const Embedding& query, uint32_t c) {
  if (c == 0 || c > index.rows) {
    throw std::invalid_argument("exact_top_k: need 1 <= c <= m");
  }
  if (query.dim() != index.dim) {
    throw std::invalid_argument("exact_top_k: query dimension mismatch");
  }

  // Min-heap of the current best c; top() is the worst kept entry.
  auto worse = [](const Scored& a, const Scored& b) { return better(a, b); };
  std::priority_queue<Scored, std::vector<Scored>, decltype(worse)> heap(worse);

  const float* q = query.values.data();
  for (uint32_t r = 0; r < index.rows; ++r) {
    const float* p = index.row(r);
    float score = 0.0f;
    for (uint32_t j = 0; j < index.dim; ++j) score += q[j] * p[j];
    Scored s{score, index.ids[r]};
    if (heap.size() < c) {
      heap.push(s);
    } else if (better(s, heap.top())) {
      heap.pop();
      heap.push(s);
    }
  }

  TopKResult result;
  result.ids.resize(heap.size());
  result.scores.resize(heap.size());
  for (size_t i = heap.size(); i-- > 0;) {
    result.ids[i] = heap.top().id;
    result.scores[i] = heap.top().score;
    heap.pop();
  }
  return result;
}

std::vector<TopKResult> batched_top_k(const PassageIndex& index,
                                      const std::vector<Embedding>& queries, uint32_t c) {
  std::vector<TopKResult> results;
  results.reserve(queries.size());
  for (const auto& q : queries) results.push_back(exact_top_k(index, q, c));
  return results;
}

void save_index(const PassageIndex& index, const std::string& path) {
  auto out = detail::open_out(path);
  detail::write_magic(out, "ODQI");
  detail::write_u32(out, index.rows);
  detail::write_u32(out, index.dim);
  detail::write_f32(out, index.matrix.data(), index.matrix.size());
  out.write(reinterpret_cast<const char*>(index.ids.data()),
            static_cast<std::streamsize>(index.ids.size() * sizeof(uint32_t)));
}

PassageIndex load_index(const std::string& path) {
  auto in = detail::open_in(path);
  detail::expect_magic(in, "ODQI", path);
  PassageIndex index;
  index.rows = detail::read_u32(in, path);
  index.dim = detail::read_u32(in, path);
  index.matrix.resize(static_cast<size_t>(index.rows) * index.dim);
  detail::read_f32(in, index.matrix.data(), index.matrix.size(), path);
  index.ids.resize(index.rows);
  if (!in.read(reinterpret_cast<char*>(index.ids.data()),
               static_cast<std::streamsize>(index.ids.size() * sizeof(uint32_t)))) {
    throw std::runtime_error(path + ": truncated id table");
  }
  return index;
}

}  // namespace odqa
