#pragma once

#include "odqa/corpus.hpp"
#include "odqa/embed.hpp"
#include "odqa/eval.hpp"
#include "odqa/mips.hpp"
#include "odqa/reader.hpp"
#include "odqa/reranker.hpp"
#include "odqa/supervision.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace odqa {

struct PipelineConfig {
  // retrieval
  uint32_t c = 200;
  uint32_t k = 5;
  uint32_t batch_size = 8;
  // embedder
  uint32_t dim = 64;
  uint32_t buckets = 2048;
  uint64_t embed_seed = 7;
  // supervision
  double overlap_threshold = 0.5;
  double strong_weight = 1.0;
  // reranker
  bool rerank = false;
  uint32_t rr_layers = 2;
  uint32_t rr_heads = 4;
  uint32_t rr_ffn = 0;  // 0 means 2*dim
  // reader
  uint32_t k_inference = 10;
  uint32_t max_span_tokens = 5;
  bool lexical_reader = true;
  // training
  uint32_t steps = 100;
  double step_size = 0.5;
  uint64_t seed = 1;
  // synthetic corpus
  SyntheticSpec synth;
  // eval
  std::vector<uint32_t> recall_ks = {5, 10, 100};
  bool strong_recall = false;
  // paths
  std::string corpus_path, questions_path, index_path, proj_path, reranker_path, out_dir;

  uint32_t ffn_dim() const { return rr_ffn ? rr_ffn : 2 * dim; }
};

PipelineConfig load_config(const std::string& path);
/// Applies one "key=value" override; throws naming the key when unknown.
void apply_config_override(PipelineConfig& cfg, const std::string& key,
                           const std::string& value);
/// Experiment arm presets; throws on an unknown arm name.
void apply_arm(PipelineConfig& cfg, const std::string& arm);
std::map<std::string, std::string> config_echo(const PipelineConfig& cfg);

// ---- in-process building blocks (also used by tests) ----

struct TrainOptions {
  uint32_t c = 50;
  uint32_t steps = 100;
  double step_size = 0.5;
  double strong_weight = 1.0;
  double overlap_threshold = 0.5;
  uint32_t batch_size = 8;
};

struct ProjectionTrainResult {
  ProjectionParams params;
  std::vector<double> losses;  // mean retriever loss per step
};

/// Trains the shared projection W by SGD on the marginal log-likelihood
/// retriever loss over candidates retrieved once with the initial W.
ProjectionTrainResult train_projection(const Corpus& corpus,
                                       const std::vector<Question>& questions,
                                       const Embedder& embedder, ProjectionParams init,
                                       const TrainOptions& opts);

struct RerankTrainOptions {
  uint32_t c = 20;
  uint32_t steps = 200;
  double step_size = 0.1;
  uint32_t layers = 1;
  uint32_t heads = 2;
  uint32_t ffn = 0;  // 0 means 2*dim
  uint64_t seed = 1;
  double overlap_threshold = 0.5;
  uint32_t batch_size = 8;
};

struct RerankTrainResult {
  RerankerParams params;
  std::vector<double> losses;
};

/// Trains the reranker against a frozen retriever: candidates are retrieved
/// once with `frozen`, labeled (strong when available, else distant), and
/// the reranker is fit by SGD on the reranked-score loss.
RerankTrainResult train_reranker(const Corpus& corpus,
                                 const std::vector<Question>& questions,
                                 const Embedder& embedder, const ProjectionParams& frozen,
                                 const RerankTrainOptions& opts);

/// Recall@k over the full corpus for the given retriever state, optionally
/// reranking the top `rerank_c` candidates first. Positives are strong
/// (annotation overlap) when `strong` is set, else distant containment.
double pipeline_recall_at_k(const Corpus& corpus, const std::vector<Question>& questions,
                            const Embedder& embedder, const ProjectionParams& projection,
                            const RerankerParams* reranker, uint32_t rerank_c, uint32_t k,
                            bool strong, const OverlapConfig& overlap);

// ---- CLI commands; each writes its outputs plus a run manifest ----

void cmd_synth(const PipelineConfig& cfg);
void cmd_build_index(const PipelineConfig& cfg);
void cmd_retrieve(const PipelineConfig& cfg);
void cmd_label(const PipelineConfig& cfg);
void cmd_train(const PipelineConfig& cfg);
void cmd_rerank_train(const PipelineConfig& cfg);
void cmd_evaluate(const PipelineConfig& cfg);
void cmd_sweep_k(const PipelineConfig& cfg);

}  // namespace odqa
