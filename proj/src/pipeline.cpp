#include "odqa/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>
#include <stdexcept>

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace odqa {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash missing input " + path);
  uint64_t h = 1469598103934665603ULL;
  char buf[8192];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                     start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Written at run end, atomically via rename.
void write_manifest(const PipelineConfig& cfg, const std::string& command,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs,
                    const std::map<std::string, double>& timings_ms) {
  json j;
  j["command"] = command;
  j["config"] = config_echo(cfg);
  json in = json::object();
  for (const auto& p : inputs) in[p] = hex64(fnv1a_file(p));
  j["input_hashes"] = in;
  j["outputs"] = outputs;
  json t = json::object();
  for (const auto& [stage, ms] : timings_ms) t[stage] = ms;
  j["timings_ms"] = t;

  fs::create_directories(cfg.out_dir);
  const std::string path = cfg.out_dir + "/manifest_" + command + ".json";
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

Embedder make_embedder(const PipelineConfig& cfg) {
  return Embedder({cfg.dim, cfg.buckets, cfg.embed_seed});
}

ProjectionParams load_or_identity(const std::string& path, uint32_t dim) {
  if (!path.empty() && fs::exists(path)) return load_projection(path);
  return ProjectionParams::identity(dim);
}

std::vector<Embedding> embed_questions(const std::vector<Question>& questions,
                                       const Embedder& embedder,
                                       const ProjectionParams& projection) {
  std::vector<Embedding> out;
  out.reserve(questions.size());
  for (const auto& q : questions) {
    out.push_back(project(embedder.embed(tokenize(q.text)), projection));
  }
  return out;
}

std::vector<const Passage*> candidate_passages(const Corpus& corpus,
                                               const std::vector<uint32_t>& ids) {
  std::vector<const Passage*> out;
  out.reserve(ids.size());
  for (uint32_t id : ids) out.push_back(&corpus.passages.at(id));
  return out;
}

struct RetrievalFile {
  std::vector<uint32_t> question_ids;
  std::vector<TopKResult> results;
};

void write_retrieval(const RetrievalFile& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (size_t i = 0; i < r.results.size(); ++i) {
    json rec;
    rec["question_id"] = r.question_ids[i];
    rec["ids"] = r.results[i].ids;
    json scores = json::array();
    for (float s : r.results[i].scores) scores.push_back(fmt(s));
    rec["scores"] = scores;
    out << rec.dump() << "\n";
  }
}

RetrievalFile read_retrieval(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  RetrievalFile r;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    r.question_ids.push_back(rec["question_id"].get<uint32_t>());
    TopKResult t;
    t.ids = rec["ids"].get<std::vector<uint32_t>>();
    for (const auto& s : rec["scores"]) t.scores.push_back(std::stof(s.get<std::string>()));
    r.results.push_back(std::move(t));
  }
  return r;
}

}  // namespace

// ---------------------------------------------------------------- config

PipelineConfig load_config(const std::string& path) {
  PipelineConfig cfg;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
      }
      continue;
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string{};
      const auto b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    apply_config_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void apply_config_override(PipelineConfig& cfg, const std::string& key,
                           const std::string& value) {
  auto as_u32 = [&] { return static_cast<uint32_t>(std::stoul(value)); };
  auto as_u64 = [&] { return static_cast<uint64_t>(std::stoull(value)); };
  auto as_f = [&] { return std::stod(value); };
  auto as_bool = [&] {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("config field '" + key + "': expected boolean, got " + value);
  };
  try {
    if (key == "c") cfg.c = as_u32();
    else if (key == "k") cfg.k = as_u32();
    else if (key == "batch_size") cfg.batch_size = as_u32();
    else if (key == "dim") cfg.dim = as_u32();
    else if (key == "buckets") cfg.buckets = as_u32();
    else if (key == "embed_seed") cfg.embed_seed = as_u64();
    else if (key == "overlap_threshold") cfg.overlap_threshold = as_f();
    else if (key == "strong_weight") cfg.strong_weight = as_f();
    else if (key == "rerank") cfg.rerank = as_bool();
    else if (key == "rr_layers") cfg.rr_layers = as_u32();
    else if (key == "rr_heads") cfg.rr_heads = as_u32();
    else if (key == "rr_ffn") cfg.rr_ffn = as_u32();
    else if (key == "k_inference") cfg.k_inference = as_u32();
    else if (key == "max_span_tokens") cfg.max_span_tokens = as_u32();
    else if (key == "lexical_reader") cfg.lexical_reader = as_bool();
    else if (key == "steps") cfg.steps = as_u32();
    else if (key == "step_size") cfg.step_size = as_f();
    else if (key == "seed") cfg.seed = as_u64();
    else if (key == "synth_questions") cfg.synth.n_questions = as_u32();
    else if (key == "synth_decoys") cfg.synth.decoys_per_question = as_u32();
    else if (key == "synth_distractors") cfg.synth.distractors = as_u32();
    else if (key == "synth_vocab") cfg.synth.vocab_size = as_u32();
    else if (key == "synth_seed") cfg.synth.seed = as_u64();
    else if (key == "strong_recall") cfg.strong_recall = as_bool();
    else if (key == "recall_ks") {
      cfg.recall_ks.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        cfg.recall_ks.push_back(static_cast<uint32_t>(std::stoul(item)));
      }
    } else if (key == "corpus") cfg.corpus_path = value;
    else if (key == "questions") cfg.questions_path = value;
    else if (key == "index") cfg.index_path = value;
    else if (key == "proj") cfg.proj_path = value;
    else if (key == "reranker") cfg.reranker_path = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else throw std::invalid_argument("unknown config field '" + key + "'");
  } catch (const std::invalid_argument&) {
    throw;
  } catch (const std::exception&) {
    throw std::invalid_argument("config field '" + key + "': bad value '" + value + "'");
  }
}

void apply_arm(PipelineConfig& cfg, const std::string& arm) {
  if (arm == "baseline") {
    cfg.strong_weight = 0.0;
    cfg.rerank = false;
    cfg.k_inference = 5;
    cfg.batch_size = 1;
  } else if (arm == "scale") {
    cfg.strong_weight = 0.0;
    cfg.rerank = false;
    cfg.k_inference = 10;
    cfg.batch_size = 16;
  } else if (arm == "scale+ps") {
    cfg.strong_weight = 1.0;
    cfg.rerank = false;
    cfg.k_inference = 10;
    cfg.batch_size = 16;
  } else if (arm == "scale+ps-100docs") {
    cfg.strong_weight = 1.0;
    cfg.rerank = false;
    cfg.k_inference = 100;
    cfg.batch_size = 16;
  } else if (arm == "scale+rerank") {
    cfg.strong_weight = 0.0;
    cfg.rerank = true;
    cfg.k_inference = 10;
    cfg.batch_size = 16;
  } else {
    throw std::invalid_argument("unknown arm '" + arm + "'");
  }
}

std::map<std::string, std::string> config_echo(const PipelineConfig& cfg) {
  std::map<std::string, std::string> m;
  m["c"] = std::to_string(cfg.c);
  m["k"] = std::to_string(cfg.k);
  m["batch_size"] = std::to_string(cfg.batch_size);
  m["dim"] = std::to_string(cfg.dim);
  m["buckets"] = std::to_string(cfg.buckets);
  m["embed_seed"] = std::to_string(cfg.embed_seed);
  m["overlap_threshold"] = fmt(cfg.overlap_threshold);
  m["strong_weight"] = fmt(cfg.strong_weight);
  m["rerank"] = cfg.rerank ? "true" : "false";
  m["rr_layers"] = std::to_string(cfg.rr_layers);
  m["rr_heads"] = std::to_string(cfg.rr_heads);
  m["rr_ffn"] = std::to_string(cfg.ffn_dim());
  m["k_inference"] = std::to_string(cfg.k_inference);
  m["max_span_tokens"] = std::to_string(cfg.max_span_tokens);
  m["lexical_reader"] = cfg.lexical_reader ? "true" : "false";
  m["steps"] = std::to_string(cfg.steps);
  m["step_size"] = fmt(cfg.step_size);
  m["seed"] = std::to_string(cfg.seed);
  m["synth_questions"] = std::to_string(cfg.synth.n_questions);
  m["synth_decoys"] = std::to_string(cfg.synth.decoys_per_question);
  m["synth_distractors"] = std::to_string(cfg.synth.distractors);
  m["synth_vocab"] = std::to_string(cfg.synth.vocab_size);
  m["synth_seed"] = std::to_string(cfg.synth.seed);
  m["strong_recall"] = cfg.strong_recall ? "true" : "false";
  std::string ks;
  for (uint32_t k : cfg.recall_ks) {
    if (!ks.empty()) ks.push_back(',');
    ks += std::to_string(k);
  }
  m["recall_ks"] = ks;
  m["corpus"] = cfg.corpus_path;
  m["questions"] = cfg.questions_path;
  m["index"] = cfg.index_path;
  m["proj"] = cfg.proj_path;
  m["reranker"] = cfg.reranker_path;
  m["out_dir"] = cfg.out_dir;
  return m;
}

// ------------------------------------------------------ training helpers

ProjectionTrainResult train_projection(const Corpus& corpus,
                                       const std::vector<Question>& questions,
                                       const Embedder& embedder, ProjectionParams init,
                                       const TrainOptions& opts) {
  if (questions.empty()) throw std::invalid_argument("train_projection: no questions");
  const uint32_t c = std::min<uint32_t>(opts.c, static_cast<uint32_t>(corpus.size()));
  const OverlapConfig overlap{opts.overlap_threshold};

  // Base (unprojected) embeddings; W moves, these do not.
  std::vector<Embedding> base_p;
  base_p.reserve(corpus.size());
  for (const auto& p : corpus.passages) base_p.push_back(embedder.embed(p.tokens));
  std::vector<Embedding> base_q;
  base_q.reserve(questions.size());
  for (const auto& q : questions) base_q.push_back(embedder.embed(tokenize(q.text)));

  // Candidates fixed from the initial retriever state.
  PassageIndex index = build_index(corpus, embedder, init);
  struct Example {
    size_t q;
    std::vector<uint32_t> cand_ids;
    SupervisionLabels labels;
  };
  std::vector<Example> examples;
  for (size_t qi = 0; qi < questions.size(); ++qi) {
    TopKResult top = exact_top_k(index, project(base_q[qi], init), c);
    auto cands = candidate_passages(corpus, top.ids);
    auto labels = label_retrieved(cands, questions[qi], overlap);
    examples.push_back({qi, top.ids, std::move(labels)});
  }

  ProjectionParams w = std::move(init);
  ProjectionTrainResult result;
  const uint32_t bs = std::max<uint32_t>(1, opts.batch_size);
  size_t cursor = 0;
  for (uint32_t step = 0; step < opts.steps; ++step) {
    std::vector<double> grad_w(w.w.size(), 0.0);
    double step_loss = 0.0;
    size_t effective = 0;
    for (uint32_t b = 0; b < bs; ++b) {
      const Example& ex = examples[cursor];
      cursor = (cursor + 1) % examples.size();

      Embedding wq = project(base_q[ex.q], w);
      std::vector<Embedding> cand_base;
      std::vector<float> scores;
      cand_base.reserve(ex.cand_ids.size());
      scores.reserve(ex.cand_ids.size());
      for (uint32_t id : ex.cand_ids) {
        cand_base.push_back(base_p[id]);
        Embedding wp = project(base_p[id], w);
        double s = 0.0;
        for (size_t j = 0; j < wp.dim(); ++j) {
          s += static_cast<double>(wq.values[j]) * wp.values[j];
        }
        scores.push_back(static_cast<float>(s));
      }
      auto loss = retriever_loss(scores, ex.labels, opts.strong_weight);
      if (!loss) continue;
      step_loss += loss->loss;
      auto g = projection_gradient(loss->grad_scores, base_q[ex.q], cand_base, w);
      for (size_t i = 0; i < g.size(); ++i) grad_w[i] += g[i];
      ++effective;
    }
    if (effective > 0) {
      const double lr = opts.step_size / static_cast<double>(effective);
      for (size_t i = 0; i < w.w.size(); ++i) {
        w.w[i] -= static_cast<float>(lr * grad_w[i]);
      }
      result.losses.push_back(step_loss / static_cast<double>(effective));
    } else {
      result.losses.push_back(0.0);
    }
  }
  result.params = std::move(w);
  return result;
}

RerankTrainResult train_reranker(const Corpus& corpus,
                                 const std::vector<Question>& questions,
                                 const Embedder& embedder, const ProjectionParams& frozen,
                                 const RerankTrainOptions& opts) {
  if (questions.empty()) throw std::invalid_argument("train_reranker: no questions");
  const uint32_t c = std::min<uint32_t>(opts.c, static_cast<uint32_t>(corpus.size()));
  const uint32_t dim = embedder.config().dim;
  const OverlapConfig overlap{opts.overlap_threshold};

  PassageIndex index = build_index(corpus, embedder, frozen);
  std::vector<Embedding> queries = embed_questions(questions, embedder, frozen);

  std::vector<RerankExample> examples;
  for (size_t qi = 0; qi < questions.size(); ++qi) {
    TopKResult top = exact_top_k(index, queries[qi], c);
    auto cands = candidate_passages(corpus, top.ids);
    auto labels = label_retrieved(cands, questions[qi], overlap);
    // strong positives when available, else distant
    std::vector<uint8_t> pos = labels.strong;
    if (std::find(pos.begin(), pos.end(), 1) == pos.end()) pos = labels.distant;
    if (std::find(pos.begin(), pos.end(), 1) == pos.end()) continue;

    RerankExample ex;
    ex.docs.resize(top.ids.size(), dim);
    for (size_t i = 0; i < top.ids.size(); ++i) {
      // index rows are ordered by passage id == row position
      const float* row = index.row(top.ids[i]);
      for (uint32_t j = 0; j < dim; ++j) ex.docs(static_cast<Eigen::Index>(i), j) = row[j];
    }
    ex.query.resize(dim);
    for (uint32_t j = 0; j < dim; ++j) ex.query[j] = queries[qi].values[j];
    ex.positives = std::move(pos);
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) {
    throw std::invalid_argument("train_reranker: no question has a positive candidate");
  }

  RerankTrainResult result;
  result.params = RerankerParams::init(opts.layers, dim, opts.heads,
                                       opts.ffn ? opts.ffn : 2 * dim, opts.seed);
  const uint32_t bs = std::max<uint32_t>(1, opts.batch_size);
  size_t cursor = 0;
  for (uint32_t step = 0; step < opts.steps; ++step) {
    std::vector<RerankExample> batch;
    for (uint32_t b = 0; b < bs; ++b) {
      batch.push_back(examples[cursor]);
      cursor = (cursor + 1) % examples.size();
    }
    result.losses.push_back(rerank_train_step(batch, result.params, opts.step_size));
  }
  return result;
}

double pipeline_recall_at_k(const Corpus& corpus, const std::vector<Question>& questions,
                            const Embedder& embedder, const ProjectionParams& projection,
                            const RerankerParams* reranker, uint32_t rerank_c, uint32_t k,
                            bool strong, const OverlapConfig& overlap) {
  if (questions.empty()) throw std::invalid_argument("pipeline_recall_at_k: no questions");
  PassageIndex index = build_index(corpus, embedder, projection);
  std::vector<Embedding> queries = embed_questions(questions, embedder, projection);

  size_t hits = 0;
  for (size_t qi = 0; qi < questions.size(); ++qi) {
    TopKResult top;
    if (reranker) {
      TopKResult cands = exact_top_k(index, queries[qi], std::min<uint32_t>(rerank_c, index.rows));
      std::vector<Embedding> docs;
      docs.reserve(cands.ids.size());
      for (uint32_t id : cands.ids) {
        Embedding e;
        e.values.assign(index.row(id), index.row(id) + index.dim);
        docs.push_back(std::move(e));
      }
      Embedding q;
      q.values = queries[qi].values;
      RerankForward fwd = rerank_forward(docs, q, *reranker);
      top = rerank_top_k(fwd.scores, cands.ids, std::min<uint32_t>(k, static_cast<uint32_t>(cands.ids.size())));
    } else {
      top = exact_top_k(index, queries[qi], std::min<uint32_t>(k, index.rows));
    }
    auto pos = positive_ids(corpus, questions[qi], strong, overlap);
    std::unordered_set<uint32_t> pos_set(pos.begin(), pos.end());
    for (uint32_t id : top.ids) {
      if (pos_set.count(id)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(questions.size());
}

// -------------------------------------------------------------- commands

void cmd_synth(const PipelineConfig& cfg) {
  Stopwatch total;
  SyntheticData data = generate_synthetic(cfg.synth);
  fs::create_directories(cfg.out_dir);
  write_corpus(data.corpus, cfg.corpus_path);
  write_questions(data.questions, cfg.questions_path);
  write_manifest(cfg, "synth", {}, {cfg.corpus_path, cfg.questions_path},
                 {{"total", total.ms()}});
}

void cmd_build_index(const PipelineConfig& cfg) {
  Stopwatch total;
  Corpus corpus = ingest_corpus(cfg.corpus_path);
  Embedder embedder = make_embedder(cfg);
  ProjectionParams w = load_or_identity(cfg.proj_path, cfg.dim);
  Stopwatch build;
  PassageIndex index = build_index(corpus, embedder, w);
  const double build_ms = build.ms();
  save_index(index, cfg.index_path);
  write_manifest(cfg, "build-index", {cfg.corpus_path}, {cfg.index_path},
                 {{"build", build_ms}, {"total", total.ms()}});
}

void cmd_retrieve(const PipelineConfig& cfg) {
  Stopwatch total;
  PassageIndex index = load_index(cfg.index_path);
  auto questions = ingest_questions(cfg.questions_path);
  Embedder embedder = make_embedder(cfg);
  ProjectionParams w = load_or_identity(cfg.proj_path, cfg.dim);
  std::vector<Embedding> queries = embed_questions(questions, embedder, w);
  Stopwatch search;
  auto results = batched_top_k(index, queries, std::min<uint32_t>(cfg.c, index.rows));
  const double search_ms = search.ms();

  RetrievalFile rf;
  for (const auto& q : questions) rf.question_ids.push_back(q.id);
  rf.results = std::move(results);
  fs::create_directories(cfg.out_dir);
  const std::string out_path = cfg.out_dir + "/retrieval.jsonl";
  write_retrieval(rf, out_path);
  write_manifest(cfg, "retrieve", {cfg.index_path, cfg.questions_path}, {out_path},
                 {{"search", search_ms}, {"total", total.ms()}});
}

void cmd_label(const PipelineConfig& cfg) {
  Stopwatch total;
  Corpus corpus = ingest_corpus(cfg.corpus_path);
  auto questions = ingest_questions(cfg.questions_path);
  const std::string retrieval_path = cfg.out_dir + "/retrieval.jsonl";
  RetrievalFile rf = read_retrieval(retrieval_path);
  if (rf.results.size() != questions.size()) {
    throw std::runtime_error("label: retrieval/question count mismatch");
  }
  const OverlapConfig overlap{cfg.overlap_threshold};

  const std::string out_path = cfg.out_dir + "/labels.jsonl";
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  for (size_t qi = 0; qi < questions.size(); ++qi) {
    auto cands = candidate_passages(corpus, rf.results[qi].ids);
    auto labels = label_retrieved(cands, questions[qi], overlap);
    std::vector<std::vector<std::string>> annotated;
    for (const auto& t : questions[qi].annotated_passage_texts) annotated.push_back(tokenize(t));
    for (size_t i = 0; i < cands.size(); ++i) {
      double best_overlap = 0.0;
      for (const auto& ann : annotated) {
        if (!ann.empty()) best_overlap = std::max(best_overlap, word_overlap(cands[i]->tokens, ann));
      }
      json rec;
      rec["question_id"] = questions[qi].id;
      rec["passage_id"] = cands[i]->id;
      rec["distant"] = labels.distant[i] != 0;
      rec["strong"] = labels.strong[i] != 0;
      rec["overlap"] = fmt(best_overlap);
      out << rec.dump() << "\n";
    }
  }
  write_manifest(cfg, "label", {cfg.corpus_path, cfg.questions_path, retrieval_path},
                 {out_path}, {{"total", total.ms()}});
}

void cmd_train(const PipelineConfig& cfg) {
  Stopwatch total;
  Corpus corpus = ingest_corpus(cfg.corpus_path);
  auto questions = ingest_questions(cfg.questions_path);
  Embedder embedder = make_embedder(cfg);
  ProjectionParams init = load_or_identity(cfg.proj_path, cfg.dim);

  TrainOptions opts;
  opts.c = cfg.c;
  opts.steps = cfg.steps;
  opts.step_size = cfg.step_size;
  opts.strong_weight = cfg.strong_weight;
  opts.overlap_threshold = cfg.overlap_threshold;
  opts.batch_size = cfg.batch_size;
  Stopwatch train;
  auto result = train_projection(corpus, questions, embedder, std::move(init), opts);
  const double train_ms = train.ms();

  if (cfg.proj_path.empty()) throw std::runtime_error("train: proj path not set");
  save_projection(result.params, cfg.proj_path);
  fs::create_directories(cfg.out_dir);
  const std::string curve_path = cfg.out_dir + "/train_loss.csv";
  std::ofstream curve(curve_path);
  curve << "step,loss\n";
  for (size_t i = 0; i < result.losses.size(); ++i) {
    curve << i << "," << fmt(result.losses[i]) << "\n";
  }
  write_manifest(cfg, "train", {cfg.corpus_path, cfg.questions_path},
                 {cfg.proj_path, curve_path}, {{"train", train_ms}, {"total", total.ms()}});
}

void cmd_rerank_train(const PipelineConfig& cfg) {
  Stopwatch total;
  Corpus corpus = ingest_corpus(cfg.corpus_path);
  auto questions = ingest_questions(cfg.questions_path);
  Embedder embedder = make_embedder(cfg);
  ProjectionParams frozen = load_or_identity(cfg.proj_path, cfg.dim);

  RerankTrainOptions opts;
  opts.c = cfg.c;
  opts.steps = cfg.steps;
  opts.step_size = cfg.step_size;
  opts.layers = cfg.rr_layers;
  opts.heads = cfg.rr_heads;
  opts.ffn = cfg.ffn_dim();
  opts.seed = cfg.seed;
  opts.overlap_threshold = cfg.overlap_threshold;
  opts.batch_size = cfg.batch_size;
  Stopwatch train;
  auto result = train_reranker(corpus, questions, embedder, frozen, opts);
  const double train_ms = train.ms();

  if (cfg.reranker_path.empty()) throw std::runtime_error("rerank-train: reranker path not set");
  save_reranker(result.params, cfg.reranker_path);
  fs::create_directories(cfg.out_dir);
  const std::string curve_path = cfg.out_dir + "/rerank_loss.csv";
  std::ofstream curve(curve_path);
  curve << "step,loss\n";
  for (size_t i = 0; i < result.losses.size(); ++i) {
    curve << i << "," << fmt(result.losses[i]) << "\n";
  }
  write_manifest(cfg, "rerank-train", {cfg.corpus_path, cfg.questions_path},
                 {cfg.reranker_path, curve_path},
                 {{"train", train_ms}, {"total", total.ms()}});
}

void cmd_evaluate(const PipelineConfig& cfg) {
  Stopwatch total;
  Corpus corpus = ingest_corpus(cfg.corpus_path);
  auto questions = ingest_questions(cfg.questions_path);
  Embedder embedder = make_embedder(cfg);
  ProjectionParams w = load_or_identity(cfg.proj_path, cfg.dim);
  PassageIndex index = build_index(corpus, embedder, w);
  std::vector<Embedding> queries = embed_questions(questions, embedder, w);

  RerankerParams reranker;
  if (cfg.rerank) {
    if (cfg.reranker_path.empty() || !fs::exists(cfg.reranker_path)) {
      throw std::runtime_error("evaluate: rerank enabled but reranker file missing");
    }
    reranker = load_reranker(cfg.reranker_path);
  }

  const uint32_t c = std::min<uint32_t>(cfg.c, index.rows);
  const uint32_t reader_k = std::min<uint32_t>(cfg.k_inference, c);
  std::vector<TopKResult> retrieved;
  std::vector<std::optional<std::string>> predictions;
  const ReaderConfig reader_cfg{reader_k, cfg.max_span_tokens};

  fs::create_directories(cfg.out_dir);
  const std::string pred_path = cfg.out_dir + "/predictions.jsonl";
  std::ofstream pred_out(pred_path);
  if (!pred_out) throw std::runtime_error("cannot write " + pred_path);

  for (size_t qi = 0; qi < questions.size(); ++qi) {
    TopKResult top = exact_top_k(index, queries[qi], c);
    if (cfg.rerank) {
      std::vector<Embedding> docs;
      for (uint32_t id : top.ids) {
        Embedding e;
        e.values.assign(index.row(id), index.row(id) + index.dim);
        docs.push_back(std::move(e));
      }
      Embedding q;
      q.values = queries[qi].values;
      RerankForward fwd = rerank_forward(docs, q, reranker);
      top = rerank_top_k(fwd.scores, top.ids, c);
    }

    std::vector<const Passage*> read_set;
    std::vector<float> read_scores;
    for (uint32_t i = 0; i < reader_k; ++i) {
      read_set.push_back(&corpus.passages.at(top.ids[i]));
      read_scores.push_back(top.scores[i]);
    }
    std::optional<std::string> prediction;
    double score = 0.0;
    uint32_t passage_id = 0;
    if (cfg.lexical_reader) {
      ReaderOutput out = lexical_read(read_set, read_scores, questions[qi], reader_cfg);
      prediction = out.answer_text;
      score = out.score;
      passage_id = out.passage_id;
    } else if (auto out = oracle_read(read_set, questions[qi])) {
      prediction = out->answer_text;
      score = out->score;
      passage_id = out->passage_id;
    }
    json rec;
    rec["question_id"] = questions[qi].id;
    rec["answer_text"] = prediction ? *prediction : "";
    rec["passage_id"] = passage_id;
    rec["score"] = fmt(score);
    pred_out << rec.dump() << "\n";

    retrieved.push_back(std::move(top));
    predictions.push_back(std::move(prediction));
  }

  std::vector<uint32_t> ks;
  for (uint32_t k : cfg.recall_ks) {
    if (k <= c) ks.push_back(k);
  }
  EvalReport report = evaluate_run(corpus, retrieved, predictions, questions, ks, reader_k,
                                   cfg.strong_recall, OverlapConfig{cfg.overlap_threshold});
  const std::string report_json = cfg.out_dir + "/report.json";
  const std::string report_csv = cfg.out_dir + "/report.csv";
  write_report_json(report, report_json);
  write_report_csv(report, report_csv);
  write_manifest(cfg, "evaluate", {cfg.corpus_path, cfg.questions_path},
                 {report_json, report_csv, pred_path}, {{"total", total.ms()}});
}

void cmd_sweep_k(const PipelineConfig& cfg) {
  Stopwatch total;
  Corpus corpus = ingest_corpus(cfg.corpus_path);
  auto questions = ingest_questions(cfg.questions_path);
  Embedder embedder = make_embedder(cfg);
  ProjectionParams w = load_or_identity(cfg.proj_path, cfg.dim);
  PassageIndex index = build_index(corpus, embedder, w);
  std::vector<Embedding> queries = embed_questions(questions, embedder, w);

  std::vector<uint32_t> ks = cfg.recall_ks;
  uint32_t max_k = 0;
  for (uint32_t k : ks) max_k = std::max(max_k, k);
  if (max_k > std::min<uint32_t>(cfg.c, index.rows)) {
    throw std::invalid_argument("sweep-k: k exceeds retrieval depth c");
  }

  std::vector<std::vector<const Passage*>> ranked;
  std::vector<std::vector<float>> scores;
  for (size_t qi = 0; qi < questions.size(); ++qi) {
    TopKResult top = exact_top_k(index, queries[qi], max_k);
    ranked.push_back(candidate_passages(corpus, top.ids));
    scores.push_back(top.scores);
  }
  const ReaderConfig reader_cfg{max_k, cfg.max_span_tokens};
  auto curve = sweep_k(ranked, scores, questions, ks, cfg.lexical_reader, reader_cfg);

  fs::create_directories(cfg.out_dir);
  const std::string out_path = cfg.out_dir + "/sweep_k.csv";
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << "k,em,em_upper_bound\n";
  for (const auto& p : curve) {
    out << p.k << "," << fmt(p.em) << "," << fmt(p.em_upper_bound) << "\n";
  }
  write_manifest(cfg, "sweep-k", {cfg.corpus_path, cfg.questions_path}, {out_path},
                 {{"total", total.ms()}});
}

}  // namespace odqa
