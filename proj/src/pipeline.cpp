#include "cfrag/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "cfrag/embedding.hpp"
#include "cfrag/eval.hpp"
#include "cfrag/log.hpp"
#include "cfrag/random.hpp"

namespace cfrag {

namespace fs = std::filesystem;

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string s = "invalid configuration:";
  for (const auto& p : problems) s += "\n  - " + p;
  return s;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : PreconditionError(join_problems(problems)), problems_(std::move(problems)) {}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError({"override '" + assignment + "' is not of the form key=value"});
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError({"override key '" + key + "' has an empty component"});
    if (!node->is_object()) *node = Json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

namespace {

bool non_negative(const Json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

/// Typed access to a config document that remembers which keys were consulted, so anything
/// left over can be reported as unknown.
class DocReader {
 public:
  DocReader(const Json& doc, std::vector<std::string>& errors) : doc_(doc), errors_(errors) {}

  const Json* find(const std::string& path) {
    known_.insert(path);
    const Json* node = &doc_;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(part)) return nullptr;
      node = &(*node)[part];
      if (dot == std::string::npos) return node;
      start = dot + 1;
    }
  }

  bool has(const std::string& path) {
    const Json* j = find(path);
    return j && !j->is_null();
  }

  void get(const std::string& path, int& out) {
    if (const Json* j = find(path); j && !j->is_null()) {
      if (j->is_number_integer()) out = j->get<int>();
      else errors_.push_back(path + ": expected an integer");
    }
  }
  void get(const std::string& path, std::size_t& out) {
    if (const Json* j = find(path); j && !j->is_null()) {
      if (non_negative(*j)) out = j->get<std::size_t>();
      else errors_.push_back(path + ": expected a non-negative integer");
    }
  }
  void get(const std::string& path, std::uint64_t& out, bool) {
    if (const Json* j = find(path); j && !j->is_null()) {
      if (non_negative(*j)) out = j->get<std::uint64_t>();
      else errors_.push_back(path + ": expected a non-negative integer");
    }
  }
  void get(const std::string& path, double& out) {
    if (const Json* j = find(path); j && !j->is_null()) {
      if (j->is_number()) out = j->get<double>();
      else errors_.push_back(path + ": expected a number");
    }
  }
  void get(const std::string& path, bool& out) {
    if (const Json* j = find(path); j && !j->is_null()) {
      if (j->is_boolean()) out = j->get<bool>();
      else errors_.push_back(path + ": expected true or false");
    }
  }
  void get(const std::string& path, std::string& out) {
    if (const Json* j = find(path); j && !j->is_null()) {
      if (j->is_string()) out = j->get<std::string>();
      else errors_.push_back(path + ": expected a string");
    }
  }

  template <class E, class Parse>
  void get_enum(const std::string& path, E& out, Parse parse) {
    std::string name;
    get(path, name);
    if (name.empty()) return;
    try {
      out = parse(name);
    } catch (const Error& e) {
      errors_.push_back(path + ": " + e.what());
    }
  }

  void report_unknown() { walk(doc_, ""); }

 private:
  void walk(const Json& node, const std::string& prefix) {
    if (!node.is_object()) {
      if (!prefix.empty()) errors_.push_back("expected an object at " + prefix);
      else errors_.push_back("config must be a JSON object");
      return;
    }
    for (const auto& [key, value] : node.items()) {
      const std::string path = prefix.empty() ? key : prefix + "." + key;
      if (known_.count(path)) continue;
      const bool is_section = std::any_of(known_.begin(), known_.end(), [&](const std::string& k) {
        return k.size() > path.size() && k.compare(0, path.size() + 1, path + ".") == 0;
      });
      if (is_section) walk(value, path);
      else errors_.push_back(path + ": unknown key");
    }
  }

  const Json& doc_;
  std::vector<std::string>& errors_;
  std::set<std::string> known_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <class F>
void check(std::vector<std::string>& errors, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    errors.push_back(e.what());
  }
}

DegreeSource parse_degree_source(const std::string& s) {
  if (s == "ego") return DegreeSource::Ego;
  if (s == "graph") return DegreeSource::Graph;
  throw PreconditionError("expected \"ego\" or \"graph\", got '" + s + "'");
}

const char* to_string(DegreeSource d) { return d == DegreeSource::Ego ? "ego" : "graph"; }

EmbeddingSource parse_embedding_source(const std::string& s) {
  if (s == "file") return EmbeddingSource::File;
  if (s == "endpoint") return EmbeddingSource::Endpoint;
  throw PreconditionError("expected \"file\" or \"endpoint\", got '" + s + "'");
}

}  // namespace

RunConfig parse_run_config(const Json& doc, const fs::path& base_dir) {
  std::vector<std::string> errors;
  DocReader r(doc, errors);
  RunConfig c;

  std::string users, items, interactions, train, test, out, nodes, texts, labels, source = "file";
  r.get("dataset.users", users);
  r.get("dataset.items", items);
  r.get("dataset.interactions", interactions);
  r.get("dataset.train_explanations", train);
  r.get("dataset.test_explanations", test);
  r.get("output_dir", out);
  r.get("seed", c.seed, true);
  r.get("workers", c.workers);

  r.get_enum("gnn.encoder", c.gnn.encoder, parse_encoder);
  r.get("gnn.layers", c.gnn.layers);
  r.get("gnn.dim", c.gnn.dim);

  r.get("train.epochs", c.train.epochs);
  r.get("train.learning_rate", c.train.learning_rate);
  r.get("train.negatives", c.train.negatives);
  r.get_enum("train.optimizer", c.train.optimizer, parse_optimizer);
  r.get("train.weight_decay", c.train.weight_decay);

  r.get("explain.m", c.explain.m);
  r.get("explain.hops", c.explain.hops);
  r.get("explain.k", c.explain.mask.k);
  r.get("explain.max_path_length", c.explain.mask.max_path_length);
  r.get("explain.steps", c.explain.mask.steps);
  r.get("explain.learning_rate", c.explain.mask.learning_rate);
  r.get_enum("explain.optimizer", c.explain.mask.optimizer, parse_optimizer);
  r.get("explain.refresh_interval", c.explain.mask.refresh_interval);
  r.get("explain.exclude_center_edge", c.explain.exclude_center_edge);
  r.get_enum("explain.degree_source", c.explain.degree_source, parse_degree_source);

  r.get("retrieve.k", c.retrieve_k);
  r.get_enum("retrieve.item_pool", c.item_pool, parse_item_pool);

  r.get("prune.ratio", c.prune_ratio);
  r.get("prune.joiner", c.reliance.joiner);
  r.get("prune.include_title", c.reliance.include_title);
  r.get("prompt.max_bytes", c.prompt.max_bytes);

  r.get("embeddings.source", source);
  r.get("embeddings.nodes", nodes);
  r.get("embeddings.texts", texts);
  check(errors, [&] { c.embedding_source = parse_embedding_source(source); });

  if (r.has("endpoint")) {
    EndpointConfig e;
    r.get("endpoint.base_url", e.base_url);
    r.get("endpoint.model", e.model);
    r.get("endpoint.embedding_model", e.embedding_model);
    r.get("endpoint.auth_env", e.auth_env);
    r.get("endpoint.system_prompt", e.system_prompt);
    r.get("endpoint.timeout_seconds", e.timeout_seconds);
    r.get("endpoint.max_retries", e.max_retries);
    r.get("endpoint.concurrency", e.concurrency);
    r.get("endpoint.backoff_initial_ms", e.backoff_initial_ms);
    r.get("endpoint.backoff_max_ms", e.backoff_max_ms);
    r.get("endpoint.embedding_batch", e.embedding_batch);
    check(errors, [&] { e.validate(); });
    if (e.model.empty()) errors.push_back("endpoint.model: required");
    c.endpoint = e;
  }
  r.get("generation.temperature", c.generation.temperature);
  r.get("generation.max_tokens", c.generation.max_tokens);

  r.get("raft.lora_rank", c.raft.lora_rank);
  r.get("raft.learning_rate", c.raft.learning_rate);
  r.get("raft.epochs", c.raft.epochs);
  r.get("raft.max_length", c.raft.max_length);
  r.get("raft.base_model", c.raft.base_model);
  r.get("raft.batch_size", c.raft.batch_size);
  r.get("labels", labels);
  r.report_unknown();

  c.dataset = {resolve(base_dir, users), resolve(base_dir, items), resolve(base_dir, interactions),
               resolve(base_dir, train), resolve(base_dir, test)};
  c.output_dir = resolve(base_dir, out);
  c.node_embeddings = resolve(base_dir, nodes);
  c.text_embeddings = resolve(base_dir, texts);
  if (!labels.empty()) c.labels = resolve(base_dir, labels);

  auto need_file = [&](const char* key, const fs::path& p) {
    if (p.empty()) errors.push_back(std::string(key) + ": required");
    else if (!fs::is_regular_file(p)) errors.push_back(std::string(key) + ": no such file " + p.string());
  };
  need_file("dataset.users", c.dataset.users);
  need_file("dataset.items", c.dataset.items);
  need_file("dataset.interactions", c.dataset.interactions);
  need_file("dataset.train_explanations", c.dataset.train_explanations);
  need_file("dataset.test_explanations", c.dataset.test_explanations);
  if (c.labels) need_file("labels", *c.labels);
  if (c.output_dir.empty()) errors.push_back("output_dir: required");
  if (c.embedding_source == EmbeddingSource::File) {
    need_file("embeddings.nodes", c.node_embeddings);
    need_file("embeddings.texts", c.text_embeddings);
  } else if (!c.endpoint) {
    errors.push_back("embeddings.source: \"endpoint\" needs an endpoint section");
  }
  if (c.workers < 1) errors.push_back("workers: must be >= 1");
  if (c.retrieve_k < 1) errors.push_back("retrieve.k: must be >= 1");
  if (!(c.prune_ratio >= 0 && c.prune_ratio < 1)) errors.push_back("prune.ratio: must lie in [0, 1)");
  if (c.prompt.max_bytes == 0) errors.push_back("prompt.max_bytes: must be >= 1");
  if (c.raft.lora_rank < 1 || c.raft.epochs < 1 || c.raft.max_length < 1 || c.raft.batch_size < 1 ||
      !(c.raft.learning_rate > 0))
    errors.push_back("raft: rank, epochs, max_length, batch_size and learning_rate must be positive");
  check(errors, [&] { c.gnn.validate(); });
  check(errors, [&] { c.train.validate(); });
  check(errors, [&] { c.explain.validate(); });
  check(errors, [&] { c.generation.validate(); });
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return c;
}

Json RunConfig::to_json() const {
  Json j;
  j["dataset"] = {{"users", dataset.users.string()},
                  {"items", dataset.items.string()},
                  {"interactions", dataset.interactions.string()},
                  {"train_explanations", dataset.train_explanations.string()},
                  {"test_explanations", dataset.test_explanations.string()}};
  j["output_dir"] = output_dir.string();
  j["seed"] = seed;
  j["workers"] = workers;
  j["gnn"] = {{"encoder", to_string(gnn.encoder)}, {"layers", gnn.layers}, {"dim", gnn.dim}};
  j["train"] = {{"epochs", train.epochs},
                {"learning_rate", train.learning_rate},
                {"negatives", train.negatives},
                {"optimizer", to_string(train.optimizer)},
                {"weight_decay", train.weight_decay}};
  j["explain"] = {{"m", explain.m},
                  {"hops", explain.hops},
                  {"k", explain.mask.k},
                  {"max_path_length", explain.mask.max_path_length},
                  {"steps", explain.mask.steps},
                  {"learning_rate", explain.mask.learning_rate},
                  {"optimizer", to_string(explain.mask.optimizer)},
                  {"refresh_interval", explain.mask.refresh_interval},
                  {"exclude_center_edge", explain.exclude_center_edge},
                  {"degree_source", to_string(explain.degree_source)}};
  j["retrieve"] = {{"k", retrieve_k}, {"item_pool", to_string(item_pool)}};
  j["prune"] = {{"ratio", prune_ratio}, {"joiner", reliance.joiner}, {"include_title", reliance.include_title}};
  j["prompt"] = {{"max_bytes", prompt.max_bytes}};
  j["embeddings"] = {{"source", embedding_source == EmbeddingSource::File ? "file" : "endpoint"},
                     {"nodes", node_embeddings.string()},
                     {"texts", text_embeddings.string()}};
  if (endpoint) {
    j["endpoint"] = {{"base_url", endpoint->base_url},
                     {"model", endpoint->model},
                     {"embedding_model", endpoint->embedding_model},
                     {"auth_env", endpoint->auth_env},
                     {"system_prompt", endpoint->system_prompt},
                     {"timeout_seconds", endpoint->timeout_seconds},
                     {"max_retries", endpoint->max_retries},
                     {"concurrency", endpoint->concurrency},
                     {"backoff_initial_ms", endpoint->backoff_initial_ms},
                     {"backoff_max_ms", endpoint->backoff_max_ms},
                     {"embedding_batch", endpoint->embedding_batch}};
  }
  j["generation"] = {{"temperature", generation.temperature}, {"max_tokens", generation.max_tokens}};
  j["raft"] = cfrag::to_json(raft);
  j["labels"] = labels ? Json(labels->string()) : Json(nullptr);
  return j;
}

std::string RunConfig::hash() const {
  Json j = to_json();
  j.erase("output_dir");
  j.erase("workers");
  if (j.contains("endpoint")) j["endpoint"].erase("concurrency");
  return hex64(fnv1a(j.dump()));
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"ingest",  "train-gnn",     "explain-paths",
                                              "retrieve-nodes", "prune", "build-prompts",
                                              "export-raft",    "generate", "eval"};
  return names;
}

namespace {

using Pair = std::pair<NodeRef, NodeRef>;

std::string file_hash(const fs::path& p) { return hex64(fnv1a(read_text(p))); }

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

/// Calls fn(i) for i in [0, n) on up to `workers` threads. The first exception is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mutex;
  auto body = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(body);
    body();
  }
  if (failure) std::rethrow_exception(failure);
}

/// Training pairs first, then test pairs, each pair once.
std::vector<Pair> pipeline_pairs(const Dataset& d) {
  std::vector<Pair> out;
  std::set<Pair> seen;
  for (const auto* split : {&d.explanations.train, &d.explanations.test})
    for (const auto& r : *split)
      if (seen.insert({r.user, r.item}).second) out.push_back({r.user, r.item});
  return out;
}

Pair pair_of(const Json& rec, const InteractionGraph& g) {
  const auto u = g.find_user(rec.at("user").get<std::string>());
  const auto i = g.find_item(rec.at("item").get<std::string>());
  if (!u || !i) throw PreconditionError("artifact references an unknown pair");
  return {*u, *i};
}

std::vector<Json> read_records(const fs::path& p) {
  std::vector<Json> out;
  read_jsonl(p, [&](const Json& r, std::size_t) { out.push_back(r); });
  return out;
}

/// One stage: what it reads, what it writes, and how.
struct StagePlan {
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::function<Json()> run;  // returns stage details for the manifest
};

class Pipeline {
 public:
  explicit Pipeline(const RunConfig& cfg) : cfg_(cfg) {}

  fs::path dir(const std::string& stage) const { return cfg_.output_dir / stage; }
  fs::path checkpoint() const { return dir("train-gnn") / "model.ckpt"; }
  fs::path paths_file() const { return dir("explain-paths") / "paths.jsonl"; }
  fs::path retrieval_file() const { return dir("retrieve-nodes") / "retrieval.jsonl"; }
  fs::path node_embedding_file() const {
    return cfg_.embedding_source == EmbeddingSource::File ? cfg_.node_embeddings
                                                          : dir("retrieve-nodes") / "node_embeddings.jsonl";
  }
  fs::path pruned_file() const { return dir("prune") / "pruned.jsonl"; }
  fs::path train_prompts() const { return dir("build-prompts") / "train.jsonl"; }
  fs::path test_prompts() const { return dir("build-prompts") / "test.jsonl"; }
  fs::path generations_file() const { return dir("generate") / "generations.jsonl"; }

  std::vector<fs::path> dataset_files() const {
    const auto& d = cfg_.dataset;
    return {d.users, d.items, d.interactions, d.train_explanations, d.test_explanations};
  }

  const Dataset& data() {
    if (!data_) data_ = ingest_dataset(cfg_.dataset);
    return *data_;
  }

  StagePlan plan(const std::string& stage, bool& generate_partial) {
    StagePlan p;
    const auto ds = dataset_files();
    if (stage == "ingest") {
      p.inputs = ds;
      p.outputs = {dir(stage) / "interactions.jsonl", dir(stage) / "summary.json"};
      p.run = [this, p] { return ingest(p.outputs); };
    } else if (stage == "train-gnn") {
      p.inputs = ds;
      p.outputs = {checkpoint(), dir(stage) / "loss.jsonl"};
      p.run = [this, p] { return train(p.outputs); };
    } else if (stage == "explain-paths") {
      p.inputs = ds;
      p.inputs.push_back(checkpoint());
      p.outputs = {paths_file()};
      p.run = [this] { return explain_paths(); };
    } else if (stage == "retrieve-nodes") {
      p.inputs = ds;
      if (cfg_.embedding_source == EmbeddingSource::File) p.inputs.push_back(cfg_.node_embeddings);
      p.outputs = {retrieval_file()};
      if (cfg_.embedding_source == EmbeddingSource::Endpoint) p.outputs.push_back(node_embedding_file());
      p.run = [this] { return retrieve_nodes(); };
    } else if (stage == "prune") {
      p.inputs = ds;
      if (cfg_.embedding_source == EmbeddingSource::File) p.inputs.push_back(cfg_.text_embeddings);
      p.outputs = {dir(stage) / "reliance.jsonl", pruned_file()};
      p.run = [this, p] { return prune(p.outputs); };
    } else if (stage == "build-prompts") {
      p.inputs = ds;
      for (const auto& f : {paths_file(), retrieval_file(), pruned_file()}) p.inputs.push_back(f);
      p.outputs = {train_prompts(), test_prompts()};
      p.run = [this] { return build_prompts(); };
    } else if (stage == "export-raft") {
      p.inputs = ds;
      p.inputs.push_back(pruned_file());
      p.inputs.push_back(train_prompts());
      p.outputs = {dir(stage) / "raft.jsonl", dir(stage) / "raft_config.json"};
      p.run = [this, p] { return export_stage(p.outputs); };
    } else if (stage == "generate") {
      p.inputs = {test_prompts()};
      p.outputs = {generations_file(), dir(stage) / "failures.jsonl"};
      p.run = [this, p, &generate_partial] { return generate(p.outputs, generate_partial); };
    } else if (stage == "eval") {
      p.inputs = ds;
      for (const auto& f : {checkpoint(), paths_file(), retrieval_file()}) p.inputs.push_back(f);
      if (fs::exists(generations_file())) p.inputs.push_back(generations_file());
      if (cfg_.labels) p.inputs.push_back(*cfg_.labels);
      p.outputs = {dir(stage) / "report.json"};
      p.run = [this, p] { return evaluate(p.outputs); };
    } else {
      throw PreconditionError("unknown stage '" + stage + "'");
    }
    return p;
  }

 private:
  Json ingest(const std::vector<fs::path>& out) {
    const auto& d = data();
    const auto& g = d.graph;
    std::vector<Json> rows;
    for (const auto& e : g.edges())
      rows.push_back({{"user", g.id(NodeRef::user(e.user))}, {"item", g.id(NodeRef::item(e.item))}});
    const Json summary{{"users", g.user_count()},
                       {"items", g.item_count()},
                       {"interactions", g.edge_count()},
                       {"duplicate_interactions", d.duplicate_interactions},
                       {"train_explanations", d.explanations.train.size()},
                       {"test_explanations", d.explanations.test.size()},
                       {"id_mapping_hash", hex64(g.id_mapping_hash())}};
    write_jsonl(out[0], rows);
    write_json(out[1], summary);
    return summary;
  }

  Json train(const std::vector<fs::path>& out) {
    const auto& g = data().graph;
    GnnConfig gc = cfg_.gnn;
    gc.seed = derive_seed(cfg_.seed, "train-gnn/init");
    LpTrainConfig tc = cfg_.train;
    tc.seed = derive_seed(cfg_.seed, "train-gnn/negatives");
    auto result = train_lp(init_model(g, gc), g, tc);
    std::vector<Json> loss;
    for (std::size_t e = 0; e < result.loss_trace.size(); ++e) loss.push_back({{"epoch", e}, {"loss", result.loss_trace[e]}});
    fs::create_directories(out[0].parent_path());
    save_checkpoint(result.model, out[0]);
    write_jsonl(out[1], loss);
    return {{"final_loss", result.loss_trace.empty() ? 0.0 : result.loss_trace.back()},
            {"init_seed", gc.seed},
            {"negative_seed", tc.seed}};
  }

  Json explain_paths() {
    const auto& g = data().graph;
    const GnnModel model = load_checkpoint(checkpoint(), &g);
    ExplainConfig ec = cfg_.explain;
    ec.mask.seed = derive_seed(cfg_.seed, "explain-paths");
    const auto pairs = pipeline_pairs(data());
    std::vector<Json> records(pairs.size());
    std::atomic<std::size_t> with_paths{0};
    parallel_for(pairs.size(), cfg_.workers, [&](std::size_t n) {
      auto ex = explain(g, model, pairs[n].first, pairs[n].second, ec);
      with_paths += !ex.paths.empty();
      records[n] = explanation_to_json(ex, g);
    });
    write_jsonl(paths_file(), records);
    return {{"pairs", pairs.size()}, {"pairs_with_paths", with_paths.load()}};
  }

  EmbeddingStore node_store() {
    const auto& g = data().graph;
    if (cfg_.embedding_source == EmbeddingSource::File) return EmbeddingStore::load(cfg_.node_embeddings, g);
    LlmClient client(*cfg_.endpoint);
    std::vector<std::string> texts;
    for (std::size_t r = 0; r < g.node_count(); ++r) texts.push_back(g.profile(g.node_at_row(r)));
    auto rows = embed_texts(client, texts, dir("retrieve-nodes") / "profile_cache.jsonl");
    auto store = EmbeddingStore::from_rows(g, std::move(rows), Provenance::Endpoint);
    store.save(node_embedding_file(), g);
    return store;
  }

  Json retrieve_nodes() {
    const auto& g = data().graph;
    const EmbeddingStore store = node_store();
    const auto pairs = pipeline_pairs(data());
    std::vector<Json> records(pairs.size());
    parallel_for(pairs.size(), cfg_.workers, [&](std::size_t n) {
      records[n] = retrieval_to_json(retrieve(g, store, pairs[n].first, pairs[n].second, cfg_.retrieve_k, cfg_.item_pool), g);
    });
    write_jsonl(retrieval_file(), records);
    return {{"pairs", pairs.size()}, {"dim", store.dim()}, {"provenance", to_string(store.provenance())}};
  }

  TextEmbeddingStore text_store() {
    if (cfg_.embedding_source == EmbeddingSource::File) return TextEmbeddingStore::load(cfg_.text_embeddings);
    const auto& d = data();
    std::vector<std::string> texts;
    for (const auto& r : d.explanations.train) {
      texts.push_back(profile_text(d.graph, r.user, r.item, cfg_.reliance));
      texts.push_back(r.text);
    }
    const fs::path cache = dir("prune") / "text_cache.jsonl";
    embed_texts(LlmClient(*cfg_.endpoint), texts, cache);
    return TextEmbeddingStore::load(cache);
  }

  Json prune(const std::vector<fs::path>& out) {
    const auto& d = data();
    const auto samples = score_samples(d.graph, d.explanations.train, text_store(), cfg_.reliance);
    auto sample_json = [&](const TrainingSample& s) {
      return Json{{"user", d.graph.id(s.user)}, {"item", d.graph.id(s.item)}, {"explanation", s.explanation}, {"reliance", s.reliance}};
    };
    std::vector<Json> all, kept;
    for (const auto& s : samples) all.push_back(sample_json(s));
    const auto pruned = prune_dataset(samples, cfg_.prune_ratio);
    for (const auto& s : pruned) kept.push_back(sample_json(s));
    write_jsonl(out[0], all);
    write_jsonl(out[1], kept);
    return {{"samples", samples.size()}, {"kept", pruned.size()}, {"ratio", cfg_.prune_ratio}};
  }

  std::vector<TrainingSample> read_pruned() {
    const auto& g = data().graph;
    std::vector<TrainingSample> out;
    for (const auto& r : read_records(pruned_file())) {
      const auto [u, i] = pair_of(r, g);
      out.push_back({u, i, r.at("explanation").get<std::string>(), r.at("reliance").get<double>()});
    }
    return out;
  }

  Json build_prompts() {
    const auto& d = data();
    const auto& g = d.graph;
    std::map<Pair, std::vector<std::vector<NodeRef>>> paths;
    for (const auto& r : read_records(paths_file())) {
      auto& list = paths[pair_of(r, g)];
      for (auto& p : paths_from_json(r, g)) list.push_back(std::move(p.nodes));
    }
    std::map<Pair, RetrievalResult> retrieved;
    for (const auto& r : read_records(retrieval_file())) {
      auto res = retrieval_from_json(r, g);
      retrieved[{res.user, res.item}] = std::move(res);
    }
    auto make = [&](NodeRef u, NodeRef i, const std::string& target) {
      auto rp = paths.find({u, i});
      auto rr = retrieved.find({u, i});
      if (rp == paths.end() || rr == retrieved.end())
        throw PreconditionError("no retrieval artifacts for pair (" + g.id(u) + ", " + g.id(i) + ")");
      auto p = build_prompt(g, u, i, rr->second, rp->second, cfg_.prompt);
      p.target = target;
      return prompt_to_json(p, g);
    };
    std::vector<Json> train, test;
    for (const auto& s : read_pruned()) train.push_back(make(s.user, s.item, s.explanation));
    for (const auto& r : d.explanations.test) test.push_back(make(r.user, r.item, r.text));
    write_jsonl(train_prompts(), train);
    write_jsonl(test_prompts(), test);
    return {{"train_prompts", train.size()}, {"test_prompts", test.size()}};
  }

  Json export_stage(const std::vector<fs::path>& out) {
    const auto& g = data().graph;
    std::vector<PromptSample> prompts;
    for (const auto& r : read_records(train_prompts())) prompts.push_back(prompt_from_json(r, g));
    const auto pruned = read_pruned();
    const std::size_t n = export_raft(g, pruned, prompts, out[0]);
    const Json manifest{{"records", n},
                        {"hyperparameters", cfrag::to_json(cfg_.raft)},
                        {"prune_ratio", cfg_.prune_ratio},
                        {"reliance_joiner", cfg_.reliance.joiner},
                        {"reliance_include_title", cfg_.reliance.include_title},
                        {"format", {{"prompt", "string"}, {"response", "string"}, {"meta", "object"}}}};
    write_json(out[1], manifest);
    return {{"records", n}};
  }

  Json generate(const std::vector<fs::path>& out, bool& partial) {
    if (!cfg_.endpoint) throw PreconditionError("no endpoint configured");
    const LlmClient client(*cfg_.endpoint);
    std::vector<GenerationJob> jobs;
    for (const auto& r : read_records(test_prompts()))
      jobs.push_back({r.at("meta").at("user").get<std::string>(), r.at("meta").at("item").get<std::string>(),
                      r.at("prompt").get<std::string>()});
    if (jobs.empty()) throw PreconditionError("no test prompts to generate from");
    const auto report = batch_generate(client, jobs, cfg_.generation, out[0], out[1]);
    partial = report.failed > 0;
    return {{"completed", report.completed}, {"skipped", report.skipped}, {"failed", report.failed},
            {"temperature", cfg_.generation.temperature}, {"max_tokens", cfg_.generation.max_tokens}};
  }

  Json evaluate(const std::vector<fs::path>& out) {
    EvalInputs in;
    in.checkpoint = checkpoint();
    in.paths = paths_file();
    in.retrieval = retrieval_file();
    in.node_embeddings = node_embedding_file();
    if (fs::exists(generations_file())) in.generations = generations_file();
    in.labels = cfg_.labels;
    in.k = cfg_.retrieve_k;
    in.item_pool = cfg_.item_pool;
    in.config_hash = cfg_.hash();
    in.seed = derive_seed(cfg_.seed, "eval");
    const Json report = to_json(evaluate_run(data().graph, in));
    write_json(out[0], report);
    return report;
  }

  const RunConfig& cfg_;
  std::optional<Dataset> data_;
};

Json hashes(const std::vector<fs::path>& files, const fs::path& relative_to) {
  Json j = Json::object();
  for (const auto& f : files) {
    // artifacts of earlier stages are keyed relative to the run directory, dataset files as given
    const auto rel = fs::relative(f, relative_to);
    const bool inside = !rel.empty() && *rel.begin() != "..";
    const std::string key = inside ? rel.string() : f.string();
    j[key] = fs::exists(f) ? Json(file_hash(f)) : Json(nullptr);
  }
  return j;
}

bool up_to_date(const fs::path& manifest, const RunConfig& cfg, const StagePlan& plan) {
  if (!fs::exists(manifest)) return false;
  Json m;
  try {
    m = read_json(manifest);
  } catch (const Error&) {
    return false;
  }
  if (m.value("status", "") != "complete" || m.value("config_hash", "") != cfg.hash()) return false;
  for (const auto& f : plan.outputs)
    if (!fs::exists(f)) return false;
  return m["inputs"] == hashes(plan.inputs, cfg.output_dir) && m["outputs"] == hashes(plan.outputs, cfg.output_dir);
}

}  // namespace

StageOutcome run_stage(const std::string& stage, const RunConfig& cfg, bool force) {
  Pipeline pipeline(cfg);
  bool partial = false;
  StagePlan plan = pipeline.plan(stage, partial);
  const fs::path manifest = pipeline.dir(stage) / "manifest.json";
  if (!force && up_to_date(manifest, cfg, plan)) {
    log_info(stage + ": up to date, skipping");
    return {stage, StageOutcome::Status::Resumed};
  }
  for (const auto& f : plan.inputs)
    if (!fs::exists(f))
      throw StageError(stage, "missing input " + f.string() + " (run the earlier stages first)");

  log_info(stage + ": running");
  const std::string started = now_iso();
  const auto t0 = std::chrono::steady_clock::now();
  Json details;
  try {
    fs::create_directories(pipeline.dir(stage));
    details = plan.run();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
  const Json m{{"stage", stage},
               {"status", partial ? "partial" : "complete"},
               {"versions", {{"cfrag", kVersion}, {"checkpoint_format", kCheckpointVersion}}},
               {"config_hash", cfg.hash()},
               {"seed", cfg.seed},
               {"stage_seed", derive_seed(cfg.seed, stage)},
               {"inputs", hashes(plan.inputs, cfg.output_dir)},
               {"outputs", hashes(plan.outputs, cfg.output_dir)},
               {"details", details},
               {"started_at", started},
               {"elapsed_ms", elapsed.count()}};
  write_json(manifest, m);
  log_info(stage + ": done in " + std::to_string(elapsed.count()) + " ms");
  return {stage, StageOutcome::Status::Ran};
}

std::vector<StageOutcome> run_all(const RunConfig& cfg, bool force) {
  std::vector<StageOutcome> out;
  for (const auto& stage : stage_names()) {
    if (stage == "generate" && !cfg.endpoint) {
      log_info("generate: no endpoint configured, skipping");
      out.push_back({stage, StageOutcome::Status::Skipped});
      continue;
    }
    out.push_back(run_stage(stage, cfg, force));
  }
  return out;
}

}  // namespace cfrag
