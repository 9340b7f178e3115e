#include "cfrag/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "cfrag/io.hpp"

namespace cfrag {

std::string to_string(EncoderKind kind) { return kind == EncoderKind::RGCN ? "rgcn" : "lightgcn"; }

EncoderKind parse_encoder(const std::string& name) {
  if (name == "rgcn" || name == "RGCN") return EncoderKind::RGCN;
  if (name == "lightgcn" || name == "LightGCN") return EncoderKind::LightGCN;
  throw PreconditionError("unknown encoder '" + name + "' (expected rgcn or lightgcn)");
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "gd";
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "gd" || name == "sgd") return OptimizerKind::GradientDescent;
  throw PreconditionError("unknown optimizer '" + name + "' (expected adam or gd)");
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr) {
  if (kind == OptimizerKind::Adam) return std::make_unique<Adam>(lr);
  return std::make_unique<GradientDescent>(lr);
}

void GnnConfig::validate() const {
  if (layers < 1) throw PreconditionError("gnn.layers must be >= 1");
  if (dim < 1) throw PreconditionError("gnn.dim must be >= 1");
}

void LpTrainConfig::validate() const {
  if (epochs < 1) throw PreconditionError("train.epochs must be >= 1");
  if (!(learning_rate > 0)) throw PreconditionError("train.learning_rate must be > 0");
  if (negatives < 1) throw PreconditionError("train.negatives must be >= 1");
  if (!(weight_decay >= 0)) throw PreconditionError("train.weight_decay must be >= 0");
}

GnnModel init_model(const InteractionGraph& graph, const GnnConfig& config) {
  config.validate();
  GnnModel m;
  m.config = config;
  m.user_count = graph.user_count();
  m.item_count = graph.item_count();
  m.id_mapping_hash = graph.id_mapping_hash();

  Rng rng(config.seed);
  const std::size_t d = static_cast<std::size_t>(config.dim);
  const double emb_bound = 1.0 / std::sqrt(static_cast<double>(d));
  m.embeddings = Tensor::zeros({graph.node_count(), d});
  for (auto& v : m.embeddings.values()) v = rng.uniform(-emb_bound, emb_bound);

  if (config.encoder == EncoderKind::RGCN) {
    const double w_bound = std::sqrt(6.0 / (2.0 * static_cast<double>(d)));
    for (int l = 0; l < config.layers; ++l) {
      Tensor w0 = Tensor::zeros({d, d});
      Tensor w1 = Tensor::zeros({d, d});
      for (auto& v : w0.values()) v = rng.uniform(-w_bound, w_bound);
      for (auto& v : w1.values()) v = rng.uniform(-w_bound, w_bound);
      m.self_weights.push_back(std::move(w0));
      m.neighbor_weights.push_back(std::move(w1));
    }
  }
  return m;
}

GnnVars bind_model(Tape& tape, const GnnModel& model, bool trainable) {
  auto leaf = [&](const Tensor& t) { return trainable ? tape.parameter(t) : tape.constant(t); };
  GnnVars vars;
  vars.embeddings = leaf(model.embeddings);
  for (std::size_t l = 0; l < model.self_weights.size(); ++l) {
    vars.self_weights.push_back(leaf(model.self_weights[l]));
    vars.neighbor_weights.push_back(leaf(model.neighbor_weights[l]));
  }
  return vars;
}

Var encode_on_tape(Tape& tape, const GnnConfig& config, const GnnVars& vars,
                   const SparseAdjacency& adj, Var h0, std::optional<Var> edge_weights) {
  if (config.encoder == EncoderKind::RGCN) {
    if (vars.self_weights.size() != static_cast<std::size_t>(config.layers))
      throw ShapeError("R-GCN model needs one weight pair per layer");
    Var h = h0;
    for (int l = 0; l < config.layers; ++l) {
      Var messages = tape.neighbor_aggregate(adj, h, edge_weights);
      h = tape.relu(tape.add(tape.matmul(messages, vars.neighbor_weights[l]),
                             tape.matmul(h, vars.self_weights[l])));
    }
    return h;
  }
  Var h = h0;
  Var total = h0;
  for (int l = 0; l < config.layers; ++l) {
    h = tape.neighbor_aggregate(adj, h, edge_weights);
    total = tape.add(total, h);
  }
  return tape.scale(total, 1.0 / static_cast<double>(config.layers + 1));
}

namespace {

void check_model_fits(const GnnModel& model, std::size_t user_count, std::size_t item_count) {
  if (model.user_count != user_count || model.item_count != item_count)
    throw PreconditionError("model was built for a graph with different node counts");
}

std::optional<Var> bind_weights(Tape& tape, std::optional<std::span<const double>> weights,
                                std::size_t edge_count) {
  if (!weights) return std::nullopt;
  if (weights->size() != edge_count)
    throw PreconditionError("missing edge weight: got " + std::to_string(weights->size()) +
                            " weights for " + std::to_string(edge_count) + " edges");
  for (double w : *weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw PreconditionError("edge weights must lie in [0, 1]");
  }
  return tape.constant(Tensor::vector({weights->begin(), weights->end()}));
}

std::size_t model_row(const GnnModel& model, NodeRef ref) {
  return ref.is_user() ? ref.index : model.user_count + ref.index;
}

}  // namespace

Tensor encode(const GnnModel& model, const InteractionGraph& graph,
              std::optional<std::span<const double>> edge_weights) {
  check_model_fits(model, graph.user_count(), graph.item_count());
  Tape tape;
  auto vars = bind_model(tape, model, false);
  auto w = bind_weights(tape, edge_weights, graph.edge_count());
  return tape.value(
      encode_on_tape(tape, model.config, vars, graph.adjacency(), vars.embeddings, w));
}

Tensor encode(const GnnModel& model, const EgoGraph& ego,
              std::optional<std::span<const double>> edge_weights) {
  Tape tape;
  auto vars = bind_model(tape, model, false);
  auto w = bind_weights(tape, edge_weights, ego.edge_count());
  std::vector<std::uint32_t> rows;
  for (const NodeRef& n : ego.nodes()) {
    const std::size_t r = model_row(model, n);
    if (r >= model.embeddings.rows()) throw PreconditionError("ego node outside the model");
    rows.push_back(static_cast<std::uint32_t>(r));
  }
  const SparseAdjacency adj = ego.adjacency();
  Var h0 = tape.gather_rows(vars.embeddings, std::move(rows));
  return tape.value(encode_on_tape(tape, model.config, vars, adj, h0, w));
}

namespace {

double link_probability(const Tensor& h, std::size_t ru, std::size_t ri) {
  double s = 0;
  for (std::size_t c = 0; c < h.cols(); ++c) s += h.at(ru, c) * h.at(ri, c);
  return sigmoid(s);
}

void check_pair_kinds(NodeRef user, NodeRef item) {
  if (!user.is_user() || !item.is_item())
    throw PreconditionError("predict_link expects a (user, item) pair");
}

}  // namespace

double predict_link(const GnnModel& model, const InteractionGraph& graph, NodeRef user,
                    NodeRef item, std::optional<std::span<const double>> edge_weights) {
  check_pair_kinds(user, item);
  graph.check(user);
  graph.check(item);
  const Tensor h = encode(model, graph, edge_weights);
  return link_probability(h, graph.row(user), graph.row(item));
}

double predict_link(const GnnModel& model, const EgoGraph& ego, NodeRef user, NodeRef item,
                    std::optional<std::span<const double>> edge_weights) {
  check_pair_kinds(user, item);
  auto lu = ego.local_id(user);
  auto li = ego.local_id(item);
  if (!lu || !li) throw PreconditionError("pair is not inside the ego-graph");
  const Tensor h = encode(model, ego, edge_weights);
  return link_probability(h, *lu, *li);
}

std::vector<Interaction> sample_non_edges(const InteractionGraph& graph, std::size_t count,
                                          Rng& rng) {
  const std::size_t users = graph.user_count(), items = graph.item_count();
  const std::size_t total = users * items;
  std::vector<Interaction> out;
  if (total == graph.edge_count() || count == 0) return out;
  out.reserve(count);
  if (graph.edge_count() * 2 > total) {
    std::vector<Interaction> pool;
    for (std::uint32_t u = 0; u < users; ++u)
      for (std::uint32_t i = 0; i < items; ++i)
        if (!graph.has_edge(u, i)) pool.push_back({u, i});
    for (std::size_t k = 0; k < count; ++k) out.push_back(pool[rng.index(pool.size())]);
    return out;
  }
  while (out.size() < count) {
    const auto u = static_cast<std::uint32_t>(rng.index(users));
    const auto i = static_cast<std::uint32_t>(rng.index(items));
    if (!graph.has_edge(u, i)) out.push_back({u, i});
  }
  return out;
}

Var lp_loss_on_tape(Tape& tape, const GnnConfig& config, const GnnVars& vars,
                    const SparseAdjacency& adj, std::span<const Interaction> positives,
                    std::span<const Interaction> negatives, std::size_t user_count) {
  Var h = encode_on_tape(tape, config, vars, adj, vars.embeddings, std::nullopt);
  std::vector<std::uint32_t> src, dst;
  std::vector<double> labels;
  auto append = [&](std::span<const Interaction> pairs, double label) {
    for (const auto& e : pairs) {
      src.push_back(e.user);
      dst.push_back(static_cast<std::uint32_t>(user_count + e.item));
      labels.push_back(label);
    }
  };
  append(positives, 1.0);
  append(negatives, 0.0);
  Var logits = tape.row_dot(tape.gather_rows(h, std::move(src)), tape.gather_rows(h, std::move(dst)));
  return tape.bce_with_logits(logits, Tensor::vector(std::move(labels)));
}

LpTrainResult train_lp(GnnModel model, const InteractionGraph& graph, const LpTrainConfig& cfg) {
  cfg.validate();
  model.config.validate();
  check_model_fits(model, graph.user_count(), graph.item_count());
  if (graph.edge_count() == 0) throw PreconditionError("train_lp: graph has no edges");

  Rng rng(cfg.seed);
  auto optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate);
  std::vector<Tensor*> params{&model.embeddings};
  for (std::size_t l = 0; l < model.self_weights.size(); ++l) {
    params.push_back(&model.self_weights[l]);
    params.push_back(&model.neighbor_weights[l]);
  }

  LpTrainResult result;
  const auto& positives = graph.edges();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto negatives = sample_non_edges(
        graph, positives.size() * static_cast<std::size_t>(cfg.negatives), rng);
    std::vector<Tensor> grads;
    double loss_value = 0;
    try {
      Tape tape;
      auto vars = bind_model(tape, model, true);
      Var loss = lp_loss_on_tape(tape, model.config, vars, graph.adjacency(), positives, negatives,
                                 graph.user_count());
      if (cfg.weight_decay > 0) {
        Var penalty = tape.dot(vars.embeddings, vars.embeddings);
        for (std::size_t l = 0; l < vars.self_weights.size(); ++l) {
          penalty = tape.add(penalty, tape.dot(vars.self_weights[l], vars.self_weights[l]));
          penalty = tape.add(penalty, tape.dot(vars.neighbor_weights[l], vars.neighbor_weights[l]));
        }
        loss = tape.add(loss, tape.scale(penalty, 0.5 * cfg.weight_decay));
      }
      loss_value = tape.value(loss).item();
      grads = tape.backward(loss);
    } catch (const NumericError& e) {
      throw NumericError("train_lp diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    for (const auto& g : grads) {
      if (!g.all_finite())
        throw NumericError("train_lp diverged at epoch " + std::to_string(epoch) +
                           ": non-finite gradient");
    }
    // bind_model registers embeddings, then (W0, W1) per layer, matching `params`.
    optimizer->step(params, grads);
    result.loss_trace.push_back(loss_value);
  }
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'C', 'F', 'R', 'G', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.append(p, sizeof(T));
  }
  void put_tensor(const Tensor& t) {
    for (double v : t.values()) put(v);
  }
  std::string& bytes() { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size())
      throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint is truncated");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  Tensor get_tensor(std::size_t rows, std::size_t cols) {
    if (cols != 0 && rows > (bytes_.size() - pos_) / sizeof(double) / cols)
      throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint is truncated");
    std::vector<double> values(rows * cols);
    for (auto& v : values) v = get<double>();
    return Tensor::matrix(rows, cols, std::move(values));
  }
  std::size_t position() const { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const GnnModel& model, const std::filesystem::path& path) {
  Writer w;
  w.bytes().append(kMagic, sizeof kMagic);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint8_t>(model.config.encoder));
  w.put(static_cast<std::uint32_t>(model.config.layers));
  w.put(static_cast<std::uint32_t>(model.config.dim));
  w.put(model.config.seed);
  w.put(model.id_mapping_hash);
  w.put(static_cast<std::uint64_t>(model.user_count));
  w.put(static_cast<std::uint64_t>(model.item_count));
  w.put(static_cast<std::uint32_t>(model.self_weights.size()));
  w.put_tensor(model.embeddings);
  for (std::size_t l = 0; l < model.self_weights.size(); ++l) {
    w.put_tensor(model.self_weights[l]);
    w.put_tensor(model.neighbor_weights[l]);
  }
  const std::uint64_t checksum = fnv1a(w.bytes());
  w.put(checksum);
  write_text(path, w.bytes());
}

GnnModel load_checkpoint(const std::filesystem::path& path, const InteractionGraph* graph) {
  const std::string bytes = read_text(path);
  using K = CheckpointError::Kind;
  if (bytes.size() < sizeof kMagic + sizeof(std::uint32_t) ||
      std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError(K::Corrupt, "not a checkpoint file: " + path.string());
  Reader r(std::string_view(bytes).substr(sizeof kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError(K::Version, "checkpoint version " + std::to_string(version) +
                                          " is not supported (expected " +
                                          std::to_string(kCheckpointVersion) + ")");
  if (bytes.size() < sizeof kMagic + sizeof(std::uint64_t))
    throw CheckpointError(K::Corrupt, "checkpoint is truncated");
  std::uint64_t stored_checksum;
  std::memcpy(&stored_checksum, bytes.data() + bytes.size() - sizeof stored_checksum,
              sizeof stored_checksum);
  if (fnv1a(std::string_view(bytes).substr(0, bytes.size() - sizeof stored_checksum)) !=
      stored_checksum)
    throw CheckpointError(K::Corrupt, "checkpoint checksum mismatch (truncated or corrupt file)");

  GnnModel m;
  const auto encoder = r.get<std::uint8_t>();
  if (encoder > 1) throw CheckpointError(K::Corrupt, "unknown encoder tag");
  m.config.encoder = static_cast<EncoderKind>(encoder);
  m.config.layers = static_cast<int>(r.get<std::uint32_t>());
  m.config.dim = static_cast<int>(r.get<std::uint32_t>());
  m.config.seed = r.get<std::uint64_t>();
  m.id_mapping_hash = r.get<std::uint64_t>();
  m.user_count = r.get<std::uint64_t>();
  m.item_count = r.get<std::uint64_t>();
  const auto weight_layers = r.get<std::uint32_t>();
  const std::size_t d = static_cast<std::size_t>(m.config.dim);
  m.embeddings = r.get_tensor(m.user_count + m.item_count, d);
  for (std::uint32_t l = 0; l < weight_layers; ++l) {
    m.self_weights.push_back(r.get_tensor(d, d));
    m.neighbor_weights.push_back(r.get_tensor(d, d));
  }
  if (r.position() + sizeof kMagic + sizeof stored_checksum != bytes.size())
    throw CheckpointError(K::Corrupt, "checkpoint has trailing bytes");

  if (graph) {
    if (graph->user_count() != m.user_count || graph->item_count() != m.item_count ||
        graph->id_mapping_hash() != m.id_mapping_hash)
      throw CheckpointError(K::IdMapping,
                            "checkpoint id mapping " + hex64(m.id_mapping_hash) +
                                " does not match the graph (" + hex64(graph->id_mapping_hash()) +
                                ")");
  }
  return m;
}

}  // namespace cfrag
