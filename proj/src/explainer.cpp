#include "cfrag/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>
#include <stdexcept>
#include <tuple>

#include "cfrag/error.hpp"

namespace cfrag {

std::vector<std::uint32_t> EdgeMask::edges_of_type(EdgeType r) const {
  std::vector<std::uint32_t> out;
  for (std::uint32_t e = 0; e < logits.size(); ++e)
    if (type(e) == r) out.push_back(e);
  return out;
}

std::vector<double> EdgeMask::weights() const {
  std::vector<double> w(logits.size());
  std::transform(logits.begin(), logits.end(), w.begin(), [](double x) { return sigmoid(x); });
  return w;
}

void MaskLearnConfig::validate() const {
  if (steps < 1) throw PreconditionError("explain.steps must be >= 1");
  if (!(learning_rate > 0)) throw PreconditionError("explain.learning_rate must be > 0");
  if (refresh_interval < 1) throw PreconditionError("explain.refresh_interval must be >= 1");
  if (max_path_length < 1) throw PreconditionError("explain.max_path_length must be >= 1");
  if (k < 1) throw PreconditionError("explain.k must be >= 1");
}

void ExplainConfig::validate() const {
  if (m < 0) throw PreconditionError("explain.m must be >= 0");
  if (hops < 1) throw PreconditionError("explain.hops must be >= 1");
  mask.validate();
}

std::vector<double> node_degrees(const EgoGraph& ego, DegreeSource source,
                                 const InteractionGraph* graph) {
  std::vector<double> deg(ego.node_count());
  for (std::uint32_t v = 0; v < ego.node_count(); ++v) {
    if (source == DegreeSource::Graph) {
      if (!graph) throw PreconditionError("graph degrees requested without a graph");
      deg[v] = static_cast<double>(graph->degree(ego.global(v)));
    } else {
      deg[v] = static_cast<double>(ego.degree(v));
    }
  }
  return deg;
}

double edge_score(double logit, double target_degree) {
  return log_sigmoid(logit) - std::log(target_degree);
}

double path_score(std::span<const std::uint32_t> path_edges, const EdgeMask& mask,
                  const EgoGraph& ego, std::span<const double> degrees) {
  if (mask.size() != ego.edge_count()) throw PreconditionError("mask does not cover the ego-graph");
  std::uint32_t current = ego.center_user_local();
  double score = 0;
  for (std::uint32_t e : path_edges) {
    if (e >= ego.edge_count()) throw PreconditionError("path edge outside the ego-graph");
    const auto& edge = ego.edges()[e];
    std::uint32_t target;
    if (edge.user == current) {
      target = edge.item;
    } else if (edge.item == current) {
      target = edge.user;
    } else {
      throw PreconditionError("disconnected edge sequence");
    }
    score += edge_score(mask.logits[e], degrees[target]);
    current = target;
  }
  return score;
}

double path_score(std::span<const std::uint32_t> path_edges, const EdgeMask& mask,
                  const EgoGraph& ego) {
  const auto deg = node_degrees(ego, DegreeSource::Ego);
  return path_score(path_edges, mask, ego, deg);
}

// ---------------------------------------------------------------------------
// Losses

MaskedPredictor::MaskedPredictor(const GnnModel& model, const EgoGraph& ego)
    : model_(model), adj_(ego.adjacency()),
      user_(ego.center_user_local()), item_(ego.center_item_local()) {
  const std::size_t d = static_cast<std::size_t>(model.config.dim);
  h0_ = Tensor::zeros({ego.node_count(), d});
  for (std::uint32_t v = 0; v < ego.node_count(); ++v) {
    const NodeRef n = ego.global(v);
    const std::size_t row = n.is_user() ? n.index : model.user_count + n.index;
    if (row >= model.embeddings.rows()) throw PreconditionError("ego node outside the model");
    std::copy_n(model.embeddings.row(row).begin(), d, h0_.values().begin() + v * d);
  }
}

Var MaskedPredictor::loss_pred(Tape& tape, Var logits) const {
  GnnVars vars;
  vars.embeddings = tape.constant(h0_);
  for (std::size_t l = 0; l < model_.self_weights.size(); ++l) {
    vars.self_weights.push_back(tape.constant(model_.self_weights[l]));
    vars.neighbor_weights.push_back(tape.constant(model_.neighbor_weights[l]));
  }
  Var weights = tape.sigmoid(logits);
  Var h = encode_on_tape(tape, model_.config, vars, adj_, vars.embeddings, weights);
  Var score = tape.dot(tape.gather_rows(h, {user_}), tape.gather_rows(h, {item_}));
  return tape.scale(tape.log_sigmoid(score), -1.0);
}

namespace {

/// Coefficients c with L_path = c . logits.
Tensor path_coefficients(const EdgeMask& mask, std::span<const std::uint32_t> path_edges) {
  std::vector<bool> in_path(mask.size(), false);
  for (std::uint32_t e : path_edges) {
    if (e >= mask.size()) throw PreconditionError("path edge outside the ego-graph");
    in_path[e] = true;
  }
  std::vector<double> coef(mask.size(), 0.0);
  for (EdgeType r : {EdgeType::Buys, EdgeType::BoughtBy}) {
    for (std::uint32_t e : mask.edges_of_type(r)) coef[e] += in_path[e] ? -1.0 : 1.0;
  }
  return Tensor::vector(std::move(coef));
}

}  // namespace

Var loss_path_on_tape(Tape& tape, Var logits, const EdgeMask& shape,
                      std::span<const std::uint32_t> path_edges) {
  return tape.dot(tape.constant(path_coefficients(shape, path_edges)), logits);
}

double loss_pred(const GnnModel& model, const EgoGraph& ego, const EdgeMask& mask) {
  if (mask.size() != ego.edge_count()) throw PreconditionError("mask does not cover the ego-graph");
  MaskedPredictor predictor(model, ego);
  Tape tape;
  Var logits = tape.constant(Tensor::vector(mask.logits));
  return tape.value(predictor.loss_pred(tape, logits)).item();
}

double loss_path(const EdgeMask& mask, std::span<const std::uint32_t> path_edges) {
  const Tensor coef = path_coefficients(mask, path_edges);
  double total = 0;
  for (std::size_t e = 0; e < mask.size(); ++e) total += coef[e] * mask.logits[e];
  return total;
}

// ---------------------------------------------------------------------------
// Path extraction

namespace {

/// Best path of at most `max_len` edges over non-removed edges, or nothing.
std::optional<ScoredPath> bounded_dijkstra(const EgoGraph& ego, const EdgeMask& mask,
                                           std::span<const double> degrees,
                                           const std::vector<bool>& removed, int max_len) {
  const std::size_t layers = static_cast<std::size_t>(max_len) + 1;
  const std::size_t states = ego.node_count() * layers;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(states, kInf);
  std::vector<std::size_t> parent(states, SIZE_MAX);
  std::vector<std::uint32_t> via(states, 0);
  std::vector<bool> done(states, false);

  const std::uint32_t source = ego.center_user_local();
  const std::uint32_t target = ego.center_item_local();
  auto state = [layers](std::uint32_t v, std::size_t h) { return v * layers + h; };

  // (distance, node, hops): ties resolve toward the smaller (kind, index) node.
  using Entry = std::tuple<double, std::uint32_t, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  dist[state(source, 0)] = 0;
  queue.emplace(0.0, source, 0);
  while (!queue.empty()) {
    auto [d, v, h] = queue.top();
    queue.pop();
    const std::size_t s = state(v, h);
    if (done[s]) continue;
    done[s] = true;
    if (v == target || h + 1 >= layers) continue;
    for (const auto& inc : ego.incident(v)) {
      if (removed[inc.edge] || inc.neighbor == source) continue;
      const double len = -edge_score(mask.logits[inc.edge], degrees[inc.neighbor]);
      const std::size_t ns = state(inc.neighbor, h + 1);
      if (d + len < dist[ns]) {
        dist[ns] = d + len;
        parent[ns] = s;
        via[ns] = inc.edge;
        queue.emplace(dist[ns], inc.neighbor, h + 1);
      }
    }
  }

  std::size_t best = SIZE_MAX;
  for (std::size_t h = 1; h < layers; ++h) {
    const std::size_t s = state(target, h);
    if (dist[s] < kInf && (best == SIZE_MAX || dist[s] < dist[best])) best = s;
  }
  if (best == SIZE_MAX) return std::nullopt;

  ScoredPath path;
  for (std::size_t s = best; s != state(source, 0); s = parent[s]) {
    path.nodes.push_back(static_cast<std::uint32_t>(s / layers));
    path.edges.push_back(via[s]);
  }
  path.nodes.push_back(source);
  std::reverse(path.nodes.begin(), path.nodes.end());
  std::reverse(path.edges.begin(), path.edges.end());
  std::set<std::uint32_t> unique(path.nodes.begin(), path.nodes.end());
  if (unique.size() != path.nodes.size())
    throw std::logic_error("bounded Dijkstra produced a non-simple path");
  for (std::uint32_t v : path.nodes) path.refs.push_back(ego.global(v));
  return path;
}

}  // namespace

std::vector<ScoredPath> extract_paths(const EgoGraph& ego, const EdgeMask& mask, int k,
                                      int max_len, std::span<const double> degrees) {
  if (k < 1) throw PreconditionError("extract_paths: k must be >= 1");
  if (max_len < 1) throw PreconditionError("extract_paths: max_len must be >= 1");
  if (mask.size() != ego.edge_count()) throw PreconditionError("mask does not cover the ego-graph");
  std::vector<bool> removed(ego.edge_count(), false);
  std::vector<ScoredPath> out;
  for (int round = 0; round < k; ++round) {
    auto path = bounded_dijkstra(ego, mask, degrees, removed, max_len);
    if (!path) break;
    path->score = path_score(path->edges, mask, ego, degrees);
    for (std::uint32_t e : path->edges) removed[e] = true;
    out.push_back(std::move(*path));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredPath& a, const ScoredPath& b) { return a.score > b.score; });
  return out;
}

std::vector<ScoredPath> extract_paths(const EgoGraph& ego, const EdgeMask& mask, int k,
                                      int max_len) {
  const auto deg = node_degrees(ego, DegreeSource::Ego);
  return extract_paths(ego, mask, k, max_len, deg);
}

// ---------------------------------------------------------------------------
// Mask learning

namespace {

std::vector<std::uint32_t> path_edge_union(const std::vector<ScoredPath>& paths) {
  std::set<std::uint32_t> edges;
  for (const auto& p : paths) edges.insert(p.edges.begin(), p.edges.end());
  return {edges.begin(), edges.end()};
}

}  // namespace

MaskLearnResult learn_mask(const GnnModel& model, const EgoGraph& ego, const MaskLearnConfig& cfg,
                           std::span<const double> degrees) {
  cfg.validate();
  MaskedPredictor predictor(model, ego);
  MaskLearnResult result;
  result.mask = EdgeMask::zeros(ego);
  auto optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate);
  Tensor logits = Tensor::vector(result.mask.logits);
  std::vector<std::uint32_t> path_edges;

  for (int step = 0; step < cfg.steps; ++step) {
    if (step % cfg.refresh_interval == 0) {
      result.mask.logits.assign(logits.values().begin(), logits.values().end());
      path_edges = path_edge_union(
          extract_paths(ego, result.mask, cfg.k, cfg.max_path_length, degrees));
    }
    std::vector<Tensor> grads;
    try {
      Tape tape;
      Var m = tape.parameter(logits);
      Var pred = predictor.loss_pred(tape, m);
      Var path = loss_path_on_tape(tape, m, result.mask, path_edges);
      Var total = tape.add(pred, path);
      result.pred_loss_trace.push_back(tape.value(pred).item());
      result.path_loss_trace.push_back(tape.value(path).item());
      result.loss_trace.push_back(tape.value(total).item());
      grads = tape.backward(total);
    } catch (const NumericError& e) {
      throw NumericError("learn_mask: non-finite loss at step " + std::to_string(step) + ": " +
                         e.what());
    }
    Tensor* params[] = {&logits};
    optimizer->step(params, grads);
    if (!logits.all_finite())
      throw NumericError("learn_mask: non-finite logits after step " + std::to_string(step));
  }
  result.mask.logits.assign(logits.values().begin(), logits.values().end());
  return result;
}

MaskLearnResult learn_mask(const GnnModel& model, const EgoGraph& ego, const MaskLearnConfig& cfg) {
  const auto deg = node_degrees(ego, DegreeSource::Ego);
  return learn_mask(model, ego, cfg, deg);
}

// ---------------------------------------------------------------------------
// Pipeline

PathExplanation explain(const InteractionGraph& graph, const GnnModel& model, NodeRef user,
                        NodeRef item, const ExplainConfig& cfg) {
  cfg.validate();
  PathExplanation out;
  out.user = user;
  out.item = item;
  auto& diag = out.diagnostics;

  EgoGraph ego = ego_graph(graph, user, item, cfg.hops);
  diag.ego_nodes = ego.node_count();
  diag.ego_edges = ego.edge_count();
  if (cfg.exclude_center_edge && graph.has_edge(user.index, item.index)) {
    ego = ego.without_center_edge();
    diag.center_edge_removed = true;
  }
  diag.core_fallback = m_core_drops_center(ego, cfg.m);
  EgoGraph pruned = m_core_prune(ego, cfg.m);
  diag.pruned_nodes = pruned.node_count();
  diag.pruned_edges = pruned.edge_count();

  const auto degrees = node_degrees(pruned, cfg.degree_source, &graph);
  auto learned = learn_mask(model, pruned, cfg.mask, degrees);
  out.paths = extract_paths(pruned, learned.mask, cfg.mask.k, cfg.mask.max_path_length, degrees);
  for (const auto& p : out.paths) {
    std::vector<double> w;
    for (std::uint32_t e : p.edges) w.push_back(sigmoid(learned.mask.logits[e]));
    out.path_edge_weights.push_back(std::move(w));
  }
  diag.final_pred_loss = loss_pred(model, pruned, learned.mask);
  diag.final_path_loss = loss_path(learned.mask, path_edge_union(out.paths));
  return out;
}

Json explanation_to_json(const PathExplanation& ex, const InteractionGraph& graph) {
  Json paths = Json::array();
  for (std::size_t p = 0; p < ex.paths.size(); ++p) {
    Json nodes = Json::array();
    for (const NodeRef& n : ex.paths[p].refs)
      nodes.push_back({{"kind", n.is_user() ? "user" : "item"}, {"id", graph.id(n)}});
    paths.push_back({{"nodes", nodes},
                     {"edge_weights", ex.path_edge_weights.at(p)},
                     {"score", ex.paths[p].score}});
  }
  const auto& d = ex.diagnostics;
  return {{"user", graph.id(ex.user)},
          {"item", graph.id(ex.item)},
          {"paths", paths},
          {"diagnostics",
           {{"ego_nodes", d.ego_nodes},
            {"ego_edges", d.ego_edges},
            {"pruned_nodes", d.pruned_nodes},
            {"pruned_edges", d.pruned_edges},
            {"center_edge_removed", d.center_edge_removed},
            {"core_fallback", d.core_fallback},
            {"final_pred_loss", d.final_pred_loss},
            {"final_path_loss", d.final_path_loss}}}};
}

std::vector<DumpedPath> paths_from_json(const Json& record, const InteractionGraph& graph) {
  std::vector<DumpedPath> out;
  for (const auto& p : record.at("paths")) {
    DumpedPath path;
    path.score = p.at("score").get<double>();
    for (const auto& n : p.at("nodes")) {
      const auto id = n.at("id").get<std::string>();
      const bool is_user = n.at("kind").get<std::string>() == "user";
      auto ref = is_user ? graph.find_user(id) : graph.find_item(id);
      if (!ref) throw PreconditionError("explanation dump references unknown node '" + id + "'");
      path.nodes.push_back(*ref);
    }
    out.push_back(std::move(path));
  }
  return out;
}

}  // namespace cfrag
