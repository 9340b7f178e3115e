#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cfrag/autodiff.hpp"
#include "cfrag/gnn.hpp"
#include "cfrag/graph.hpp"
#include "cfrag/io.hpp"

namespace cfrag {

/// Learnable logit per undirected ego-graph edge.
///
/// Each stored edge is one user-item interaction; its Buys traversal and its BoughtBy traversal
/// share the logit, and the edge is filed under its canonical (user to item) type, Buys.
struct EdgeMask {
  std::vector<double> logits;

  static EdgeMask zeros(const EgoGraph& ego) { return {std::vector<double>(ego.edge_count(), 0.0)}; }

  std::size_t size() const { return logits.size(); }
  EdgeType type(std::uint32_t /*edge*/) const { return EdgeType::Buys; }
  /// Edge ids filed under relation `r`.
  std::vector<std::uint32_t> edges_of_type(EdgeType r) const;
  /// sigma(logit) per edge.
  std::vector<double> weights() const;
};

enum class DegreeSource { Ego, Graph };

struct MaskLearnConfig {
  int steps = 200;
  double learning_rate = 0.1;
  OptimizerKind optimizer = OptimizerKind::Adam;
  int refresh_interval = 10;
  int max_path_length = 5;
  int k = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Simple alternating path from the center user to the center item.
struct ScoredPath {
  std::vector<std::uint32_t> nodes;  // ego local ids, starting at the center user
  std::vector<std::uint32_t> edges;  // ego edge ids, edges[k] joins nodes[k] and nodes[k+1]
  std::vector<NodeRef> refs;         // global node refs for nodes
  double score = 0;
};

/// Degree of every ego node, taken in the ego-graph itself or in the full graph.
std::vector<double> node_degrees(const EgoGraph& ego, DegreeSource source,
                                 const InteractionGraph* graph = nullptr);

/// Per-edge score term log sigma(M_e) - log deg(target), `target` being the node the traversal
/// enters.
double edge_score(double logit, double target_degree);

/// Sum of edge_score over a path given as edges in traversal order from the center user.
/// Throws PreconditionError when consecutive edges do not share a node.
double path_score(std::span<const std::uint32_t> path_edges, const EdgeMask& mask,
                  const EgoGraph& ego, std::span<const double> degrees);
double path_score(std::span<const std::uint32_t> path_edges, const EdgeMask& mask,
                  const EgoGraph& ego);

/// -log P(Y=1) for the center pair with every message scaled by sigma(mask).
double loss_pred(const GnnModel& model, const EgoGraph& ego, const EdgeMask& mask);

/// -sum over relations r of (sum of M_e on path edges of type r - sum of M_e on the other
/// edges of type r).
double loss_path(const EdgeMask& mask, std::span<const std::uint32_t> path_edges);

/// Up to `k` edge-disjoint paths, found by repeated hop-bounded Dijkstra with edge length
/// -edge_score. Each path has at most `max_len` edges. Sorted by score, highest first.
std::vector<ScoredPath> extract_paths(const EgoGraph& ego, const EdgeMask& mask, int k,
                                      int max_len, std::span<const double> degrees);
std::vector<ScoredPath> extract_paths(const EgoGraph& ego, const EdgeMask& mask, int k,
                                      int max_len);

/// Ego-graph forward pass with the model frozen; h0 rows are gathered once.
class MaskedPredictor {
 public:
  MaskedPredictor(const GnnModel& model, const EgoGraph& ego);

  /// Builds L_pred on `tape` from mask logits.
  Var loss_pred(Tape& tape, Var logits) const;

 private:
  const GnnModel& model_;
  SparseAdjacency adj_;
  Tensor h0_;
  std::uint32_t user_, item_;
};

/// Builds L_path on `tape`.
Var loss_path_on_tape(Tape& tape, Var logits, const EdgeMask& shape,
                      std::span<const std::uint32_t> path_edges);

struct MaskLearnResult {
  EdgeMask mask;
  std::vector<double> loss_trace;       // L_pred + L_path per step, before the update
  std::vector<double> pred_loss_trace;
  std::vector<double> path_loss_trace;
};

/// Minimizes L_pred + L_path from zero logits; the path edge set is recomputed from the
/// current mask every `refresh_interval` steps.
MaskLearnResult learn_mask(const GnnModel& model, const EgoGraph& ego, const MaskLearnConfig& cfg,
                           std::span<const double> degrees);
MaskLearnResult learn_mask(const GnnModel& model, const EgoGraph& ego, const MaskLearnConfig& cfg);

struct ExplainConfig {
  int m = 2;
  int hops = 2;
  bool exclude_center_edge = true;
  DegreeSource degree_source = DegreeSource::Ego;
  MaskLearnConfig mask;

  void validate() const;
};

struct ExplainDiagnostics {
  std::size_t ego_nodes = 0, ego_edges = 0;
  std::size_t pruned_nodes = 0, pruned_edges = 0;
  bool center_edge_removed = false;
  bool core_fallback = false;
  double final_pred_loss = 0;
  double final_path_loss = 0;
};

struct PathExplanation {
  NodeRef user, item;
  std::vector<ScoredPath> paths;
  std::vector<std::vector<double>> path_edge_weights;  // sigma(logit) along each path
  ExplainDiagnostics diagnostics;
};

/// ego_graph -> (drop center edge) -> m_core_prune -> learn_mask -> extract_paths.
PathExplanation explain(const InteractionGraph& graph, const GnnModel& model, NodeRef user,
                        NodeRef item, const ExplainConfig& cfg);

/// Dump record: string ids for the pair and every path node, plus scores and diagnostics.
Json explanation_to_json(const PathExplanation& ex, const InteractionGraph& graph);

/// Path node sequences (global refs) and scores recovered from a dump record.
struct DumpedPath {
  std::vector<NodeRef> nodes;
  double score = 0;
};
std::vector<DumpedPath> paths_from_json(const Json& record, const InteractionGraph& graph);

}  // namespace cfrag
