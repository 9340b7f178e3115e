#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cfrag/adjacency.hpp"

namespace cfrag {

enum class NodeKind : std::uint8_t { User = 0, Item = 1 };

/// A user or an item, addressed by its dense index within its kind.
/// Ordering is (kind, index): all users sort before all items.
struct NodeRef {
  NodeKind kind = NodeKind::User;
  std::uint32_t index = 0;

  static constexpr NodeRef user(std::uint32_t i) { return {NodeKind::User, i}; }
  static constexpr NodeRef item(std::uint32_t i) { return {NodeKind::Item, i}; }

  bool is_user() const { return kind == NodeKind::User; }
  bool is_item() const { return kind == NodeKind::Item; }

  auto operator<=>(const NodeRef&) const = default;
};

std::string to_string(NodeRef ref);

/// Relation carried by a traversal: a user buys an item, an item is bought by a user.
enum class EdgeType : std::uint8_t { Buys = 0, BoughtBy = 1 };

constexpr EdgeType reverse(EdgeType t) {
  return t == EdgeType::Buys ? EdgeType::BoughtBy : EdgeType::Buys;
}

/// Type of the relation used when leaving a node of kind `from`.
constexpr EdgeType edge_type_leaving(NodeKind from) {
  return from == NodeKind::User ? EdgeType::Buys : EdgeType::BoughtBy;
}

/// One observed interaction, as (user index, item index).
struct Interaction {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  auto operator<=>(const Interaction&) const = default;
};

/// Immutable bipartite user/item graph with node profiles.
///
/// Nodes also have a global row id used by embedding tables: users occupy
/// [0, user_count) and items [user_count, user_count + item_count).
class InteractionGraph {
 public:
  struct UserRecord {
    std::string id;
    std::string profile;
  };
  struct ItemRecord {
    std::string id;
    std::string title;
    std::string profile;
  };

  InteractionGraph() = default;

  /// Builds the graph. Interactions are deduplicated and may arrive in any order.
  /// Throws PreconditionError on out-of-range indices or duplicate string ids.
  InteractionGraph(std::vector<UserRecord> users, std::vector<ItemRecord> items,
                   std::vector<Interaction> interactions);

  std::size_t user_count() const { return users_.size(); }
  std::size_t item_count() const { return items_.size(); }
  std::size_t node_count() const { return users_.size() + items_.size(); }
  std::size_t edge_count() const { return edges_.size(); }

  bool contains(NodeRef ref) const;
  void check(NodeRef ref) const;

  /// Neighbor indices (of the opposite kind), sorted ascending.
  std::span<const std::uint32_t> neighbors(NodeRef ref) const;
  std::size_t degree(NodeRef ref) const { return neighbors(ref).size(); }
  bool has_edge(std::uint32_t user, std::uint32_t item) const;

  /// All interactions, sorted by (user, item).
  const std::vector<Interaction>& edges() const { return edges_; }

  const std::string& id(NodeRef ref) const;
  const std::string& profile(NodeRef ref) const;
  const std::string& title(std::uint32_t item) const { return items_.at(item).title; }

  std::optional<NodeRef> find_user(const std::string& id) const;
  std::optional<NodeRef> find_item(const std::string& id) const;

  std::size_t row(NodeRef ref) const {
    return ref.is_user() ? ref.index : users_.size() + ref.index;
  }
  NodeRef node_at_row(std::size_t row) const;

  /// Hash over the ordered user and item id lists; pins checkpoints to an id mapping.
  std::uint64_t id_mapping_hash() const;

  /// Message-passing view over global rows; edge ids index edges().
  const SparseAdjacency& adjacency() const { return adjacency_; }

  /// Copy of this graph with a subset of interactions (profiles and id maps kept).
  InteractionGraph with_edges(std::vector<Interaction> interactions) const;

 private:
  std::vector<UserRecord> users_;
  std::vector<ItemRecord> items_;
  std::vector<Interaction> edges_;
  std::vector<std::uint32_t> user_offsets_{0}, user_adj_;
  std::vector<std::uint32_t> item_offsets_{0}, item_adj_;
  std::unordered_map<std::string, std::uint32_t> user_lookup_, item_lookup_;
  SparseAdjacency adjacency_;
};

struct ExplanationRecord {
  NodeRef user;
  NodeRef item;
  std::string text;
};

/// Ground-truth explanations, split into train and test pairs.
struct ExplanationStore {
  std::vector<ExplanationRecord> train;
  std::vector<ExplanationRecord> test;
};

struct DatasetPaths {
  std::filesystem::path users;
  std::filesystem::path items;
  std::filesystem::path interactions;
  std::filesystem::path train_explanations;
  std::filesystem::path test_explanations;
};

struct Dataset {
  InteractionGraph graph;
  ExplanationStore explanations;
  std::size_t duplicate_interactions = 0;
};

/// Loads the line-delimited record files into a validated graph.
/// Throws ParseError (with line number) on malformed records or unknown ids, and
/// PreconditionError when no interactions remain or train/test pairs overlap.
Dataset ingest_dataset(const DatasetPaths& paths);

/// Undirected edge of an ego-graph, between local node ids.
struct EgoEdge {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
};

/// Edge-centered subgraph around a (user, item) pair.
///
/// Local ids follow NodeRef order, so iteration and tie-breaks match the parent's (kind, index)
/// order. Edges are sorted by (user, item) in local ids.
class EgoGraph {
 public:
  struct Incidence {
    std::uint32_t neighbor;
    std::uint32_t edge;
  };

  EgoGraph(NodeRef center_user, NodeRef center_item, int hop_limit, std::vector<NodeRef> nodes,
           const std::vector<std::pair<NodeRef, NodeRef>>& edges);

  NodeRef center_user() const { return center_user_; }
  NodeRef center_item() const { return center_item_; }
  std::uint32_t center_user_local() const { return *local_id(center_user_); }
  std::uint32_t center_item_local() const { return *local_id(center_item_); }
  int hop_limit() const { return hop_limit_; }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  const std::vector<NodeRef>& nodes() const { return nodes_; }
  const std::vector<EgoEdge>& edges() const { return edges_; }

  NodeRef global(std::uint32_t local) const { return nodes_.at(local); }
  std::optional<std::uint32_t> local_id(NodeRef ref) const;
  bool contains(NodeRef ref) const { return local_id(ref).has_value(); }

  std::span<const Incidence> incident(std::uint32_t local) const { return adjacency_[local]; }
  std::size_t degree(std::uint32_t local) const { return adjacency_[local].size(); }

  /// Local id of the edge joining two local nodes, if any.
  std::optional<std::uint32_t> edge_between(std::uint32_t a, std::uint32_t b) const;

  /// Endpoint of `edge` opposite to `from`.
  std::uint32_t other_end(std::uint32_t edge, std::uint32_t from) const;

  /// Same node set with the center (u, i) edge removed, if present.
  EgoGraph without_center_edge() const;

  SparseAdjacency adjacency() const;

 private:
  NodeRef center_user_, center_item_;
  int hop_limit_;
  std::vector<NodeRef> nodes_;
  std::vector<EgoEdge> edges_;
  std::vector<std::vector<Incidence>> adjacency_;
};

/// Nodes within `hops` of the user or the item, with every induced edge.
EgoGraph ego_graph(const InteractionGraph& graph, NodeRef user, NodeRef item, int hops);

/// Maximal subgraph in which every node has degree >= m. Returns the input unchanged when the
/// core no longer holds both center nodes.
EgoGraph m_core_prune(const EgoGraph& ego, int m);

/// True when m_core_prune would fall back to the unpruned graph.
bool m_core_drops_center(const EgoGraph& ego, int m);

}  // namespace cfrag
