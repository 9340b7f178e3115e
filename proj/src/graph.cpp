#include "cfrag/graph.hpp"

#include <algorithm>
#include <deque>
#include <set>

#include "cfrag/error.hpp"
#include "cfrag/io.hpp"

namespace cfrag {

std::string to_string(NodeRef ref) {
  return (ref.is_user() ? "u" : "i") + std::to_string(ref.index);
}

// ---------------------------------------------------------------------------
// InteractionGraph

InteractionGraph::InteractionGraph(std::vector<UserRecord> users, std::vector<ItemRecord> items,
                                   std::vector<Interaction> interactions)
    : users_(std::move(users)), items_(std::move(items)), edges_(std::move(interactions)) {
  for (std::uint32_t u = 0; u < users_.size(); ++u) {
    if (!user_lookup_.emplace(users_[u].id, u).second)
      throw PreconditionError("duplicate user id '" + users_[u].id + "'");
  }
  for (std::uint32_t i = 0; i < items_.size(); ++i) {
    if (!item_lookup_.emplace(items_[i].id, i).second)
      throw PreconditionError("duplicate item id '" + items_[i].id + "'");
  }
  for (const auto& e : edges_) {
    if (e.user >= users_.size() || e.item >= items_.size())
      throw PreconditionError("interaction (" + std::to_string(e.user) + ", " +
                              std::to_string(e.item) + ") references an unknown node");
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());

  user_offsets_.assign(users_.size() + 1, 0);
  item_offsets_.assign(items_.size() + 1, 0);
  for (const auto& e : edges_) {
    ++user_offsets_[e.user + 1];
    ++item_offsets_[e.item + 1];
  }
  for (std::size_t u = 0; u < users_.size(); ++u) user_offsets_[u + 1] += user_offsets_[u];
  for (std::size_t i = 0; i < items_.size(); ++i) item_offsets_[i + 1] += item_offsets_[i];
  user_adj_.resize(edges_.size());
  item_adj_.resize(edges_.size());
  std::vector<std::uint32_t> ucur(user_offsets_.begin(), user_offsets_.end() - 1);
  std::vector<std::uint32_t> icur(item_offsets_.begin(), item_offsets_.end() - 1);
  std::vector<std::uint32_t> item_edge_ids(edges_.size());
  for (std::uint32_t k = 0; k < edges_.size(); ++k) {
    const auto& e = edges_[k];
    user_adj_[ucur[e.user]++] = e.item;
    item_edge_ids[icur[e.item]] = k;
    item_adj_[icur[e.item]++] = e.user;
  }
  // Edges are sorted by (user, item), so both neighbor lists come out ascending.

  const std::size_t n_users = users_.size();
  adjacency_.rows = node_count();
  adjacency_.edge_count = edges_.size();
  adjacency_.offsets.assign(node_count() + 1, 0);
  adjacency_.neighbor.reserve(2 * edges_.size());
  adjacency_.edge.reserve(2 * edges_.size());
  for (std::size_t u = 0; u < n_users; ++u) {
    for (std::uint32_t k = user_offsets_[u]; k < user_offsets_[u + 1]; ++k) {
      adjacency_.neighbor.push_back(static_cast<std::uint32_t>(n_users + user_adj_[k]));
      adjacency_.edge.push_back(k);
    }
    adjacency_.offsets[u + 1] = static_cast<std::uint32_t>(adjacency_.neighbor.size());
  }
  for (std::size_t i = 0; i < items_.size(); ++i) {
    for (std::uint32_t k = item_offsets_[i]; k < item_offsets_[i + 1]; ++k) {
      adjacency_.neighbor.push_back(item_adj_[k]);
      adjacency_.edge.push_back(item_edge_ids[k]);
    }
    adjacency_.offsets[n_users + i + 1] = static_cast<std::uint32_t>(adjacency_.neighbor.size());
  }
}

bool InteractionGraph::contains(NodeRef ref) const {
  return ref.is_user() ? ref.index < users_.size() : ref.index < items_.size();
}

void InteractionGraph::check(NodeRef ref) const {
  if (!contains(ref)) throw PreconditionError("node " + to_string(ref) + " does not exist");
}

std::span<const std::uint32_t> InteractionGraph::neighbors(NodeRef ref) const {
  check(ref);
  if (ref.is_user())
    return {user_adj_.data() + user_offsets_[ref.index],
            user_offsets_[ref.index + 1] - user_offsets_[ref.index]};
  return {item_adj_.data() + item_offsets_[ref.index],
          item_offsets_[ref.index + 1] - item_offsets_[ref.index]};
}

bool InteractionGraph::has_edge(std::uint32_t user, std::uint32_t item) const {
  auto nbrs = neighbors(NodeRef::user(user));
  return std::binary_search(nbrs.begin(), nbrs.end(), item);
}

const std::string& InteractionGraph::id(NodeRef ref) const {
  check(ref);
  return ref.is_user() ? users_[ref.index].id : items_[ref.index].id;
}

const std::string& InteractionGraph::profile(NodeRef ref) const {
  check(ref);
  return ref.is_user() ? users_[ref.index].profile : items_[ref.index].profile;
}

std::optional<NodeRef> InteractionGraph::find_user(const std::string& id) const {
  auto it = user_lookup_.find(id);
  if (it == user_lookup_.end()) return std::nullopt;
  return NodeRef::user(it->second);
}

std::optional<NodeRef> InteractionGraph::find_item(const std::string& id) const {
  auto it = item_lookup_.find(id);
  if (it == item_lookup_.end()) return std::nullopt;
  return NodeRef::item(it->second);
}

NodeRef InteractionGraph::node_at_row(std::size_t row) const {
  if (row < users_.size()) return NodeRef::user(static_cast<std::uint32_t>(row));
  if (row < node_count()) return NodeRef::item(static_cast<std::uint32_t>(row - users_.size()));
  throw PreconditionError("row " + std::to_string(row) + " out of range");
}

std::uint64_t InteractionGraph::id_mapping_hash() const {
  std::uint64_t h = fnv1a("users");
  for (const auto& u : users_) {
    h = fnv1a(u.id, h);
    h = fnv1a(std::string_view("\0", 1), h);
  }
  h = fnv1a("items", h);
  for (const auto& i : items_) {
    h = fnv1a(i.id, h);
    h = fnv1a(std::string_view("\0", 1), h);
  }
  return h;
}

InteractionGraph InteractionGraph::with_edges(std::vector<Interaction> interactions) const {
  return InteractionGraph(users_, items_, std::move(interactions));
}

// ---------------------------------------------------------------------------
// Ingest

Dataset ingest_dataset(const DatasetPaths& paths) {
  std::vector<InteractionGraph::UserRecord> users;
  std::vector<InteractionGraph::ItemRecord> items;
  std::unordered_map<std::string, std::uint32_t> user_index, item_index;

  const std::string users_file = paths.users.string();
  read_jsonl(paths.users, [&](const Json& r, std::size_t line) {
    auto id = require_string(r, "id", users_file, line);
    auto profile = require_string(r, "profile", users_file, line);
    if (!user_index.emplace(id, static_cast<std::uint32_t>(users.size())).second)
      throw ParseError(users_file, line, "duplicate user id '" + id + "'");
    users.push_back({std::move(id), std::move(profile)});
  });

  const std::string items_file = paths.items.string();
  read_jsonl(paths.items, [&](const Json& r, std::size_t line) {
    auto id = require_string(r, "id", items_file, line);
    auto title = require_string(r, "title", items_file, line);
    auto profile = require_string(r, "profile", items_file, line);
    if (!item_index.emplace(id, static_cast<std::uint32_t>(items.size())).second)
      throw ParseError(items_file, line, "duplicate item id '" + id + "'");
    items.push_back({std::move(id), std::move(title), std::move(profile)});
  });

  auto resolve = [&](const Json& r, const std::string& file, std::size_t line) {
    auto user_id = require_string(r, "user", file, line);
    auto item_id = require_string(r, "item", file, line);
    auto u = user_index.find(user_id);
    if (u == user_index.end()) throw ParseError(file, line, "unknown user id '" + user_id + "'");
    auto i = item_index.find(item_id);
    if (i == item_index.end()) throw ParseError(file, line, "unknown item id '" + item_id + "'");
    return Interaction{u->second, i->second};
  };

  std::vector<Interaction> interactions;
  const std::string inter_file = paths.interactions.string();
  read_jsonl(paths.interactions, [&](const Json& r, std::size_t line) {
    interactions.push_back(resolve(r, inter_file, line));
  });
  if (interactions.empty()) throw PreconditionError("empty interaction set in " + inter_file);

  Dataset ds;
  const std::size_t raw = interactions.size();
  ds.graph = InteractionGraph(std::move(users), std::move(items), std::move(interactions));
  ds.duplicate_interactions = raw - ds.graph.edge_count();

  auto load_explanations = [&](const std::filesystem::path& p, std::vector<ExplanationRecord>& out) {
    if (p.empty()) return;
    const std::string file = p.string();
    read_jsonl(p, [&](const Json& r, std::size_t line) {
      auto pair = resolve(r, file, line);
      auto text = require_string(r, "explanation", file, line);
      out.push_back({NodeRef::user(pair.user), NodeRef::item(pair.item), std::move(text)});
    });
  };
  load_explanations(paths.train_explanations, ds.explanations.train);
  load_explanations(paths.test_explanations, ds.explanations.test);

  std::set<std::pair<NodeRef, NodeRef>> train_pairs;
  for (const auto& r : ds.explanations.train) train_pairs.emplace(r.user, r.item);
  for (const auto& r : ds.explanations.test) {
    if (train_pairs.count({r.user, r.item}))
      throw PreconditionError("pair (" + ds.graph.id(r.user) + ", " + ds.graph.id(r.item) +
                              ") appears in both train and test explanations");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// EgoGraph

EgoGraph::EgoGraph(NodeRef center_user, NodeRef center_item, int hop_limit,
                   std::vector<NodeRef> nodes, const std::vector<std::pair<NodeRef, NodeRef>>& edges)
    : center_user_(center_user), center_item_(center_item), hop_limit_(hop_limit),
      nodes_(std::move(nodes)) {
  std::sort(nodes_.begin(), nodes_.end());
  nodes_.erase(std::unique(nodes_.begin(), nodes_.end()), nodes_.end());
  if (!contains(center_user_) || !contains(center_item_))
    throw PreconditionError("ego-graph must contain both center nodes");
  for (const auto& [a, b] : edges) {
    if (a.kind == b.kind) throw PreconditionError("edge joins two nodes of the same kind");
    const NodeRef user = a.is_user() ? a : b;
    const NodeRef item = a.is_user() ? b : a;
    auto lu = local_id(user);
    auto li = local_id(item);
    if (!lu || !li) throw PreconditionError("edge endpoint outside the ego-graph node set");
    edges_.push_back({*lu, *li});
  }
  std::sort(edges_.begin(), edges_.end(), [](const EgoEdge& x, const EgoEdge& y) {
    return std::pair(x.user, x.item) < std::pair(y.user, y.item);
  });
  edges_.erase(std::unique(edges_.begin(), edges_.end(),
                           [](const EgoEdge& x, const EgoEdge& y) {
                             return x.user == y.user && x.item == y.item;
                           }),
               edges_.end());
  adjacency_.assign(nodes_.size(), {});
  for (std::uint32_t k = 0; k < edges_.size(); ++k) {
    adjacency_[edges_[k].user].push_back({edges_[k].item, k});
    adjacency_[edges_[k].item].push_back({edges_[k].user, k});
  }
  for (auto& list : adjacency_) {
    std::sort(list.begin(), list.end(),
              [](const Incidence& x, const Incidence& y) { return x.neighbor < y.neighbor; });
  }
}

std::optional<std::uint32_t> EgoGraph::local_id(NodeRef ref) const {
  auto it = std::lower_bound(nodes_.begin(), nodes_.end(), ref);
  if (it == nodes_.end() || *it != ref) return std::nullopt;
  return static_cast<std::uint32_t>(it - nodes_.begin());
}

std::optional<std::uint32_t> EgoGraph::edge_between(std::uint32_t a, std::uint32_t b) const {
  const auto& list = adjacency_.at(a);
  auto it = std::lower_bound(list.begin(), list.end(), b,
                             [](const Incidence& x, std::uint32_t v) { return x.neighbor < v; });
  if (it == list.end() || it->neighbor != b) return std::nullopt;
  return it->edge;
}

std::uint32_t EgoGraph::other_end(std::uint32_t edge, std::uint32_t from) const {
  const auto& e = edges_.at(edge);
  if (e.user == from) return e.item;
  if (e.item == from) return e.user;
  throw PreconditionError("node is not an endpoint of the edge");
}

EgoGraph EgoGraph::without_center_edge() const {
  const auto cu = center_user_local();
  const auto ci = center_item_local();
  std::vector<std::pair<NodeRef, NodeRef>> kept;
  kept.reserve(edges_.size());
  for (const auto& e : edges_) {
    if (e.user == cu && e.item == ci) continue;
    kept.emplace_back(nodes_[e.user], nodes_[e.item]);
  }
  return EgoGraph(center_user_, center_item_, hop_limit_, nodes_, kept);
}

SparseAdjacency EgoGraph::adjacency() const {
  SparseAdjacency adj;
  adj.rows = nodes_.size();
  adj.edge_count = edges_.size();
  adj.offsets.assign(nodes_.size() + 1, 0);
  for (std::size_t v = 0; v < nodes_.size(); ++v) {
    for (const auto& inc : adjacency_[v]) {
      adj.neighbor.push_back(inc.neighbor);
      adj.edge.push_back(inc.edge);
    }
    adj.offsets[v + 1] = static_cast<std::uint32_t>(adj.neighbor.size());
  }
  return adj;
}

namespace {

void bfs_ball(const InteractionGraph& graph, NodeRef start, int hops, std::set<NodeRef>& out) {
  std::deque<std::pair<NodeRef, int>> queue{{start, 0}};
  std::set<NodeRef> seen{start};
  while (!queue.empty()) {
    auto [node, dist] = queue.front();
    queue.pop_front();
    out.insert(node);
    if (dist == hops) continue;
    const NodeKind other = node.is_user() ? NodeKind::Item : NodeKind::User;
    for (std::uint32_t n : graph.neighbors(node)) {
      NodeRef next{other, n};
      if (seen.insert(next).second) queue.emplace_back(next, dist + 1);
    }
  }
}

}  // namespace

EgoGraph ego_graph(const InteractionGraph& graph, NodeRef user, NodeRef item, int hops) {
  if (!user.is_user()) throw PreconditionError("ego_graph: first center node must be a user");
  if (!item.is_item()) throw PreconditionError("ego_graph: second center node must be an item");
  if (hops < 1) throw PreconditionError("ego_graph: hop limit must be >= 1");
  graph.check(user);
  graph.check(item);

  std::set<NodeRef> members;
  bfs_ball(graph, user, hops, members);
  bfs_ball(graph, item, hops, members);

  std::vector<std::pair<NodeRef, NodeRef>> edges;
  for (const NodeRef& n : members) {
    if (!n.is_user()) break;  // users sort first
    for (std::uint32_t i : graph.neighbors(n)) {
      if (members.count(NodeRef::item(i))) edges.emplace_back(n, NodeRef::item(i));
    }
  }
  return EgoGraph(user, item, hops, std::vector<NodeRef>(members.begin(), members.end()), edges);
}

namespace {

/// Surviving-node flags of the m-core of `ego`.
std::vector<bool> core_members(const EgoGraph& ego, int m) {
  const std::size_t n = ego.node_count();
  std::vector<bool> alive(n, true);
  std::vector<std::size_t> degree(n);
  std::deque<std::uint32_t> queue;
  for (std::uint32_t v = 0; v < n; ++v) {
    degree[v] = ego.degree(v);
    if (static_cast<long>(degree[v]) < m) {
      alive[v] = false;
      queue.push_back(v);
    }
  }
  while (!queue.empty()) {
    const auto v = queue.front();
    queue.pop_front();
    for (const auto& inc : ego.incident(v)) {
      if (!alive[inc.neighbor]) continue;
      if (static_cast<long>(--degree[inc.neighbor]) < m) {
        alive[inc.neighbor] = false;
        queue.push_back(inc.neighbor);
      }
    }
  }
  return alive;
}

}  // namespace

bool m_core_drops_center(const EgoGraph& ego, int m) {
  auto alive = core_members(ego, m);
  return !alive[ego.center_user_local()] || !alive[ego.center_item_local()];
}

EgoGraph m_core_prune(const EgoGraph& ego, int m) {
  if (m < 0) throw PreconditionError("m_core_prune: m must be >= 0");
  auto alive = core_members(ego, m);
  if (!alive[ego.center_user_local()] || !alive[ego.center_item_local()]) return ego;

  std::vector<NodeRef> nodes;
  for (std::uint32_t v = 0; v < ego.node_count(); ++v) {
    if (alive[v]) nodes.push_back(ego.global(v));
  }
  std::vector<std::pair<NodeRef, NodeRef>> edges;
  for (const auto& e : ego.edges()) {
    if (alive[e.user] && alive[e.item]) edges.emplace_back(ego.global(e.user), ego.global(e.item));
  }
  return EgoGraph(ego.center_user(), ego.center_item(), ego.hop_limit(), std::move(nodes), edges);
}

}  // namespace cfrag
