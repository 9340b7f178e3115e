#include "cfrag/retriever.hpp"

#include <algorithm>

#include "cfrag/error.hpp"

namespace cfrag {

const char* to_string(ItemPool pool) {
  return pool == ItemPool::UserNeighbors ? "user_neighbors" : "all_items";
}

ItemPool parse_item_pool(const std::string& name) {
  if (name == "user_neighbors") return ItemPool::UserNeighbors;
  if (name == "all_items") return ItemPool::AllItems;
  throw PreconditionError("unknown item pool '" + name + "'");
}

namespace {

std::vector<Retrieved> top_k(const EmbeddingStore& store, NodeRef query, NodeKind kind,
                             const std::vector<std::uint32_t>& candidates, int k) {
  const auto q = store.vector(query);
  std::vector<Retrieved> scored;
  scored.reserve(candidates.size());
  for (std::uint32_t c : candidates) {
    const NodeRef ref{kind, c};
    if (ref == query) continue;
    scored.push_back({ref, cosine(q, store.vector(ref))});
  }
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    [](const Retrieved& a, const Retrieved& b) {
                      if (a.similarity != b.similarity) return a.similarity > b.similarity;
                      return a.node.index < b.node.index;
                    });
  scored.resize(n);
  return scored;
}

std::vector<std::uint32_t> to_vector(std::span<const std::uint32_t> s) { return {s.begin(), s.end()}; }

}  // namespace

RetrievalResult retrieve(const InteractionGraph& graph, const EmbeddingStore& store, NodeRef user,
                         NodeRef item, int k, ItemPool pool) {
  if (k < 1) throw PreconditionError("retrieve: k must be >= 1");
  if (!user.is_user() || !item.is_item()) throw PreconditionError("retrieve: expected a (user, item) pair");
  graph.check(user);
  graph.check(item);
  RetrievalResult r{user, item, {}, {}};
  r.users = top_k(store, user, NodeKind::User, to_vector(graph.neighbors(item)), k);
  std::vector<std::uint32_t> items;
  if (pool == ItemPool::UserNeighbors) {
    items = to_vector(graph.neighbors(user));
  } else {
    items.resize(graph.item_count());
    for (std::uint32_t i = 0; i < items.size(); ++i) items[i] = i;
  }
  r.items = top_k(store, item, NodeKind::Item, items, k);
  return r;
}

Json retrieval_to_json(const RetrievalResult& r, const InteractionGraph& graph) {
  auto list = [&](const std::vector<Retrieved>& xs) {
    Json arr = Json::array();
    for (const auto& x : xs) arr.push_back({{"id", graph.id(x.node)}, {"similarity", x.similarity}});
    return arr;
  };
  return {{"user", graph.id(r.user)}, {"item", graph.id(r.item)}, {"users", list(r.users)},
          {"items", list(r.items)}};
}

RetrievalResult retrieval_from_json(const Json& record, const InteractionGraph& graph) {
  auto lookup = [&](const std::string& id, bool user) {
    auto ref = user ? graph.find_user(id) : graph.find_item(id);
    if (!ref) throw PreconditionError("unknown " + std::string(user ? "user" : "item") + " id '" + id + "'");
    return *ref;
  };
  RetrievalResult r;
  r.user = lookup(record.at("user").get<std::string>(), true);
  r.item = lookup(record.at("item").get<std::string>(), false);
  for (const auto& x : record.at("users"))
    r.users.push_back({lookup(x.at("id").get<std::string>(), true), x.at("similarity").get<double>()});
  for (const auto& x : record.at("items"))
    r.items.push_back({lookup(x.at("id").get<std::string>(), false), x.at("similarity").get<double>()});
  return r;
}

}  // namespace cfrag
