#pragma once

#include <vector>

#include "cfrag/embedding.hpp"
#include "cfrag/graph.hpp"
#include "cfrag/io.hpp"

namespace cfrag {

/// Candidate pool for item-item retrieval.
enum class ItemPool { UserNeighbors, AllItems };

const char* to_string(ItemPool pool);
ItemPool parse_item_pool(const std::string& name);

struct Retrieved {
  NodeRef node;
  double similarity = 0;
  bool operator==(const Retrieved&) const = default;
};

struct RetrievalResult {
  NodeRef user, item;
  std::vector<Retrieved> users;  // drawn from the item's neighbors, excluding the user
  std::vector<Retrieved> items;  // drawn from the user's neighbors (or all items), excluding the item
};

/// Top-k most similar users and items for a pair, by descending cosine, ties to the lower index.
RetrievalResult retrieve(const InteractionGraph& graph, const EmbeddingStore& store, NodeRef user,
                         NodeRef item, int k, ItemPool pool = ItemPool::UserNeighbors);

Json retrieval_to_json(const RetrievalResult& r, const InteractionGraph& graph);
RetrievalResult retrieval_from_json(const Json& record, const InteractionGraph& graph);

}  // namespace cfrag
