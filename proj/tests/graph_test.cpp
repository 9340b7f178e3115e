#include "cfrag/graph.hpp"

#include <gtest/gtest.h>

#include <fstream>

#include "cfrag/error.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cfrag;
using cfrag::testing::graph_from_edges;
using cfrag::testing::random_graph;
using cfrag::testing::TempDir;

namespace {

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << "\n";
}

std::set<NodeRef> node_set(const EgoGraph& ego) { return {ego.nodes().begin(), ego.nodes().end()}; }

}  // namespace

// ---------------------------------------------------------------------------
// Ingest

class IngestTest : public ::testing::Test {
 protected:
  TempDir dir{"ingest"};
  DatasetPaths paths() const {
    return {dir / "users.jsonl", dir / "items.jsonl", dir / "interactions.jsonl",
            dir / "train.jsonl", dir / "test.jsonl"};
  }
  void write_nodes(int users, int items) {
    std::vector<std::string> u, i;
    for (int k = 0; k < users; ++k)
      u.push_back(R"({"id": "u)" + std::to_string(k) + R"(", "profile": "P)" + std::to_string(k) + "\"}");
    for (int k = 0; k < items; ++k)
      i.push_back(R"({"id": "i)" + std::to_string(k) + R"(", "title": "T", "profile": "Q)" +
                  std::to_string(k) + "\"}");
    write_lines(dir / "users.jsonl", u);
    write_lines(dir / "items.jsonl", i);
    write_lines(dir / "train.jsonl", {});
    write_lines(dir / "test.jsonl", {});
  }
};

TEST_F(IngestTest, DeduplicatesInteractions) {
  write_nodes(3, 2);
  write_lines(dir / "interactions.jsonl", {R"({"user": "u0", "item": "i0"})",
                                           R"({"user": "u0", "item": "i0"})",
                                           R"({"user": "u1", "item": "i1"})"});
  auto ds = ingest_dataset(paths());
  EXPECT_EQ(ds.graph.user_count(), 3u);
  EXPECT_EQ(ds.graph.item_count(), 2u);
  EXPECT_EQ(ds.graph.edge_count(), 2u);
  EXPECT_EQ(ds.duplicate_interactions, 1u);
  EXPECT_EQ(ds.graph.profile(NodeRef::user(2)), "P2");
}

TEST_F(IngestTest, EmptyInteractionSetIsRejected) {
  write_nodes(1, 1);
  write_lines(dir / "interactions.jsonl", {});
  EXPECT_THROW(ingest_dataset(paths()), PreconditionError);
}

TEST_F(IngestTest, MalformedRecordReportsLine) {
  write_nodes(2, 2);
  write_lines(dir / "interactions.jsonl", {R"({"user": "u0", "item": "i0"})", R"({"user": "u1", )"});
  try {
    ingest_dataset(paths());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST_F(IngestTest, UnknownNodeIsRejected) {
  write_nodes(2, 2);
  write_lines(dir / "interactions.jsonl", {R"({"user": "u0", "item": "i9"})"});
  try {
    ingest_dataset(paths());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("i9"), std::string::npos);
    EXPECT_EQ(e.line(), 1u);
  }
}

TEST_F(IngestTest, OverlappingTrainTestPairsRejected) {
  write_nodes(2, 2);
  write_lines(dir / "interactions.jsonl", {R"({"user": "u0", "item": "i0"})"});
  write_lines(dir / "train.jsonl", {R"({"user": "u0", "item": "i0", "explanation": "a"})"});
  write_lines(dir / "test.jsonl", {R"({"user": "u0", "item": "i0", "explanation": "b"})"});
  EXPECT_THROW(ingest_dataset(paths()), PreconditionError);
}

TEST_F(IngestTest, MissingFieldIsParseError) {
  write_nodes(1, 1);
  write_lines(dir / "users.jsonl", {R"({"id": "u0"})"});
  write_lines(dir / "interactions.jsonl", {R"({"user": "u0", "item": "i0"})"});
  EXPECT_THROW(ingest_dataset(paths()), ParseError);
}

// ---------------------------------------------------------------------------
// Graph invariants

TEST(InteractionGraphTest, SymmetricSortedAdjacency) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = random_graph(1 + rng.index(30), 1 + rng.index(30), 0.2, rng);
    for (std::uint32_t u = 0; u < g.user_count(); ++u) {
      auto n = g.neighbors(NodeRef::user(u));
      EXPECT_TRUE(std::is_sorted(n.begin(), n.end()));
      for (auto i : n) {
        auto back = g.neighbors(NodeRef::item(i));
        EXPECT_TRUE(std::binary_search(back.begin(), back.end(), u));
      }
    }
    std::size_t total = 0;
    for (std::uint32_t i = 0; i < g.item_count(); ++i) total += g.degree(NodeRef::item(i));
    EXPECT_EQ(total, g.edge_count());
    // every incidence in the message-passing view joins a user row and an item row
    const auto& adj = g.adjacency();
    for (std::size_t r = 0; r < adj.rows; ++r)
      for (auto n : adj.neighbors_of(r)) EXPECT_NE(r < g.user_count(), n < g.user_count());
  }
}

TEST(InteractionGraphTest, DeterministicConstruction) {
  std::vector<Interaction> a{{2, 1}, {0, 0}, {1, 1}, {0, 1}};
  std::vector<Interaction> b{{0, 1}, {1, 1}, {0, 0}, {2, 1}, {0, 0}};
  auto g1 = graph_from_edges(3, 2, a);
  auto g2 = graph_from_edges(3, 2, b);
  EXPECT_EQ(g1.edges(), g2.edges());
  EXPECT_EQ(g1.adjacency().neighbor, g2.adjacency().neighbor);
  EXPECT_EQ(g1.id_mapping_hash(), g2.id_mapping_hash());
}

TEST(InteractionGraphTest, RejectsOutOfRangeInteraction) {
  EXPECT_THROW(graph_from_edges(1, 1, {{0, 3}}), PreconditionError);
}

// ---------------------------------------------------------------------------
// Ego-graphs

TEST(EgoGraphTest, ChainPullsBothBalls) {
  // u0 - i0 - u1 - i1
  auto g = graph_from_edges(2, 2, {{0, 0}, {1, 0}, {1, 1}});
  auto ego = ego_graph(g, NodeRef::user(0), NodeRef::item(1), 1);
  std::set<NodeRef> expect{NodeRef::user(0), NodeRef::user(1), NodeRef::item(0), NodeRef::item(1)};
  EXPECT_EQ(node_set(ego), expect);
  EXPECT_EQ(ego.edge_count(), 3u);
}

TEST(EgoGraphTest, IsolatedCenter) {
  auto g = graph_from_edges(2, 2, {{1, 1}});
  auto ego = ego_graph(g, NodeRef::user(0), NodeRef::item(0), 2);
  EXPECT_EQ(ego.node_count(), 2u);
  EXPECT_EQ(ego.edge_count(), 0u);
}

TEST(EgoGraphTest, WrongKindsAndMissingNodes) {
  auto g = graph_from_edges(2, 2, {{0, 0}});
  EXPECT_THROW(ego_graph(g, NodeRef::item(0), NodeRef::item(1), 1), PreconditionError);
  EXPECT_THROW(ego_graph(g, NodeRef::user(0), NodeRef::user(1), 1), PreconditionError);
  EXPECT_THROW(ego_graph(g, NodeRef::user(5), NodeRef::item(0), 1), PreconditionError);
  EXPECT_THROW(ego_graph(g, NodeRef::user(0), NodeRef::item(0), 0), PreconditionError);
}

TEST(EgoGraphTest, MatchesBruteForceBfsAndIsMonotone) {
  Rng rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    auto g = random_graph(1 + rng.index(100), 1 + rng.index(100), 0.03, rng);
    const NodeRef u = NodeRef::user(static_cast<std::uint32_t>(rng.index(g.user_count())));
    const NodeRef i = NodeRef::item(static_cast<std::uint32_t>(rng.index(g.item_count())));
    std::set<NodeRef> prev;
    for (int L = 1; L <= 3; ++L) {
      auto ego = ego_graph(g, u, i, L);
      auto nodes = node_set(ego);
      EXPECT_EQ(nodes, oracle::ego_nodes(g, u, i, L));
      EXPECT_TRUE(std::includes(nodes.begin(), nodes.end(), prev.begin(), prev.end()));
      // induced: every parent edge between members is present
      std::size_t induced = 0;
      for (const auto& e : g.edges())
        if (nodes.count(NodeRef::user(e.user)) && nodes.count(NodeRef::item(e.item))) ++induced;
      EXPECT_EQ(ego.edge_count(), induced);
      for (std::uint32_t v = 0; v < ego.node_count(); ++v)
        EXPECT_EQ(*ego.local_id(ego.global(v)), v);
      prev = nodes;
    }
  }
}

TEST(EgoGraphTest, WithoutCenterEdge) {
  auto g = graph_from_edges(2, 2, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  auto ego = ego_graph(g, NodeRef::user(0), NodeRef::item(0), 1);
  auto cut = ego.without_center_edge();
  EXPECT_EQ(cut.edge_count(), ego.edge_count() - 1);
  EXPECT_FALSE(cut.edge_between(cut.center_user_local(), cut.center_item_local()).has_value());
  EXPECT_EQ(cut.node_count(), ego.node_count());
}

// ---------------------------------------------------------------------------
// m-core pruning

TEST(MCoreTest, FourCycleUnchanged) {
  auto g = graph_from_edges(2, 2, {{0, 0}, {1, 0}, {1, 1}, {0, 1}});
  auto ego = ego_graph(g, NodeRef::user(0), NodeRef::item(1), 2);
  auto pruned = m_core_prune(ego, 2);
  EXPECT_EQ(pruned.node_count(), 4u);
  EXPECT_EQ(pruned.edge_count(), 4u);
}

TEST(MCoreTest, PathFallsBackToInput) {
  // u0 - i0 - u1; the core empties, so the unpruned ego comes back.
  auto g = graph_from_edges(2, 1, {{0, 0}, {1, 0}});
  auto ego = ego_graph(g, NodeRef::user(0), NodeRef::item(0), 2);
  EXPECT_TRUE(m_core_drops_center(ego, 2));
  auto pruned = m_core_prune(ego, 2);
  EXPECT_EQ(pruned.node_count(), ego.node_count());
  EXPECT_EQ(pruned.edge_count(), ego.edge_count());
}

TEST(MCoreTest, ZeroIsIdentityAndNegativeRejected) {
  Rng rng(5);
  auto g = random_graph(10, 10, 0.2, rng);
  auto ego = ego_graph(g, NodeRef::user(0), NodeRef::item(0), 2);
  EXPECT_EQ(m_core_prune(ego, 0).edge_count(), ego.edge_count());
  EXPECT_THROW(m_core_prune(ego, -1), PreconditionError);
}

TEST(MCoreTest, MatchesIterativeOracleAndIsMaximal) {
  Rng rng(3);
  int compared = 0;
  for (int trial = 0; trial < 80; ++trial) {
    auto g = random_graph(1 + rng.index(60), 1 + rng.index(60), 0.08, rng);
    const NodeRef u = NodeRef::user(static_cast<std::uint32_t>(rng.index(g.user_count())));
    const NodeRef i = NodeRef::item(static_cast<std::uint32_t>(rng.index(g.item_count())));
    auto ego = ego_graph(g, u, i, 2);
    const int m = 1 + static_cast<int>(rng.index(3));
    oracle::EdgeList edges;
    for (const auto& e : ego.edges()) edges.emplace_back(ego.global(e.user), ego.global(e.item));
    auto expected = oracle::m_core(node_set(ego), edges, m);
    auto pruned = m_core_prune(ego, m);
    if (!expected.count(u) || !expected.count(i)) {
      EXPECT_EQ(node_set(pruned), node_set(ego));
      continue;
    }
    ++compared;
    EXPECT_EQ(node_set(pruned), expected);
    for (std::uint32_t v = 0; v < pruned.node_count(); ++v) EXPECT_GE(pruned.degree(v), static_cast<std::size_t>(m));
    // maximality: any removed node has degree < m once added back
    for (NodeRef n : node_set(ego)) {
      if (expected.count(n)) continue;
      int d = 0;
      for (const auto& [a, b] : edges)
        if ((a == n && expected.count(b)) || (b == n && expected.count(a))) ++d;
      EXPECT_LT(d, m);
    }
  }
  EXPECT_GT(compared, 5);
}
