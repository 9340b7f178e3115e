#include "cfrag/retriever.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cfrag/error.hpp"
#include "test_util.hpp"

using namespace cfrag;
using cfrag::testing::graph_from_edges;
using cfrag::testing::random_graph;
using cfrag::testing::TempDir;

namespace {

std::vector<std::vector<double>> random_rows(std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> rows(n, std::vector<double>(dim));
  for (auto& r : rows)
    for (double& x : r) x = rng.normal();
  return rows;
}

/// Independent top-k: full sort of the candidate set.
std::vector<Retrieved> argsort_oracle(const EmbeddingStore& s, NodeRef q, NodeKind kind,
                                      std::vector<std::uint32_t> cands, int k) {
  std::vector<Retrieved> all;
  for (auto c : cands)
    if (NodeRef{kind, c} != q) all.push_back({NodeRef{kind, c}, cosine(s.vector(q), s.vector({kind, c}))});
  std::stable_sort(all.begin(), all.end(),
                   [](const Retrieved& a, const Retrieved& b) { return a.similarity > b.similarity; });
  if (all.size() > static_cast<std::size_t>(k)) all.resize(k);
  return all;
}

}  // namespace

TEST(EmbeddingStoreTest, LoadNormalizesAndValidates) {
  TempDir dir("emb_load");
  auto g = graph_from_edges(1, 1, {{0, 0}});
  const auto good = dir.path() / "emb.jsonl";
  std::ofstream(good) << "{\"dim\": 2}\n"
                      << R"({"id":"u0","kind":"user","vector":[3,4]})" << "\n"
                      << R"({"id":"i0","kind":"item","vector":[0,1]})" << "\n";
  auto store = EmbeddingStore::load(good, g);
  EXPECT_EQ(store.dim(), 2u);
  EXPECT_DOUBLE_EQ(store.vector(NodeRef::user(0))[0], 0.6);
  EXPECT_DOUBLE_EQ(store.vector(NodeRef::user(0))[1], 0.8);
  EXPECT_EQ(store.vector(NodeRef::item(0))[1], 1.0);

  const auto missing = dir.path() / "missing.jsonl";
  std::ofstream(missing) << "{\"dim\": 2}\n" << R"({"id":"u0","kind":"user","vector":[1,0]})" << "\n";
  try {
    EmbeddingStore::load(missing, g);
    FAIL();
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("'i0'"), std::string::npos);
  }

  const auto baddim = dir.path() / "dim.jsonl";
  std::ofstream(baddim) << "{\"dim\": 2}\n" << R"({"id":"u0","kind":"user","vector":[1,0,0]})" << "\n";
  EXPECT_THROW(EmbeddingStore::load(baddim, g), ParseError);

  const auto zero = dir.path() / "zero.jsonl";
  std::ofstream(zero) << "{\"dim\": 2}\n" << R"({"id":"u0","kind":"user","vector":[0,0]})" << "\n";
  EXPECT_THROW(EmbeddingStore::load(zero, g), ParseError);
}

TEST(EmbeddingStoreTest, SaveLoadRoundTrip) {
  TempDir dir("emb_roundtrip");
  Rng rng(4);
  auto g = random_graph(5, 6, 0.4, rng);
  auto store = EmbeddingStore::from_rows(g, random_rows(g.node_count(), 7, rng), Provenance::Endpoint);
  store.save(dir.path() / "e.jsonl", g);
  auto back = EmbeddingStore::load(dir.path() / "e.jsonl", g);
  EXPECT_EQ(back.provenance(), Provenance::Endpoint);
  for (std::size_t r = 0; r < g.node_count(); ++r) {
    const auto a = store.vector(g.node_at_row(r));
    const auto b = back.vector(g.node_at_row(r));
    double sq = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      EXPECT_NEAR(a[k], b[k], 1e-15);
      sq += b[k] * b[k];
    }
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-9);
  }
}

TEST(CosineTest, BasicValues) {
  std::vector<double> a{0.6, 0.8}, b{0.8, -0.6};
  EXPECT_EQ(cosine(a, a), 1.0);
  EXPECT_EQ(cosine(a, b), 0.0);
  std::vector<double> z{0, 0}, c{1, 2, 3};
  EXPECT_THROW(cosine(a, z), NumericError);
  EXPECT_THROW(cosine(a, c), PreconditionError);
}

TEST(CosineTest, MatchesHighPrecisionRecomputation) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 1 + rng.index(64);
    std::vector<double> a(d), b(d);
    for (auto& x : a) x = rng.uniform(-5, 5);
    for (auto& x : b) x = rng.uniform(-5, 5);
    long double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < d; ++k) {
      ab += static_cast<long double>(a[k]) * b[k];
      aa += static_cast<long double>(a[k]) * a[k];
      bb += static_cast<long double>(b[k]) * b[k];
    }
    const double ref = static_cast<double>(ab / std::sqrt(aa * bb));
    EXPECT_NEAR(cosine(a, b), ref, 1e-12);
  }
}

TEST(RetrieveTest, OnlyNeighborIsSelf) {
  auto g = graph_from_edges(1, 1, {{0, 0}});
  auto store = EmbeddingStore::from_rows(g, {{1, 0}, {0, 1}}, Provenance::File);
  auto r = retrieve(g, store, NodeRef::user(0), NodeRef::item(0), 2);
  EXPECT_TRUE(r.users.empty());
  EXPECT_TRUE(r.items.empty());
  EXPECT_THROW(retrieve(g, store, NodeRef::user(0), NodeRef::item(0), 0), PreconditionError);
}

TEST(RetrieveTest, OrdersBySimilarity) {
  // N_i0 = {u0, u1, u2}; sim(u0,u1) = 0.9, sim(u0,u2) = 0.1
  auto g = graph_from_edges(3, 1, {{0, 0}, {1, 0}, {2, 0}});
  const double s1 = std::sqrt(1 - 0.81), s2 = std::sqrt(1 - 0.01);
  auto store = EmbeddingStore::from_rows(g, {{1, 0, 0}, {0.9, s1, 0}, {0.1, 0, s2}, {0, 0, 1}},
                                         Provenance::File);
  auto r = retrieve(g, store, NodeRef::user(0), NodeRef::item(0), 2);
  ASSERT_EQ(r.users.size(), 2u);
  EXPECT_EQ(r.users[0].node, NodeRef::user(1));
  EXPECT_NEAR(r.users[0].similarity, 0.9, 1e-15);
  EXPECT_EQ(r.users[1].node, NodeRef::user(2));
  EXPECT_NEAR(r.users[1].similarity, 0.1, 1e-15);
}

TEST(RetrieveTest, TiesGoToLowerIndex) {
  auto g = graph_from_edges(4, 1, {{0, 0}, {1, 0}, {2, 0}, {3, 0}});
  auto store = EmbeddingStore::from_rows(g, {{1, 0}, {0, 1}, {0, 1}, {0, 1}, {1, 1}}, Provenance::File);
  auto r = retrieve(g, store, NodeRef::user(0), NodeRef::item(0), 2);
  ASSERT_EQ(r.users.size(), 2u);
  EXPECT_EQ(r.users[0].node, NodeRef::user(1));
  EXPECT_EQ(r.users[1].node, NodeRef::user(2));
}

TEST(RetrieveTest, MatchesArgsortOracleAndIsPrefixClosed) {
  Rng rng(31);
  for (int t = 0; t < 200; ++t) {
    auto g = random_graph(2 + rng.index(10), 2 + rng.index(10), 0.5, rng);
    auto rows = random_rows(g.node_count(), 3, rng);
    // duplicate some vectors to force exact ties
    for (std::size_t r = 1; r < rows.size(); ++r)
      if (rng.bernoulli(0.3)) rows[r] = rows[r - 1];
    auto store = EmbeddingStore::from_rows(g, rows, Provenance::File);
    const auto u = NodeRef::user(static_cast<std::uint32_t>(rng.index(g.user_count())));
    const auto i = NodeRef::item(static_cast<std::uint32_t>(rng.index(g.item_count())));
    const auto pool = rng.bernoulli(0.5) ? ItemPool::UserNeighbors : ItemPool::AllItems;
    std::vector<std::uint32_t> all_items(g.item_count());
    for (std::uint32_t k = 0; k < all_items.size(); ++k) all_items[k] = k;
    RetrievalResult prev;
    for (int k = 1; k <= 5; ++k) {
      auto r = retrieve(g, store, u, i, k, pool);
      auto nu = g.neighbors(i), ni = g.neighbors(u);
      EXPECT_EQ(r.users, argsort_oracle(store, u, NodeKind::User, {nu.begin(), nu.end()}, k));
      EXPECT_EQ(r.items, argsort_oracle(store, i, NodeKind::Item,
                                        pool == ItemPool::AllItems
                                            ? all_items
                                            : std::vector<std::uint32_t>(ni.begin(), ni.end()),
                                        k));
      for (const auto& x : r.users) {
        EXPECT_TRUE(g.has_edge(x.node.index, i.index));
        EXPECT_NE(x.node, u);
        EXPECT_LE(std::abs(x.similarity), 1.0);
      }
      if (pool == ItemPool::UserNeighbors)
        for (const auto& x : r.items) EXPECT_TRUE(g.has_edge(u.index, x.node.index));
      if (k > 1) {
        EXPECT_TRUE(std::equal(prev.users.begin(), prev.users.end(), r.users.begin()));
        EXPECT_TRUE(std::equal(prev.items.begin(), prev.items.end(), r.items.begin()));
      }
      prev = r;
    }
  }
}

TEST(RetrieveTest, JsonRoundTrip) {
  Rng rng(2);
  auto g = random_graph(6, 6, 0.5, rng);
  auto store = EmbeddingStore::from_rows(g, random_rows(g.node_count(), 4, rng), Provenance::File);
  auto r = retrieve(g, store, NodeRef::user(0), NodeRef::item(0), 3);
  auto back = retrieval_from_json(retrieval_to_json(r, g), g);
  EXPECT_EQ(back.users, r.users);
  EXPECT_EQ(back.items, r.items);
}
