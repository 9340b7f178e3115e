#include "cfrag/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>

#include "cfrag/curation.hpp"
#include "cfrag/embedding.hpp"
#include "cfrag/error.hpp"
#include "cfrag/explainer.hpp"
#include "cfrag/gnn.hpp"
#include "cfrag/random.hpp"

namespace cfrag {

namespace fs = std::filesystem;

namespace {

std::string trimmed(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t k = 0; k < text.size(); ++k) {
    const char c = text[k];
    if (c != '.' && c != '?' && c != '!') continue;
    if (k + 1 < text.size() && !is_space(text[k + 1])) continue;
    if (auto s = trimmed(text.substr(start, k + 1 - start)); !s.empty()) out.push_back(std::move(s));
    start = k + 1;
  }
  if (auto s = trimmed(text.substr(start)); !s.empty()) out.push_back(std::move(s));
  return out;
}

UsrResult usr(std::span<const std::string> texts) {
  if (texts.empty()) throw PreconditionError("usr: no explanations");
  std::set<std::string> unique;
  UsrResult r;
  for (const auto& t : texts) {
    for (auto& s : split_sentences(t)) {
      ++r.total;
      unique.insert(std::move(s));
    }
  }
  if (r.total == 0) throw PreconditionError("usr: every explanation is empty");
  r.unique = unique.size();
  return r;
}

double roc_auc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw PreconditionError("roc_auc: empty class");
  std::vector<std::pair<double, bool>> all;
  all.reserve(positives.size() + negatives.size());
  for (double p : positives) all.push_back({p, true});
  for (double n : negatives) all.push_back({n, false});
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  // Mann-Whitney U with midranks for ties.
  double rank_sum = 0;
  for (std::size_t k = 0; k < all.size();) {
    std::size_t j = k;
    while (j < all.size() && all[j].first == all[k].first) ++j;
    const double midrank = (static_cast<double>(k + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t m = k; m < j; ++m)
      if (all[m].second) rank_sum += midrank;
    k = j;
  }
  const double np = static_cast<double>(positives.size()), nn = static_cast<double>(negatives.size());
  return (rank_sum - np * (np + 1) / 2) / (np * nn);
}

void SyntheticSpec::validate() const {
  if (communities < 1 || users_per_community < 1 || items_per_community < 1)
    throw PreconditionError("synthetic: community counts and sizes must be >= 1");
  for (double p : {p_in, p_cross})
    if (!(p >= 0 && p <= 1)) throw PreconditionError("synthetic: densities must lie in [0, 1]");
  const auto users = static_cast<std::uint32_t>(communities * users_per_community);
  const auto items = static_cast<std::uint32_t>(communities * items_per_community);
  for (std::size_t n = 0; n < planted.size(); ++n) {
    const auto& nodes = planted[n].nodes;
    const std::string where = "synthetic: planted path " + std::to_string(n) + ": ";
    if (nodes.size() < 2 || !nodes.front().is_user() || !nodes.back().is_item())
      throw PreconditionError(where + "must run from a user to an item");
    std::set<NodeRef> seen;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (k > 0 && nodes[k].kind == nodes[k - 1].kind) throw PreconditionError(where + "kinds must alternate");
      if (nodes[k].index >= (nodes[k].is_user() ? users : items))
        throw PreconditionError(where + "node " + to_string(nodes[k]) + " out of range");
      if (!seen.insert(nodes[k]).second)
        throw PreconditionError(where + "node " + to_string(nodes[k]) + " repeats, path is not simple");
    }
  }
}

namespace {

struct Topic {
  const char* name;
  std::vector<const char*> words;
};

const std::vector<Topic>& topics() {
  static const std::vector<Topic> t{
      {"coffee", {"espresso", "pastries", "latte", "quiet", "roastery", "croissants"}},
      {"spicy", {"sichuan", "chili", "noodles", "dumplings", "hotpot", "peppercorn"}},
      {"music", {"concerts", "jazz", "craft", "beer", "stage", "vinyl"}},
      {"outdoor", {"hiking", "trails", "camping", "kayak", "picnic", "lakeside"}},
      {"books", {"novels", "poetry", "reading", "library", "tea", "armchairs"}},
      {"family", {"playground", "pizza", "kids", "arcade", "desserts", "booths"}}};
  return t;
}

const std::vector<const char*>& filler() {
  static const std::vector<const char*> f{"friendly", "affordable", "busy", "late", "weekend",
                                          "downtown", "cozy", "modern", "classic", "local"};
  return f;
}

template <class T>
const T& pick(const std::vector<T>& xs, Rng& rng) {
  return xs[rng.index(xs.size())];
}

}  // namespace

SyntheticGraph generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "synthetic"));
  const int c = spec.communities;
  const auto n_users = static_cast<std::uint32_t>(c * spec.users_per_community);
  const auto n_items = static_cast<std::uint32_t>(c * spec.items_per_community);

  SyntheticGraph out;
  std::vector<InteractionGraph::UserRecord> users;
  std::vector<InteractionGraph::ItemRecord> items;
  for (std::uint32_t u = 0; u < n_users; ++u) {
    const int comm = static_cast<int>(u) / spec.users_per_community;
    out.user_community.push_back(comm);
    const auto& topic = topics()[static_cast<std::size_t>(comm) % topics().size()];
    std::string profile = std::string("Enjoys ") + pick(topic.words, rng) + " and " + pick(topic.words, rng) +
                          ", prefers " + pick(filler(), rng) + " places";
    users.push_back({"u" + std::to_string(u), std::move(profile)});
  }
  for (std::uint32_t i = 0; i < n_items; ++i) {
    const int comm = static_cast<int>(i) / spec.items_per_community;
    out.item_community.push_back(comm);
    const auto& topic = topics()[static_cast<std::size_t>(comm) % topics().size()];
    std::string title = std::string(topic.name) + " spot " + std::to_string(i);
    title[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(title[0])));
    std::string profile = std::string("A ") + pick(filler(), rng) + " venue for " + pick(topic.words, rng) +
                          " and " + pick(topic.words, rng);
    items.push_back({"i" + std::to_string(i), std::move(title), std::move(profile)});
  }

  std::vector<Interaction> edges;
  for (std::uint32_t u = 0; u < n_users; ++u)
    for (std::uint32_t i = 0; i < n_items; ++i)
      if (rng.bernoulli(out.user_community[u] == out.item_community[i] ? spec.p_in : spec.p_cross))
        edges.push_back({u, i});
  for (const auto& p : spec.planted) {
    for (std::size_t k = 0; k + 1 < p.nodes.size(); ++k) {
      const NodeRef a = p.nodes[k], b = p.nodes[k + 1];
      edges.push_back(a.is_user() ? Interaction{a.index, b.index} : Interaction{b.index, a.index});
    }
  }
  out.graph = InteractionGraph(std::move(users), std::move(items), std::move(edges));
  out.planted = spec.planted;
  return out;
}

std::vector<double> hash_embed(std::string_view text, std::size_t dim) {
  if (dim == 0) throw PreconditionError("hash_embed: dim must be >= 1");
  std::vector<double> v(dim, 0.0);
  std::string token;
  bool any = false;
  auto flush = [&] {
    if (token.empty()) return;
    Rng rng(fnv1a(token));
    for (double& x : v) x += rng.normal();
    token.clear();
    any = true;
  };
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch)))
      token += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    else
      flush();
  }
  flush();
  if (!any) {
    Rng rng(fnv1a(text));
    for (double& x : v) x = rng.normal();
  }
  normalize(v);
  return v;
}

namespace {

Json node_json(NodeRef r, const InteractionGraph& g) {
  return {{"kind", r.is_user() ? "user" : "item"}, {"id", g.id(r)}};
}

std::string explanation_for(const SyntheticGraph& s, NodeRef u, NodeRef i, Rng& rng) {
  const auto& g = s.graph;
  const auto& topic = topics()[static_cast<std::size_t>(s.item_community[i.index]) % topics().size()];
  if (rng.bernoulli(0.5)) {
    // leans on the profiles
    return g.title(i.index) + " suits your profile (" + g.profile(u) + "): " + g.profile(i) + ".";
  }
  // leans on neighbors
  std::vector<std::uint32_t> items;
  for (auto x : g.neighbors(u))
    if (x != i.index) items.push_back(x);
  std::string other = items.empty() ? std::string("similar places") : g.title(items[rng.index(items.size())]);
  return "People who shared your visits to " + other + " kept returning to " + g.title(i.index) +
         ". Its " + pick(topic.words, rng) + " crowd overlaps with yours.";
}

}  // namespace

FixtureFiles write_fixture(const FixtureSpec& spec, const fs::path& dir) {
  if (!(spec.train_fraction > 0 && spec.train_fraction <= 1))
    throw PreconditionError("fixture: train_fraction must lie in (0, 1]");
  if (spec.test_pairs < 0) throw PreconditionError("fixture: test_pairs must be >= 0");
  const SyntheticGraph s = generate_synthetic(spec.graph);
  const auto& g = s.graph;
  Rng rng(derive_seed(spec.graph.seed, "fixture"));

  FixtureFiles f;
  f.dataset = {dir / "users.jsonl", dir / "items.jsonl", dir / "interactions.jsonl",
               dir / "train_explanations.jsonl", dir / "test_explanations.jsonl"};
  f.node_embeddings = dir / "node_embeddings.jsonl";
  f.text_embeddings = dir / "text_embeddings.jsonl";
  f.labels = dir / "planted_paths.jsonl";

  std::vector<Json> users, items, interactions, train, test, labels;
  for (std::uint32_t u = 0; u < g.user_count(); ++u)
    users.push_back({{"id", g.id(NodeRef::user(u))}, {"profile", g.profile(NodeRef::user(u))}});
  for (std::uint32_t i = 0; i < g.item_count(); ++i)
    items.push_back({{"id", g.id(NodeRef::item(i))}, {"title", g.title(i)}, {"profile", g.profile(NodeRef::item(i))}});
  for (const auto& e : g.edges())
    interactions.push_back({{"user", g.id(NodeRef::user(e.user))}, {"item", g.id(NodeRef::item(e.item))}});

  std::set<std::pair<NodeRef, NodeRef>> test_set;
  std::vector<std::pair<NodeRef, NodeRef>> test_pairs;
  for (const auto& p : s.planted) {
    const auto key = std::make_pair(p.nodes.front(), p.nodes.back());
    if (test_set.insert(key).second) test_pairs.push_back(key);
    Json nodes = Json::array();
    for (auto r : p.nodes) nodes.push_back(node_json(r, g));
    labels.push_back({{"user", g.id(key.first)}, {"item", g.id(key.second)}, {"path", nodes}});
  }
  std::vector<std::pair<NodeRef, NodeRef>> train_pairs, rest;
  for (const auto& e : g.edges()) {
    const auto key = std::make_pair(NodeRef::user(e.user), NodeRef::item(e.item));
    if (test_set.count(key)) continue;
    (rng.bernoulli(spec.train_fraction) ? train_pairs : rest).push_back(key);
  }
  for (int n = 0; n < spec.test_pairs && !rest.empty(); ++n) {
    const auto k = rng.index(rest.size());
    test_pairs.push_back(rest[k]);
    rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(k));
  }

  TextEmbeddingStore texts(Provenance::File);
  for (const auto& [u, i] : train_pairs) {
    const std::string text = explanation_for(s, u, i, rng);
    train.push_back({{"user", g.id(u)}, {"item", g.id(i)}, {"explanation", text}});
    texts.insert(text, hash_embed(text, spec.embedding_dim));
    const std::string joined = profile_text(g, u, i);
    texts.insert(joined, hash_embed(joined, spec.embedding_dim));
  }
  for (const auto& [u, i] : test_pairs)
    test.push_back({{"user", g.id(u)}, {"item", g.id(i)}, {"explanation", explanation_for(s, u, i, rng)}});

  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < g.node_count(); ++r) rows.push_back(hash_embed(g.profile(g.node_at_row(r)), spec.embedding_dim));

  write_jsonl(f.dataset.users, users);
  write_jsonl(f.dataset.items, items);
  write_jsonl(f.dataset.interactions, interactions);
  write_jsonl(f.dataset.train_explanations, train);
  write_jsonl(f.dataset.test_explanations, test);
  write_jsonl(f.labels, labels);
  EmbeddingStore::from_rows(g, std::move(rows), Provenance::File).save(f.node_embeddings, g);
  texts.save(f.text_embeddings);
  return f;
}

std::vector<PlantedPath> read_labels(const fs::path& path, const InteractionGraph& graph) {
  std::vector<PlantedPath> out;
  const std::string file = path.string();
  read_jsonl(path, [&](const Json& rec, std::size_t line) {
    if (!rec.contains("path") || !rec["path"].is_array()) throw ParseError(file, line, "missing field 'path'");
    PlantedPath p;
    for (const auto& n : rec["path"]) {
      const auto id = n.value("id", std::string());
      const bool user = n.value("kind", std::string()) == "user";
      auto ref = user ? graph.find_user(id) : graph.find_item(id);
      if (!ref) throw ParseError(file, line, "unknown node id '" + id + "'");
      p.nodes.push_back(*ref);
    }
    out.push_back(std::move(p));
  });
  return out;
}

namespace {

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw IoError(std::string("missing artifact (") + what + "): " + p.string());
}

using EdgeKey = std::pair<std::uint32_t, std::uint32_t>;

void add_path_edges(const std::vector<NodeRef>& nodes, std::set<EdgeKey>& out) {
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const NodeRef a = nodes[k], b = nodes[k + 1];
    out.insert(a.is_user() ? EdgeKey{a.index, b.index} : EdgeKey{b.index, a.index});
  }
}

/// Full-sort top-k used to audit the retrieval artifact.
std::vector<Retrieved> brute_force(const EmbeddingStore& store, NodeRef q, NodeKind kind,
                                   std::vector<std::uint32_t> candidates, int k) {
  std::vector<Retrieved> all;
  for (auto c : candidates) {
    const NodeRef r{kind, c};
    if (r != q) all.push_back({r, cosine(store.vector(q), store.vector(r))});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Retrieved& a, const Retrieved& b) { return a.similarity > b.similarity; });
  if (all.size() > static_cast<std::size_t>(k)) all.resize(static_cast<std::size_t>(k));
  return all;
}

}  // namespace

EvalReport evaluate_run(const InteractionGraph& graph, const EvalInputs& in) {
  require_file(in.checkpoint, "checkpoint");
  require_file(in.paths, "explanation paths");
  require_file(in.retrieval, "retrieval");
  require_file(in.node_embeddings, "node embeddings");
  if (in.generations) require_file(*in.generations, "generations");
  if (in.labels) require_file(*in.labels, "labels");

  EvalReport report;
  report.config_hash = in.config_hash;

  if (in.generations) {
    std::vector<std::string> texts;
    read_jsonl(*in.generations, [&](const Json& r, std::size_t) { texts.push_back(r.at("explanation").get<std::string>()); });
    report.generations = texts.size();
    if (!texts.empty()) report.usr = usr(texts).ratio();
  }

  // Link prediction: every observed edge against as many uniform non-edges.
  const GnnModel model = load_checkpoint(in.checkpoint, &graph);
  const Tensor h = encode(model, graph);
  auto score = [&](std::uint32_t u, std::uint32_t i) {
    const auto a = h.row(graph.row(NodeRef::user(u))), b = h.row(graph.row(NodeRef::item(i)));
    double d = 0;
    for (std::size_t k = 0; k < a.size(); ++k) d += a[k] * b[k];
    return d;
  };
  Rng rng(derive_seed(in.seed, "eval"));
  std::vector<double> pos, neg;
  for (const auto& e : graph.edges()) pos.push_back(score(e.user, e.item));
  for (const auto& e : sample_non_edges(graph, graph.edge_count(), rng)) neg.push_back(score(e.user, e.item));
  report.lp_auc = neg.empty() ? 1.0 : roc_auc(pos, neg);

  // Path recovery against planted labels.
  std::map<std::pair<NodeRef, NodeRef>, std::set<EdgeKey>> predicted;
  read_jsonl(in.paths, [&](const Json& r, std::size_t) {
    ++report.explained_pairs;
    const auto u = graph.find_user(r.at("user").get<std::string>());
    const auto i = graph.find_item(r.at("item").get<std::string>());
    if (!u || !i) throw PreconditionError("explanation dump references an unknown pair");
    auto& edges = predicted[{*u, *i}];
    for (const auto& p : paths_from_json(r, graph)) add_path_edges(p.nodes, edges);
  });
  if (in.labels) {
    std::size_t hit = 0, n_pred = 0, n_true = 0;
    for (const auto& planted : read_labels(*in.labels, graph)) {
      std::set<EdgeKey> truth;
      add_path_edges(planted.nodes, truth);
      n_true += truth.size();
      auto it = predicted.find({planted.nodes.front(), planted.nodes.back()});
      if (it == predicted.end()) continue;
      n_pred += it->second.size();
      for (const auto& e : it->second) hit += truth.count(e);
    }
    if (n_pred > 0) report.path_precision = static_cast<double>(hit) / static_cast<double>(n_pred);
    if (n_true > 0) report.path_recall = static_cast<double>(hit) / static_cast<double>(n_true);
  }

  // Retrieval audit.
  const EmbeddingStore store = EmbeddingStore::load(in.node_embeddings, graph);
  std::size_t agree = 0;
  read_jsonl(in.retrieval, [&](const Json& r, std::size_t) {
    ++report.retrieval_queries;
    const RetrievalResult got = retrieval_from_json(r, graph);
    auto nu = graph.neighbors(got.item), ni = graph.neighbors(got.user);
    std::vector<std::uint32_t> items(ni.begin(), ni.end());
    if (in.item_pool == ItemPool::AllItems) {
      items.resize(graph.item_count());
      for (std::uint32_t k = 0; k < items.size(); ++k) items[k] = k;
    }
    const bool same = got.users == brute_force(store, got.user, NodeKind::User, {nu.begin(), nu.end()}, in.k) &&
                      got.items == brute_force(store, got.item, NodeKind::Item, items, in.k);
    agree += same;
  });
  report.retrieval_agreement =
      report.retrieval_queries ? static_cast<double>(agree) / static_cast<double>(report.retrieval_queries) : 1.0;
  return report;
}

Json to_json(const EvalReport& r) {
  auto opt = [](const std::optional<double>& x) { return x ? Json(*x) : Json(nullptr); };
  return {{"usr", opt(r.usr)},
          {"path_precision", opt(r.path_precision)},
          {"path_recall", opt(r.path_recall)},
          {"lp_auc", r.lp_auc},
          {"retrieval_agreement", r.retrieval_agreement},
          {"explained_pairs", r.explained_pairs},
          {"retrieval_queries", r.retrieval_queries},
          {"generations", r.generations},
          {"config_hash", r.config_hash}};
}

}  // namespace cfrag
