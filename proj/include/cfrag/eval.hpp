#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfrag/graph.hpp"
#include "cfrag/io.hpp"
#include "cfrag/retriever.hpp"

namespace cfrag {

/// Sentences of `text`: a sentence ends at '.', '?' or '!' followed by whitespace or the end of the
/// text. Each sentence keeps its terminator and is trimmed; trailing text without a terminator
/// counts as a final sentence.
std::vector<std::string> split_sentences(std::string_view text);

struct UsrResult {
  std::size_t unique = 0;
  std::size_t total = 0;
  double ratio() const { return static_cast<double>(unique) / static_cast<double>(total); }
};

/// Unique sentences over total sentences across all texts. Throws PreconditionError when the
/// list is empty or holds no sentence at all.
UsrResult usr(std::span<const std::string> texts);

/// Area under the ROC curve of positive vs negative scores; ties count one half.
double roc_auc(std::span<const double> positives, std::span<const double> negatives);

struct PlantedPath {
  std::vector<NodeRef> nodes;  // alternating, user first, item last
};

struct SyntheticSpec {
  int communities = 2;
  int users_per_community = 20;
  int items_per_community = 20;
  double p_in = 0.3;
  double p_cross = 0.01;
  std::vector<PlantedPath> planted;
  std::uint64_t seed = 0;

  /// Throws PreconditionError on bad sizes, densities, or an infeasible planted path.
  void validate() const;
};

struct SyntheticGraph {
  InteractionGraph graph;
  std::vector<int> user_community, item_community;
  std::vector<PlantedPath> planted;
};

/// Block-random bipartite graph; user u belongs to community u / users_per_community (likewise
/// items). Planted path edges are added on top. Profiles are drawn from per-community topics.
SyntheticGraph generate_synthetic(const SyntheticSpec& spec);

/// Deterministic bag-of-words embedding: each lower-cased token maps to a fixed Gaussian vector,
/// and the text's vector is their normalized sum.
std::vector<double> hash_embed(std::string_view text, std::size_t dim);

struct FixtureSpec {
  SyntheticSpec graph;
  double train_fraction = 0.5;  // share of interactions given a training explanation
  int test_pairs = 8;
  std::size_t embedding_dim = 32;
};

struct FixtureFiles {
  DatasetPaths dataset;
  std::filesystem::path node_embeddings;
  std::filesystem::path text_embeddings;
  std::filesystem::path labels;
};

/// Writes a complete dataset under `dir`: record files, node and text embeddings and the planted
/// path labels. Planted pairs always land in the test split.
FixtureFiles write_fixture(const FixtureSpec& spec, const std::filesystem::path& dir);

std::vector<PlantedPath> read_labels(const std::filesystem::path& path, const InteractionGraph& graph);

struct EvalInputs {
  std::filesystem::path checkpoint;
  std::filesystem::path paths;  // explanation dumps
  std::filesystem::path retrieval;
  std::filesystem::path node_embeddings;
  std::optional<std::filesystem::path> generations;
  std::optional<std::filesystem::path> labels;
  int k = 2;
  ItemPool item_pool = ItemPool::UserNeighbors;
  std::string config_hash;
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::optional<double> usr;
  std::optional<double> path_precision, path_recall;
  double lp_auc = 0;
  double retrieval_agreement = 0;
  std::size_t explained_pairs = 0, retrieval_queries = 0, generations = 0;
  std::string config_hash;
};

/// Recomputes every metric from artifacts on disk. Throws IoError naming a missing artifact.
EvalReport evaluate_run(const InteractionGraph& graph, const EvalInputs& in);

Json to_json(const EvalReport& r);

}  // namespace cfrag
