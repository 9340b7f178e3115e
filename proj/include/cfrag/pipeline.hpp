#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfrag/curation.hpp"
#include "cfrag/error.hpp"
#include "cfrag/explainer.hpp"
#include "cfrag/gateway.hpp"
#include "cfrag/gnn.hpp"
#include "cfrag/graph.hpp"
#include "cfrag/io.hpp"
#include "cfrag/retriever.hpp"

namespace cfrag {

inline constexpr const char* kVersion = "0.1.0";

enum class EmbeddingSource { File, Endpoint };

/// Everything a pipeline run needs. Built from a JSON document by parse_run_config.
struct RunConfig {
  DatasetPaths dataset;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  int workers = 4;

  GnnConfig gnn;
  LpTrainConfig train;
  ExplainConfig explain;
  int retrieve_k = 2;
  ItemPool item_pool = ItemPool::UserNeighbors;
  double prune_ratio = 0.7;
  RelianceConfig reliance;
  PromptConfig prompt;

  EmbeddingSource embedding_source = EmbeddingSource::File;
  std::filesystem::path node_embeddings;  // file source only
  std::filesystem::path text_embeddings;  // file source only

  std::optional<EndpointConfig> endpoint;
  GenerationSettings generation;
  RaftHyperparameters raft;
  std::optional<std::filesystem::path> labels;

  /// Canonical JSON echo of the config (paths as given, after resolution).
  Json to_json() const;
  /// Hash of to_json() without output_dir, workers and endpoint.concurrency, which do not change
  /// any artifact.
  std::string hash() const;
};

/// Every problem found while reading or validating a config, one per entry.
class ConfigError : public PreconditionError {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Applies "a.b.c=value" overrides to a config document. `value` is parsed as JSON when it can be,
/// otherwise taken as a string.
void apply_override(Json& doc, const std::string& assignment);

/// Reads and validates a config document. Relative paths resolve against `base_dir`. Unknown keys,
/// wrong types, out-of-range values and missing input files are all reported together.
RunConfig parse_run_config(const Json& doc, const std::filesystem::path& base_dir);

/// The pipeline stages in execution order.
const std::vector<std::string>& stage_names();

/// A stage could not finish; earlier artifacts are left untouched.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage " + stage + " failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct StageOutcome {
  std::string stage;
  enum class Status { Ran, Resumed, Skipped } status = Status::Ran;
};

/// Runs one stage. A stage whose manifest matches the config, its inputs and its outputs is not
/// rerun unless `force` is set. Throws StageError.
StageOutcome run_stage(const std::string& stage, const RunConfig& cfg, bool force = false);

/// Runs every stage in order.
std::vector<StageOutcome> run_all(const RunConfig& cfg, bool force = false);

}  // namespace cfrag
