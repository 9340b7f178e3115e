#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfrag/embedding.hpp"
#include "cfrag/graph.hpp"
#include "cfrag/io.hpp"
#include "cfrag/retriever.hpp"

namespace cfrag {

/// How the profile side of a reliance score is assembled.
struct RelianceConfig {
  std::string joiner = " ";
  bool include_title = false;  // insert the item title between the two profiles
};

/// user profile + joiner + [item title + joiner] + item profile
std::string profile_text(const InteractionGraph& graph, NodeRef user, NodeRef item,
                         const RelianceConfig& cfg = {});

struct TrainingSample {
  NodeRef user, item;
  std::string explanation;
  double reliance = 0;
};

/// cosine(f(profile_text), f(explanation)) from precomputed text embeddings.
double reliance_score(const InteractionGraph& graph, const ExplanationRecord& record,
                      const TextEmbeddingStore& texts, const RelianceConfig& cfg = {});

std::vector<TrainingSample> score_samples(const InteractionGraph& graph,
                                          std::span<const ExplanationRecord> records,
                                          const TextEmbeddingStore& texts,
                                          const RelianceConfig& cfg = {});

/// ceil((1 - t) * n), ignoring floating-point noise below 1e-9.
std::size_t kept_count(std::size_t n, double t);

/// Sorts by ascending reliance (ties by user, then item index) and keeps kept_count(|D|, t).
std::vector<TrainingSample> prune_dataset(std::vector<TrainingSample> samples, double t);

/// "A -> buys -> B -> bought by -> C ..." over node profiles. The path must start at a user and
/// alternate kinds.
std::string translate_path(const InteractionGraph& graph, std::span<const NodeRef> nodes);

struct PromptProvenance {
  NodeRef user, item;
  std::vector<std::vector<NodeRef>> paths;
  std::vector<NodeRef> users, items;
};

struct PromptSample {
  std::string prompt;
  std::optional<std::string> target;
  PromptProvenance provenance;
};

struct PromptConfig {
  std::size_t max_bytes = 16384;
};

/// Fills the explanation prompt. Empty retrieval or path sections read "None.".
/// Throws PreconditionError when the prompt exceeds cfg.max_bytes.
PromptSample build_prompt(const InteractionGraph& graph, NodeRef user, NodeRef item,
                          const RetrievalResult& retrieval,
                          const std::vector<std::vector<NodeRef>>& paths,
                          const PromptConfig& cfg = {});

Json prompt_to_json(const PromptSample& p, const InteractionGraph& graph);
PromptSample prompt_from_json(const Json& record, const InteractionGraph& graph);

/// Fine-tuning settings handed to the external trainer alongside the exported records.
struct RaftHyperparameters {
  int lora_rank = 8;
  double learning_rate = 2e-5;
  int epochs = 2;
  int max_length = 2048;
  std::string base_model = "llama-2-7b";
  int batch_size = 32;
};

Json to_json(const RaftHyperparameters& h);

/// Writes {"prompt", "response", "meta"} per pruned sample, in pruned order. Returns the count.
/// Throws PreconditionError when a pruned sample has no prompt.
std::size_t export_raft(const InteractionGraph& graph, std::span<const TrainingSample> pruned,
                        std::span<const PromptSample> prompts, const std::filesystem::path& out);

}  // namespace cfrag
