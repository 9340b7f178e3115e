#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfrag/autodiff.hpp"
#include "cfrag/error.hpp"
#include "cfrag/graph.hpp"
#include "cfrag/random.hpp"

namespace cfrag {

enum class EncoderKind : std::uint8_t { RGCN = 0, LightGCN = 1 };

std::string to_string(EncoderKind kind);
EncoderKind parse_encoder(const std::string& name);

struct GnnConfig {
  EncoderKind encoder = EncoderKind::RGCN;
  int layers = 2;
  int dim = 128;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const GnnConfig&, const GnnConfig&) = default;
};

/// Link-prediction GNN: a base embedding per node plus, for R-GCN, a self and a neighbor
/// weight matrix per layer. Hidden states are rows, so a layer computes H * W.
struct GnnModel {
  GnnConfig config;
  std::size_t user_count = 0;
  std::size_t item_count = 0;
  std::uint64_t id_mapping_hash = 0;
  Tensor embeddings;                    // (users + items) x dim, graph row order
  std::vector<Tensor> self_weights;     // W0 per layer
  std::vector<Tensor> neighbor_weights; // W1 per layer

  friend bool operator==(const GnnModel&, const GnnModel&) = default;
};

/// Fresh model sized for `graph`. Embeddings ~ U[-1/sqrt(d), 1/sqrt(d)], weights Glorot-uniform.
GnnModel init_model(const InteractionGraph& graph, const GnnConfig& config);

/// Model parameters bound to a tape, either as trainable parameters or as constants.
struct GnnVars {
  Var embeddings;
  std::vector<Var> self_weights;
  std::vector<Var> neighbor_weights;
};

GnnVars bind_model(Tape& tape, const GnnModel& model, bool trainable);

/// Encoder forward pass over `adj` starting from the base rows `h0` (adj.rows x dim).
/// R-GCN: H' = ReLU(mean_agg(H) * W1 + H * W0) per layer, neighbor messages scaled by the edge
/// weights. LightGCN: H' = mean_agg(H) with no transform, output is the mean of layers 0..L.
Var encode_on_tape(Tape& tape, const GnnConfig& config, const GnnVars& vars,
                   const SparseAdjacency& adj, Var h0, std::optional<Var> edge_weights);

/// Final embeddings for every node of the full graph (graph row order).
Tensor encode(const GnnModel& model, const InteractionGraph& graph,
              std::optional<std::span<const double>> edge_weights = std::nullopt);

/// Final embeddings for every node of an ego-graph (local id order). Weights index ego edges.
Tensor encode(const GnnModel& model, const EgoGraph& ego,
              std::optional<std::span<const double>> edge_weights = std::nullopt);

/// sigma(h_u . h_i) on the full graph.
double predict_link(const GnnModel& model, const InteractionGraph& graph, NodeRef user,
                    NodeRef item, std::optional<std::span<const double>> edge_weights = std::nullopt);

/// sigma(h_u . h_i) with message passing restricted to the ego-graph.
double predict_link(const GnnModel& model, const EgoGraph& ego, NodeRef user, NodeRef item,
                    std::optional<std::span<const double>> edge_weights = std::nullopt);

enum class OptimizerKind { GradientDescent, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);
std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr);

struct LpTrainConfig {
  int epochs = 200;
  double learning_rate = 0.003;
  int negatives = 1;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  /// Coefficient of 0.5 * ||theta||^2 over embeddings and weights, added to the BCE loss.
  double weight_decay = 1e-3;

  void validate() const;
};

struct LpTrainResult {
  GnnModel model;
  std::vector<double> loss_trace;  // loss at the start of each epoch
};

/// Full-graph BCE training: observed edges against uniformly sampled non-edges
/// (`negatives` per positive, resampled each epoch). Throws NumericError naming the epoch
/// if the loss stops being finite.
LpTrainResult train_lp(GnnModel model, const InteractionGraph& graph, const LpTrainConfig& cfg);

/// Differentiable LP loss for a fixed set of positive and negative pairs (gradient checks use it).
Var lp_loss_on_tape(Tape& tape, const GnnConfig& config, const GnnVars& vars,
                    const SparseAdjacency& adj, std::span<const Interaction> positives,
                    std::span<const Interaction> negatives, std::size_t user_count);

/// Uniform non-edges, `count` of them, drawn with replacement.
std::vector<Interaction> sample_non_edges(const InteractionGraph& graph, std::size_t count,
                                          Rng& rng);

class CheckpointError : public Error {
 public:
  enum class Kind { Version, Corrupt, IdMapping };
  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const GnnModel& model, const std::filesystem::path& path);

/// Reads a checkpoint; when `graph` is given, its node counts and id-mapping hash must match.
GnnModel load_checkpoint(const std::filesystem::path& path,
                         const InteractionGraph* graph = nullptr);

}  // namespace cfrag
