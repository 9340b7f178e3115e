#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfrag/graph.hpp"

namespace cfrag {

/// Where a set of vectors came from; written to the file header.
enum class Provenance { File, Endpoint };

const char* to_string(Provenance p);

/// Scales `v` to unit length in place (vectors already within 1e-12 of unit length are kept as
/// is). Throws NumericError on a zero or non-finite vector.
void normalize(std::vector<double>& v);

/// a.b / (|a| |b|), clamped to [-1, 1]. Throws on unequal dims or a zero-norm input.
double cosine(std::span<const double> a, std::span<const double> b);

/// Unit-length profile embedding for every user and item of a graph.
///
/// File format: a header line {"dim": N, "provenance": "file"|"endpoint"} followed by one record
/// per node {"id": string, "kind": "user"|"item", "vector": [N floats]}.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;

  /// Reads and normalizes a node embedding file. Every node of `graph` must be present.
  static EmbeddingStore load(const std::filesystem::path& path, const InteractionGraph& graph);

  /// Builds a store from vectors indexed by graph row (users first, then items).
  static EmbeddingStore from_rows(const InteractionGraph& graph, std::vector<std::vector<double>> rows,
                                  Provenance provenance);

  void save(const std::filesystem::path& path, const InteractionGraph& graph) const;

  std::size_t dim() const { return dim_; }
  Provenance provenance() const { return provenance_; }
  std::span<const double> vector(NodeRef ref) const;

 private:
  std::size_t dim_ = 0;
  std::size_t users_ = 0;
  Provenance provenance_ = Provenance::File;
  std::vector<std::vector<double>> rows_;
};

/// Unit-length embeddings keyed by exact text.
///
/// Same header as the node format; records are {"text": string, "vector": [N floats]}.
class TextEmbeddingStore {
 public:
  TextEmbeddingStore() = default;
  explicit TextEmbeddingStore(Provenance provenance) : provenance_(provenance) {}

  static TextEmbeddingStore load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Normalizes and stores `v`. The first insertion fixes the dim.
  void insert(const std::string& text, std::vector<double> v);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  Provenance provenance() const { return provenance_; }
  bool contains(const std::string& text) const { return vectors_.count(text) > 0; }

  /// Throws PreconditionError naming the text when it has no embedding.
  std::span<const double> at(const std::string& text) const;

 private:
  std::size_t dim_ = 0;
  Provenance provenance_ = Provenance::File;
  std::map<std::string, std::vector<double>> vectors_;
};

}  // namespace cfrag
