#include "cfrag/embedding.hpp"

#include <algorithm>
#include <cmath>

#include "cfrag/error.hpp"
#include "cfrag/io.hpp"

namespace cfrag {

namespace fs = std::filesystem;

const char* to_string(Provenance p) { return p == Provenance::File ? "file" : "endpoint"; }

void normalize(std::vector<double>& v) {
  double sq = 0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (!(norm > 0) || !std::isfinite(norm)) throw NumericError("zero or non-finite vector");
  // Leave unit vectors untouched so a save/load cycle reproduces them bit for bit.
  if (std::abs(norm - 1.0) <= 1e-12) return;
  for (double& x : v) x /= norm;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw PreconditionError("cosine: dims differ (" + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()) + ")");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  if (!(aa > 0) || !(bb > 0)) throw NumericError("cosine: zero-norm input");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

namespace {

struct Header {
  std::size_t dim = 0;
  Provenance provenance = Provenance::File;
};

Header parse_header(const Json& rec, const std::string& file, std::size_t line) {
  if (!rec.contains("dim") || !rec["dim"].is_number_unsigned() || rec["dim"].get<std::size_t>() == 0)
    throw ParseError(file, line, "first record must be a header {\"dim\": N} with N >= 1");
  Header h;
  h.dim = rec["dim"].get<std::size_t>();
  if (rec.contains("provenance")) {
    const auto p = rec["provenance"].get<std::string>();
    if (p == "file")
      h.provenance = Provenance::File;
    else if (p == "endpoint")
      h.provenance = Provenance::Endpoint;
    else
      throw ParseError(file, line, "unknown provenance '" + p + "'");
  }
  return h;
}

std::vector<double> parse_vector(const Json& rec, std::size_t dim, const std::string& file,
                                 std::size_t line) {
  if (!rec.contains("vector") || !rec["vector"].is_array())
    throw ParseError(file, line, "missing field 'vector'");
  const auto& arr = rec["vector"];
  if (arr.size() != dim)
    throw ParseError(file, line,
                     "inconsistent dim: expected " + std::to_string(dim) + ", got " +
                         std::to_string(arr.size()));
  std::vector<double> v;
  v.reserve(dim);
  for (const auto& x : arr) {
    if (!x.is_number()) throw ParseError(file, line, "non-numeric vector entry");
    v.push_back(x.get<double>());
  }
  try {
    normalize(v);
  } catch (const NumericError&) {
    throw ParseError(file, line, "zero vector");
  }
  return v;
}

Json header_json(std::size_t dim, Provenance p) {
  return Json{{"dim", dim}, {"provenance", to_string(p)}};
}

}  // namespace

EmbeddingStore EmbeddingStore::load(const fs::path& path, const InteractionGraph& graph) {
  const std::string file = path.string();
  EmbeddingStore store;
  store.users_ = graph.user_count();
  store.rows_.assign(graph.node_count(), {});
  bool have_header = false;
  read_jsonl(path, [&](const Json& rec, std::size_t line) {
    if (!have_header) {
      const Header h = parse_header(rec, file, line);
      store.dim_ = h.dim;
      store.provenance_ = h.provenance;
      have_header = true;
      return;
    }
    const std::string id = require_string(rec, "id", file, line);
    const std::string kind = require_string(rec, "kind", file, line);
    std::optional<NodeRef> ref;
    if (kind == "user")
      ref = graph.find_user(id);
    else if (kind == "item")
      ref = graph.find_item(id);
    else
      throw ParseError(file, line, "kind must be \"user\" or \"item\"");
    if (!ref) throw ParseError(file, line, "unknown " + kind + " id '" + id + "'");
    auto& row = store.rows_[graph.row(*ref)];
    if (!row.empty()) throw ParseError(file, line, "duplicate " + kind + " id '" + id + "'");
    row = parse_vector(rec, store.dim_, file, line);
  });
  if (!have_header) throw ParseError(file, 0, "empty embedding file");
  for (std::size_t r = 0; r < store.rows_.size(); ++r) {
    if (store.rows_[r].empty()) {
      const NodeRef ref = graph.node_at_row(r);
      throw PreconditionError(file + ": missing embedding for " +
                              (ref.is_user() ? "user" : "item") + " '" + graph.id(ref) + "'");
    }
  }
  return store;
}

EmbeddingStore EmbeddingStore::from_rows(const InteractionGraph& graph,
                                         std::vector<std::vector<double>> rows, Provenance provenance) {
  if (rows.size() != graph.node_count())
    throw PreconditionError("from_rows: expected one vector per node");
  EmbeddingStore store;
  store.users_ = graph.user_count();
  store.provenance_ = provenance;
  store.dim_ = rows.empty() ? 0 : rows[0].size();
  for (auto& v : rows) {
    if (v.size() != store.dim_ || v.empty()) throw PreconditionError("from_rows: inconsistent dim");
    normalize(v);
  }
  store.rows_ = std::move(rows);
  return store;
}

void EmbeddingStore::save(const fs::path& path, const InteractionGraph& graph) const {
  std::vector<Json> records{header_json(dim_, provenance_)};
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    const NodeRef ref = graph.node_at_row(r);
    records.push_back(
        {{"id", graph.id(ref)}, {"kind", ref.is_user() ? "user" : "item"}, {"vector", rows_[r]}});
  }
  write_jsonl(path, records);
}

std::span<const double> EmbeddingStore::vector(NodeRef ref) const {
  const std::size_t row = ref.is_user() ? ref.index : users_ + ref.index;
  if (row >= rows_.size() || (ref.is_user() && ref.index >= users_))
    throw PreconditionError("no embedding for node " + cfrag::to_string(ref));
  return rows_[row];
}

TextEmbeddingStore TextEmbeddingStore::load(const fs::path& path) {
  const std::string file = path.string();
  TextEmbeddingStore store;
  bool have_header = false;
  read_jsonl(path, [&](const Json& rec, std::size_t line) {
    if (!have_header) {
      const Header h = parse_header(rec, file, line);
      store.dim_ = h.dim;
      store.provenance_ = h.provenance;
      have_header = true;
      return;
    }
    const std::string text = require_string(rec, "text", file, line);
    store.vectors_[text] = parse_vector(rec, store.dim_, file, line);
  });
  if (!have_header) throw ParseError(file, 0, "empty embedding file");
  return store;
}

void TextEmbeddingStore::save(const fs::path& path) const {
  std::vector<Json> records{header_json(dim_, provenance_)};
  for (const auto& [text, v] : vectors_) records.push_back({{"text", text}, {"vector", v}});
  write_jsonl(path, records);
}

void TextEmbeddingStore::insert(const std::string& text, std::vector<double> v) {
  if (dim_ == 0) dim_ = v.size();
  if (v.size() != dim_)
    throw PreconditionError("inconsistent dim: expected " + std::to_string(dim_) + ", got " +
                            std::to_string(v.size()));
  normalize(v);
  vectors_[text] = std::move(v);
}

std::span<const double> TextEmbeddingStore::at(const std::string& text) const {
  auto it = vectors_.find(text);
  if (it == vectors_.end()) throw PreconditionError("missing embedding for text \"" + text + "\"");
  return it->second;
}

}  // namespace cfrag
