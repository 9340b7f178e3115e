#include "cfrag/curation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cfrag/error.hpp"

namespace cfrag {

std::string profile_text(const InteractionGraph& graph, NodeRef user, NodeRef item,
                         const RelianceConfig& cfg) {
  std::string s = graph.profile(user);
  s += cfg.joiner;
  if (cfg.include_title) {
    s += graph.title(item.index);
    s += cfg.joiner;
  }
  s += graph.profile(item);
  return s;
}

double reliance_score(const InteractionGraph& graph, const ExplanationRecord& record,
                      const TextEmbeddingStore& texts, const RelianceConfig& cfg) {
  return cosine(texts.at(profile_text(graph, record.user, record.item, cfg)), texts.at(record.text));
}

std::vector<TrainingSample> score_samples(const InteractionGraph& graph,
                                          std::span<const ExplanationRecord> records,
                                          const TextEmbeddingStore& texts, const RelianceConfig& cfg) {
  std::vector<TrainingSample> out;
  out.reserve(records.size());
  for (const auto& r : records)
    out.push_back({r.user, r.item, r.text, reliance_score(graph, r, texts, cfg)});
  return out;
}

std::size_t kept_count(std::size_t n, double t) {
  if (!(t >= 0 && t < 1)) throw PreconditionError("pruning ratio must lie in [0, 1)");
  // Snap values within rounding noise of an integer: (1 - 0.7) * 10 is 3.0000000000000004.
  const double x = (1.0 - t) * static_cast<double>(n);
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, x)) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(x));
}

std::vector<TrainingSample> prune_dataset(std::vector<TrainingSample> samples, double t) {
  const std::size_t keep = kept_count(samples.size(), t);
  std::sort(samples.begin(), samples.end(), [](const TrainingSample& a, const TrainingSample& b) {
    if (a.reliance != b.reliance) return a.reliance < b.reliance;
    if (a.user != b.user) return a.user < b.user;
    return a.item < b.item;
  });
  samples.resize(keep);
  return samples;
}

std::string translate_path(const InteractionGraph& graph, std::span<const NodeRef> nodes) {
  if (nodes.empty()) throw PreconditionError("translate_path: empty path");
  if (!nodes[0].is_user()) throw PreconditionError("translate_path: path must start at a user");
  std::string s = graph.profile(nodes[0]);
  for (std::size_t k = 1; k < nodes.size(); ++k) {
    if (nodes[k].kind == nodes[k - 1].kind)
      throw PreconditionError("translate_path: path does not alternate at position " + std::to_string(k));
    s += nodes[k].is_item() ? " -> buys -> " : " -> bought by -> ";
    s += graph.profile(nodes[k]);
  }
  return s;
}

namespace {

std::string join_or_none(const std::vector<std::string>& parts) {
  if (parts.empty()) return "None";
  std::string s;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (k) s += ", ";
    s += parts[k];
  }
  return s;
}

Json refs_json(const std::vector<NodeRef>& refs, const InteractionGraph& graph) {
  Json arr = Json::array();
  for (auto r : refs) arr.push_back(graph.id(r));
  return arr;
}

Json path_json(const std::vector<NodeRef>& path, const InteractionGraph& graph) {
  Json arr = Json::array();
  for (auto r : path) arr.push_back({{"kind", r.is_user() ? "user" : "item"}, {"id", graph.id(r)}});
  return arr;
}

NodeRef lookup(const InteractionGraph& graph, const std::string& id, bool user) {
  auto ref = user ? graph.find_user(id) : graph.find_item(id);
  if (!ref) throw PreconditionError("unknown " + std::string(user ? "user" : "item") + " id '" + id + "'");
  return *ref;
}

Json provenance_json(const PromptProvenance& p, const InteractionGraph& graph) {
  Json paths = Json::array();
  for (const auto& path : p.paths) paths.push_back(path_json(path, graph));
  return {{"user", graph.id(p.user)},
          {"item", graph.id(p.item)},
          {"paths", paths},
          {"users", refs_json(p.users, graph)},
          {"items", refs_json(p.items, graph)}};
}

}  // namespace

PromptSample build_prompt(const InteractionGraph& graph, NodeRef user, NodeRef item,
                          const RetrievalResult& retrieval,
                          const std::vector<std::vector<NodeRef>>& paths, const PromptConfig& cfg) {
  if (!user.is_user() || !item.is_item()) throw PreconditionError("build_prompt: expected a (user, item) pair");
  PromptSample out;
  out.provenance.user = user;
  out.provenance.item = item;
  out.provenance.paths = paths;

  std::vector<std::string> user_texts, item_texts, path_texts;
  for (const auto& r : retrieval.users) {
    user_texts.push_back(graph.profile(r.node));
    out.provenance.users.push_back(r.node);
  }
  for (const auto& r : retrieval.items) {
    item_texts.push_back(graph.profile(r.node));
    out.provenance.items.push_back(r.node);
  }
  for (const auto& p : paths) path_texts.push_back(translate_path(graph, p));

  std::string& s = out.prompt;
  s += "Given the item title, item profile, and user profile, please explain why the user would "
       "enjoy this item. Item title: ";
  s += graph.title(item.index);
  s += ". Item profile: ";
  s += graph.profile(item);
  s += ". User profile: ";
  s += graph.profile(user);
  s += ". For the user-item pair, here are some related users and items. Users: ";
  s += join_or_none(user_texts);
  s += ". Items: ";
  s += join_or_none(item_texts);
  s += ". For the given user-item pair, here are several related paths connecting users and items "
       "through their interactions. ";
  s += path_texts.empty() ? std::string("None.") : join_or_none(path_texts);
  s += "\nExplanations:";

  if (s.size() > cfg.max_bytes)
    throw PreconditionError("prompt for (" + graph.id(user) + ", " + graph.id(item) + ") is " +
                            std::to_string(s.size()) + " bytes, cap is " + std::to_string(cfg.max_bytes));
  return out;
}

Json prompt_to_json(const PromptSample& p, const InteractionGraph& graph) {
  Json j{{"prompt", p.prompt}, {"meta", provenance_json(p.provenance, graph)}};
  j["target"] = p.target ? Json(*p.target) : Json(nullptr);
  return j;
}

PromptSample prompt_from_json(const Json& record, const InteractionGraph& graph) {
  PromptSample p;
  p.prompt = record.at("prompt").get<std::string>();
  if (record.contains("target") && !record["target"].is_null()) p.target = record["target"].get<std::string>();
  const Json& meta = record.at("meta");
  p.provenance.user = lookup(graph, meta.at("user").get<std::string>(), true);
  p.provenance.item = lookup(graph, meta.at("item").get<std::string>(), false);
  for (const auto& id : meta.at("users")) p.provenance.users.push_back(lookup(graph, id.get<std::string>(), true));
  for (const auto& id : meta.at("items")) p.provenance.items.push_back(lookup(graph, id.get<std::string>(), false));
  for (const auto& path : meta.at("paths")) {
    std::vector<NodeRef> nodes;
    for (const auto& n : path)
      nodes.push_back(lookup(graph, n.at("id").get<std::string>(), n.at("kind").get<std::string>() == "user"));
    p.provenance.paths.push_back(std::move(nodes));
  }
  return p;
}

Json to_json(const RaftHyperparameters& h) {
  return {{"lora_rank", h.lora_rank},   {"learning_rate", h.learning_rate}, {"epochs", h.epochs},
          {"max_length", h.max_length}, {"base_model", h.base_model},       {"batch_size", h.batch_size}};
}

std::size_t export_raft(const InteractionGraph& graph, std::span<const TrainingSample> pruned,
                        std::span<const PromptSample> prompts, const std::filesystem::path& out) {
  std::map<std::pair<NodeRef, NodeRef>, const PromptSample*> by_pair;
  for (const auto& p : prompts) by_pair[{p.provenance.user, p.provenance.item}] = &p;
  std::vector<Json> records;
  records.reserve(pruned.size());
  for (const auto& s : pruned) {
    auto it = by_pair.find({s.user, s.item});
    if (it == by_pair.end())
      throw PreconditionError("no prompt built for pruned sample (" + graph.id(s.user) + ", " +
                              graph.id(s.item) + ")");
    Json meta = provenance_json(it->second->provenance, graph);
    meta["reliance"] = s.reliance;
    records.push_back({{"prompt", it->second->prompt}, {"response", s.explanation}, {"meta", meta}});
  }
  write_jsonl(out, records);
  return records.size();
}

}  // namespace cfrag
