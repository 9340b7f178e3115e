#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cfrag/eval.hpp"
#include "cfrag/log.hpp"
#include "cfrag/pipeline.hpp"
#include "cfrag/random.hpp"

namespace fs = std::filesystem;
using namespace cfrag;

namespace {

struct PipelineFlags {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  bool force = false;
};

struct SynthFlags {
  std::string out;
  std::uint64_t seed = 0;
  int communities = 2;
  int users = 10;
  int items = 10;
  double p_in = 0.3;
  double p_cross = 0.02;
  int planted = 2;
  int test_pairs = 6;
  double train_fraction = 0.6;
  std::size_t dim = 32;
};

RunConfig load_config(const PipelineFlags& f) {
  const fs::path path = fs::absolute(f.config);
  Json doc = read_json(path);
  for (const auto& o : f.overrides) apply_override(doc, o);
  if (!f.out.empty()) doc["output_dir"] = fs::absolute(f.out).string();
  if (f.seed) doc["seed"] = *f.seed;
  if (f.workers) doc["workers"] = *f.workers;
  return parse_run_config(doc, path.parent_path());
}

/// u -> i -> u' -> i* with the target item in another community, all nodes distinct.
std::vector<PlantedPath> planted_paths(const SynthFlags& f) {
  std::vector<PlantedPath> out;
  if (f.communities < 2 || f.planted == 0) return out;
  Rng rng(derive_seed(f.seed, "synth/planted"));
  const auto per_u = static_cast<std::uint32_t>(f.users), per_i = static_cast<std::uint32_t>(f.items);
  for (int n = 0; n < f.planted && static_cast<std::uint32_t>(n) < per_u; ++n) {
    const std::uint32_t u = static_cast<std::uint32_t>(n);                          // community 0
    const std::uint32_t mid_item = per_i + static_cast<std::uint32_t>(rng.index(per_i));  // community 1
    const std::uint32_t mid_user = per_u + static_cast<std::uint32_t>(rng.index(per_u));
    std::uint32_t target = per_i + static_cast<std::uint32_t>(rng.index(per_i));
    if (target == mid_item) target = per_i + (target - per_i + 1) % per_i;
    if (target == mid_item) continue;  // single-item community
    out.push_back({{NodeRef::user(u), NodeRef::item(mid_item), NodeRef::user(mid_user), NodeRef::item(target)}});
  }
  return out;
}

int synth(const SynthFlags& f) {
  const fs::path root = fs::absolute(f.out);
  FixtureSpec spec;
  spec.graph.communities = f.communities;
  spec.graph.users_per_community = f.users;
  spec.graph.items_per_community = f.items;
  spec.graph.p_in = f.p_in;
  spec.graph.p_cross = f.p_cross;
  spec.graph.seed = f.seed;
  spec.graph.planted = planted_paths(f);
  spec.test_pairs = f.test_pairs;
  spec.train_fraction = f.train_fraction;
  spec.embedding_dim = f.dim;
  write_fixture(spec, root / "data");
  const Json config{
      {"dataset",
       {{"users", "data/users.jsonl"},
        {"items", "data/items.jsonl"},
        {"interactions", "data/interactions.jsonl"},
        {"train_explanations", "data/train_explanations.jsonl"},
        {"test_explanations", "data/test_explanations.jsonl"}}},
      {"embeddings", {{"source", "file"}, {"nodes", "data/node_embeddings.jsonl"}, {"texts", "data/text_embeddings.jsonl"}}},
      {"labels", "data/planted_paths.jsonl"},
      {"output_dir", "run"},
      {"seed", f.seed},
      {"gnn", {{"encoder", "rgcn"}, {"layers", 2}, {"dim", 128}}},
      {"explain", {{"m", 2}, {"hops", 2}, {"k", 2}, {"max_path_length", 5}}},
      {"retrieve", {{"k", 2}}},
      {"prune", {{"ratio", 0.7}}},
      {"generation", {{"temperature", 0}, {"max_tokens", 256}}}};
  write_json(root / "config.json", config);
  std::cout << "wrote fixture and " << (root / "config.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-retrieval explanation pipeline", "cfrag"};
  app.require_subcommand(1);
  std::string level = "info";
  app.add_option("--log-level", level, "debug, info, warn, error or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  PipelineFlags pf;
  std::vector<CLI::App*> pipeline_cmds;
  auto add_pipeline = [&](const std::string& name, const std::string& help) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("-c,--config", pf.config, "JSON config file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--set", pf.overrides, "override a config key, e.g. --set gnn.dim=16");
    cmd->add_option("-o,--out", pf.out, "output directory (overrides output_dir)");
    cmd->add_option("--seed", pf.seed, "global seed");
    cmd->add_option("--workers", pf.workers, "threads for per-pair work");
    cmd->add_flag("--force", pf.force, "rerun even when the stage manifest is up to date");
    pipeline_cmds.push_back(cmd);
  };
  add_pipeline("ingest", "validate and normalize the dataset");
  add_pipeline("train-gnn", "train the link-prediction encoder");
  add_pipeline("explain-paths", "learn edge masks and extract explanation paths");
  add_pipeline("retrieve-nodes", "retrieve similar users and items");
  add_pipeline("prune", "score and prune training samples");
  add_pipeline("build-prompts", "fill the prompt template for train and test pairs");
  add_pipeline("export-raft", "write the fine-tuning dataset");
  add_pipeline("generate", "generate explanations through the configured endpoint");
  add_pipeline("eval", "write the evaluation report");
  add_pipeline("all", "run every stage in order");
  add_pipeline("validate", "check the config and exit");

  SynthFlags sf;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic fixture and config");
  synth_cmd->add_option("-o,--out", sf.out, "fixture directory")->required();
  synth_cmd->add_option("--seed", sf.seed);
  synth_cmd->add_option("--communities", sf.communities)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--users", sf.users, "users per community")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--items", sf.items, "items per community")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--p-in", sf.p_in)->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--p-cross", sf.p_cross)->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--planted", sf.planted, "planted paths")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--test-pairs", sf.test_pairs)->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--train-fraction", sf.train_fraction)->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--dim", sf.dim, "embedding dim")->check(CLI::PositiveNumber);

  if (argc > 1 && argv[1][0] != '-') {
    const std::string first = argv[1];
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == first;
    if (!known) {
      std::cerr << "error: unknown subcommand '" << first << "'\n\n" << app.help();
      return 2;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  const LogLevel levels[] = {LogLevel::Debug, LogLevel::Info, LogLevel::Warn, LogLevel::Error, LogLevel::Off};
  const char* names[] = {"debug", "info", "warn", "error", "off"};
  for (int k = 0; k < 5; ++k)
    if (level == names[k]) set_log_level(levels[k]);

  try {
    if (synth_cmd->parsed()) return synth(sf);
    for (auto* cmd : pipeline_cmds) {
      if (!cmd->parsed()) continue;
      const RunConfig cfg = load_config(pf);
      const std::string name = cmd->get_name();
      if (name == "validate") {
        std::cout << cfg.to_json().dump(2) << "\nconfig hash " << cfg.hash() << "\n";
      } else if (name == "all") {
        run_all(cfg, pf.force);
      } else {
        run_stage(name, cfg, pf.force);
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const StageError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
