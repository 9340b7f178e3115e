#include "cfrag/gateway.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "cfrag/log.hpp"
#include "mock_llm.hpp"
#include "test_util.hpp"

using namespace cfrag;
using cfrag::testing::MockLlm;
using cfrag::testing::TempDir;

namespace {

EndpointConfig config_for(const MockLlm& mock, int concurrency = 4) {
  EndpointConfig cfg;
  cfg.base_url = mock.url();
  cfg.model = "mock-model";
  cfg.concurrency = concurrency;
  cfg.backoff_initial_ms = 1;
  cfg.backoff_max_ms = 4;
  cfg.timeout_seconds = 5;
  return cfg;
}

std::vector<GenerationJob> jobs(int n) {
  std::vector<GenerationJob> out;
  for (int k = 0; k < n; ++k)
    out.push_back({"u" + std::to_string(k), "i" + std::to_string(k), "prompt number " + std::to_string(k)});
  return out;
}

std::vector<Json> read_all(const std::filesystem::path& p) {
  std::vector<Json> out;
  read_jsonl(p, [&](const Json& r, std::size_t) { out.push_back(r); });
  return out;
}

}  // namespace

TEST(GenerateTest, DefaultSettingsOnTheWire) {
  MockLlm mock;
  LlmClient client(config_for(mock));
  auto c = client.generate("Hello there.", GenerationSettings{});
  EXPECT_EQ(c.text, "Hello there.");
  EXPECT_EQ(c.retries, 0);
  auto reqs = mock.chat_requests();
  ASSERT_EQ(reqs.size(), 1u);
  EXPECT_EQ(reqs[0]["temperature"], 0);
  EXPECT_EQ(reqs[0]["max_tokens"], 256);
  EXPECT_EQ(reqs[0]["model"], "mock-model");
  ASSERT_EQ(reqs[0]["messages"].size(), 1u);
  EXPECT_EQ(reqs[0]["messages"][0]["role"], "user");
  EXPECT_EQ(reqs[0]["messages"][0]["content"], "Hello there.");
}

TEST(GenerateTest, SystemPromptAndV1Prefix) {
  MockLlm mock;
  auto cfg = config_for(mock);
  cfg.base_url = mock.url() + "/v1/";
  cfg.system_prompt = "Be brief.";
  LlmClient client(cfg);
  EXPECT_EQ(client.generate("x", {}).text, "x");
  auto reqs = mock.chat_requests();
  ASSERT_EQ(reqs[0]["messages"].size(), 2u);
  EXPECT_EQ(reqs[0]["messages"][0]["content"], "Be brief.");
}

TEST(GenerateTest, RetriesTransientStatuses) {
  MockLlm mock;
  mock.script({429});
  LlmClient client(config_for(mock));
  auto c = client.generate("again", {});
  EXPECT_EQ(c.text, "again");
  EXPECT_EQ(c.retries, 1);
  EXPECT_EQ(mock.chat_requests().size(), 2u);

  mock.clear_logs();
  mock.script({500, 503, 429});
  EXPECT_EQ(client.generate("thrice", {}).retries, 3);
  EXPECT_EQ(mock.chat_requests().size(), 4u);
}

TEST(GenerateTest, GivesUpAfterRetryCap) {
  MockLlm mock;
  mock.script({500, 500, 500, 500, 500, 500, 500});
  LlmClient client(config_for(mock));
  try {
    client.generate("never", {});
    FAIL();
  } catch (const GatewayError& e) {
    EXPECT_EQ(e.status(), 500);
  }
  EXPECT_EQ(mock.chat_requests().size(), 6u);  // first try + 5 retries
}

TEST(GenerateTest, ClientErrorsAreNotRetried) {
  MockLlm mock;
  mock.script({400});
  LlmClient client(config_for(mock));
  EXPECT_THROW(client.generate("bad", {}), GatewayError);
  EXPECT_EQ(mock.chat_requests().size(), 1u);
  EXPECT_THROW(client.generate("   ", {}), GatewayError);  // echo trims to empty
}

TEST(GenerateTest, TransportFailure) {
  EndpointConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";
  cfg.max_retries = 2;
  cfg.backoff_initial_ms = 1;
  cfg.backoff_max_ms = 2;
  cfg.timeout_seconds = 1;
  EXPECT_THROW(LlmClient(cfg).generate("x", {}), GatewayError);
}

TEST(GenerateTest, ConfigGuards) {
  EndpointConfig cfg;
  EXPECT_THROW(cfg.validate(), PreconditionError);
  cfg.base_url = "http://localhost";
  cfg.concurrency = 0;
  EXPECT_THROW(cfg.validate(), PreconditionError);
  cfg.concurrency = 1;
  cfg.auth_env = "CFRAG_TEST_SURELY_UNSET_TOKEN";
  EXPECT_THROW(LlmClient{cfg}, PreconditionError);
  GenerationSettings s;
  s.temperature = -1;
  EXPECT_THROW(s.validate(), PreconditionError);
}

TEST(BatchGenerateTest, PreservesOrderUnderConcurrency) {
  TempDir dir("batch_order");
  MockLlm mock;
  mock.set_jitter_us(20000);
  LlmClient client(config_for(mock, 8));
  auto js = jobs(10);
  auto report = batch_generate(client, js, {}, dir / "out.jsonl", dir / "fail.jsonl");
  EXPECT_EQ(report.completed, 10u);
  auto recs = read_all(dir / "out.jsonl");
  ASSERT_EQ(recs.size(), 10u);
  for (int k = 0; k < 10; ++k) {
    EXPECT_EQ(recs[k]["user"], js[k].user);
    EXPECT_EQ(recs[k]["explanation"], js[k].prompt);
  }
  EXPECT_TRUE(read_all(dir / "fail.jsonl").empty());
  EXPECT_FALSE(std::filesystem::exists(dir / "out.jsonl.journal"));
}

TEST(BatchGenerateTest, PartialFailuresThenResume) {
  TempDir dir("batch_fail");
  MockLlm mock;
  mock.poison("number 3", 400);
  mock.poison("number 7", 422);
  LlmClient client(config_for(mock));
  auto js = jobs(10);
  auto report = batch_generate(client, js, {}, dir / "out.jsonl", dir / "fail.jsonl");
  EXPECT_EQ(report.completed, 8u);
  EXPECT_EQ(report.failed, 2u);
  EXPECT_EQ(read_all(dir / "out.jsonl").size(), 8u);
  auto fails = read_all(dir / "fail.jsonl");
  ASSERT_EQ(fails.size(), 2u);
  EXPECT_EQ(fails[0]["user"], "u3");
  EXPECT_EQ(fails[1]["user"], "u7");

  mock.clear_poison();
  mock.clear_logs();
  report = batch_generate(client, js, {}, dir / "out.jsonl", dir / "fail.jsonl");
  EXPECT_EQ(report.skipped, 8u);
  EXPECT_EQ(report.completed, 2u);
  auto sent = mock.chat_requests();
  ASSERT_EQ(sent.size(), 2u);
  for (const auto& r : sent) {
    const auto content = r["messages"][0]["content"].get<std::string>();
    EXPECT_TRUE(content == "prompt number 3" || content == "prompt number 7");
  }
  auto recs = read_all(dir / "out.jsonl");
  ASSERT_EQ(recs.size(), 10u);
  for (int k = 0; k < 10; ++k) EXPECT_EQ(recs[k]["user"], js[k].user);

  mock.clear_logs();
  report = batch_generate(client, js, {}, dir / "out.jsonl", dir / "fail.jsonl");
  EXPECT_EQ(report.skipped, 10u);
  EXPECT_TRUE(mock.chat_requests().empty());
}

TEST(BatchGenerateTest, ResumesFromJournalAfterCrash) {
  TempDir dir("batch_crash");
  MockLlm mock;
  LlmClient client(config_for(mock));
  auto js = jobs(10);
  {
    // a killed run: three finished lines and a torn fourth
    std::ofstream j(dir / "out.jsonl.journal");
    for (int k : {0, 4, 9})
      j << Json{{"user", js[k].user}, {"item", js[k].item}, {"explanation", "old " + std::to_string(k)}}.dump() << "\n";
    j << R"({"user":"u5","item":"i5","expl)";
  }
  auto report = batch_generate(client, js, {}, dir / "out.jsonl", dir / "fail.jsonl");
  EXPECT_EQ(report.skipped, 3u);
  EXPECT_EQ(report.completed, 7u);
  EXPECT_EQ(mock.chat_requests().size(), 7u);
  for (const auto& r : mock.chat_requests()) {
    const auto content = r["messages"][0]["content"].get<std::string>();
    EXPECT_NE(content, "prompt number 0");
    EXPECT_NE(content, "prompt number 4");
    EXPECT_NE(content, "prompt number 9");
  }
  auto recs = read_all(dir / "out.jsonl");
  ASSERT_EQ(recs.size(), 10u);
  EXPECT_EQ(recs[4]["explanation"], "old 4");
  EXPECT_EQ(recs[5]["explanation"], "prompt number 5");
}

TEST(BatchGenerateTest, AllFailingIsAnError) {
  TempDir dir("batch_allfail");
  MockLlm mock;
  mock.poison("prompt", 400);
  LlmClient client(config_for(mock));
  auto js = jobs(3);
  EXPECT_THROW(batch_generate(client, js, {}, dir / "out.jsonl", dir / "fail.jsonl"), GatewayError);
  EXPECT_EQ(read_all(dir / "fail.jsonl").size(), 3u);
  EXPECT_THROW(batch_generate(client, std::span<const GenerationJob>(), {}, dir / "o", dir / "f"),
               PreconditionError);
}

TEST(EmbedTextsTest, NormalizedOrderedAndCached) {
  TempDir dir("embed");
  MockLlm mock;
  LlmClient client(config_for(mock));
  std::vector<std::string> texts{"alpha", "beta", "alpha", "gamma"};
  const auto cache = dir / "texts.jsonl";
  auto v = embed_texts(client, texts, cache);
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v[0], v[2]);
  for (const auto& x : v) {
    double sq = 0;
    for (double a : x) sq += a * a;
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-9);
  }
  auto raw = MockLlm::vector_for("beta", 8);
  double n = 0;
  for (double a : raw) n += a * a;
  EXPECT_NEAR(v[1][3], raw[3] / std::sqrt(n), 1e-12);
  ASSERT_EQ(mock.embedding_requests().size(), 1u);
  EXPECT_EQ(mock.embedding_requests()[0]["input"].size(), 3u);  // duplicates sent once

  mock.clear_logs();
  auto again = embed_texts(client, texts, cache);
  EXPECT_TRUE(mock.embedding_requests().empty());
  EXPECT_EQ(again, v);
  EXPECT_EQ(TextEmbeddingStore::load(cache).provenance(), Provenance::Endpoint);

  mock.set_dim(5);
  std::vector<std::string> fresh{"delta"};
  EXPECT_THROW(embed_texts(client, fresh, cache), GatewayError);
}
