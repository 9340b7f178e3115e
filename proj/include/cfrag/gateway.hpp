#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfrag/embedding.hpp"
#include "cfrag/error.hpp"
#include "cfrag/io.hpp"

namespace cfrag {

/// OpenAI-compatible endpoint. `base_url` is scheme://host[:port][/prefix]; routes are
/// prefix + "/v1/chat/completions" and prefix + "/v1/embeddings", with the "/v1" dropped when the
/// prefix already ends in it.
struct EndpointConfig {
  std::string base_url;
  std::string model;
  std::string embedding_model;
  std::string auth_env;  // name of the environment variable holding a bearer token; empty for none
  std::string system_prompt;
  double timeout_seconds = 60;
  int max_retries = 5;
  int concurrency = 4;
  double backoff_initial_ms = 500;
  double backoff_max_ms = 20000;
  std::size_t embedding_batch = 64;

  void validate() const;
};

struct GenerationSettings {
  double temperature = 0;
  int max_tokens = 256;

  void validate() const;
};

/// A request failed for good: non-retryable status, retries exhausted, or a malformed reply.
class GatewayError : public Error {
 public:
  GatewayError(const std::string& what, int status = 0) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

struct Completion {
  std::string text;
  int retries = 0;
};

/// Stateless client; every call opens its own connection, so one instance can be shared by
/// concurrent callers.
class LlmClient {
 public:
  explicit LlmClient(EndpointConfig cfg);

  /// Single-turn chat completion. Returns the trimmed text. 429, 5xx and transport failures are
  /// retried with exponential backoff and jitter; anything else fails immediately.
  Completion generate(const std::string& prompt, const GenerationSettings& settings) const;

  /// One embeddings request; vectors come back in input order, unnormalized.
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) const;

  const EndpointConfig& config() const { return cfg_; }

 private:
  Json post(const std::string& route, const Json& body, int* retries) const;

  EndpointConfig cfg_;
  std::string scheme_host_port_;
  std::string prefix_;
  std::string token_;
};

struct GenerationJob {
  std::string user, item;
  std::string prompt;
};

struct BatchReport {
  std::size_t completed = 0;  // newly generated in this call
  std::size_t skipped = 0;    // already present from an earlier run
  std::size_t failed = 0;
};

/// Generates every job with up to cfg.concurrency requests in flight.
///
/// Results go to `out` as {"user", "item", "explanation"} in job order and failures to `failures`
/// as {"user", "item", "error"}. Completed jobs are journaled to `out` + ".journal" as they
/// finish; a rerun skips every job already in `out` or the journal. Throws GatewayError only
/// when no job has a result.
BatchReport batch_generate(const LlmClient& client, std::span<const GenerationJob> jobs,
                           const GenerationSettings& settings, const std::filesystem::path& out,
                           const std::filesystem::path& failures);

/// Unit-length embeddings for `texts`, in order. When `cache` is given, texts found there are not
/// requested and new vectors are added to it.
std::vector<std::vector<double>> embed_texts(const LlmClient& client,
                                             std::span<const std::string> texts,
                                             const std::optional<std::filesystem::path>& cache);

}  // namespace cfrag
