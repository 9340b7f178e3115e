#include "cfrag/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "httplib.h"

#include "cfrag/log.hpp"
#include "cfrag/random.hpp"

namespace cfrag {

namespace fs = std::filesystem;

void EndpointConfig::validate() const {
  if (base_url.find("://") == std::string::npos)
    throw PreconditionError("endpoint.base_url must look like scheme://host[:port]");
  if (max_retries < 0) throw PreconditionError("endpoint.max_retries must be >= 0");
  if (concurrency < 1) throw PreconditionError("endpoint.concurrency must be >= 1");
  if (!(timeout_seconds > 0)) throw PreconditionError("endpoint.timeout_seconds must be > 0");
  if (backoff_initial_ms < 0 || backoff_max_ms < backoff_initial_ms)
    throw PreconditionError("endpoint backoff bounds are inconsistent");
  if (embedding_batch == 0) throw PreconditionError("endpoint.embedding_batch must be >= 1");
}

void GenerationSettings::validate() const {
  if (!(temperature >= 0)) throw PreconditionError("temperature must be >= 0");
  if (max_tokens < 1) throw PreconditionError("max_tokens must be >= 1");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool retryable(int status) { return status == 429 || status >= 500; }

}  // namespace

LlmClient::LlmClient(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto scheme_end = cfg_.base_url.find("://") + 3;
  const auto slash = cfg_.base_url.find('/', scheme_end);
  scheme_host_port_ = cfg_.base_url.substr(0, slash);
  prefix_ = slash == std::string::npos ? "" : cfg_.base_url.substr(slash);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  if (!(prefix_.size() >= 3 && prefix_.compare(prefix_.size() - 3, 3, "/v1") == 0)) prefix_ += "/v1";
  if (!cfg_.auth_env.empty()) {
    const char* token = std::getenv(cfg_.auth_env.c_str());
    if (!token || !*token)
      throw PreconditionError("environment variable " + cfg_.auth_env + " (auth token) is not set");
    token_ = token;
  }
}

Json LlmClient::post(const std::string& route, const Json& body, int* retries) const {
  const std::string path = prefix_ + route;
  const std::string payload = body.dump();
  // Jitter is drawn from a generator keyed by the payload so reruns back off identically.
  Rng jitter(fnv1a(payload));
  for (int attempt = 0;; ++attempt) {
    httplib::Client http(scheme_host_port_);
    const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
    const auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    http.set_connection_timeout(secs, usecs);
    http.set_read_timeout(secs, usecs);
    http.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    auto res = http.Post(path, headers, payload, "application/json");

    std::string failure;
    int status = 0;
    if (!res) {
      failure = "transport error: " + httplib::to_string(res.error());
    } else {
      status = res->status;
      if (status >= 200 && status < 300) {
        try {
          return Json::parse(res->body);
        } catch (const Json::parse_error&) {
          throw GatewayError(path + ": reply is not JSON", status);
        }
      }
      failure = "status " + std::to_string(status);
      if (!retryable(status)) throw GatewayError(path + ": " + failure + ": " + res->body, status);
    }
    if (attempt >= cfg_.max_retries)
      throw GatewayError(path + ": " + failure + " after " + std::to_string(attempt) + " retries", status);
    const double base = std::min(cfg_.backoff_max_ms, cfg_.backoff_initial_ms * std::ldexp(1.0, attempt));
    const double delay_ms = base * (0.5 + 0.5 * jitter.unit());
    if (retries) *retries = attempt + 1;
    log_warn(path + ": " + failure + ", retry " + std::to_string(attempt + 1) + "/" +
             std::to_string(cfg_.max_retries) + " in " + std::to_string(std::lround(delay_ms)) + " ms");
    std::this_thread::sleep_for(std::chrono::microseconds(static_cast<long long>(delay_ms * 1000)));
  }
}

Completion LlmClient::generate(const std::string& prompt, const GenerationSettings& settings) const {
  settings.validate();
  Json messages = Json::array();
  if (!cfg_.system_prompt.empty()) messages.push_back({{"role", "system"}, {"content", cfg_.system_prompt}});
  messages.push_back({{"role", "user"}, {"content", prompt}});
  const Json body{{"model", cfg_.model},
                  {"messages", messages},
                  {"temperature", settings.temperature},
                  {"max_tokens", settings.max_tokens}};
  Completion out;
  const Json reply = post("/chat/completions", body, &out.retries);
  try {
    out.text = trim(reply.at("choices").at(0).at("message").at("content").get<std::string>());
  } catch (const Json::exception& e) {
    throw GatewayError(std::string("malformed chat completion: ") + e.what());
  }
  if (out.text.empty()) throw GatewayError("empty completion");
  return out;
}

std::vector<std::vector<double>> LlmClient::embed(std::span<const std::string> texts) const {
  const Json body{{"model", cfg_.embedding_model.empty() ? cfg_.model : cfg_.embedding_model},
                  {"input", Json(std::vector<std::string>(texts.begin(), texts.end()))}};
  const Json reply = post("/embeddings", body, nullptr);
  std::vector<std::vector<double>> out(texts.size());
  try {
    const auto& data = reply.at("data");
    if (data.size() != texts.size()) throw GatewayError("embeddings: expected " + std::to_string(texts.size()) + " vectors");
    for (std::size_t k = 0; k < data.size(); ++k) {
      const std::size_t index = data[k].contains("index") ? data[k]["index"].get<std::size_t>() : k;
      if (index >= out.size() || !out[index].empty()) throw GatewayError("embeddings: bad index");
      out[index] = data[k].at("embedding").get<std::vector<double>>();
    }
  } catch (const Json::exception& e) {
    throw GatewayError(std::string("malformed embeddings reply: ") + e.what());
  }
  for (const auto& v : out)
    if (v.size() != out[0].size() || v.empty())
      throw GatewayError("embeddings: dim inconsistency across batch");
  return out;
}

namespace {

using PairKey = std::pair<std::string, std::string>;

/// Journal lines may be torn by a crash; anything unparsable is ignored.
void read_tolerant(const fs::path& path, std::map<PairKey, std::string>& done) {
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    Json r = Json::parse(line, nullptr, false);
    if (r.is_discarded() || !r.is_object()) continue;
    if (!r.contains("user") || !r.contains("item") || !r.contains("explanation")) continue;
    done[{r["user"].get<std::string>(), r["item"].get<std::string>()}] = r["explanation"].get<std::string>();
  }
}

}  // namespace

BatchReport batch_generate(const LlmClient& client, std::span<const GenerationJob> jobs,
                           const GenerationSettings& settings, const fs::path& out,
                           const fs::path& failures) {
  if (jobs.empty()) throw PreconditionError("batch_generate: no prompts");
  settings.validate();
  std::set<PairKey> seen;
  for (const auto& j : jobs)
    if (!seen.insert({j.user, j.item}).second)
      throw PreconditionError("batch_generate: duplicate pair (" + j.user + ", " + j.item + ")");

  fs::path journal = out;
  journal += ".journal";
  std::map<PairKey, std::string> done;
  if (fs::exists(out)) read_tolerant(out, done);
  if (fs::exists(journal)) read_tolerant(journal, done);

  std::vector<std::size_t> pending;
  BatchReport report;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    if (done.count({jobs[k].user, jobs[k].item}))
      ++report.skipped;
    else
      pending.push_back(k);
  }

  std::vector<std::optional<std::string>> errors(jobs.size());
  if (!pending.empty()) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream journal_out(journal, std::ios::app);
    if (!journal_out) throw IoError("cannot open " + journal.string());
    std::mutex mutex;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t n; (n = next++) < pending.size();) {
        const auto& job = jobs[pending[n]];
        try {
          const Completion c = client.generate(job.prompt, settings);
          const Json rec{{"user", job.user}, {"item", job.item}, {"explanation", c.text}};
          std::lock_guard lock(mutex);
          journal_out << rec.dump() << '\n';
          journal_out.flush();
          done[{job.user, job.item}] = c.text;
        } catch (const Error& e) {
          std::lock_guard lock(mutex);
          errors[pending[n]] = e.what();
        }
      }
    };
    const auto threads = std::min<std::size_t>(static_cast<std::size_t>(client.config().concurrency), pending.size());
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    pool.clear();  // joins
  }

  std::vector<Json> results, failed;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const auto& j = jobs[k];
    if (auto it = done.find({j.user, j.item}); it != done.end()) {
      results.push_back({{"user", j.user}, {"item", j.item}, {"explanation", it->second}});
    } else if (errors[k]) {
      failed.push_back({{"user", j.user}, {"item", j.item}, {"error", *errors[k]}});
    }
  }
  report.failed = failed.size();
  report.completed = results.size() - report.skipped;
  write_jsonl(failures, failed);
  write_jsonl(out, results);
  fs::remove(journal);
  if (results.empty())
    throw GatewayError("all " + std::to_string(jobs.size()) + " generation requests failed; see " +
                       failures.string());
  return report;
}

std::vector<std::vector<double>> embed_texts(const LlmClient& client, std::span<const std::string> texts,
                                             const std::optional<fs::path>& cache) {
  TextEmbeddingStore store(Provenance::Endpoint);
  if (cache && fs::exists(*cache)) store = TextEmbeddingStore::load(*cache);

  std::vector<std::string> missing;
  std::set<std::string> queued;
  for (const auto& t : texts)
    if (!store.contains(t) && queued.insert(t).second) missing.push_back(t);

  const std::size_t batch = client.config().embedding_batch;
  for (std::size_t start = 0; start < missing.size(); start += batch) {
    const std::size_t end = std::min(missing.size(), start + batch);
    auto vectors = client.embed(std::span(missing).subspan(start, end - start));
    for (std::size_t k = 0; k < vectors.size(); ++k) {
      if (store.dim() != 0 && vectors[k].size() != store.dim())
        throw GatewayError("embeddings: dim " + std::to_string(vectors[k].size()) +
                           " does not match earlier dim " + std::to_string(store.dim()));
      try {
        store.insert(missing[start + k], std::move(vectors[k]));
      } catch (const NumericError&) {
        throw GatewayError("embeddings: zero vector for \"" + missing[start + k] + "\"");
      }
    }
  }
  if (cache && !missing.empty()) store.save(*cache);

  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    const auto v = store.at(t);
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

}  // namespace cfrag
