#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sasav/image.hpp"

namespace sasav {

enum class RoleTag {
  kEvaluator,
  kRecognizer,
  kForagerSummary,
  kSemanticAnalyzer,
  kTfDesigner,
  kIftJudge,
  kViewSelector,
};

inline constexpr std::array<RoleTag, 7> kAllRoles = {
    RoleTag::kEvaluator,  RoleTag::kRecognizer, RoleTag::kForagerSummary, RoleTag::kSemanticAnalyzer,
    RoleTag::kTfDesigner, RoleTag::kIftJudge,   RoleTag::kViewSelector,
};

std::string_view to_string(RoleTag role);
RoleTag role_from_string(std::string_view name);

struct ChatRequest {
  RoleTag role = RoleTag::kEvaluator;
  std::string system_prompt;
  std::string user_prompt;
  std::vector<Image> images;
  double temperature = 0.1;
  std::string schema_id;
  /// Secondary fixture lookup key for the scripted mock (e.g. "rsv_2"); not
  /// part of the fingerprint.
  std::string fixture_key;
  /// Validation error appended to the user prompt on the automatic re-ask; not
  /// part of the fingerprint.
  std::string repair_note;
};

struct Usage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
};

struct ChatReply {
  std::string text;
  /// nullopt is the Failed marker: the model answered "failed".
  std::optional<nlohmann::json> parsed;
  Usage usage;
  int attempts = 1;

  bool failed() const { return !parsed.has_value(); }
};

enum class ProviderKind { kRemoteHttp, kScriptedMock };

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_backoff{500};
};

struct ProviderConfig {
  ProviderKind kind = ProviderKind::kScriptedMock;
  std::string endpoint = "https://api.openai.com/v1";
  /// Name of the environment variable holding the API key.
  std::string api_key_env = "SASAV_API_KEY";
  std::string model_name = "gpt-4o";
  std::string embedding_model = "text-embedding-3-large";
  int max_concurrency = 4;
  RetryPolicy retry;
  std::filesystem::path fixtures_dir;
  int embedding_dim = 64;
  int image_limit = 40;
  std::chrono::seconds timeout{120};

  void validate() const;
};

void to_json(nlohmann::json& j, const ProviderConfig& c);
/// Merges keys present in j over the existing values; unknown keys throw.
void merge_from_json(const nlohmann::json& j, ProviderConfig& c);

struct RawReply {
  std::string text;
  Usage usage;
};

/// Transport behind the chat boundary. Implementations throw
/// Error(kProviderUnavailable) for transient failures.
class Provider {
 public:
  virtual ~Provider() = default;
  /// attempt is 0 for the first ask and 1 for the schema-repair re-ask.
  virtual RawReply complete(const ChatRequest& request, int attempt) = 0;
  virtual std::vector<std::vector<float>> embed(std::span<const std::string> texts) = 0;
};

/// Stable content hash of an image, computed on an 8x8 box-filtered thumbnail
/// quantized to 16 levels per channel so it does not depend on resolution.
std::string image_content_hash(const Image& image);
/// Hex digest over role, prompts, image count and image content hashes.
std::string request_fingerprint(const ChatRequest& request);

/// Replies come from <fixtures>/<role>/<fingerprint>.json, then
/// <fixtures>/<role>/<fixture_key>.json, then <fixtures>/<role>/default.json.
/// Fixture document: {reply, input_tokens, output_tokens, retry_reply?,
/// unavailable?}. A non-string reply is serialized as JSON.
class ScriptedMockProvider : public Provider {
 public:
  ScriptedMockProvider(std::filesystem::path fixtures_dir, int embedding_dim);

  RawReply complete(const ChatRequest& request, int attempt) override;
  std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;

  /// Which fixture file served (or would serve) the request.
  std::optional<std::filesystem::path> resolve(const ChatRequest& request) const;

 private:
  std::filesystem::path dir_;
  int dim_;
};

/// Deterministic pseudo-embedding: unit vector drawn from a generator seeded by
/// the SHA-256 of the text.
std::vector<float> mock_embedding(std::string_view text, int dim);

/// OpenAI-compatible chat-completions and embeddings endpoints.
class RemoteHttpProvider : public Provider {
 public:
  explicit RemoteHttpProvider(ProviderConfig config);

  RawReply complete(const ChatRequest& request, int attempt) override;
  std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;

  /// Request body sent for a chat; exposed for wire-format tests.
  nlohmann::json chat_body(const ChatRequest& request) const;

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body);

  ProviderConfig config_;
  std::string api_key_;
};

std::shared_ptr<Provider> make_provider(const ProviderConfig& config);

/// Extracts the first JSON object or array embedded in the reply, validates it
/// against schema_id and strips unknown fields. Returns nullopt for the literal
/// reply "failed". Throws Error(kParseFailure).
std::optional<nlohmann::json> parse_structured(std::string_view text, std::string_view schema_id);

struct RoleUsage {
  std::int64_t chats = 0;
  std::int64_t reasks = 0;
  std::int64_t failed = 0;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
};

struct Census {
  std::map<std::string, RoleUsage> per_role;

  std::int64_t total_chats() const;
  std::int64_t total_input_tokens() const;
  std::int64_t total_output_tokens() const;
  nlohmann::json to_json() const;
};

/// The chat boundary used by the pipeline: bounded concurrency, retry with
/// exponential backoff, one automatic re-ask on schema violations, and
/// per-role token accounting. Safe for concurrent use.
class ChatClient {
 public:
  ChatClient(std::shared_ptr<Provider> provider, ProviderConfig config);

  /// Errors: kProviderUnavailable after retries, kFixtureMiss, kParseFailure.
  ChatReply chat(const ChatRequest& request);
  std::vector<std::vector<float>> embed(std::span<const std::string> texts);

  Census census() const;
  int peak_in_flight() const { return peak_in_flight_.load(); }
  const ProviderConfig& config() const { return config_; }

 private:
  RawReply call_with_retry(const ChatRequest& request, int attempt);
  template <typename F>
  auto with_retry(F&& f) -> decltype(f());

  std::shared_ptr<Provider> provider_;
  ProviderConfig config_;
  std::counting_semaphore<1024> slots_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_in_flight_{0};
  mutable std::mutex census_mutex_;
  Census census_;
};

}  // namespace sasav
