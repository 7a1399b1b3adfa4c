#include "sasav/mllm.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <random>
#include <thread>

#include "sasav/error.hpp"

namespace sasav {

namespace {

std::string hex(const unsigned char* data, std::size_t n) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(kDigits[data[i] >> 4]);
    out.push_back(kDigits[data[i] & 0xf]);
  }
  return out;
}

std::array<unsigned char, SHA256_DIGEST_LENGTH> sha256(std::string_view data) {
  std::array<unsigned char, SHA256_DIGEST_LENGTH> digest{};
  SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest.data());
  return digest;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIoFailure, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kIoFailure, path.string() + ": " + e.what());
  }
}

// ---- structured reply validation -------------------------------------------

[[noreturn]] void schema_error(const std::string& what) { throw Error(Errc::kParseFailure, what); }

int require_int(const nlohmann::json& doc, const char* key, int lo, int hi) {
  if (!doc.contains(key)) schema_error(std::string("missing field '") + key + "'");
  const auto& v = doc.at(key);
  if (!v.is_number()) schema_error(std::string("field '") + key + "' must be a number");
  const double d = v.get<double>();
  if (d != std::floor(d)) schema_error(std::string("field '") + key + "' must be an integer");
  if (d < lo || d > hi) {
    schema_error(std::string("field '") + key + "' = " + v.dump() + " outside [" + std::to_string(lo) + ", " +
                 std::to_string(hi) + "]");
  }
  return static_cast<int>(d);
}

double require_unit(const nlohmann::json& v, const std::string& what) {
  if (!v.is_number()) schema_error(what + " must be a number");
  const double d = v.get<double>();
  if (!(d >= 0.0 && d <= 1.0)) schema_error(what + " outside [0, 1]");
  return d;
}

std::string require_string(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key) || !doc.at(key).is_string()) schema_error(std::string("missing string '") + key + "'");
  return doc.at(key).get<std::string>();
}

std::vector<std::string> require_strings(const nlohmann::json& doc, const char* key, bool non_empty) {
  if (!doc.contains(key) || !doc.at(key).is_array()) schema_error(std::string("missing array '") + key + "'");
  std::vector<std::string> out;
  for (const auto& v : doc.at(key)) {
    if (!v.is_string()) schema_error(std::string("'") + key + "' must hold strings");
    out.push_back(v.get<std::string>());
  }
  if (non_empty && out.empty()) schema_error(std::string("'") + key + "' must not be empty");
  return out;
}

std::vector<int> require_ints(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key) || !doc.at(key).is_array()) schema_error(std::string("missing array '") + key + "'");
  std::vector<int> out;
  for (const auto& v : doc.at(key)) {
    if (!v.is_number() || v.get<double>() != std::floor(v.get<double>())) {
      schema_error(std::string("'") + key + "' must hold integers");
    }
    out.push_back(static_cast<int>(v.get<double>()));
  }
  return out;
}

using Validator = std::function<nlohmann::json(const nlohmann::json&)>;

const std::map<std::string, Validator, std::less<>>& validators() {
  static const std::map<std::string, Validator, std::less<>> table = {
      {"evaluator_score",
       [](const nlohmann::json& d) {
         nlohmann::json out = {{"score", require_int(d, "score", 1, 10)}};
         if (d.contains("view_scores")) {
           nlohmann::json views = nlohmann::json::array();
           for (const auto& v : d.at("view_scores")) {
             views.push_back(require_int(nlohmann::json{{"view_score", v}}, "view_score", 1, 10));
           }
           out["view_scores"] = views;
         }
         return out;
       }},
      {"best_view", [](const nlohmann::json& d) { return nlohmann::json{{"best_view", require_int(d, "best_view", 0, 5)}}; }},
      {"recognition",
       [](const nlohmann::json& d) {
         const auto type = require_string(d, "object_type");
         if (type != "empirical" && type != "simulated") schema_error("object_type must be empirical or simulated");
         return nlohmann::json{{"keywords", require_strings(d, "keywords", true)}, {"object_type", type}};
       }},
      {"roi_keywords",
       [](const nlohmann::json& d) { return nlohmann::json{{"keywords", require_strings(d, "keywords", false)}}; }},
      {"semantic_analysis",
       [](const nlohmann::json& d) {
         return nlohmann::json{{"geometric_role", require_string(d, "geometric_role")},
                               {"scientific_salience", require_int(d, "scientific_salience", 1, 10)},
                               {"occlusion_risk", require_int(d, "occlusion_risk", 1, 10)},
                               {"confidence", require_int(d, "confidence", 1, 10)},
                               {"shape_summary", require_string(d, "shape_summary")},
                               {"explanation", d.contains("explanation") && d.at("explanation").is_string()
                                                   ? d.at("explanation").get<std::string>()
                                                   : std::string()}};
       }},
      {"tf_design",
       [](const nlohmann::json& d) {
         if (!d.contains("mappings") || !d.at("mappings").is_array()) schema_error("missing array 'mappings'");
         nlohmann::json out = nlohmann::json::array();
         for (const auto& m : d.at("mappings")) {
           if (!m.is_object()) schema_error("mapping must be an object");
           const int index = require_int(m, "isovalue_index", 0, 1 << 20);
           if (!m.contains("color") || !m.at("color").is_array() || m.at("color").size() != 3) {
             schema_error("mapping color must be [r, g, b]");
           }
           nlohmann::json color = nlohmann::json::array();
           for (const auto& c : m.at("color")) color.push_back(require_unit(c, "color channel"));
           if (!m.contains("opacity")) schema_error("mapping missing opacity");
           out.push_back({{"isovalue_index", index}, {"color", color}, {"opacity", require_unit(m.at("opacity"), "opacity")}});
         }
         return nlohmann::json{{"mappings", out}};
       }},
      {"ift_compare",
       [](const nlohmann::json& d) {
         const auto better = require_string(d, "better");
         if (better != "prior" && better != "new") schema_error("'better' must be prior or new");
         return nlohmann::json{{"better", better}};
       }},
      {"view_selection",
       [](const nlohmann::json& d) {
         return nlohmann::json{
             {"ranked", require_ints(d, "ranked")}, {"anchors", require_ints(d, "anchors")}, {"avoid", require_ints(d, "avoid")}};
       }},
  };
  return table;
}

// Position one past the end of the balanced JSON value starting at `start`.
std::size_t match_document(std::string_view text, std::size_t start) {
  std::vector<char> stack;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{' || c == '[') stack.push_back(c == '{' ? '}' : ']');
    else if (c == '}' || c == ']') {
      if (stack.empty() || stack.back() != c) return std::string_view::npos;
      stack.pop_back();
      if (stack.empty()) return i + 1;
    }
  }
  return std::string_view::npos;
}

bool is_failed_token(std::string_view text) {
  std::string s;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == '.' || c == '\'' || c == '"' || c == '`') continue;
    s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return s == "failed";
}

}  // namespace

std::string_view to_string(RoleTag role) {
  switch (role) {
    case RoleTag::kEvaluator: return "evaluator";
    case RoleTag::kRecognizer: return "recognizer";
    case RoleTag::kForagerSummary: return "forager_summary";
    case RoleTag::kSemanticAnalyzer: return "semantic_analyzer";
    case RoleTag::kTfDesigner: return "tf_designer";
    case RoleTag::kIftJudge: return "ift_judge";
    case RoleTag::kViewSelector: return "view_selector";
  }
  return "evaluator";
}

RoleTag role_from_string(std::string_view name) {
  for (auto role : kAllRoles) {
    if (to_string(role) == name) return role;
  }
  throw Error(Errc::kInvalidArgument, "unknown role tag '" + std::string(name) + "'");
}

void ProviderConfig::validate() const {
  if (max_concurrency < 1) throw Error(Errc::kInvalidConfig, "provider.max_concurrency must be >= 1");
  if (retry.max_attempts < 1) throw Error(Errc::kInvalidConfig, "provider.retry.max_attempts must be >= 1");
  if (retry.base_backoff.count() < 0) throw Error(Errc::kInvalidConfig, "provider.retry.base_backoff_ms must be >= 0");
  if (embedding_dim < 1) throw Error(Errc::kInvalidConfig, "provider.embedding_dim must be >= 1");
  if (image_limit < 1) throw Error(Errc::kInvalidConfig, "provider.image_limit must be >= 1");
}

void to_json(nlohmann::json& j, const ProviderConfig& c) {
  j = {{"kind", c.kind == ProviderKind::kRemoteHttp ? "remote_http" : "scripted_mock"},
       {"endpoint", c.endpoint},
       {"api_key_env", c.api_key_env},
       {"model_name", c.model_name},
       {"embedding_model", c.embedding_model},
       {"max_concurrency", c.max_concurrency},
       {"retry", {{"max_attempts", c.retry.max_attempts}, {"base_backoff_ms", c.retry.base_backoff.count()}}},
       {"fixtures_dir", c.fixtures_dir.string()},
       {"embedding_dim", c.embedding_dim},
       {"image_limit", c.image_limit},
       {"timeout_s", c.timeout.count()}};
}

void merge_from_json(const nlohmann::json& j, ProviderConfig& c) {
  if (!j.is_object()) throw Error(Errc::kInvalidConfig, "provider must be an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "kind") {
        const auto s = value.get<std::string>();
        if (s == "remote_http") c.kind = ProviderKind::kRemoteHttp;
        else if (s == "scripted_mock") c.kind = ProviderKind::kScriptedMock;
        else throw Error(Errc::kInvalidConfig, "provider.kind '" + s + "'");
      } else if (key == "endpoint") c.endpoint = value.get<std::string>();
      else if (key == "api_key_env") c.api_key_env = value.get<std::string>();
      else if (key == "model_name") c.model_name = value.get<std::string>();
      else if (key == "embedding_model") c.embedding_model = value.get<std::string>();
      else if (key == "max_concurrency") c.max_concurrency = value.get<int>();
      else if (key == "retry") {
        for (const auto& [rk, rv] : value.items()) {
          if (rk == "max_attempts") c.retry.max_attempts = rv.get<int>();
          else if (rk == "base_backoff_ms") c.retry.base_backoff = std::chrono::milliseconds(rv.get<std::int64_t>());
          else throw Error(Errc::kInvalidConfig, "unknown key provider.retry." + rk);
        }
      } else if (key == "fixtures_dir") c.fixtures_dir = value.get<std::string>();
      else if (key == "embedding_dim") c.embedding_dim = value.get<int>();
      else if (key == "image_limit") c.image_limit = value.get<int>();
      else if (key == "timeout_s") c.timeout = std::chrono::seconds(value.get<std::int64_t>());
      else throw Error(Errc::kInvalidConfig, "unknown key provider." + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kInvalidConfig, std::string("provider: ") + e.what());
  }
}

std::string image_content_hash(const Image& image) {
  constexpr int kCells = 8;
  std::string thumb;
  thumb.reserve(kCells * kCells * 3 + 16);
  for (int cy = 0; cy < kCells; ++cy) {
    const int y0 = cy * image.height / kCells, y1 = std::max(y0 + 1, (cy + 1) * image.height / kCells);
    for (int cx = 0; cx < kCells; ++cx) {
      const int x0 = cx * image.width / kCells, x1 = std::max(x0 + 1, (cx + 1) * image.width / kCells);
      std::uint64_t sum[3] = {0, 0, 0};
      std::uint64_t count = 0;
      for (int y = y0; y < std::min(y1, image.height); ++y) {
        for (int x = x0; x < std::min(x1, image.width); ++x) {
          const auto* p = image.pixel(x, y);
          for (int c = 0; c < 3; ++c) sum[c] += p[c];
          ++count;
        }
      }
      for (int c = 0; c < 3; ++c) {
        const std::uint64_t mean = count ? sum[c] / count : 0;
        thumb.push_back(static_cast<char>('a' + mean / 16));
      }
    }
  }
  const auto digest = sha256(thumb);
  return hex(digest.data(), 8);
}

std::string request_fingerprint(const ChatRequest& request) {
  std::string material;
  material += to_string(request.role);
  material += '\x1f';
  material += request.system_prompt;
  material += '\x1f';
  material += request.user_prompt;
  material += '\x1f';
  material += std::to_string(request.images.size());
  for (const auto& image : request.images) {
    material += '\x1f';
    material += image_content_hash(image);
  }
  const auto digest = sha256(material);
  return hex(digest.data(), 8);
}

std::vector<float> mock_embedding(std::string_view text, int dim) {
  const auto digest = sha256(text);
  std::uint64_t seed = 0;
  for (int i = 0; i < 8; ++i) seed = (seed << 8) | digest[static_cast<std::size_t>(i)];
  std::mt19937_64 gen(seed);
  std::vector<double> raw(static_cast<std::size_t>(dim));
  double sq = 0.0;
  for (auto& v : raw) {
    v = static_cast<double>(gen() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    sq += v * v;
  }
  const double inv = sq > 0.0 ? 1.0 / std::sqrt(sq) : 0.0;
  std::vector<float> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>(raw[i] * inv);
  return out;
}

ScriptedMockProvider::ScriptedMockProvider(std::filesystem::path fixtures_dir, int embedding_dim)
    : dir_(std::move(fixtures_dir)), dim_(embedding_dim) {}

std::optional<std::filesystem::path> ScriptedMockProvider::resolve(const ChatRequest& request) const {
  const auto role_dir = dir_ / std::string(to_string(request.role));
  std::vector<std::filesystem::path> candidates = {role_dir / (request_fingerprint(request) + ".json")};
  if (!request.fixture_key.empty()) candidates.push_back(role_dir / (request.fixture_key + ".json"));
  candidates.push_back(role_dir / "default.json");
  for (const auto& c : candidates) {
    if (std::filesystem::is_regular_file(c)) return c;
  }
  return std::nullopt;
}

RawReply ScriptedMockProvider::complete(const ChatRequest& request, int attempt) {
  const auto path = resolve(request);
  if (!path) {
    throw Error(Errc::kFixtureMiss, std::string(to_string(request.role)) + "/" + request_fingerprint(request) +
                                        (request.fixture_key.empty() ? "" : " (key " + request.fixture_key + ")"));
  }
  const auto fixture = read_json_file(*path);
  if (fixture.value("unavailable", false)) throw Error(Errc::kProviderUnavailable, "fixture marks provider down");
  const char* field = attempt > 0 && fixture.contains("retry_reply") ? "retry_reply" : "reply";
  if (!fixture.contains(field)) throw Error(Errc::kFixtureMiss, path->string() + " has no reply");
  const auto& reply = fixture.at(field);
  RawReply out;
  out.text = reply.is_string() ? reply.get<std::string>() : reply.dump();
  out.usage.input_tokens = fixture.value("input_tokens", std::int64_t{0});
  out.usage.output_tokens = fixture.value("output_tokens", std::int64_t{0});
  return out;
}

std::vector<std::vector<float>> ScriptedMockProvider::embed(std::span<const std::string> texts) {
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(mock_embedding(t, dim_));
  return out;
}

std::shared_ptr<Provider> make_provider(const ProviderConfig& config) {
  config.validate();
  if (config.kind == ProviderKind::kScriptedMock) {
    return std::make_shared<ScriptedMockProvider>(config.fixtures_dir, config.embedding_dim);
  }
  return std::make_shared<RemoteHttpProvider>(config);
}

std::optional<nlohmann::json> parse_structured(std::string_view text, std::string_view schema_id) {
  if (is_failed_token(text)) return std::nullopt;
  const auto& table = validators();
  const auto validator = table.find(schema_id);
  if (validator == table.end()) throw Error(Errc::kInvalidArgument, "unknown schema '" + std::string(schema_id) + "'");

  for (std::size_t start = text.find_first_of("{["); start != std::string_view::npos;
       start = text.find_first_of("{[", start + 1)) {
    const std::size_t end = match_document(text, start);
    if (end == std::string_view::npos) continue;
    nlohmann::json doc = nlohmann::json::parse(text.substr(start, end - start), nullptr, false);
    if (doc.is_discarded()) continue;
    if (!doc.is_object()) schema_error("expected a JSON object");
    return validator->second(doc);
  }
  schema_error("no JSON document in reply");
}

std::int64_t Census::total_chats() const {
  std::int64_t n = 0;
  for (const auto& [_, u] : per_role) n += u.chats;
  return n;
}

std::int64_t Census::total_input_tokens() const {
  std::int64_t n = 0;
  for (const auto& [_, u] : per_role) n += u.input_tokens;
  return n;
}

std::int64_t Census::total_output_tokens() const {
  std::int64_t n = 0;
  for (const auto& [_, u] : per_role) n += u.output_tokens;
  return n;
}

nlohmann::json Census::to_json() const {
  nlohmann::json roles = nlohmann::json::object();
  for (const auto& [name, u] : per_role) {
    roles[name] = {{"chats", u.chats},
                   {"reasks", u.reasks},
                   {"failed", u.failed},
                   {"input_tokens", u.input_tokens},
                   {"output_tokens", u.output_tokens}};
  }
  return {{"total_chats", total_chats()},
          {"input_tokens", total_input_tokens()},
          {"output_tokens", total_output_tokens()},
          {"per_role", roles}};
}

ChatClient::ChatClient(std::shared_ptr<Provider> provider, ProviderConfig config)
    : provider_(std::move(provider)), config_(std::move(config)), slots_(config_.max_concurrency) {
  config_.validate();
}

template <typename F>
auto ChatClient::with_retry(F&& f) -> decltype(f()) {
  for (int attempt = 1;; ++attempt) {
    try {
      slots_.acquire();
      struct Release {
        ChatClient* self;
        ~Release() {
          self->in_flight_.fetch_sub(1);
          self->slots_.release();
        }
      } release{this};
      const int now = in_flight_.fetch_add(1) + 1;
      int peak = peak_in_flight_.load();
      while (now > peak && !peak_in_flight_.compare_exchange_weak(peak, now)) {
      }
      return f();
    } catch (const Error& e) {
      if (e.code() != Errc::kProviderUnavailable || attempt >= config_.retry.max_attempts) throw;
    }
    std::this_thread::sleep_for(config_.retry.base_backoff * (1 << (attempt - 1)));
  }
}

RawReply ChatClient::call_with_retry(const ChatRequest& request, int attempt) {
  return with_retry([&] { return provider_->complete(request, attempt); });
}

ChatReply ChatClient::chat(const ChatRequest& request) {
  if (!(request.temperature >= 0.0 && request.temperature <= 2.0)) {
    throw Error(Errc::kInvalidArgument, "temperature outside [0, 2]");
  }
  if (static_cast<int>(request.images.size()) > config_.image_limit) {
    throw Error(Errc::kInvalidArgument, "request carries " + std::to_string(request.images.size()) +
                                            " images, limit is " + std::to_string(config_.image_limit));
  }
  const std::string role(to_string(request.role));
  auto account = [&](const RawReply& raw, bool reask) {
    std::lock_guard lock(census_mutex_);
    auto& u = census_.per_role[role];
    if (reask) ++u.reasks;
    else ++u.chats;
    u.input_tokens += raw.usage.input_tokens;
    u.output_tokens += raw.usage.output_tokens;
  };

  ChatReply reply;
  RawReply raw = call_with_retry(request, 0);
  account(raw, false);
  reply.text = raw.text;
  reply.usage = raw.usage;
  try {
    reply.parsed = parse_structured(raw.text, request.schema_id);
  } catch (const Error& first) {
    if (first.code() != Errc::kParseFailure) throw;
    ChatRequest again = request;
    again.repair_note = first.what();
    RawReply second = call_with_retry(again, 1);
    account(second, true);
    reply.text = second.text;
    reply.usage.input_tokens += second.usage.input_tokens;
    reply.usage.output_tokens += second.usage.output_tokens;
    reply.attempts = 2;
    reply.parsed = parse_structured(second.text, request.schema_id);
  }
  if (reply.failed()) {
    std::lock_guard lock(census_mutex_);
    ++census_.per_role[role].failed;
  }
  return reply;
}

std::vector<std::vector<float>> ChatClient::embed(std::span<const std::string> texts) {
  if (texts.empty()) return {};
  return with_retry([&] { return provider_->embed(texts); });
}

Census ChatClient::census() const {
  std::lock_guard lock(census_mutex_);
  return census_;
}

}  // namespace sasav
