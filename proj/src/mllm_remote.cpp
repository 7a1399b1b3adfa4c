#include <openssl/evp.h>

#include <cstdlib>

#include <httplib.h>

#include "sasav/error.hpp"
#include "sasav/mllm.hpp"

namespace sasav {

namespace {

std::string base64(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string base_path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(Errc::kInvalidConfig, "endpoint '" + url + "' has no scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  out.base_path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.base_path.empty() && out.base_path.back() == '/') out.base_path.pop_back();
  return out;
}

}  // namespace

RemoteHttpProvider::RemoteHttpProvider(ProviderConfig config) : config_(std::move(config)) {
  if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
}

nlohmann::json RemoteHttpProvider::chat_body(const ChatRequest& request) const {
  std::string user_text = request.user_prompt;
  if (!request.repair_note.empty()) {
    user_text += "\n\nYour previous reply was rejected: " + request.repair_note +
                 "\nReply again with a corrected JSON document only.";
  }
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", user_text}});
  for (const auto& image : request.images) {
    const auto png = encode_png(image);
    content.push_back(
        {{"type", "image_url"}, {"image_url", {{"url", "data:image/png;base64," + base64(png)}}}});
  }
  return {{"model", config_.model_name},
          {"temperature", request.temperature},
          {"messages",
           nlohmann::json::array({{{"role", "system"}, {"content", request.system_prompt}},
                                  {{"role", "user"}, {"content", content}}})}};
}

nlohmann::json RemoteHttpProvider::post(const std::string& path, const nlohmann::json& body) {
  const auto url = split_url(config_.endpoint);
  httplib::Client client(url.origin);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(url.base_path + path, headers, body.dump(), "application/json");
  if (!res) {
    throw Error(Errc::kProviderUnavailable, "request to " + config_.endpoint + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw Error(Errc::kProviderUnavailable, "provider returned HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw Error(Errc::kProviderUnavailable, "provider returned HTTP " + std::to_string(res->status) + ": " + res->body);
  }
  auto doc = nlohmann::json::parse(res->body, nullptr, false);
  if (doc.is_discarded()) throw Error(Errc::kProviderUnavailable, "provider reply is not JSON");
  return doc;
}

RawReply RemoteHttpProvider::complete(const ChatRequest& request, int /*attempt*/) {
  const auto doc = post("/chat/completions", chat_body(request));
  RawReply out;
  try {
    out.text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
    if (doc.contains("usage")) {
      out.usage.input_tokens = doc["usage"].value("prompt_tokens", std::int64_t{0});
      out.usage.output_tokens = doc["usage"].value("completion_tokens", std::int64_t{0});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kProviderUnavailable, std::string("malformed chat reply: ") + e.what());
  }
  return out;
}

std::vector<std::vector<float>> RemoteHttpProvider::embed(std::span<const std::string> texts) {
  const auto doc = post("/embeddings", {{"model", config_.embedding_model}, {"input", texts}});
  std::vector<std::vector<float>> out(texts.size());
  try {
    for (const auto& item : doc.at("data")) {
      const auto index = item.at("index").get<std::size_t>();
      if (index >= out.size()) throw Error(Errc::kProviderUnavailable, "embedding index out of range");
      out[index] = item.at("embedding").get<std::vector<float>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::kProviderUnavailable, std::string("malformed embeddings reply: ") + e.what());
  }
  return out;
}

}  // namespace sasav
