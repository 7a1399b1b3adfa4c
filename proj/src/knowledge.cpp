#include "sasav/knowledge.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <httplib.h>

#include "sasav/error.hpp"
#include "sasav/prompts.hpp"

namespace sasav {

namespace {

constexpr std::size_t kEmbedBatch = 64;

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

void normalize_in_place(std::vector<float>& v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  if (sq <= 0.0) return;
  const double inv = 1.0 / std::sqrt(sq);
  for (auto& x : v) x = static_cast<float>(x * inv);
}

std::uint32_t to_little(std::uint32_t bits) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
  }
  return bits;
}

std::vector<SearchResult> results_from_json(const nlohmann::json& doc, int cap) {
  std::vector<SearchResult> out;
  if (!doc.is_array()) return out;
  for (const auto& item : doc) {
    if (static_cast<int>(out.size()) >= cap) break;
    out.push_back({item.value("title", ""), item.value("snippet", ""), item.value("url", "")});
  }
  return out;
}

}  // namespace

std::vector<Chunk> chunk_document(std::string_view doc_id, std::string_view text, int chunk_size, int overlap) {
  if (chunk_size < 1 || overlap < 0 || overlap >= chunk_size) {
    throw Error(Errc::kInvalidOverlap, "need 0 <= overlap < chunk_size, got overlap " + std::to_string(overlap) +
                                           " and size " + std::to_string(chunk_size));
  }
  std::vector<Chunk> out;
  const std::size_t size = static_cast<std::size_t>(chunk_size);
  const std::size_t stride = size - static_cast<std::size_t>(overlap);
  for (std::size_t start = 0; start < text.size(); start += stride) {
    out.push_back({std::string(doc_id), static_cast<int>(out.size()), std::string(text.substr(start, size)), {}});
    if (start + size >= text.size()) break;
  }
  return out;
}

KnowledgeIndex KnowledgeIndex::from_embedded(std::vector<Chunk> chunks) {
  KnowledgeIndex index;
  for (auto& c : chunks) {
    if (index.dim_ == 0) index.dim_ = static_cast<int>(c.embedding.size());
    if (static_cast<int>(c.embedding.size()) != index.dim_ || index.dim_ == 0) {
      throw Error(Errc::kInvalidArgument, "embeddings must share one non-zero dimension");
    }
    normalize_in_place(c.embedding);
  }
  index.chunks_ = std::move(chunks);
  return index;
}

KnowledgeIndex KnowledgeIndex::build(std::vector<Chunk> chunks, ChatClient& client) {
  for (std::size_t begin = 0; begin < chunks.size(); begin += kEmbedBatch) {
    const std::size_t end = std::min(chunks.size(), begin + kEmbedBatch);
    std::vector<std::string> texts;
    for (std::size_t i = begin; i < end; ++i) texts.push_back(chunks[i].text);
    auto vectors = client.embed(texts);
    if (vectors.size() != texts.size()) throw Error(Errc::kProviderUnavailable, "embedding count mismatch");
    for (std::size_t i = begin; i < end; ++i) chunks[i].embedding = std::move(vectors[i - begin]);
  }
  return from_embedded(std::move(chunks));
}

void KnowledgeIndex::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "chunks.jsonl", std::ios::binary);
    for (const auto& c : chunks_) out << nlohmann::json{{"doc_id", c.doc_id}, {"ordinal", c.ordinal}, {"text", c.text}}.dump() << '\n';
    if (!out) throw Error(Errc::kIoFailure, "cannot write chunks.jsonl");
  }
  {
    std::ofstream out(dir / "embeddings.bin", std::ios::binary);
    for (const auto& c : chunks_) {
      for (float x : c.embedding) {
        const auto bits = to_little(std::bit_cast<std::uint32_t>(x));
        out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      }
    }
    if (!out) throw Error(Errc::kIoFailure, "cannot write embeddings.bin");
  }
  std::ofstream manifest(dir / "manifest.json", std::ios::binary);
  manifest << nlohmann::json{{"schema_version", 1}, {"dim", dim_}, {"count", chunks_.size()}}.dump(2) << '\n';
  if (!manifest) throw Error(Errc::kIoFailure, "cannot write manifest.json");
}

KnowledgeIndex KnowledgeIndex::load(const std::filesystem::path& dir) {
  std::ifstream manifest_in(dir / "manifest.json");
  if (!manifest_in) throw Error(Errc::kIoFailure, "no manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(manifest_in, nullptr, false);
  if (manifest.is_discarded()) throw Error(Errc::kIoFailure, "manifest.json is not valid JSON");
  const int dim = manifest.value("dim", 0);
  const std::size_t count = manifest.value("count", std::size_t{0});

  KnowledgeIndex index;
  index.dim_ = dim;
  std::ifstream chunks_in(dir / "chunks.jsonl");
  if (!chunks_in) throw Error(Errc::kIoFailure, "no chunks.jsonl in " + dir.string());
  for (std::string line; std::getline(chunks_in, line);) {
    if (line.empty()) continue;
    const auto doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded()) throw Error(Errc::kIoFailure, "corrupt line in chunks.jsonl");
    index.chunks_.push_back({doc.at("doc_id").get<std::string>(), doc.at("ordinal").get<int>(),
                             doc.at("text").get<std::string>(), {}});
  }
  if (index.chunks_.size() != count) throw Error(Errc::kIoFailure, "chunk count differs from manifest");

  std::ifstream emb(dir / "embeddings.bin", std::ios::binary);
  if (!emb) throw Error(Errc::kIoFailure, "no embeddings.bin in " + dir.string());
  for (auto& c : index.chunks_) {
    c.embedding.resize(static_cast<std::size_t>(dim));
    for (auto& x : c.embedding) {
      std::uint32_t bits = 0;
      if (!emb.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw Error(Errc::kIoFailure, "embeddings.bin too short");
      x = std::bit_cast<float>(to_little(bits));
    }
  }
  if (emb.peek() != std::char_traits<char>::eof()) throw Error(Errc::kIoFailure, "embeddings.bin too long");
  return index;
}

std::vector<ScoredChunk> KnowledgeIndex::retrieve(std::string_view query, int k, ChatClient& client) const {
  if (k <= 0 || chunks_.empty()) return {};
  const std::vector<std::string> texts = {std::string(query)};
  auto vectors = client.embed(texts);
  if (vectors.empty()) return {};
  return retrieve_by_vector(vectors.front(), k);
}

std::vector<ScoredChunk> KnowledgeIndex::retrieve_by_vector(std::span<const float> query, int k) const {
  if (k <= 0 || chunks_.empty()) return {};
  if (static_cast<int>(query.size()) != dim_) throw Error(Errc::kInvalidArgument, "query dimension mismatch");
  double qn = 0.0;
  for (float x : query) qn += static_cast<double>(x) * x;
  qn = std::sqrt(qn);
  std::vector<ScoredChunk> scored;
  scored.reserve(chunks_.size());
  for (const auto& c : chunks_) {
    double dot = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) dot += static_cast<double>(query[i]) * c.embedding[i];
    scored.push_back({&c, qn > 0.0 ? dot / qn : 0.0});
  }
  const auto before = [](const ScoredChunk& a, const ScoredChunk& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.chunk->doc_id != b.chunk->doc_id) return a.chunk->doc_id < b.chunk->doc_id;
    return a.chunk->ordinal < b.chunk->ordinal;
  };
  const auto take = std::min(scored.size(), static_cast<std::size_t>(k));
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), before);
  scored.resize(take);
  return scored;
}

KnowledgeIndex build_knowledge_base(const std::filesystem::path& docs_dir, ChatClient& client, int chunk_size,
                                    int overlap) {
  if (!std::filesystem::is_directory(docs_dir)) throw Error(Errc::kIoFailure, docs_dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(docs_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".md") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Chunk> chunks;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    std::stringstream text;
    text << in.rdbuf();
    auto doc_chunks = chunk_document(f.lexically_relative(docs_dir).generic_string(), text.str(), chunk_size, overlap);
    std::move(doc_chunks.begin(), doc_chunks.end(), std::back_inserter(chunks));
  }
  return KnowledgeIndex::build(std::move(chunks), client);
}

CannedSearchAdapter::CannedSearchAdapter(nlohmann::json responses) : responses_(std::move(responses)) {}

std::unique_ptr<CannedSearchAdapter> CannedSearchAdapter::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIoFailure, "cannot open " + path.string());
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) throw Error(Errc::kIoFailure, path.string() + " is not a JSON object");
  return std::make_unique<CannedSearchAdapter>(std::move(doc));
}

std::vector<SearchResult> CannedSearchAdapter::search(std::string_view query, int cap) {
  const std::string key(query);
  if (responses_.contains(key)) return results_from_json(responses_.at(key), cap);
  if (responses_.contains("*")) return results_from_json(responses_.at("*"), cap);
  return {};
}

std::vector<SearchResult> UnavailableSearchAdapter::search(std::string_view, int) {
  throw Error(Errc::kAdapterUnavailable, "web search adapter unavailable");
}

HttpSearchAdapter::HttpSearchAdapter(std::string endpoint) : endpoint_(std::move(endpoint)) {}

std::vector<SearchResult> HttpSearchAdapter::search(std::string_view query, int cap) {
  const auto scheme_end = endpoint_.find("://");
  const auto path_start = scheme_end == std::string::npos ? std::string::npos : endpoint_.find('/', scheme_end + 3);
  const auto origin = endpoint_.substr(0, path_start);
  const auto path = path_start == std::string::npos ? std::string("/") : endpoint_.substr(path_start);
  httplib::Client client(origin);
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(std::chrono::seconds(30));
  httplib::Params params{{"q", std::string(query)}, {"count", std::to_string(cap)}};
  auto res = client.Get(path, params, httplib::Headers{});
  if (!res || res->status != 200) throw Error(Errc::kAdapterUnavailable, "search endpoint " + endpoint_ + " failed");
  auto doc = nlohmann::json::parse(res->body, nullptr, false);
  if (doc.is_discarded()) throw Error(Errc::kAdapterUnavailable, "search endpoint returned invalid JSON");
  return results_from_json(doc, cap);
}

std::unique_ptr<WebSearchAdapter> make_search_adapter(const std::string& spec) {
  if (spec == "unavailable") return std::make_unique<UnavailableSearchAdapter>();
  if (spec.starts_with("canned:")) return CannedSearchAdapter::from_file(spec.substr(7));
  if (spec.starts_with("http://") || spec.starts_with("https://")) return std::make_unique<HttpSearchAdapter>(spec);
  throw Error(Errc::kInvalidConfig, "web_adapter '" + spec + "' is not canned:<path>, unavailable or a URL");
}

std::vector<SearchResult> web_search(WebSearchAdapter& adapter, std::string_view query, int cap,
                                     std::vector<std::string>& warnings) {
  if (cap <= 0) return {};
  try {
    auto results = adapter.search(query, cap);
    if (static_cast<int>(results.size()) > cap) results.resize(static_cast<std::size_t>(cap));
    return results;
  } catch (const Error& e) {
    if (e.code() != Errc::kAdapterUnavailable) throw;
    warnings.push_back(std::string("web search skipped for '") + std::string(query) + "': " + e.what());
    return {};
  }
}

std::string_view to_string(KeywordSource source) {
  switch (source) {
    case KeywordSource::kWeb: return "web";
    case KeywordSource::kKb: return "kb";
    case KeywordSource::kModel: return "model";
  }
  return "model";
}

std::vector<std::string> RegionsOfInterest::texts() const {
  std::vector<std::string> out;
  for (const auto& k : keywords) out.push_back(k.text);
  return out;
}

nlohmann::json roi_to_json(const RegionsOfInterest& roi) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& k : roi.keywords) items.push_back({{"text", k.text}, {"source", to_string(k.source)}});
  return {{"keywords", items}};
}

RegionsOfInterest roi_from_json(const nlohmann::json& doc) {
  RegionsOfInterest roi;
  for (const auto& item : doc.at("keywords")) {
    RoiKeyword k{item.at("text").get<std::string>(), KeywordSource::kModel};
    const auto source = item.value("source", "model");
    if (source == "web") k.source = KeywordSource::kWeb;
    else if (source == "kb") k.source = KeywordSource::kKb;
    roi.keywords.push_back(std::move(k));
  }
  return roi;
}

std::vector<std::string> dedupe_keywords(std::span<const std::string> phrases, int max_count) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& p : phrases) {
    if (static_cast<int>(out.size()) >= max_count) break;
    auto t = trim(p);
    if (t.empty() || !seen.insert(lower(t)).second) continue;
    out.push_back(std::move(t));
  }
  return out;
}

ForageResult forage(std::span<const std::string> object_keywords, const KnowledgeIndex* index,
                    WebSearchAdapter* adapter, ChatClient& client, const ForageOptions& options) {
  if (object_keywords.empty()) throw Error(Errc::kInvalidArgument, "forage needs at least one object keyword");
  ForageResult result;

  std::string context;
  std::string web_text, kb_text;
  for (const auto& keyword : object_keywords) {
    if (adapter) {
      for (const auto& r : web_search(*adapter, keyword, options.web_results_per_keyword, result.warnings)) {
        context += "- [web] " + r.title + ": " + r.snippet + (r.url.empty() ? "" : " (" + r.url + ")") + "\n";
        web_text += lower(r.title + " " + r.snippet) + "\n";
      }
    }
    if (index && !index->empty()) {
      for (const auto& hit : index->retrieve(keyword, options.chunks_per_keyword, client)) {
        context += "- [kb " + hit.chunk->doc_id + "#" + std::to_string(hit.chunk->ordinal) + "] " + hit.chunk->text + "\n";
        kb_text += lower(hit.chunk->text) + "\n";
      }
    }
  }
  if (context.empty()) context = "(no background material available)\n";

  std::string joined;
  for (const auto& k : object_keywords) joined += (joined.empty() ? "" : ", ") + k;
  const auto prompt = render_prompt("forager_summary", {{"object_keywords", joined},
                                                        {"context", context},
                                                        {"max_keywords", std::to_string(options.max_keywords)}});
  ChatRequest request;
  request.role = RoleTag::kForagerSummary;
  request.system_prompt = prompt.system;
  request.user_prompt = prompt.user;
  request.temperature = options.temperature;
  request.schema_id = "roi_keywords";
  request.fixture_key = "default";

  std::vector<std::string> phrases;
  try {
    const auto reply = client.chat(request);
    if (reply.parsed) phrases = reply.parsed->at("keywords").get<std::vector<std::string>>();
  } catch (const Error& e) {
    if (e.code() != Errc::kParseFailure) throw;
    result.warnings.push_back(std::string("forager summary unusable: ") + e.what());
  }
  auto keywords = dedupe_keywords(phrases, options.max_keywords);
  if (keywords.empty()) {
    result.fallback = true;
    const std::vector<std::string> input(object_keywords.begin(), object_keywords.end());
    for (auto& k : dedupe_keywords(input, options.max_keywords)) result.roi.keywords.push_back({std::move(k), KeywordSource::kModel});
    return result;
  }
  for (auto& k : keywords) {
    const auto needle = lower(k);
    KeywordSource source = KeywordSource::kModel;
    if (!web_text.empty() && web_text.find(needle) != std::string::npos) source = KeywordSource::kWeb;
    else if (!kb_text.empty() && kb_text.find(needle) != std::string::npos) source = KeywordSource::kKb;
    result.roi.keywords.push_back({std::move(k), source});
  }
  return result;
}

}  // namespace sasav
