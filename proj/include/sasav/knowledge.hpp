#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sasav/mllm.hpp"

namespace sasav {

struct Chunk {
  std::string doc_id;
  int ordinal = 0;
  std::string text;
  std::vector<float> embedding;

  friend bool operator==(const Chunk&, const Chunk&) = default;
};

inline constexpr int kDefaultChunkSize = 1000;
inline constexpr int kDefaultChunkOverlap = 200;

/// Sliding character window with stride chunk_size - overlap; the last window
/// may be shorter. Throws Error(kInvalidOverlap) unless 0 <= overlap < chunk_size.
std::vector<Chunk> chunk_document(std::string_view doc_id, std::string_view text, int chunk_size = kDefaultChunkSize,
                                  int overlap = kDefaultChunkOverlap);

struct ScoredChunk {
  const Chunk* chunk = nullptr;
  double score = 0.0;
};

class KnowledgeIndex {
 public:
  KnowledgeIndex() = default;

  /// Embeds chunk texts in batches and stores unit-length vectors.
  static KnowledgeIndex build(std::vector<Chunk> chunks, ChatClient& client);
  /// Takes chunks whose embeddings are already set; vectors are normalized.
  static KnowledgeIndex from_embedded(std::vector<Chunk> chunks);

  /// Writes chunks.jsonl, embeddings.bin and manifest.json into dir.
  void save(const std::filesystem::path& dir) const;
  static KnowledgeIndex load(const std::filesystem::path& dir);

  /// Top-k chunks by cosine similarity, ties broken by (doc_id, ordinal).
  std::vector<ScoredChunk> retrieve(std::string_view query, int k, ChatClient& client) const;
  std::vector<ScoredChunk> retrieve_by_vector(std::span<const float> query, int k) const;

  std::span<const Chunk> chunks() const { return chunks_; }
  int dim() const { return dim_; }
  std::size_t size() const { return chunks_.size(); }
  bool empty() const { return chunks_.empty(); }

  friend bool operator==(const KnowledgeIndex&, const KnowledgeIndex&) = default;

 private:
  std::vector<Chunk> chunks_;
  int dim_ = 0;
};

/// Chunks every *.md file under docs_dir (sorted by relative path, which is
/// also the doc_id) and builds the index.
KnowledgeIndex build_knowledge_base(const std::filesystem::path& docs_dir, ChatClient& client,
                                    int chunk_size = kDefaultChunkSize, int overlap = kDefaultChunkOverlap);

struct SearchResult {
  std::string title;
  std::string snippet;
  std::string url;
};

class WebSearchAdapter {
 public:
  virtual ~WebSearchAdapter() = default;
  /// Throws Error(kAdapterUnavailable) when the backend cannot be reached.
  virtual std::vector<SearchResult> search(std::string_view query, int cap) = 0;
};

/// Serves results from a JSON document {"<query>": [{title, snippet, url}], "*": [...]};
/// "*" answers queries without their own entry.
class CannedSearchAdapter : public WebSearchAdapter {
 public:
  explicit CannedSearchAdapter(nlohmann::json responses);
  static std::unique_ptr<CannedSearchAdapter> from_file(const std::filesystem::path& path);
  std::vector<SearchResult> search(std::string_view query, int cap) override;

 private:
  nlohmann::json responses_;
};

class UnavailableSearchAdapter : public WebSearchAdapter {
 public:
  std::vector<SearchResult> search(std::string_view query, int cap) override;
};

/// GET <endpoint>?q=<query>&count=<cap>, expecting a JSON array of results.
class HttpSearchAdapter : public WebSearchAdapter {
 public:
  explicit HttpSearchAdapter(std::string endpoint);
  std::vector<SearchResult> search(std::string_view query, int cap) override;

 private:
  std::string endpoint_;
};

/// "canned:<path>", "unavailable", or an http(s) URL.
std::unique_ptr<WebSearchAdapter> make_search_adapter(const std::string& spec);

/// Adapter failures yield an empty list and a line appended to warnings.
std::vector<SearchResult> web_search(WebSearchAdapter& adapter, std::string_view query, int cap,
                                     std::vector<std::string>& warnings);

enum class KeywordSource { kWeb, kKb, kModel };
std::string_view to_string(KeywordSource source);

struct RoiKeyword {
  std::string text;
  KeywordSource source = KeywordSource::kModel;
};

inline constexpr int kMaxRoiKeywords = 10;

struct RegionsOfInterest {
  std::vector<RoiKeyword> keywords;

  std::vector<std::string> texts() const;
};

nlohmann::json roi_to_json(const RegionsOfInterest& roi);
RegionsOfInterest roi_from_json(const nlohmann::json& doc);

/// Case-insensitive dedupe of trimmed, non-empty phrases, keeping first
/// occurrences, truncated to max_count.
std::vector<std::string> dedupe_keywords(std::span<const std::string> phrases, int max_count = kMaxRoiKeywords);

struct ForageOptions {
  int chunks_per_keyword = 5;
  int web_results_per_keyword = 3;
  int max_keywords = kMaxRoiKeywords;
  double temperature = 0.1;
};

struct ForageResult {
  RegionsOfInterest roi;
  std::vector<std::string> warnings;
  bool fallback = false;  // summarizer failed, keywords echo the input
};

/// One forager_summary chat over whatever context the adapter and index give.
/// Throws Error(kInvalidArgument) for an empty keyword list.
ForageResult forage(std::span<const std::string> object_keywords, const KnowledgeIndex* index,
                    WebSearchAdapter* adapter, ChatClient& client, const ForageOptions& options = {});

}  // namespace sasav
