#pragma once

#include "ram2c/gateway.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

namespace ram2c {

enum class SourceKind {
    class_records,
    teaching_theory,
    edu_psych_theory,
    safety_prompts,
    literature_works,
};

inline constexpr std::array<SourceKind, 5> kAllSourceKinds = {
    SourceKind::class_records, SourceKind::teaching_theory, SourceKind::edu_psych_theory,
    SourceKind::safety_prompts, SourceKind::literature_works};

std::string to_string(SourceKind kind);
SourceKind source_kind_from_string(const std::string& s);

/// Categories a safety-prompt record may be tagged with.
inline constexpr std::array<const char*, 7> kSafetyCategories = {
    "crimes and illegal activities", "ethics and morality", "insult", "mental health",
    "physical harm", "privacy and property", "unfairness and discrimination"};

/// Script-aware unit count: each CJK ideograph, kana, or hangul syllable
/// counts as one unit; every other maximal run of non-space characters
/// counts as one word.
std::uint64_t count_words(std::string_view text);

struct RawDocument {
    std::string doc_id;
    SourceKind source = SourceKind::literature_works;
    std::string title;
    std::string body;
    std::uint64_t word_count = 0;

    static RawDocument make(std::string doc_id, SourceKind source, std::string title,
                            std::string body);
    void validate() const;
};

/// Half-open span in Unicode code points of the parent body.
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;
    bool operator==(const Span&) const = default;
};

struct KnowledgeChunk {
    std::string chunk_id;
    std::string doc_id;
    SourceKind source = SourceKind::literature_works;
    std::string text;
    Span span;
    std::optional<EmbeddingVector> vector;
    /// Set only for safety-prompts chunks.
    std::optional<std::string> safety_category;
};

struct ScoredCandidate {
    KnowledgeChunk chunk;
    double similarity = 0.0;
    int rank = 0;
};

struct ChunkingParams {
    std::size_t size = 512;
    std::size_t overlap = 64;
};

/// Fixed-stride windows of `size` code points advancing by `size - overlap`.
/// Chunk ids are "<doc_id>#<4-digit index>"; callers may pass an empty doc_id.
std::vector<KnowledgeChunk> chunk_text(const std::string& body, std::size_t size,
                                       std::size_t overlap, const std::string& doc_id = {});

/// Splits a safety-prompts body into one chunk per blank-line separated
/// record. Each record must contain a `category:` line naming one of
/// kSafetyCategories.
std::vector<KnowledgeChunk> chunk_safety_records(const std::string& body,
                                                 const std::string& doc_id);

double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

struct IngestReport {
    std::size_t chunks_added = 0;
    std::map<SourceKind, std::size_t> per_source_counts;
};

struct SourceStats {
    std::uint64_t doc_count = 0;
    std::uint64_t word_count = 0;
    std::uint64_t chunk_count = 0;
    bool operator==(const SourceStats&) const = default;
};

using StoreStats = std::map<SourceKind, SourceStats>;

/// In-memory multi-source store with exact linear-scan retrieval.
///
/// Readers (search, stats) share the lock; ingest embeds outside the lock and
/// commits the whole batch under an exclusive lock, so a failed batch leaves
/// the store untouched and readers never see half a batch.
class KnowledgeStore {
public:
    KnowledgeStore(Gateway& gateway, std::string embedding_backend);

    IngestReport ingest(const std::vector<RawDocument>& docs, const ChunkingParams& params = {});

    std::vector<ScoredCandidate> search(const std::string& query, std::size_t k,
                                        const std::optional<std::set<SourceKind>>& source_filter =
                                            std::nullopt) const;
    std::vector<ScoredCandidate> search_vector(const EmbeddingVector& query, std::size_t k,
                                               const std::optional<std::set<SourceKind>>&
                                                   source_filter = std::nullopt) const;

    StoreStats stats() const;
    std::size_t chunk_count() const;
    /// Snapshot of all chunks ordered by chunk_id.
    std::vector<KnowledgeChunk> chunks() const;

    /// Snapshot file: a magic line followed by one JSON document.
    void save(const std::filesystem::path& path) const;
    void load(const std::filesystem::path& path);

    static constexpr std::string_view kSnapshotMagic = "RAM2C-KB-SNAPSHOT v1";

    std::size_t embed_batch_size = 64;

private:
    struct DocEntry {
        RawDocument doc;
        std::vector<KnowledgeChunk> chunks;
    };

    Gateway& gateway_;
    std::string embedding_backend_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, DocEntry> docs_;
};

/// Reads a tab-separated manifest (`path<TAB>source-kind<TAB>title`, `#`
/// comments allowed) and loads each referenced file relative to `root`.
/// The doc_id is the manifest path with its extension removed.
std::vector<RawDocument> load_manifest(const std::filesystem::path& manifest,
                                       const std::filesystem::path& root);

}  // namespace ram2c
