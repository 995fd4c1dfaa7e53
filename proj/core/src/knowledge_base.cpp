#include "ram2c/knowledge_base.hpp"

#include "ram2c/error.hpp"
#include "ram2c/util.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <unordered_set>

namespace ram2c {

using nlohmann::json;

std::string to_string(SourceKind kind) {
    switch (kind) {
        case SourceKind::class_records: return "class-records";
        case SourceKind::teaching_theory: return "teaching-theory";
        case SourceKind::edu_psych_theory: return "edu-psych-theory";
        case SourceKind::safety_prompts: return "safety-prompts";
        case SourceKind::literature_works: return "literature-works";
    }
    return "unknown";
}

SourceKind source_kind_from_string(const std::string& s) {
    for (auto kind : kAllSourceKinds) {
        if (to_string(kind) == s) return kind;
    }
    fail(Errc::invalid_params, "unknown source kind: " + s);
}

namespace {

bool is_cjk_unit(char32_t c) {
    return (c >= 0x3040 && c <= 0x30FF) ||    // hiragana, katakana
           (c >= 0x3400 && c <= 0x4DBF) ||    // CJK ext A
           (c >= 0x4E00 && c <= 0x9FFF) ||    // CJK unified
           (c >= 0xAC00 && c <= 0xD7AF) ||    // hangul syllables
           (c >= 0xF900 && c <= 0xFAFF) ||    // compatibility ideographs
           (c >= 0x20000 && c <= 0x2FFFF);    // ext B and beyond
}

// CJK punctuation and full-width forms separate words but are not counted.
bool is_separator(char32_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v' ||
           (c >= 0x3000 && c <= 0x303F) || (c >= 0xFF00 && c <= 0xFFEF);
}

}  // namespace

std::uint64_t count_words(std::string_view text) {
    std::uint64_t count = 0;
    bool in_word = false;
    for (char32_t c : utf8_decode(text)) {
        if (is_cjk_unit(c)) {
            ++count;
            in_word = false;
        } else if (is_separator(c)) {
            in_word = false;
        } else if (!in_word) {
            ++count;
            in_word = true;
        }
    }
    return count;
}

RawDocument RawDocument::make(std::string doc_id, SourceKind source, std::string title,
                              std::string body) {
    RawDocument d{std::move(doc_id), source, std::move(title), std::move(body), 0};
    d.word_count = count_words(d.body);
    return d;
}

void RawDocument::validate() const {
    if (doc_id.empty()) fail(Errc::invalid_params, "document id must be non-empty");
    if (body.empty()) fail(Errc::invalid_params, "document '" + doc_id + "' has an empty body");
    if (word_count != count_words(body))
        fail(Errc::invalid_params, "document '" + doc_id + "' word_count does not match its body");
}

static std::string chunk_id_for(const std::string& doc_id, std::size_t index) {
    return fmt::format("{}#{:04d}", doc_id, index);
}

std::vector<KnowledgeChunk> chunk_text(const std::string& body, std::size_t size,
                                       std::size_t overlap, const std::string& doc_id) {
    if (size == 0) fail(Errc::invalid_params, "chunk size must be positive");
    if (overlap >= size) fail(Errc::invalid_params, "overlap must be smaller than chunk size");
    if (body.empty()) fail(Errc::invalid_params, "cannot chunk an empty body");

    const auto cps = utf8_decode(body);
    const std::size_t n = cps.size();
    const std::size_t stride = size - overlap;
    std::vector<KnowledgeChunk> out;
    for (std::size_t start = 0;; start += stride) {
        const std::size_t end = std::min(start + size, n);
        KnowledgeChunk c;
        c.chunk_id = chunk_id_for(doc_id, out.size());
        c.doc_id = doc_id;
        c.text = utf8_encode(cps, start, end);
        c.span = {start, end};
        out.push_back(std::move(c));
        if (end == n) break;
    }
    return out;
}

std::vector<KnowledgeChunk> chunk_safety_records(const std::string& body,
                                                 const std::string& doc_id) {
    const auto cps = utf8_decode(body);
    struct Line {
        std::size_t start, end;
        bool blank;
    };
    std::vector<Line> lines;
    std::size_t line_start = 0;
    for (std::size_t i = 0; i <= cps.size(); ++i) {
        if (i == cps.size() || cps[i] == U'\n') {
            bool blank = true;
            for (std::size_t j = line_start; j < i; ++j) {
                if (!is_separator(cps[j])) {
                    blank = false;
                    break;
                }
            }
            lines.push_back({line_start, i, blank});
            line_start = i + 1;
        }
    }

    std::vector<KnowledgeChunk> out;
    std::size_t i = 0;
    while (i < lines.size()) {
        if (lines[i].blank) {
            ++i;
            continue;
        }
        std::size_t j = i;
        std::optional<std::string> category;
        while (j < lines.size() && !lines[j].blank) {
            std::string line = trim(utf8_encode(cps, lines[j].start, lines[j].end));
            const std::string key = "category:";
            if (line.size() >= key.size() && line.compare(0, key.size(), key) == 0)
                category = trim(line.substr(key.size()));
            ++j;
        }
        const std::size_t start = lines[i].start;
        std::size_t end = lines[j - 1].end;
        if (end > start && cps[end - 1] == U'\r') --end;
        if (!category)
            fail(Errc::invalid_params, "safety record in '" + doc_id + "' has no category line");
        auto known = std::find_if(kSafetyCategories.begin(), kSafetyCategories.end(),
                                  [&](const char* c) { return *category == c; });
        if (known == kSafetyCategories.end())
            fail(Errc::invalid_params, "unknown safety category '" + *category + "' in '" + doc_id + "'");
        KnowledgeChunk c;
        c.chunk_id = chunk_id_for(doc_id, out.size());
        c.doc_id = doc_id;
        c.source = SourceKind::safety_prompts;
        c.text = utf8_encode(cps, start, end);
        c.span = {start, end};
        c.safety_category = *category;
        out.push_back(std::move(c));
        i = j;
    }
    if (out.empty()) fail(Errc::invalid_params, "safety document '" + doc_id + "' has no records");
    return out;
}

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
    if (u.dimension() != v.dimension())
        fail(Errc::dimension_mismatch, fmt::format("cosine of vectors with dimensions {} and {}",
                                                   u.dimension(), v.dimension()));
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.values.size(); ++i) {
        dot += u.values[i] * v.values[i];
        nu += u.values[i] * u.values[i];
        nv += v.values[i] * v.values[i];
    }
    if (nu == 0.0 || nv == 0.0) fail(Errc::zero_vector, "cosine of a zero vector");
    return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

// ---------------------------------------------------------------------------

KnowledgeStore::KnowledgeStore(Gateway& gateway, std::string embedding_backend)
    : gateway_(gateway), embedding_backend_(std::move(embedding_backend)) {}

IngestReport KnowledgeStore::ingest(const std::vector<RawDocument>& docs,
                                    const ChunkingParams& params) {
    IngestReport report;
    for (auto kind : kAllSourceKinds) report.per_source_counts[kind] = 0;
    if (docs.empty()) return report;
    if (params.overlap >= params.size)
        fail(Errc::invalid_params, "overlap must be smaller than chunk size");

    std::unordered_set<std::string> seen;
    std::vector<DocEntry> staged;
    staged.reserve(docs.size());
    for (const auto& d : docs) {
        d.validate();
        if (!seen.insert(d.doc_id).second)
            fail(Errc::invalid_params, "document id repeated within one batch: " + d.doc_id);
        DocEntry e{d, d.source == SourceKind::safety_prompts
                          ? chunk_safety_records(d.body, d.doc_id)
                          : chunk_text(d.body, params.size, params.overlap, d.doc_id)};
        for (auto& c : e.chunks) c.source = d.source;
        staged.push_back(std::move(e));
    }

    // Embed everything before touching the store; any failure leaves it unchanged.
    std::vector<KnowledgeChunk*> pending;
    for (auto& e : staged)
        for (auto& c : e.chunks) pending.push_back(&c);
    const std::size_t batch = std::max<std::size_t>(1, embed_batch_size);
    for (std::size_t off = 0; off < pending.size(); off += batch) {
        const std::size_t end = std::min(off + batch, pending.size());
        std::vector<std::string> texts;
        texts.reserve(end - off);
        for (std::size_t i = off; i < end; ++i) texts.push_back(pending[i]->text);
        auto vectors = gateway_.embed(embedding_backend_, texts);
        for (std::size_t i = off; i < end; ++i) pending[i]->vector = std::move(vectors[i - off]);
    }

    std::unique_lock lock(mutex_);
    std::optional<std::size_t> existing_dim;
    for (const auto& [id, e] : docs_) {
        if (!e.chunks.empty()) {
            existing_dim = e.chunks.front().vector->dimension();
            break;
        }
    }
    if (existing_dim && !pending.empty() && pending.front()->vector->dimension() != *existing_dim)
        fail(Errc::dimension_mismatch, "batch embedding dimension differs from the store");
    for (auto& e : staged) {
        report.chunks_added += e.chunks.size();
        report.per_source_counts[e.doc.source] += e.chunks.size();
        auto id = e.doc.doc_id;
        docs_.insert_or_assign(std::move(id), std::move(e));
    }
    return report;
}

std::vector<ScoredCandidate> KnowledgeStore::search(
    const std::string& query, std::size_t k,
    const std::optional<std::set<SourceKind>>& source_filter) const {
    if (k == 0) fail(Errc::precondition, "k must be >= 1");
    if (query.empty()) fail(Errc::precondition, "query must be non-empty");
    {
        std::shared_lock lock(mutex_);
        bool any = false;
        for (const auto& [id, e] : docs_) {
            if ((!source_filter || source_filter->count(e.doc.source)) && !e.chunks.empty()) {
                any = true;
                break;
            }
        }
        if (!any) fail(Errc::empty_store, "no chunks stored for the requested sources");
    }
    auto q = gateway_.embed(embedding_backend_, {query});
    return search_vector(q.front(), k, source_filter);
}

std::vector<ScoredCandidate> KnowledgeStore::search_vector(
    const EmbeddingVector& query, std::size_t k,
    const std::optional<std::set<SourceKind>>& source_filter) const {
    if (k == 0) fail(Errc::precondition, "k must be >= 1");
    std::shared_lock lock(mutex_);
    struct Hit {
        const KnowledgeChunk* chunk;
        double similarity;
    };
    std::vector<Hit> hits;
    for (const auto& [id, e] : docs_) {
        if (source_filter && !source_filter->count(e.doc.source)) continue;
        for (const auto& c : e.chunks) hits.push_back({&c, cosine(query, *c.vector)});
    }
    if (hits.empty()) fail(Errc::empty_store, "no chunks stored for the requested sources");

    auto better = [](const Hit& a, const Hit& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.chunk->chunk_id < b.chunk->chunk_id;
    };
    const std::size_t take = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(),
                      better);

    std::vector<ScoredCandidate> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i)
        out.push_back({*hits[i].chunk, hits[i].similarity, static_cast<int>(i + 1)});
    return out;
}

StoreStats KnowledgeStore::stats() const {
    StoreStats s;
    for (auto kind : kAllSourceKinds) s[kind] = {};
    std::shared_lock lock(mutex_);
    for (const auto& [id, e] : docs_) {
        auto& row = s[e.doc.source];
        row.doc_count += 1;
        row.word_count += e.doc.word_count;
        row.chunk_count += e.chunks.size();
    }
    return s;
}

std::size_t KnowledgeStore::chunk_count() const {
    std::shared_lock lock(mutex_);
    std::size_t n = 0;
    for (const auto& [id, e] : docs_) n += e.chunks.size();
    return n;
}

std::vector<KnowledgeChunk> KnowledgeStore::chunks() const {
    std::shared_lock lock(mutex_);
    std::vector<KnowledgeChunk> out;
    for (const auto& [id, e] : docs_) out.insert(out.end(), e.chunks.begin(), e.chunks.end());
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.chunk_id < b.chunk_id; });
    return out;
}

void KnowledgeStore::save(const std::filesystem::path& path) const {
    json docs = json::array();
    {
        std::shared_lock lock(mutex_);
        for (const auto& [id, e] : docs_) {
            json chunks = json::array();
            for (const auto& c : e.chunks) {
                json jc = {{"chunk_id", c.chunk_id},
                           {"start", c.span.start},
                           {"end", c.span.end},
                           {"vector", c.vector->values}};
                if (c.safety_category) jc["safety_category"] = *c.safety_category;
                chunks.push_back(std::move(jc));
            }
            docs.push_back({{"doc_id", e.doc.doc_id},
                            {"source", to_string(e.doc.source)},
                            {"title", e.doc.title},
                            {"body", e.doc.body},
                            {"word_count", e.doc.word_count},
                            {"chunks", std::move(chunks)}});
        }
    }
    json root = {{"embedding_backend", embedding_backend_}, {"documents", std::move(docs)}};
    write_file_atomic(path, std::string(kSnapshotMagic) + "\n" + root.dump() + "\n");
}

void KnowledgeStore::load(const std::filesystem::path& path) {
    const std::string contents = read_file(path);
    auto nl = contents.find('\n');
    if (nl == std::string::npos || contents.substr(0, nl) != kSnapshotMagic)
        fail(Errc::malformed_file, "not a knowledge-store snapshot: " + path.string());
    json root = json::parse(contents.substr(nl + 1), nullptr, false);
    if (root.is_discarded() || !root.contains("documents"))
        fail(Errc::malformed_file, "corrupt knowledge-store snapshot: " + path.string());

    std::map<std::string, DocEntry> loaded;
    try {
        for (const auto& jd : root["documents"]) {
            DocEntry e;
            e.doc.doc_id = jd.at("doc_id").get<std::string>();
            e.doc.source = source_kind_from_string(jd.at("source").get<std::string>());
            e.doc.title = jd.at("title").get<std::string>();
            e.doc.body = jd.at("body").get<std::string>();
            e.doc.word_count = jd.at("word_count").get<std::uint64_t>();
            e.doc.validate();
            const auto cps = utf8_decode(e.doc.body);
            for (const auto& jc : jd.at("chunks")) {
                KnowledgeChunk c;
                c.chunk_id = jc.at("chunk_id").get<std::string>();
                c.doc_id = e.doc.doc_id;
                c.source = e.doc.source;
                c.span = {jc.at("start").get<std::size_t>(), jc.at("end").get<std::size_t>()};
                if (c.span.start >= c.span.end || c.span.end > cps.size())
                    fail(Errc::malformed_file, "chunk span out of range: " + c.chunk_id);
                c.text = utf8_encode(cps, c.span.start, c.span.end);
                c.vector = EmbeddingVector{jc.at("vector").get<std::vector<double>>()};
                if (jc.contains("safety_category"))
                    c.safety_category = jc["safety_category"].get<std::string>();
                e.chunks.push_back(std::move(c));
            }
            auto id = e.doc.doc_id;
            loaded.insert_or_assign(std::move(id), std::move(e));
        }
    } catch (const json::exception& ex) {
        fail(Errc::malformed_file, std::string("corrupt knowledge-store snapshot: ") + ex.what());
    }
    std::unique_lock lock(mutex_);
    docs_ = std::move(loaded);
}

std::vector<RawDocument> load_manifest(const std::filesystem::path& manifest,
                                       const std::filesystem::path& root) {
    std::ifstream in(manifest);
    if (!in) fail(Errc::unreadable_file, "cannot read manifest: " + manifest.string());
    std::vector<RawDocument> docs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        auto fields = split(t, '\t');
        if (fields.size() < 2 || fields.size() > 3)
            fail(Errc::malformed_file,
                 fmt::format("{}:{}: expected path<TAB>source<TAB>title", manifest.string(), lineno));
        std::filesystem::path rel = trim(fields[0]);
        auto source = source_kind_from_string(trim(fields[1]));
        std::string title = fields.size() == 3 ? trim(fields[2]) : rel.stem().string();
        auto doc_id = (rel.parent_path() / rel.stem()).generic_string();
        docs.push_back(RawDocument::make(doc_id, source, title, read_file(root / rel)));
    }
    return docs;
}

}  // namespace ram2c
