#pragma once

#include "ram2c/config.hpp"
#include "ram2c/error.hpp"
#include "ram2c/expert.hpp"
#include "ram2c/gateway.hpp"
#include "ram2c/knowledge_base.hpp"
#include "ram2c/pipeline.hpp"
#include "ram2c/reflective_retrieval.hpp"
#include "ram2c/util.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace ram2c::testing {

inline std::filesystem::path fixture_dir() { return RAM2C_TEST_FIXTURE_DIR; }
inline std::filesystem::path asset_dir() { return RAM2C_TEST_ASSET_DIR; }

class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("ram2c-test-" + to_hex((std::uint64_t{rd()} << 32) | rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline BackendDescriptor mock_descriptor(const std::string& id, std::uint64_t seed) {
    BackendDescriptor d;
    d.id = id;
    d.kind = BackendKind::scripted_mock;
    d.mock_seed = seed;
    d.retry = {1, 1};
    return d;
}

inline PersonaLibrary personas() { return PersonaLibrary::load(asset_dir() / "personas"); }

/// Gateway with strong/weak/student/embed mocks and a knowledge store over it.
/// `strong_rules` script the backend that plays every expert.
struct MockStack {
    Gateway gateway{8};
    KnowledgeStore store{gateway, "embed"};

    explicit MockStack(std::vector<MockRule> strong_rules = {}) {
        gateway.add_backend(mock_descriptor("strong", 1),
                            std::make_shared<ScriptedMockBackend>(1, 64, std::move(strong_rules)));
        gateway.add_backend(mock_descriptor("weak", 2));
        gateway.add_backend(mock_descriptor("student", 3));
        gateway.add_backend(mock_descriptor("embed", 4));
    }

    void ingest_fixture_corpus(ChunkingParams params = {200, 40}) {
        auto root = fixture_dir() / "corpus";
        store.ingest(load_manifest(root / "manifest.tsv", root), params);
    }
};

inline StudentContext sample_student() {
    return {"Grade 5 student, quiet in class, enjoys adventure stories.", {}};
}

// ---------------------------------------------------------------------------
// 18-candidate reference-value fixture. Three T experts vote; the two most
// similar chunks (doc-04, doc-05) win only T1's vote, the least similar
// voted chunk (doc-15) wins all three.

inline const std::map<std::string, double>& panel_similarities() {
    static const std::map<std::string, double> sims = {
        {"doc-01", 0.86}, {"doc-02", 0.71}, {"doc-03", 0.84}, {"doc-04", 0.91}, {"doc-05", 0.89},
        {"doc-06", 0.80}, {"doc-07", 0.78}, {"doc-08", 0.76}, {"doc-09", 0.63}, {"doc-10", 0.74},
        {"doc-11", 0.58}, {"doc-12", 0.69}, {"doc-13", 0.66}, {"doc-14", 0.61}, {"doc-15", 0.42},
        {"doc-16", 0.55}, {"doc-17", 0.52}, {"doc-18", 0.49}};
    return sims;
}

/// doc -> experts voting accept.
inline const std::map<std::string, std::vector<std::string>>& panel_votes() {
    static const std::map<std::string, std::vector<std::string>> votes = {
        {"doc-15", {"T1", "T2", "T3"}}, {"doc-09", {"T1", "T2"}}, {"doc-02", {"T2", "T3"}},
        {"doc-11", {"T1", "T3"}},       {"doc-04", {"T1"}},       {"doc-05", {"T1"}}};
    return votes;
}

/// Candidates in search order (similarity desc), ranks 1..18.
inline std::vector<ScoredCandidate> panel_candidates() {
    std::vector<ScoredCandidate> out;
    for (const auto& [doc, sim] : panel_similarities()) {
        ScoredCandidate c;
        c.chunk.doc_id = doc;
        c.chunk.chunk_id = doc + "#0000";
        c.chunk.source = SourceKind::class_records;
        c.chunk.text = "Excerpt from " + doc + ".";
        c.chunk.span = {0, c.chunk.text.size()};
        c.chunk.vector = EmbeddingVector{{1.0, 0.0}};
        c.similarity = sim;
        out.push_back(std::move(c));
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.similarity > b.similarity; });
    for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i + 1);
    return out;
}

inline std::vector<MockRule> panel_rules() {
    std::vector<MockRule> rules;
    for (const auto& [doc, experts] : panel_votes()) {
        for (const auto& e : experts) {
            MockRule r;
            r.role = e;
            r.task = "assess";
            r.needle = "Reference [" + doc + "#0000]";
            r.reply = "VERDICT: accept. Vivid wording worth imitating.";
            rules.push_back(r);
        }
    }
    MockRule reject;
    reject.task = "assess";
    reject.reply = "VERDICT: reject. Similar topic, little to learn from.";
    rules.push_back(reject);
    return rules;
}

}  // namespace ram2c::testing
