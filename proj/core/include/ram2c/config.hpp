#pragma once

#include "ram2c/dialogue_factory.hpp"
#include "ram2c/gateway.hpp"
#include "ram2c/knowledge_base.hpp"
#include "ram2c/pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ram2c {

/// Directory holding persona templates and rubric.json. Resolution order:
/// $RAM2C_ASSET_DIR, the source tree, the install prefix.
std::filesystem::path default_asset_dir();

/// Application configuration, read from an INI file.
///
///   [general]   data_dir, http_bind, persona_dir, rubric, dataset_seed,
///               eval_seed, max_in_flight, parallelism, max_session_turns
///   [chunking]  size, overlap
///   [pipeline]  stages (e.g. "T,P,E"), experts_T/P/E, retrieval_k, quota,
///               scope_T/P/E (comma-separated source kinds)
///   [roles]     strong, weak, student, embedding   (backend ids)
///   [backend.<id>] kind, endpoint, auth_token_env, chat_model,
///               embedding_model, max_attempts, backoff_ms, seed, embedding_dim
///   [scenario]  work_title, grade_band, language
///   [student.<name>] profile
///
/// Any key can be overridden by the environment variable
/// RAM2C_<SECTION>_<KEY> (uppercased, '.' and '-' mapped to '_').
struct AppConfig {
    std::vector<BackendDescriptor> backends;
    PipelineConfig pipeline;
    ChunkingParams chunking;
    std::filesystem::path data_dir = "ram2c-data";
    std::string http_bind = "127.0.0.1:8080";
    std::filesystem::path persona_dir;
    std::filesystem::path rubric_path;
    std::uint64_t dataset_seed = 7;
    std::uint64_t eval_seed = 11;
    std::size_t max_in_flight = 8;
    std::size_t parallelism = 1;
    std::size_t max_session_turns = 0;  // 0 = unbounded

    std::string strong_backend = "strong";
    std::string weak_backend = "weak";
    std::string student_backend = "student";
    std::string embedding_backend = "embed";

    Scenario scenario{"Robinson Crusoe", "grade 5-6", "zh"};
    std::vector<StudentProfile> roster;

    /// All four roles backed by scripted mocks; no file needed.
    static AppConfig defaults();
    static AppConfig load(const std::filesystem::path& path);

    /// Replaces every backend with a scripted mock under the same id.
    void use_mock_backends();
    void validate() const;

    std::filesystem::path kb_snapshot() const { return data_dir / "kb" / "store.snapshot"; }
    std::filesystem::path traces_dir() const { return data_dir / "traces"; }
    std::filesystem::path datasets_dir() const { return data_dir / "datasets"; }
    std::filesystem::path eval_dir() const { return data_dir / "eval"; }
    std::filesystem::path sessions_dir() const { return data_dir / "sessions"; }
};

}  // namespace ram2c
