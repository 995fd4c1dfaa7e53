#pragma once

#include "ram2c/gateway.hpp"
#include "ram2c/pipeline.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ram2c {

struct Scenario {
    std::string work_title;
    std::string grade_band = "grade 5-6";
    std::string language = "zh";

    void validate() const;
};

struct StudentProfile {
    std::string name;
    StudentContext context;
};

struct PreferenceRecord {
    std::string record_id;
    std::string Q;
    std::string A;
    std::string chosen;
    std::string rejected;
    std::string trace_id;
    std::string strong_backend;
    std::string weak_backend;
    std::string created_at;
};

nlohmann::json to_json(const PreferenceRecord& r);

/// The exported field set, in order.
inline constexpr std::array<const char*, 9> kRecordFields = {
    "record_id", "Q", "A", "chosen", "rejected", "trace_id", "strong_backend", "weak_backend",
    "created_at"};

struct GenerationJob {
    std::size_t count = 1;
    std::uint64_t seed = 0;
    Scenario scenario;
    PipelineConfig pipeline;
    std::string strong_backend = "strong";
    std::string weak_backend = "weak";
    std::string student_backend = "student";
    std::vector<StudentProfile> roster;
    std::size_t parallelism = 1;

    void validate() const;
};

/// Upper bound on the record count a single job may request.
inline constexpr std::size_t kMaxJobCount = 1'000'000;

struct JobReport {
    std::size_t requested = 0;
    std::size_t produced = 0;
    std::size_t failed = 0;
    std::filesystem::path output_path;
    std::vector<std::string> errors;
};

nlohmann::json to_json(const JobReport& r);

struct ValidationError {
    std::size_t line = 0;
    std::string reason;
};

struct ValidationReport {
    std::size_t valid_count = 0;
    std::vector<ValidationError> errors;
};

inline constexpr int kTopicRetries = 5;

/// Produces topics, simulated answers, and preference records from the
/// registered backends plus a refinement pipeline.
class DialogueFactory {
public:
    DialogueFactory(Gateway& gateway, const M2CPipeline& pipeline, TraceStore traces);

    /// Asks the strong backend for a topic not in `history` (exact string
    /// match); up to kTopicRetries attempts. `salt` is woven into the prompt
    /// so independent dialogues ask distinct questions.
    std::string generate_topic(const Scenario& scenario, const std::vector<std::string>& history,
                               const std::string& backend_id, const std::string& salt = {}) const;

    std::string simulate_answer(const std::string& topic, const StudentContext& student,
                                const Scenario& scenario, const std::string& backend_id) const;

    /// The teacher's unrefined reply from `backend_id`. The weak baseline uses
    /// the same prompt so the pair differs only in the pipeline.
    std::string direct_response(const std::string& topic, const std::string& answer,
                                const StudentContext& student, const Scenario& scenario,
                                const std::string& backend_id) const;

    /// Q, A, raw draft, refinement, and weak baseline for one dialogue. The
    /// trace is persisted; nothing else is written.
    PreferenceRecord produce_record(const Scenario& scenario, const StudentProfile& student,
                                    const GenerationJob& job, const std::string& salt = {}) const;

    /// Produces `job.count` records into `output` (JSON Lines) and writes a
    /// `<output>.report.json` sidecar.
    JobReport run_job(const GenerationJob& job, const std::filesystem::path& output) const;

    const TraceStore& traces() const { return traces_; }

private:
    Gateway& gateway_;
    const M2CPipeline& pipeline_;
    TraceStore traces_;
};

/// Checks every line of a dataset file. When `traces` is given, also checks
/// that each record's trace exists and its final text equals `chosen`.
ValidationReport validate_dataset(const std::filesystem::path& path,
                                  const TraceStore* traces = nullptr);

std::vector<StudentProfile> default_roster();

}  // namespace ram2c
