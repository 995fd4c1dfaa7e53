#pragma once

#include "ram2c/config.hpp"
#include "ram2c/dialogue_factory.hpp"
#include "ram2c/eval_harness.hpp"
#include "ram2c/gateway.hpp"
#include "ram2c/knowledge_base.hpp"
#include "ram2c/pipeline.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace httplib {
class Server;
}

namespace ram2c {

struct SessionTurn {
    std::string topic;
    std::string answer;
    std::string final_response;
    std::string trace_id;
};

enum class SessionStatus { open, closed };

struct SessionState {
    std::string session_id;
    Scenario scenario;
    StudentContext student;
    std::vector<SessionTurn> turns;
    std::string current_topic;
    SessionStatus status = SessionStatus::open;
};

nlohmann::json to_json(const SessionState& s);
SessionState session_from_json(const nlohmann::json& j);

/// Everything one process needs, wired from an AppConfig.
class Runtime {
public:
    explicit Runtime(AppConfig config);

    /// Loads the knowledge-store snapshot from data_dir if one exists.
    void load_knowledge_store();
    void save_knowledge_store() const;

    const AppConfig& config() const { return config_; }
    Gateway& gateway() { return *gateway_; }
    KnowledgeStore& store() { return *store_; }
    const M2CPipeline& pipeline() const { return *pipeline_; }
    DialogueFactory& factory() { return *factory_; }
    EvalStore& eval() { return *eval_; }
    const TraceStore& traces() const { return traces_; }
    const std::vector<RubricCriterion>& rubric() const { return rubric_; }

    GenerationJob make_job(std::size_t count, std::uint64_t seed) const;

private:
    AppConfig config_;
    std::unique_ptr<Gateway> gateway_;
    std::unique_ptr<KnowledgeStore> store_;
    std::unique_ptr<M2CPipeline> pipeline_;
    TraceStore traces_;
    std::unique_ptr<DialogueFactory> factory_;
    std::unique_ptr<EvalStore> eval_;
    std::vector<RubricCriterion> rubric_;
};

struct AnswerResult {
    std::string final_response;
    std::string trace_id;
    std::string next_topic;
};

/// Live dialogue sessions, one JSON snapshot per session under
/// data_dir/sessions. Operations on one session are serialized; distinct
/// sessions proceed in parallel.
class SessionManager {
public:
    explicit SessionManager(Runtime& runtime);

    SessionState start_session(const Scenario& scenario, const std::string& student_profile);
    /// Throws Errc::closed_session for closed sessions. On a pipeline failure
    /// the partial trace is persisted and PipelineFailure propagates.
    AnswerResult post_answer(const std::string& session_id, const std::string& answer);
    SessionState close(const std::string& session_id);
    SessionState get(const std::string& session_id);

private:
    std::shared_ptr<std::mutex> lock_for(const std::string& session_id);
    SessionState load(const std::string& session_id) const;
    void persist(const SessionState& s) const;

    Runtime& runtime_;
    std::filesystem::path dir_;
    std::mutex locks_mutex_;
    std::map<std::string, std::shared_ptr<std::mutex>> locks_;
};

enum class JobStatus { queued, running, done, failed };

std::string to_string(JobStatus s);

struct JobRecord {
    std::string job_id;
    std::size_t count = 0;
    std::uint64_t seed = 0;
    JobStatus status = JobStatus::queued;
    std::optional<JobReport> report;
    std::string error;
};

nlohmann::json to_json(const JobRecord& j);

/// Runs dataset jobs on background threads; status is polled.
class JobManager {
public:
    explicit JobManager(Runtime& runtime);
    ~JobManager();

    JobRecord submit(std::size_t count, std::uint64_t seed);
    std::optional<JobRecord> get(const std::string& job_id) const;
    /// Blocks until every submitted job has finished.
    void wait_all();

private:
    void persist(const JobRecord& r) const;

    Runtime& runtime_;
    mutable std::mutex mutex_;
    std::map<std::string, JobRecord> jobs_;
    std::vector<std::jthread> workers_;
};

/// HTTP/JSON API over a Runtime. Annotator-facing routes never expose the
/// hidden left/right mapping, expert rationales, or trace contents.
class HttpService {
public:
    static constexpr const char* kVolunteerHeader = "X-Volunteer-Id";

    explicit HttpService(Runtime& runtime);
    ~HttpService();

    /// Binds `host:port`; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop(); blocks the calling thread.
    void listen();
    /// Binds and serves on a background thread.
    int start(const std::string& host, int port);
    void stop();

    SessionManager& sessions() { return sessions_; }
    JobManager& jobs() { return jobs_; }

private:
    void install_routes();

    Runtime& runtime_;
    SessionManager sessions_;
    JobManager jobs_;
    std::unique_ptr<httplib::Server> server_;
    std::jthread thread_;
};

/// Splits "host:port"; throws Errc::invalid_config on a malformed address.
std::pair<std::string, int> parse_bind(const std::string& bind);

}  // namespace ram2c
