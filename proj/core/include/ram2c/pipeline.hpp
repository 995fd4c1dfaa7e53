#pragma once

#include "ram2c/error.hpp"
#include "ram2c/expert.hpp"
#include "ram2c/gateway.hpp"
#include "ram2c/knowledge_base.hpp"
#include "ram2c/reflective_retrieval.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ram2c {

struct HistoryEntry {
    std::string topic;
    std::string answer;
    std::string response;
};

struct StudentContext {
    std::string profile;
    std::vector<HistoryEntry> history;

    void validate() const;
    /// Profile plus prior exchanges, as it is shown to experts.
    std::string render() const;
};

struct PipelineConfig {
    std::vector<Role> stages = {Role::T, Role::P, Role::E};
    std::map<Role, int> experts_per_group = {{Role::T, 3}, {Role::P, 3}, {Role::E, 3}};
    std::map<Role, std::set<SourceKind>> source_scope = {
        {Role::T, default_source_scope(Role::T)},
        {Role::P, default_source_scope(Role::P)},
        {Role::E, default_source_scope(Role::E)}};
    std::size_t retrieval_k = 18;
    std::size_t quota = 3;
    /// Backend that plays every expert, assessor, and synthesizer.
    std::string expert_backend = "strong";
    double generation_temperature = kGenerationTemperature;
    double assessment_temperature = kAssessmentTemperature;
    /// Concurrent gateway calls within one stage (assessments, revisions).
    std::size_t parallelism = 1;

    void validate() const;

    /// Named ablations: "full", "no-P", "no-E", "no-PE", "single-expert".
    static PipelineConfig ablation(const std::string& name);
};

struct ExpertStep {
    int expert_index = 1;
    std::vector<std::string> assigned_refs;  // chunk ids
    std::string analysis;
    std::string revision;
};

struct StageTrace {
    Role role = Role::T;
    std::vector<AcceptedReference> accepted_refs;
    std::vector<ExpertStep> per_expert;
    std::string synthesis;
    std::string input_draft;
    std::string output_draft;
};

struct RefinementTrace {
    std::string trace_id;
    std::string topic;
    std::string answer;
    std::string student_context;
    std::string raw_draft;
    std::vector<StageTrace> stages;
    std::string final;
    bool complete = false;
};

nlohmann::json to_json(const RefinementTrace& trace);
RefinementTrace trace_from_json(const nlohmann::json& j);

/// One JSON file per trace, `<dir>/<trace_id>.json`.
class TraceStore {
public:
    explicit TraceStore(std::filesystem::path dir);
    void save(const RefinementTrace& trace) const;
    RefinementTrace load(const std::string& trace_id) const;
    bool exists(const std::string& trace_id) const;
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
};

/// A stage aborted; `partial` holds whatever the stage produced.
class StageFailure : public Error {
public:
    StageFailure(const std::string& message, StageTrace partial, std::optional<int> expert_index)
        : Error(Errc::stage_failure, message),
          partial_(std::move(partial)),
          expert_index_(expert_index) {}

    const StageTrace& partial() const { return partial_; }
    std::optional<int> expert_index() const { return expert_index_; }

private:
    StageTrace partial_;
    std::optional<int> expert_index_;
};

/// The pipeline aborted; `partial` holds the completed stages and the failing one.
class PipelineFailure : public Error {
public:
    PipelineFailure(const std::string& message, RefinementTrace partial)
        : Error(Errc::stage_failure, message), partial_(std::move(partial)) {}

    const RefinementTrace& partial() const { return partial_; }

private:
    RefinementTrace partial_;
};

/// Round-robin by reference order: ref i goes to expert (i mod n).
/// Keys are expert indices.
std::map<int, std::vector<AcceptedReference>> assign_references(
    const std::vector<ExpertProfile>& experts, const std::vector<AcceptedReference>& refs);

struct ExpertOutput {
    std::string analysis;
    std::string revision;
};

/// Sequential multi-role refinement. Each stage retrieves from the group's
/// scope, filters by group vote, hands references to experts round-robin,
/// collects analysis and revision per expert, and synthesizes one draft.
class M2CPipeline {
public:
    M2CPipeline(Gateway& gateway, const KnowledgeStore& store, PersonaLibrary personas,
                PipelineConfig config);

    const PipelineConfig& config() const { return config_; }
    std::vector<ExpertProfile> experts_for(Role role) const;

    ExpertOutput expert_revise(const ExpertProfile& expert, const std::string& draft,
                               const std::string& topic, const std::string& answer,
                               const StudentContext& context,
                               const std::vector<AcceptedReference>& refs) const;

    std::string synthesize(const std::vector<std::string>& revisions, Role role,
                           const std::string& topic, const StudentContext& context) const;

    StageTrace run_stage(const std::string& draft, const std::string& topic,
                         const std::string& answer, const StudentContext& context,
                         Role role) const;

    RefinementTrace run_pipeline(const std::string& raw_draft, const std::string& topic,
                                 const std::string& answer, const StudentContext& context) const;

    /// Optional audit sink for group assessments.
    void set_assessment_log(AssessmentLog* log) { assessment_log_ = log; }

private:
    Gateway& gateway_;
    const KnowledgeStore& store_;
    PersonaLibrary personas_;
    PipelineConfig config_;
    AssessmentLog* assessment_log_ = nullptr;
};

}  // namespace ram2c
