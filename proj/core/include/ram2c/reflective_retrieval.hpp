#pragma once

#include "ram2c/expert.hpp"
#include "ram2c/gateway.hpp"
#include "ram2c/knowledge_base.hpp"

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

namespace ram2c {

enum class Verdict { accept, reject };

std::string to_string(Verdict v);

struct ValueAssessment {
    Role expert_role = Role::T;
    int expert_index = 1;
    std::string chunk_id;
    Verdict verdict = Verdict::reject;
    std::string rationale;
};

struct VoteTally {
    std::string chunk_id;
    int accepts = 0;
    int rejects = 0;
    bool accepted = false;
};

struct AcceptedReference {
    KnowledgeChunk chunk;
    VoteTally tally;
    double similarity = 0.0;
};

/// Append-only JSON Lines audit log, one record per assessment.
class AssessmentLog {
public:
    explicit AssessmentLog(const std::filesystem::path& path);
    void append(const ValueAssessment& a);

private:
    std::mutex mutex_;
    std::ofstream out_;
};

struct ReflectionOptions {
    std::string backend_id;
    double temperature = kAssessmentTemperature;
    std::size_t parallelism = 1;
    AssessmentLog* log = nullptr;
};

/// Parses an assessment reply. A line containing "VERDICT: accept" means
/// accept; anything else, including an unparseable reply, is a reject.
ValueAssessment parse_assessment(const std::string& reply, const ExpertProfile& expert,
                                 const std::string& chunk_id);

std::string build_assessment_prompt(const ScoredCandidate& candidate, const std::string& topic,
                                    const std::string& answer, const ExpertProfile& expert);

ValueAssessment assess(Gateway& gateway, const ScoredCandidate& candidate,
                       const std::string& topic, const std::string& answer,
                       const ExpertProfile& expert, const ReflectionOptions& options);

/// Strict majority: accepted iff accepts > rejects, so even-panel ties reject.
VoteTally tally_votes(const std::vector<ValueAssessment>& assessments);

/// Ordering of accepted references: accepts desc, similarity desc, chunk_id asc.
bool reference_order(const AcceptedReference& a, const AcceptedReference& b);

/// Every expert assesses every candidate; majority-accepted chunks are
/// returned in reference_order, truncated to `quota`.
std::vector<AcceptedReference> filter_references(Gateway& gateway,
                                                 const std::vector<ScoredCandidate>& candidates,
                                                 const std::vector<ExpertProfile>& experts,
                                                 const std::string& topic,
                                                 const std::string& answer, std::size_t quota,
                                                 const ReflectionOptions& options);

/// The fold used by filter_references once assessments exist. Exposed so the
/// ordering and permutation properties can be checked without a gateway.
std::vector<AcceptedReference> select_references(
    const std::vector<ScoredCandidate>& candidates,
    const std::vector<std::vector<ValueAssessment>>& assessments_per_candidate, std::size_t quota);

}  // namespace ram2c
