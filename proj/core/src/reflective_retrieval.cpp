#include "ram2c/reflective_retrieval.hpp"

#include "ram2c/error.hpp"
#include "ram2c/util.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>

namespace ram2c {

std::string to_string(Verdict v) {
    return v == Verdict::accept ? "accept" : "reject";
}

AssessmentLog::AssessmentLog(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::app);
    if (!out_) fail(Errc::unreadable_file, "cannot open assessment log: " + path.string());
}

void AssessmentLog::append(const ValueAssessment& a) {
    nlohmann::json j = {{"chunk_id", a.chunk_id},
                        {"expert", to_string(a.expert_role) + std::to_string(a.expert_index)},
                        {"verdict", to_string(a.verdict)},
                        {"rationale", a.rationale}};
    std::lock_guard lock(mutex_);
    out_ << j.dump() << '\n';
    out_.flush();
}

ValueAssessment parse_assessment(const std::string& reply, const ExpertProfile& expert,
                                 const std::string& chunk_id) {
    ValueAssessment a;
    a.expert_role = expert.role;
    a.expert_index = expert.index;
    a.chunk_id = chunk_id;
    a.verdict = Verdict::reject;

    std::string lowered = reply;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    const std::string token = "verdict:";
    std::string rationale = reply;
    if (auto pos = lowered.find(token); pos != std::string::npos) {
        auto rest = trim(std::string_view(lowered).substr(pos + token.size()));
        if (rest.rfind("accept", 0) == 0) a.verdict = Verdict::accept;
        // Drop the verdict token itself from the rationale.
        auto word_end = pos + token.size();
        while (word_end < reply.size() && std::isspace(static_cast<unsigned char>(reply[word_end])))
            ++word_end;
        while (word_end < reply.size() && std::isalpha(static_cast<unsigned char>(reply[word_end])))
            ++word_end;
        rationale = trim(reply.substr(0, pos) + reply.substr(word_end));
    }
    a.rationale = trim(rationale).empty() ? trim(reply) : trim(rationale);
    if (a.rationale.empty()) a.rationale = "(no rationale given)";
    return a;
}

std::string build_assessment_prompt(const ScoredCandidate& candidate, const std::string& topic,
                                    const std::string& answer, const ExpertProfile& expert) {
    std::string dims;
    for (std::size_t i = 0; i < expert.value_dimensions.size(); ++i) {
        if (i) dims += ", ";
        dims += expert.value_dimensions[i];
    }
    return fmt::format(
        "Judge whether the reference below has real educational reference value for improving "
        "a teacher's reply in this discussion. Similarity to the topic is not enough: judge what "
        "the reply could learn from the reference's {dims}.\n\n"
        "Discussion topic:\n{topic}\n\n"
        "Student answer:\n{answer}\n\n"
        "Reference [{id}] (source: {source}):\n{text}\n\n"
        "Reply with one line `VERDICT: accept` or `VERDICT: reject`, followed by a short "
        "rationale.",
        fmt::arg("dims", dims), fmt::arg("topic", topic), fmt::arg("answer", answer),
        fmt::arg("id", candidate.chunk.chunk_id), fmt::arg("source", to_string(candidate.chunk.source)),
        fmt::arg("text", candidate.chunk.text));
}

ValueAssessment assess(Gateway& gateway, const ScoredCandidate& candidate,
                       const std::string& topic, const std::string& answer,
                       const ExpertProfile& expert, const ReflectionOptions& options) {
    if (!candidate.chunk.vector)
        fail(Errc::precondition, "candidate " + candidate.chunk.chunk_id + " has no embedding");
    ChatRequest req;
    req.backend_id = options.backend_id;
    req.system_prompt = expert.persona + "\n\n[ROLE:" + expert.marker() + "] [TASK:assess]";
    req.turns.push_back({Speaker::user, build_assessment_prompt(candidate, topic, answer, expert)});
    req.sampling.temperature = options.temperature;
    req.sampling.max_tokens = 256;
    auto res = gateway.complete(req);
    auto a = parse_assessment(res.text, expert, candidate.chunk.chunk_id);
    if (options.log) options.log->append(a);
    return a;
}

VoteTally tally_votes(const std::vector<ValueAssessment>& assessments) {
    if (assessments.empty()) fail(Errc::precondition, "cannot tally an empty vote");
    VoteTally t;
    t.chunk_id = assessments.front().chunk_id;
    for (const auto& a : assessments) {
        if (a.chunk_id != t.chunk_id)
            fail(Errc::mixed_chunk_ids, "votes for '" + a.chunk_id + "' and '" + t.chunk_id +
                                            "' in one tally");
        if (a.verdict == Verdict::accept)
            ++t.accepts;
        else
            ++t.rejects;
    }
    t.accepted = t.accepts > t.rejects;
    return t;
}

bool reference_order(const AcceptedReference& a, const AcceptedReference& b) {
    if (a.tally.accepts != b.tally.accepts) return a.tally.accepts > b.tally.accepts;
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.chunk.chunk_id < b.chunk.chunk_id;
}

std::vector<AcceptedReference> select_references(
    const std::vector<ScoredCandidate>& candidates,
    const std::vector<std::vector<ValueAssessment>>& assessments_per_candidate, std::size_t quota) {
    if (candidates.size() != assessments_per_candidate.size())
        fail(Errc::precondition, "one assessment list per candidate is required");
    std::vector<AcceptedReference> accepted;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto tally = tally_votes(assessments_per_candidate[i]);
        if (tally.chunk_id != candidates[i].chunk.chunk_id)
            fail(Errc::mixed_chunk_ids, "assessments do not match candidate " +
                                            candidates[i].chunk.chunk_id);
        if (tally.accepted)
            accepted.push_back({candidates[i].chunk, tally, candidates[i].similarity});
    }
    std::sort(accepted.begin(), accepted.end(), reference_order);
    if (accepted.size() > quota) accepted.resize(quota);
    return accepted;
}

std::vector<AcceptedReference> filter_references(Gateway& gateway,
                                                 const std::vector<ScoredCandidate>& candidates,
                                                 const std::vector<ExpertProfile>& experts,
                                                 const std::string& topic,
                                                 const std::string& answer, std::size_t quota,
                                                 const ReflectionOptions& options) {
    if (experts.empty()) fail(Errc::precondition, "filter_references needs at least one expert");
    if (quota == 0) fail(Errc::precondition, "quota must be >= 1");
    if (candidates.empty()) return {};

    const std::size_t n_exp = experts.size();
    std::vector<std::vector<ValueAssessment>> per_candidate(
        candidates.size(), std::vector<ValueAssessment>(n_exp));
    parallel_for(candidates.size() * n_exp, options.parallelism, [&](std::size_t job) {
        const auto c = job / n_exp;
        const auto e = job % n_exp;
        per_candidate[c][e] = assess(gateway, candidates[c], topic, answer, experts[e], options);
    });
    return select_references(candidates, per_candidate, quota);
}

}  // namespace ram2c
