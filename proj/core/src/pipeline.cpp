#include "ram2c/pipeline.hpp"

#include "ram2c/util.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <exception>
#include <mutex>

namespace ram2c {

using nlohmann::json;

void StudentContext::validate() const {
    if (trim(profile).empty()) fail(Errc::precondition, "student profile must be non-empty");
}

std::string StudentContext::render() const {
    std::string out = "Student profile:\n" + profile + "\n";
    if (!history.empty()) {
        out += "\nEarlier in this discussion:\n";
        for (std::size_t i = 0; i < history.size(); ++i) {
            const auto& h = history[i];
            out += fmt::format("{}. Topic: {}\n   Student: {}\n   Teacher: {}\n", i + 1, h.topic,
                               h.answer, h.response);
        }
    }
    return out;
}

void PipelineConfig::validate() const {
    if (stages.empty()) fail(Errc::invalid_config, "pipeline needs at least one stage");
    std::set<Role> seen;
    for (auto r : stages) {
        if (!seen.insert(r).second)
            fail(Errc::invalid_config, "stage role repeated: " + to_string(r));
        auto it = experts_per_group.find(r);
        if (it == experts_per_group.end() || it->second < 1)
            fail(Errc::invalid_config, "experts_per_group must be positive for " + to_string(r));
        auto sc = source_scope.find(r);
        if (sc == source_scope.end() || sc->second.empty())
            fail(Errc::invalid_config, "source scope must be non-empty for " + to_string(r));
    }
    if (retrieval_k < 1) fail(Errc::invalid_config, "retrieval_k must be >= 1");
    if (quota < 1) fail(Errc::invalid_config, "quota must be >= 1");
    if (expert_backend.empty()) fail(Errc::invalid_config, "expert backend must be set");
}

PipelineConfig PipelineConfig::ablation(const std::string& name) {
    PipelineConfig c;
    if (name == "full") return c;
    if (name == "no-P") {
        c.stages = {Role::T, Role::E};
    } else if (name == "no-E") {
        c.stages = {Role::T, Role::P};
    } else if (name == "no-PE") {
        c.stages = {Role::T};
    } else if (name == "single-expert") {
        for (auto& [role, n] : c.experts_per_group) n = 1;
    } else {
        fail(Errc::invalid_config, "unknown ablation: " + name);
    }
    return c;
}

// ---------------------------------------------------------------------------
// Trace serialization

static json refs_to_json(const std::vector<AcceptedReference>& refs) {
    json arr = json::array();
    for (const auto& r : refs) {
        arr.push_back({{"chunk_id", r.chunk.chunk_id},
                       {"doc_id", r.chunk.doc_id},
                       {"source", to_string(r.chunk.source)},
                       {"text", r.chunk.text},
                       {"start", r.chunk.span.start},
                       {"end", r.chunk.span.end},
                       {"similarity", r.similarity},
                       {"accepts", r.tally.accepts},
                       {"rejects", r.tally.rejects}});
    }
    return arr;
}

json to_json(const RefinementTrace& trace) {
    json stages = json::array();
    for (const auto& s : trace.stages) {
        json experts = json::array();
        for (const auto& e : s.per_expert) {
            experts.push_back({{"expert_index", e.expert_index},
                               {"assigned_refs", e.assigned_refs},
                               {"analysis", e.analysis},
                               {"revision", e.revision}});
        }
        stages.push_back({{"role", to_string(s.role)},
                          {"accepted_refs", refs_to_json(s.accepted_refs)},
                          {"per_expert", std::move(experts)},
                          {"synthesis", s.synthesis},
                          {"input_draft", s.input_draft},
                          {"output_draft", s.output_draft}});
    }
    return {{"trace_id", trace.trace_id},
            {"topic", trace.topic},
            {"answer", trace.answer},
            {"student_context", trace.student_context},
            {"raw_draft", trace.raw_draft},
            {"stages", std::move(stages)},
            {"final", trace.final},
            {"complete", trace.complete}};
}

RefinementTrace trace_from_json(const json& j) {
    RefinementTrace t;
    t.trace_id = j.at("trace_id").get<std::string>();
    t.topic = j.at("topic").get<std::string>();
    t.answer = j.value("answer", "");
    t.student_context = j.at("student_context").get<std::string>();
    t.raw_draft = j.at("raw_draft").get<std::string>();
    t.final = j.at("final").get<std::string>();
    t.complete = j.value("complete", false);
    for (const auto& js : j.at("stages")) {
        StageTrace s;
        s.role = role_from_string(js.at("role").get<std::string>());
        s.synthesis = js.at("synthesis").get<std::string>();
        s.input_draft = js.at("input_draft").get<std::string>();
        s.output_draft = js.at("output_draft").get<std::string>();
        for (const auto& jr : js.at("accepted_refs")) {
            AcceptedReference r;
            r.chunk.chunk_id = jr.at("chunk_id").get<std::string>();
            r.chunk.doc_id = jr.at("doc_id").get<std::string>();
            r.chunk.source = source_kind_from_string(jr.at("source").get<std::string>());
            r.chunk.text = jr.at("text").get<std::string>();
            r.chunk.span = {jr.at("start").get<std::size_t>(), jr.at("end").get<std::size_t>()};
            r.similarity = jr.at("similarity").get<double>();
            r.tally.chunk_id = r.chunk.chunk_id;
            r.tally.accepts = jr.at("accepts").get<int>();
            r.tally.rejects = jr.at("rejects").get<int>();
            r.tally.accepted = r.tally.accepts > r.tally.rejects;
            s.accepted_refs.push_back(std::move(r));
        }
        for (const auto& je : js.at("per_expert")) {
            s.per_expert.push_back({je.at("expert_index").get<int>(),
                                    je.at("assigned_refs").get<std::vector<std::string>>(),
                                    je.at("analysis").get<std::string>(),
                                    je.at("revision").get<std::string>()});
        }
        t.stages.push_back(std::move(s));
    }
    return t;
}

TraceStore::TraceStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

void TraceStore::save(const RefinementTrace& trace) const {
    if (trace.trace_id.empty() || trace.trace_id.find('/') != std::string::npos)
        fail(Errc::invalid_argument, "invalid trace id: " + trace.trace_id);
    write_file_atomic(dir_ / (trace.trace_id + ".json"), to_json(trace).dump(2) + "\n");
}

bool TraceStore::exists(const std::string& trace_id) const {
    if (trace_id.empty() || trace_id.find('/') != std::string::npos) return false;
    return std::filesystem::exists(dir_ / (trace_id + ".json"));
}

RefinementTrace TraceStore::load(const std::string& trace_id) const {
    if (!exists(trace_id)) fail(Errc::not_found, "no trace " + trace_id);
    auto j = json::parse(read_file(dir_ / (trace_id + ".json")), nullptr, false);
    if (j.is_discarded()) fail(Errc::malformed_file, "corrupt trace file for " + trace_id);
    return trace_from_json(j);
}

// ---------------------------------------------------------------------------

std::map<int, std::vector<AcceptedReference>> assign_references(
    const std::vector<ExpertProfile>& experts, const std::vector<AcceptedReference>& refs) {
    if (experts.empty()) fail(Errc::precondition, "assign_references needs at least one expert");
    std::map<int, std::vector<AcceptedReference>> out;
    for (const auto& e : experts) out[e.index];
    for (std::size_t i = 0; i < refs.size(); ++i)
        out[experts[i % experts.size()].index].push_back(refs[i]);
    return out;
}

M2CPipeline::M2CPipeline(Gateway& gateway, const KnowledgeStore& store, PersonaLibrary personas,
                         PipelineConfig config)
    : gateway_(gateway), store_(store), personas_(std::move(personas)), config_(std::move(config)) {
    config_.validate();
}

std::vector<ExpertProfile> M2CPipeline::experts_for(Role role) const {
    auto it = config_.experts_per_group.find(role);
    if (it == config_.experts_per_group.end())
        fail(Errc::invalid_config, "no expert count configured for " + to_string(role));
    return personas_.make_group(role, it->second, config_.source_scope.at(role));
}

static std::string render_refs(const std::vector<AcceptedReference>& refs) {
    if (refs.empty()) return "(no references were assigned to you; rely on the student context)\n";
    std::string out;
    for (const auto& r : refs)
        out += fmt::format("[{}] ({})\n{}\n\n", r.chunk.chunk_id, to_string(r.chunk.source), r.chunk.text);
    return out;
}

ExpertOutput M2CPipeline::expert_revise(const ExpertProfile& expert, const std::string& draft,
                                        const std::string& topic, const std::string& answer,
                                        const StudentContext& context,
                                        const std::vector<AcceptedReference>& refs) const {
    if (trim(draft).empty()) fail(Errc::precondition, "draft must be non-empty");
    const std::string shared = fmt::format(
        "Discussion topic:\n{}\n\nStudent answer:\n{}\n\n{}\nCurrent teacher reply (draft):\n{}\n\n"
        "References assigned to you:\n{}",
        topic, answer, context.render(), draft, render_refs(refs));

    ChatRequest analysis_req;
    analysis_req.backend_id = config_.expert_backend;
    analysis_req.system_prompt = expert.persona + "\n\n[ROLE:" + expert.marker() + "] [TASK:analyze]";
    analysis_req.sampling.temperature = config_.generation_temperature;
    analysis_req.turns.push_back(
        {Speaker::user,
         shared + "Before changing anything, write an explicit analysis: what in each reference "
                  "is worth learning from, what the student's answer and background call for, "
                  "and what the draft is missing."});
    auto analysis = gateway_.complete(analysis_req).text;

    ChatRequest revise_req;
    revise_req.backend_id = config_.expert_backend;
    revise_req.system_prompt = expert.persona + "\n\n[ROLE:" + expert.marker() + "] [TASK:revise]";
    revise_req.sampling.temperature = config_.generation_temperature;
    revise_req.turns.push_back(
        {Speaker::user, shared + "Your analysis:\n" + analysis +
                            "\n\nUsing your analysis, rewrite the teacher reply. Return only the "
                            "revised reply."});
    auto revision = gateway_.complete(revise_req).text;
    return {std::move(analysis), std::move(revision)};
}

std::string M2CPipeline::synthesize(const std::vector<std::string>& revisions, Role role,
                                    const std::string& topic, const StudentContext& context) const {
    if (revisions.empty()) fail(Errc::precondition, "synthesize needs at least one revision");
    std::string body = fmt::format("Discussion topic:\n{}\n\n{}\n", topic, context.render());
    for (std::size_t i = 0; i < revisions.size(); ++i)
        body += fmt::format("Revision from expert {}:\n{}\n\n", i + 1, revisions[i]);
    body += "Combine these into one reply to the student. Return only the reply.";

    ChatRequest req;
    req.backend_id = config_.expert_backend;
    req.system_prompt = personas_.group_persona(role) + "\n\n[ROLE:" + to_string(role) +
                        "] [TASK:synthesize]";
    req.sampling.temperature = config_.generation_temperature;
    req.turns.push_back({Speaker::user, std::move(body)});
    return gateway_.complete(req).text;
}

StageTrace M2CPipeline::run_stage(const std::string& draft, const std::string& topic,
                                  const std::string& answer, const StudentContext& context,
                                  Role role) const {
    if (std::find(config_.stages.begin(), config_.stages.end(), role) == config_.stages.end())
        fail(Errc::precondition, "role " + to_string(role) + " is not a configured stage");

    StageTrace trace;
    trace.role = role;
    trace.input_draft = draft;
    const auto experts = experts_for(role);

    try {
        std::vector<ScoredCandidate> candidates;
        try {
            candidates = store_.search(topic + "\n" + answer, config_.retrieval_k,
                                       config_.source_scope.at(role));
        } catch (const Error& e) {
            // Sparse stores degrade to context-only revision.
            if (e.code() != Errc::empty_store) throw;
        }
        ReflectionOptions ropts;
        ropts.backend_id = config_.expert_backend;
        ropts.temperature = config_.assessment_temperature;
        ropts.parallelism = config_.parallelism;
        ropts.log = assessment_log_;
        trace.accepted_refs =
            filter_references(gateway_, candidates, experts, topic, answer, config_.quota, ropts);
    } catch (const Error& e) {
        throw StageFailure(fmt::format("{} stage: reference filtering failed: {}", to_string(role),
                                       e.what()),
                           trace, std::nullopt);
    }

    auto assignment = assign_references(experts, trace.accepted_refs);
    std::vector<std::optional<ExpertStep>> steps(experts.size());
    std::vector<std::exception_ptr> errors(experts.size());
    parallel_for(experts.size(), config_.parallelism, [&](std::size_t i) {
        const auto& ex = experts[i];
        const auto& refs = assignment.at(ex.index);
        try {
            auto out = expert_revise(ex, draft, topic, answer, context, refs);
            ExpertStep step;
            step.expert_index = ex.index;
            for (const auto& r : refs) step.assigned_refs.push_back(r.chunk.chunk_id);
            step.analysis = std::move(out.analysis);
            step.revision = std::move(out.revision);
            steps[i] = std::move(step);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });
    for (std::size_t i = 0; i < experts.size(); ++i) {
        if (steps[i]) trace.per_expert.push_back(*steps[i]);
    }
    for (std::size_t i = 0; i < experts.size(); ++i) {
        if (!errors[i]) continue;
        std::string what = "unknown error";
        try {
            std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        throw StageFailure(fmt::format("{} stage: expert {} failed: {}", to_string(role),
                                       experts[i].index, what),
                           trace, experts[i].index);
    }

    std::vector<std::string> revisions;
    for (const auto& s : trace.per_expert) revisions.push_back(s.revision);
    try {
        trace.synthesis = synthesize(revisions, role, topic, context);
    } catch (const Error& e) {
        throw StageFailure(fmt::format("{} stage: synthesis failed: {}", to_string(role), e.what()),
                           trace, std::nullopt);
    }
    trace.output_draft = trace.synthesis;
    return trace;
}

RefinementTrace M2CPipeline::run_pipeline(const std::string& raw_draft, const std::string& topic,
                                          const std::string& answer,
                                          const StudentContext& context) const {
    if (trim(raw_draft).empty()) fail(Errc::precondition, "raw draft must be non-empty");
    context.validate();

    RefinementTrace trace;
    trace.trace_id = make_id("trace");
    trace.topic = topic;
    trace.answer = answer;
    trace.student_context = context.render();
    trace.raw_draft = raw_draft;

    std::string draft = raw_draft;
    for (auto role : config_.stages) {
        try {
            trace.stages.push_back(run_stage(draft, topic, answer, context, role));
        } catch (const StageFailure& f) {
            trace.stages.push_back(f.partial());
            throw PipelineFailure(f.what(), std::move(trace));
        }
        draft = trace.stages.back().output_draft;
    }
    trace.final = draft;
    trace.complete = true;
    return trace;
}

}  // namespace ram2c
