#include "ram2c/dialogue_factory.hpp"

#include "ram2c/error.hpp"
#include "ram2c/util.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <unordered_set>

namespace ram2c {

using nlohmann::json;

void Scenario::validate() const {
    if (trim(work_title).empty()) fail(Errc::precondition, "scenario work_title must be non-empty");
}

json to_json(const PreferenceRecord& r) {
    return {{"record_id", r.record_id},       {"Q", r.Q},
            {"A", r.A},                       {"chosen", r.chosen},
            {"rejected", r.rejected},         {"trace_id", r.trace_id},
            {"strong_backend", r.strong_backend}, {"weak_backend", r.weak_backend},
            {"created_at", r.created_at}};
}

json to_json(const JobReport& r) {
    return {{"requested", r.requested},
            {"produced", r.produced},
            {"failed", r.failed},
            {"output_path", r.output_path.string()},
            {"errors", r.errors}};
}

void GenerationJob::validate() const {
    if (count < 1) fail(Errc::precondition, "job count must be >= 1");
    if (count > kMaxJobCount) fail(Errc::precondition, "job count exceeds the supported maximum");
    if (strong_backend == weak_backend)
        fail(Errc::precondition, "strong and weak backends must differ");
    if (roster.empty()) fail(Errc::precondition, "job roster must contain at least one student");
    for (const auto& s : roster) s.context.validate();
    scenario.validate();
    pipeline.validate();
}

std::vector<StudentProfile> default_roster() {
    return {
        {"lin", {"Lin, 11, grade 5. Loves drawing maps and camping with her father; reads "
                 "slowly but carefully and is shy about speaking up.",
                 {}}},
        {"hao", {"Hao, 12, grade 6. Plays football, prefers adventure stories, answers quickly "
                 "and sometimes skips details; proud of knowing facts.",
                 {}}},
        {"mei", {"Mei, 10, grade 4. Keeps a diary, worries about being alone, likes animals and "
                 "asks many why-questions.",
                 {}}},
    };
}

DialogueFactory::DialogueFactory(Gateway& gateway, const M2CPipeline& pipeline, TraceStore traces)
    : gateway_(gateway), pipeline_(pipeline), traces_(std::move(traces)) {}

std::string DialogueFactory::generate_topic(const Scenario& scenario,
                                            const std::vector<std::string>& history,
                                            const std::string& backend_id,
                                            const std::string& salt) const {
    scenario.validate();
    std::set<std::string> seen(history.begin(), history.end());
    std::string prior;
    for (const auto& h : history) prior += "- " + h + "\n";
    if (prior.empty()) prior = "(none yet)\n";

    for (int attempt = 1; attempt <= kTopicRetries; ++attempt) {
        ChatRequest req;
        req.backend_id = backend_id;
        req.system_prompt =
            "You are a reading teacher opening a discussion with a student. [ROLE:Q] [TASK:topic]";
        req.sampling.temperature = kGenerationTemperature;
        req.sampling.max_tokens = 200;
        req.turns.push_back(
            {Speaker::user,
             fmt::format("Book under discussion: {}\nStudent level: {}\nLanguage: {}\n"
                         "Dialogue: {}\nTopics already discussed:\n{}\n"
                         "Attempt {}: propose one new open-ended discussion question about the "
                         "book. Return only the question.",
                         scenario.work_title, scenario.grade_band, scenario.language,
                         salt.empty() ? "-" : salt, prior, attempt)});
        auto topic = trim(gateway_.complete(req).text);
        if (!topic.empty() && !seen.count(topic)) return topic;
    }
    fail(Errc::distinctness_exhausted,
         fmt::format("no new topic after {} attempts", kTopicRetries));
}

std::string DialogueFactory::simulate_answer(const std::string& topic,
                                             const StudentContext& student,
                                             const Scenario& scenario,
                                             const std::string& backend_id) const {
    if (trim(topic).empty()) fail(Errc::precondition, "topic must be non-empty");
    student.validate();
    ChatRequest req;
    req.backend_id = backend_id;
    req.system_prompt = "Role-play the student described below in a class discussion. Answer in "
                        "the student's own voice and at their level.\n\n" +
                        student.render() + "\n[ROLE:S] [TASK:answer]";
    req.sampling.temperature = kGenerationTemperature;
    req.sampling.max_tokens = 300;
    req.turns.push_back({Speaker::user, fmt::format("We are reading {}. {}", scenario.work_title,
                                                    topic)});
    return gateway_.complete(req).text;
}

std::string DialogueFactory::direct_response(const std::string& topic, const std::string& answer,
                                             const StudentContext& student,
                                             const Scenario& scenario,
                                             const std::string& backend_id) const {
    ChatRequest req;
    req.backend_id = backend_id;
    req.system_prompt = fmt::format(
        "You are a warm, skilled reading teacher discussing {} with a {} student. Reply to the "
        "student's answer, give feedback, and keep the discussion going. [ROLE:R] [TASK:respond]",
        scenario.work_title, scenario.grade_band);
    req.sampling.temperature = kGenerationTemperature;
    req.turns.push_back({Speaker::user,
                         fmt::format("{}\nTopic: {}\nStudent answer: {}", student.render(), topic,
                                     answer)});
    return gateway_.complete(req).text;
}

PreferenceRecord DialogueFactory::produce_record(const Scenario& scenario,
                                                 const StudentProfile& student,
                                                 const GenerationJob& job,
                                                 const std::string& salt) const {
    std::vector<std::string> prior_topics;
    for (const auto& h : student.context.history) prior_topics.push_back(h.topic);

    PreferenceRecord r;
    r.Q = generate_topic(scenario, prior_topics, job.strong_backend, salt);
    r.A = simulate_answer(r.Q, student.context, scenario, job.student_backend);
    auto raw = direct_response(r.Q, r.A, student.context, scenario, job.strong_backend);
    auto trace = pipeline_.run_pipeline(raw, r.Q, r.A, student.context);
    r.rejected = direct_response(r.Q, r.A, student.context, scenario, job.weak_backend);
    if (r.rejected == trace.final)
        fail(Errc::invalid_record, "refined and baseline responses are identical");

    r.chosen = trace.final;
    r.trace_id = trace.trace_id;
    r.record_id = make_id("rec");
    r.strong_backend = job.strong_backend;
    r.weak_backend = job.weak_backend;
    r.created_at = utc_timestamp();
    traces_.save(trace);
    return r;
}

JobReport DialogueFactory::run_job(const GenerationJob& job,
                                   const std::filesystem::path& output) const {
    job.validate();
    for (const auto* id : {&job.strong_backend, &job.weak_backend, &job.student_backend,
                           &job.pipeline.expert_backend}) {
        if (!gateway_.has_backend(*id)) fail(Errc::unknown_backend_id, "unknown backend id: " + *id);
    }

    if (output.has_parent_path()) std::filesystem::create_directories(output.parent_path());
    std::ofstream out(output, std::ios::trunc);
    if (!out) fail(Errc::unreadable_file, "cannot write dataset: " + output.string());

    JobReport report;
    report.requested = job.count;
    report.output_path = output;
    std::mutex mutex;
    // Records complete out of order under parallelism; lines are released in
    // index order so the file content does not depend on scheduling.
    std::vector<std::optional<std::string>> pending(job.count);
    std::vector<bool> finished(job.count, false);
    std::size_t next = 0;
    auto release = [&](std::size_t i, std::optional<std::string> line) {
        pending[i] = std::move(line);
        finished[i] = true;
        while (next < job.count && finished[next]) {
            if (pending[next]) {
                out << *pending[next] << '\n';
                pending[next].reset();
            }
            ++next;
        }
        out.flush();
    };

    parallel_for(job.count, job.parallelism, [&](std::size_t i) {
        std::uint64_t state = job.seed ^ (0x9e3779b97f4a7c15ULL * (i + 1));
        const auto& student = job.roster[splitmix64(state) % job.roster.size()];
        const auto salt = fmt::format("dialogue-{:06d}", i);
        try {
            auto record = produce_record(job.scenario, student, job, salt);
            auto line = to_json(record).dump();
            std::lock_guard lock(mutex);
            ++report.produced;
            release(i, std::move(line));
        } catch (const std::exception& e) {
            std::lock_guard lock(mutex);
            ++report.failed;
            report.errors.push_back(fmt::format("{}: {}", salt, e.what()));
            release(i, std::nullopt);
        }
    });
    out.close();
    std::sort(report.errors.begin(), report.errors.end());

    auto sidecar = output;
    sidecar += ".report.json";
    write_file_atomic(sidecar, to_json(report).dump(2) + "\n");
    return report;
}

ValidationReport validate_dataset(const std::filesystem::path& path, const TraceStore* traces) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::unreadable_file, "cannot read dataset: " + path.string());

    ValidationReport report;
    std::unordered_set<std::string> ids;
    const std::set<std::string> allowed(kRecordFields.begin(), kRecordFields.end());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto before = report.errors.size();
        auto add = [&](std::string reason) { report.errors.push_back({lineno, std::move(reason)}); };

        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            add("malformed-record");
            continue;
        }
        bool fields_ok = true;
        for (const char* f : kRecordFields) {
            if (!j.contains(f)) {
                add(std::string("missing-field:") + f);
                fields_ok = false;
            } else if (!j[f].is_string()) {
                add(std::string("non-string-field:") + f);
                fields_ok = false;
            } else if (trim(j[f].get<std::string>()).empty()) {
                add(std::string("empty-field:") + f);
                fields_ok = false;
            }
        }
        for (const auto& [key, value] : j.items()) {
            if (!allowed.count(key)) add("unexpected-field:" + key);
        }
        if (fields_ok) {
            const auto chosen = j["chosen"].get<std::string>();
            if (chosen == j["rejected"].get<std::string>()) add("chosen-equals-rejected");
            if (!ids.insert(j["record_id"].get<std::string>()).second) add("duplicate-record-id");
            if (traces) {
                const auto trace_id = j["trace_id"].get<std::string>();
                if (!traces->exists(trace_id)) {
                    add("trace-not-found");
                } else if (traces->load(trace_id).final != chosen) {
                    add("trace-final-mismatch");
                }
            }
        }
        if (report.errors.size() == before) ++report.valid_count;
    }
    return report;
}

}  // namespace ram2c
