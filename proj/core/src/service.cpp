#include "ram2c/service.hpp"

#include "ram2c/error.hpp"
#include "ram2c/util.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <fmt/format.h>

#include <algorithm>

namespace ram2c {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Sessions

json to_json(const SessionState& s) {
    json turns = json::array();
    for (const auto& t : s.turns) {
        turns.push_back({{"topic", t.topic},
                         {"answer", t.answer},
                         {"final_response", t.final_response},
                         {"trace_id", t.trace_id}});
    }
    return {{"session_id", s.session_id},
            {"scenario",
             {{"work_title", s.scenario.work_title},
              {"grade_band", s.scenario.grade_band},
              {"language", s.scenario.language}}},
            {"student_profile", s.student.profile},
            {"turns", std::move(turns)},
            {"current_topic", s.current_topic},
            {"status", s.status == SessionStatus::open ? "open" : "closed"}};
}

SessionState session_from_json(const json& j) {
    SessionState s;
    s.session_id = j.at("session_id").get<std::string>();
    const auto& sc = j.at("scenario");
    s.scenario = {sc.at("work_title").get<std::string>(), sc.at("grade_band").get<std::string>(),
                  sc.at("language").get<std::string>()};
    s.student.profile = j.at("student_profile").get<std::string>();
    for (const auto& t : j.at("turns")) {
        SessionTurn turn{t.at("topic").get<std::string>(), t.at("answer").get<std::string>(),
                         t.at("final_response").get<std::string>(),
                         t.at("trace_id").get<std::string>()};
        s.student.history.push_back({turn.topic, turn.answer, turn.final_response});
        s.turns.push_back(std::move(turn));
    }
    s.current_topic = j.at("current_topic").get<std::string>();
    s.status = j.at("status").get<std::string>() == "open" ? SessionStatus::open
                                                            : SessionStatus::closed;
    return s;
}

// ---------------------------------------------------------------------------
// Runtime

Runtime::Runtime(AppConfig config)
    : config_(std::move(config)), traces_(config_.traces_dir()) {
    config_.validate();
    gateway_ = std::make_unique<Gateway>(static_cast<std::ptrdiff_t>(config_.max_in_flight));
    for (const auto& b : config_.backends) gateway_->add_backend(b);
    store_ = std::make_unique<KnowledgeStore>(*gateway_, config_.embedding_backend);
    auto pcfg = config_.pipeline;
    pcfg.expert_backend = config_.strong_backend;
    pipeline_ = std::make_unique<M2CPipeline>(*gateway_, *store_,
                                              PersonaLibrary::load(config_.persona_dir), pcfg);
    factory_ = std::make_unique<DialogueFactory>(*gateway_, *pipeline_, traces_);
    eval_ = std::make_unique<EvalStore>(config_.eval_dir());
    if (std::filesystem::exists(config_.rubric_path)) rubric_ = load_rubric(config_.rubric_path);
}

void Runtime::load_knowledge_store() {
    if (std::filesystem::exists(config_.kb_snapshot())) store_->load(config_.kb_snapshot());
}

void Runtime::save_knowledge_store() const {
    store_->save(config_.kb_snapshot());
}

GenerationJob Runtime::make_job(std::size_t count, std::uint64_t seed) const {
    GenerationJob job;
    job.count = count;
    job.seed = seed;
    job.scenario = config_.scenario;
    job.pipeline = pipeline_->config();
    job.strong_backend = config_.strong_backend;
    job.weak_backend = config_.weak_backend;
    job.student_backend = config_.student_backend;
    job.roster = config_.roster;
    job.parallelism = config_.parallelism;
    return job;
}

// ---------------------------------------------------------------------------

SessionManager::SessionManager(Runtime& runtime)
    : runtime_(runtime), dir_(runtime.config().sessions_dir()) {
    std::filesystem::create_directories(dir_);
}

std::shared_ptr<std::mutex> SessionManager::lock_for(const std::string& session_id) {
    std::lock_guard lock(locks_mutex_);
    auto& m = locks_[session_id];
    if (!m) m = std::make_shared<std::mutex>();
    return m;
}

static bool valid_id(const std::string& id) {
    return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
    });
}

SessionState SessionManager::load(const std::string& session_id) const {
    if (!valid_id(session_id)) fail(Errc::not_found, "no session " + session_id);
    auto path = dir_ / (session_id + ".json");
    if (!std::filesystem::exists(path)) fail(Errc::not_found, "no session " + session_id);
    auto j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) fail(Errc::malformed_file, "corrupt session file " + path.string());
    return session_from_json(j);
}

void SessionManager::persist(const SessionState& s) const {
    write_file_atomic(dir_ / (s.session_id + ".json"), to_json(s).dump(2) + "\n");
}

SessionState SessionManager::start_session(const Scenario& scenario,
                                           const std::string& student_profile) {
    scenario.validate();
    SessionState s;
    s.session_id = make_id("session");
    s.scenario = scenario;
    s.student.profile = student_profile;
    s.student.validate();
    s.current_topic = runtime_.factory().generate_topic(scenario, {}, runtime_.config().strong_backend,
                                                        s.session_id);
    auto m = lock_for(s.session_id);
    std::lock_guard lock(*m);
    persist(s);
    return s;
}

AnswerResult SessionManager::post_answer(const std::string& session_id, const std::string& answer) {
    if (trim(answer).empty()) fail(Errc::invalid_argument, "answer must be non-empty");
    auto m = lock_for(session_id);
    std::lock_guard lock(*m);
    auto s = load(session_id);
    if (s.status == SessionStatus::closed) fail(Errc::closed_session, "session " + session_id + " is closed");

    const auto& cfg = runtime_.config();
    auto& factory = runtime_.factory();
    const auto topic = s.current_topic;
    auto raw = factory.direct_response(topic, answer, s.student, s.scenario, cfg.strong_backend);
    RefinementTrace trace;
    try {
        trace = runtime_.pipeline().run_pipeline(raw, topic, answer, s.student);
    } catch (const PipelineFailure& f) {
        runtime_.traces().save(f.partial());
        throw;
    }
    runtime_.traces().save(trace);

    s.turns.push_back({topic, answer, trace.final, trace.trace_id});
    s.student.history.push_back({topic, answer, trace.final});
    AnswerResult result{trace.final, trace.trace_id, {}};
    if (cfg.max_session_turns != 0 && s.turns.size() >= cfg.max_session_turns) {
        s.status = SessionStatus::closed;
        s.current_topic.clear();
    } else {
        std::vector<std::string> topics;
        for (const auto& t : s.turns) topics.push_back(t.topic);
        s.current_topic = factory.generate_topic(s.scenario, topics, cfg.strong_backend, s.session_id);
        result.next_topic = s.current_topic;
    }
    persist(s);
    return result;
}

SessionState SessionManager::close(const std::string& session_id) {
    auto m = lock_for(session_id);
    std::lock_guard lock(*m);
    auto s = load(session_id);
    s.status = SessionStatus::closed;
    persist(s);
    return s;
}

SessionState SessionManager::get(const std::string& session_id) {
    auto m = lock_for(session_id);
    std::lock_guard lock(*m);
    return load(session_id);
}

// ---------------------------------------------------------------------------
// Jobs

std::string to_string(JobStatus s) {
    switch (s) {
        case JobStatus::queued: return "queued";
        case JobStatus::running: return "running";
        case JobStatus::done: return "done";
        case JobStatus::failed: return "failed";
    }
    return "?";
}

json to_json(const JobRecord& r) {
    json j = {{"job_id", r.job_id},
              {"count", r.count},
              {"seed", r.seed},
              {"status", to_string(r.status)}};
    if (r.report) j["report"] = to_json(*r.report);
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

JobManager::JobManager(Runtime& runtime) : runtime_(runtime) {}

JobManager::~JobManager() {
    wait_all();
}

void JobManager::persist(const JobRecord& r) const {
    write_file_atomic(runtime_.config().datasets_dir() / (r.job_id + ".status.json"),
                      to_json(r).dump(2) + "\n");
}

JobRecord JobManager::submit(std::size_t count, std::uint64_t seed) {
    auto job = runtime_.make_job(count, seed);
    job.validate();
    JobRecord rec;
    rec.job_id = make_id("job");
    rec.count = count;
    rec.seed = seed;
    persist(rec);
    {
        std::lock_guard lock(mutex_);
        jobs_[rec.job_id] = rec;
    }
    auto update = [this](const std::string& id, auto&& fn) {
        std::lock_guard lock(mutex_);
        auto& r = jobs_.at(id);
        fn(r);
        persist(r);
    };
    std::lock_guard lock(mutex_);
    workers_.emplace_back([this, job, id = rec.job_id, update] {
        update(id, [](JobRecord& r) { r.status = JobStatus::running; });
        try {
            auto output = runtime_.config().datasets_dir() / (id + ".jsonl");
            auto report = runtime_.factory().run_job(job, output);
            update(id, [&](JobRecord& r) {
                r.status = JobStatus::done;
                r.report = report;
            });
        } catch (const std::exception& e) {
            update(id, [&](JobRecord& r) {
                r.status = JobStatus::failed;
                r.error = e.what();
            });
        }
    });
    return rec;
}

std::optional<JobRecord> JobManager::get(const std::string& job_id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

void JobManager::wait_all() {
    std::vector<std::jthread> workers;
    {
        std::lock_guard lock(mutex_);
        workers.swap(workers_);
    }
    workers.clear();
}

// ---------------------------------------------------------------------------
// HTTP

std::pair<std::string, int> parse_bind(const std::string& bind) {
    auto colon = bind.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == bind.size())
        fail(Errc::invalid_config, "bind address must be host:port, got '" + bind + "'");
    try {
        int port = std::stoi(bind.substr(colon + 1));
        if (port < 0 || port > 65535) throw std::out_of_range("port");
        return {bind.substr(0, colon), port};
    } catch (const std::exception&) {
        fail(Errc::invalid_config, "invalid port in '" + bind + "'");
    }
}

namespace {

int http_status(Errc code) {
    switch (code) {
        case Errc::not_found:
        case Errc::unknown_item: return 404;
        case Errc::closed_session:
        case Errc::duplicate_choice: return 409;
        case Errc::invalid_argument:
        case Errc::precondition:
        case Errc::invalid_record:
        case Errc::invalid_params:
        case Errc::no_choices:
        case Errc::unreadable_file:
        case Errc::malformed_file: return 400;
        case Errc::stage_failure:
        case Errc::backend_unreachable:
        case Errc::empty_response: return 502;
        default: return 500;
    }
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
    try {
        fn();
    } catch (const PipelineFailure& f) {
        send_json(res, 502,
                  {{"error", std::string(to_string(f.code()))},
                   {"message", f.what()},
                   {"trace_id", f.partial().trace_id}});
    } catch (const Error& e) {
        send_json(res, http_status(e.code()),
                  {{"error", std::string(to_string(e.code()))}, {"message", e.what()}});
    } catch (const json::exception& e) {
        send_json(res, 400, {{"error", "invalid-argument"}, {"message", e.what()}});
    } catch (const std::exception& e) {
        send_json(res, 500, {{"error", "internal"}, {"message", e.what()}});
    }
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    auto j = json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        fail(Errc::invalid_argument, "request body must be a JSON object");
    return j;
}

std::string volunteer_of(const httplib::Request& req, const json& body) {
    if (req.has_header(HttpService::kVolunteerHeader))
        return req.get_header_value(HttpService::kVolunteerHeader);
    if (body.contains("volunteer_id")) return body["volunteer_id"].get<std::string>();
    if (req.has_param("volunteer")) return req.get_param_value("volunteer");
    fail(Errc::invalid_argument, "volunteer identity missing");
}

}  // namespace

HttpService::HttpService(Runtime& runtime)
    : runtime_(runtime),
      sessions_(runtime),
      jobs_(runtime),
      server_(std::make_unique<httplib::Server>()) {
    install_routes();
}

HttpService::~HttpService() {
    stop();
}

void HttpService::install_routes() {
    auto& srv = *server_;
    auto& rt = runtime_;

    srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto body = parse_body(req);
            Scenario scenario = runtime_.config().scenario;
            if (body.contains("scenario")) {
                const auto& sc = body["scenario"];
                scenario.work_title = sc.value("work_title", "");
                scenario.grade_band = sc.value("grade_band", scenario.grade_band);
                scenario.language = sc.value("language", scenario.language);
            }
            auto profile = body.value("student_profile", "");
            if (trim(scenario.work_title).empty())
                fail(Errc::invalid_argument, "scenario.work_title is required");
            if (trim(profile).empty()) fail(Errc::invalid_argument, "student_profile is required");
            send_json(res, 201, to_json(sessions_.start_session(scenario, profile)));
        });
    });

    srv.Get(R"(/sessions/([A-Za-z0-9_\-]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, to_json(sessions_.get(req.matches[1]))); });
    });

    srv.Post(R"(/sessions/([A-Za-z0-9_\-]+)/answer)",
             [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] {
                     auto body = parse_body(req);
                     auto r = sessions_.post_answer(req.matches[1], body.value("answer", ""));
                     send_json(res, 200,
                               {{"final_response", r.final_response},
                                {"trace_id", r.trace_id},
                                {"next_topic", r.next_topic}});
                 });
             });

    srv.Post(R"(/sessions/([A-Za-z0-9_\-]+)/close)",
             [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] { send_json(res, 200, to_json(sessions_.close(req.matches[1]))); });
             });

    srv.Post("/datasets/jobs", [this, &rt](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto body = parse_body(req);
            auto count = body.value("count", 0LL);
            if (count < 1) fail(Errc::invalid_argument, "count must be >= 1");
            auto seed = body.value("seed", rt.config().dataset_seed);
            send_json(res, 202, to_json(jobs_.submit(static_cast<std::size_t>(count), seed)));
        });
    });

    srv.Get(R"(/datasets/jobs/([A-Za-z0-9_\-]+))",
            [this](const httplib::Request& req, httplib::Response& res) {
                guarded(res, [&] {
                    auto j = jobs_.get(req.matches[1]);
                    if (!j) fail(Errc::not_found, "no job " + std::string(req.matches[1]));
                    send_json(res, 200, to_json(*j));
                });
            });

    srv.Post("/eval/sets", [&rt](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto body = parse_body(req);
            std::vector<EvalPair> pairs;
            if (body.contains("dataset_path")) {
                pairs = load_eval_pairs(body["dataset_path"].get<std::string>());
            } else if (body.contains("pairs")) {
                for (const auto& p : body["pairs"]) {
                    pairs.push_back({p.at("Q").get<std::string>(), p.at("A").get<std::string>(),
                                     p.at("candidate").get<std::string>(),
                                     p.at("baseline").get<std::string>()});
                }
            } else {
                fail(Errc::invalid_argument, "provide dataset_path or pairs");
            }
            auto seed = body.value("seed", rt.config().eval_seed);
            auto items = build_eval_set(pairs, seed);
            const auto n = items.size();
            rt.eval().set_items(std::move(items));
            send_json(res, 201, {{"item_count", n}});
        });
    });

    srv.Get("/eval/assignments", [&rt](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto volunteer = volunteer_of(req, json::object());
            if (!req.has_param("dimension")) fail(Errc::invalid_argument, "dimension is required");
            auto dim = dimension_from_string(req.get_param_value("dimension"));
            auto a = rt.eval().assignment(volunteer, dim, rt.config().eval_seed);
            std::map<std::string, ChoiceVerdict> chosen;
            for (const auto& c : rt.eval().choices(dim)) {
                if (c.volunteer_id == volunteer) chosen[c.item_id] = c.verdict;
            }
            json items = json::array();
            for (const auto& id : a.item_ids) {
                auto item = rt.eval().item(id);
                if (!item) continue;
                auto j = to_annotator_json(*item);
                if (auto it = chosen.find(id); it != chosen.end()) {
                    j["status"] = "chosen";
                    j["verdict"] = to_string(it->second);
                } else {
                    j["status"] = "pending";
                }
                items.push_back(std::move(j));
            }
            send_json(res, 200,
                      {{"volunteer_id", volunteer},
                       {"dimension", to_string(dim)},
                       {"items", std::move(items)},
                       {"progress", {{"done", chosen.size()}, {"total", a.item_ids.size()}}}});
        });
    });

    srv.Get(R"(/eval/items/([A-Za-z0-9_\-]+))", [&rt](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto item = rt.eval().item(req.matches[1]);
            if (!item) fail(Errc::unknown_item, "unknown item " + std::string(req.matches[1]));
            send_json(res, 200, to_annotator_json(*item));
        });
    });

    srv.Post("/eval/choices", [&rt](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto body = parse_body(req);
            Choice c;
            c.volunteer_id = volunteer_of(req, body);
            c.item_id = body.at("item_id").get<std::string>();
            c.dimension = dimension_from_string(body.at("dimension").get<std::string>());
            c.verdict = choice_verdict_from_string(body.at("verdict").get<std::string>());
            auto stored = rt.eval().submit(c);
            std::size_t done = 0;
            for (const auto& other : rt.eval().choices(c.dimension))
                if (other.volunteer_id == c.volunteer_id) ++done;
            auto a = rt.eval().find_assignment(c.volunteer_id, c.dimension);
            send_json(res, 201,
                      {{"item_id", stored.item_id},
                       {"verdict", to_string(stored.verdict)},
                       {"progress", {{"done", done}, {"total", a ? a->item_ids.size() : 0}}}});
        });
    });

    srv.Get(R"(/eval/reports/([HTS]))", [&rt](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            bool per_volunteer = req.has_param("per_volunteer") &&
                                 req.get_param_value("per_volunteer") != "0";
            send_json(res, 200,
                      to_json(rt.eval().report(dimension_from_string(req.matches[1]), per_volunteer)));
        });
    });

    srv.Get("/eval/rubric", [&rt](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto criteria = rt.rubric();
            if (req.has_param("dimension"))
                criteria = rubric_for(criteria, dimension_from_string(req.get_param_value("dimension")));
            json arr = json::array();
            for (const auto& c : criteria)
                arr.push_back({{"id", c.id}, {"dimension", to_string(c.dimension)}, {"text", c.text}});
            send_json(res, 200, arr);
        });
    });

    srv.Get("/kb/stats", [&rt](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] {
            json out = json::object();
            for (const auto& [kind, s] : rt.store().stats()) {
                out[to_string(kind)] = {{"doc_count", s.doc_count},
                                        {"word_count", s.word_count},
                                        {"chunk_count", s.chunk_count}};
            }
            send_json(res, 200, out);
        });
    });
}

int HttpService::bind(const std::string& host, int port) {
    int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound <= 0) fail(Errc::invalid_config, fmt::format("cannot bind {}:{}", host, port));
    return bound;
}

void HttpService::listen() {
    server_->listen_after_bind();
}

int HttpService::start(const std::string& host, int port) {
    int bound = bind(host, port);
    thread_ = std::jthread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void HttpService::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
    jobs_.wait_all();
}

}  // namespace ram2c
