#include "ram2c/config.hpp"

#include "ram2c/error.hpp"
#include "ram2c/util.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <set>

namespace ram2c {

namespace pt = boost::property_tree;

std::filesystem::path default_asset_dir() {
    if (const char* env = std::getenv("RAM2C_ASSET_DIR"); env && *env) return env;
#ifdef RAM2C_SOURCE_ASSET_DIR
    if (std::filesystem::exists(RAM2C_SOURCE_ASSET_DIR)) return RAM2C_SOURCE_ASSET_DIR;
#endif
#ifdef RAM2C_INSTALL_ASSET_DIR
    return RAM2C_INSTALL_ASSET_DIR;
#else
    return "assets";
#endif
}

namespace {

std::string env_key(const std::string& section, const std::string& key) {
    std::string out = "RAM2C_" + section + "_" + key;
    for (auto& c : out) {
        if (c == '.' || c == '-') c = '_';
        c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return out;
}

class IniReader {
public:
    explicit IniReader(const pt::ptree& tree) : tree_(tree) {}

    std::optional<std::string> get(const std::string& section, const std::string& key) const {
        if (const char* env = std::getenv(env_key(section, key).c_str()); env) return std::string(env);
        auto sec = tree_.get_child_optional(pt::ptree::path_type(section, '\0'));
        if (!sec) return std::nullopt;
        auto v = sec->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
        if (!v) return std::nullopt;
        return trim(*v);
    }

    std::string get_or(const std::string& section, const std::string& key,
                       const std::string& fallback) const {
        return get(section, key).value_or(fallback);
    }

    template <typename Int>
    Int get_int(const std::string& section, const std::string& key, Int fallback) const {
        auto v = get(section, key);
        if (!v) return fallback;
        try {
            std::size_t used = 0;
            auto parsed = std::stoll(*v, &used);
            if (used != v->size() || parsed < 0) throw std::invalid_argument(*v);
            return static_cast<Int>(parsed);
        } catch (const std::exception&) {
            fail(Errc::invalid_config, "[" + section + "] " + key + " must be a non-negative integer");
        }
    }

    std::vector<std::string> sections_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& [name, child] : tree_) {
            if (name.rfind(prefix, 0) == 0) out.push_back(name.substr(prefix.size()));
        }
        return out;
    }

private:
    const pt::ptree& tree_;
};

std::set<SourceKind> parse_scope(const std::string& s) {
    std::set<SourceKind> out;
    for (const auto& part : split(s, ',')) {
        auto t = trim(part);
        if (!t.empty()) out.insert(source_kind_from_string(t));
    }
    return out;
}

}  // namespace

AppConfig AppConfig::defaults() {
    AppConfig c;
    auto asset_dir = default_asset_dir();
    c.persona_dir = asset_dir / "personas";
    c.rubric_path = asset_dir / "rubric.json";
    c.roster = default_roster();
    c.pipeline.expert_backend = c.strong_backend;
    std::uint64_t seed = 1;
    for (const auto& id : {c.strong_backend, c.weak_backend, c.student_backend, c.embedding_backend}) {
        BackendDescriptor d;
        d.id = id;
        d.kind = BackendKind::scripted_mock;
        d.mock_seed = seed++;
        d.retry = {1, 1};
        c.backends.push_back(d);
    }
    return c;
}

AppConfig AppConfig::load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        fail(Errc::config_not_found, "config file not found: " + path.string());
    pt::ptree tree;
    try {
        pt::read_ini(path.string(), tree);
    } catch (const pt::ini_parser_error& e) {
        fail(Errc::invalid_config, e.what());
    }
    // read_ini drops sections without keys; "[backend.x]" alone still declares x.
    for (const auto& line : split(read_file(path), '\n')) {
        auto t = trim(line);
        if (t.size() < 3 || t.front() != '[' || t.back() != ']') continue;
        const auto name = t.substr(1, t.size() - 2);
        if (!tree.get_child_optional(pt::ptree::path_type(name, '\0')))
            tree.push_back({name, pt::ptree{}});
    }
    IniReader ini(tree);
    AppConfig c = defaults();
    const auto base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };

    if (auto v = ini.get("general", "data_dir")) c.data_dir = resolve(*v);
    c.http_bind = ini.get_or("general", "http_bind", c.http_bind);
    if (auto v = ini.get("general", "persona_dir")) c.persona_dir = resolve(*v);
    if (auto v = ini.get("general", "rubric")) c.rubric_path = resolve(*v);
    c.dataset_seed = ini.get_int("general", "dataset_seed", c.dataset_seed);
    c.eval_seed = ini.get_int("general", "eval_seed", c.eval_seed);
    c.max_in_flight = ini.get_int("general", "max_in_flight", c.max_in_flight);
    c.parallelism = ini.get_int("general", "parallelism", c.parallelism);
    c.max_session_turns = ini.get_int("general", "max_session_turns", c.max_session_turns);

    c.chunking.size = ini.get_int("chunking", "size", c.chunking.size);
    c.chunking.overlap = ini.get_int("chunking", "overlap", c.chunking.overlap);

    c.strong_backend = ini.get_or("roles", "strong", c.strong_backend);
    c.weak_backend = ini.get_or("roles", "weak", c.weak_backend);
    c.student_backend = ini.get_or("roles", "student", c.student_backend);
    c.embedding_backend = ini.get_or("roles", "embedding", c.embedding_backend);

    if (auto v = ini.get("pipeline", "stages")) {
        c.pipeline.stages.clear();
        for (const auto& part : split(*v, ',')) {
            auto t = trim(part);
            if (!t.empty()) c.pipeline.stages.push_back(role_from_string(t));
        }
    }
    for (auto role : kAllRoles) {
        auto r = to_string(role);
        c.pipeline.experts_per_group[role] =
            ini.get_int("pipeline", "experts_" + r, c.pipeline.experts_per_group[role]);
        if (auto v = ini.get("pipeline", "scope_" + r)) c.pipeline.source_scope[role] = parse_scope(*v);
    }
    c.pipeline.retrieval_k = ini.get_int("pipeline", "retrieval_k", c.pipeline.retrieval_k);
    c.pipeline.quota = ini.get_int("pipeline", "quota", c.pipeline.quota);
    c.pipeline.expert_backend = c.strong_backend;
    c.pipeline.parallelism = c.parallelism;

    auto backend_ids = ini.sections_with_prefix("backend.");
    if (!backend_ids.empty()) {
        c.backends.clear();
        for (const auto& id : backend_ids) {
            const auto sec = "backend." + id;
            BackendDescriptor d;
            d.id = id;
            d.kind = backend_kind_from_string(ini.get_or(sec, "kind", "scripted-mock"));
            if (auto v = ini.get(sec, "endpoint")) d.endpoint = *v;
            if (auto v = ini.get(sec, "auth_token_env")) d.auth_token_env = *v;
            d.chat_model = ini.get_or(sec, "chat_model", "");
            d.embedding_model = ini.get_or(sec, "embedding_model", "");
            d.retry.max_attempts = ini.get_int(sec, "max_attempts", d.retry.max_attempts);
            d.retry.backoff_ms = ini.get_int(sec, "backoff_ms", d.retry.backoff_ms);
            d.mock_seed = ini.get_int<std::uint64_t>(sec, "seed", fnv1a64(id));
            d.mock_embedding_dim = ini.get_int(sec, "embedding_dim", d.mock_embedding_dim);
            c.backends.push_back(std::move(d));
        }
    }

    c.scenario.work_title = ini.get_or("scenario", "work_title", c.scenario.work_title);
    c.scenario.grade_band = ini.get_or("scenario", "grade_band", c.scenario.grade_band);
    c.scenario.language = ini.get_or("scenario", "language", c.scenario.language);

    auto students = ini.sections_with_prefix("student.");
    if (!students.empty()) {
        c.roster.clear();
        for (const auto& name : students) {
            c.roster.push_back({name, {ini.get_or("student." + name, "profile", ""), {}}});
        }
    }
    c.validate();
    return c;
}

void AppConfig::use_mock_backends() {
    std::set<std::string> ids;
    for (const auto& b : backends) ids.insert(b.id);
    for (const auto& id : {strong_backend, weak_backend, student_backend, embedding_backend})
        ids.insert(id);
    backends.clear();
    for (const auto& id : ids) {
        BackendDescriptor d;
        d.id = id;
        d.kind = BackendKind::scripted_mock;
        d.mock_seed = fnv1a64(id);
        d.retry = {1, 1};
        backends.push_back(std::move(d));
    }
}

void AppConfig::validate() const {
    std::set<std::string> ids;
    for (const auto& b : backends) {
        b.validate();
        if (!ids.insert(b.id).second) fail(Errc::invalid_config, "duplicate backend id " + b.id);
    }
    for (const auto& id : {strong_backend, weak_backend, student_backend, embedding_backend}) {
        if (!ids.count(id)) fail(Errc::invalid_config, "role references unknown backend '" + id + "'");
    }
    if (strong_backend == weak_backend)
        fail(Errc::invalid_config, "strong and weak backends must differ");
    if (chunking.size == 0 || chunking.overlap >= chunking.size)
        fail(Errc::invalid_config, "chunking overlap must be smaller than size");
    if (max_in_flight == 0) fail(Errc::invalid_config, "max_in_flight must be positive");
    pipeline.validate();
    scenario.validate();
    if (roster.empty()) fail(Errc::invalid_config, "student roster is empty");
    for (const auto& s : roster) {
        if (trim(s.context.profile).empty())
            fail(Errc::invalid_config, "student '" + s.name + "' has no profile");
    }
}

}  // namespace ram2c
