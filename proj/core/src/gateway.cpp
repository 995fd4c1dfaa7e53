#include "ram2c/gateway.hpp"

#include "ram2c/error.hpp"
#include "ram2c/util.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <thread>

namespace ram2c {

using nlohmann::json;

void ChatRequest::validate() const {
    if (turns.empty()) fail(Errc::precondition, "chat request has no turns");
    if (turns.back().speaker != Speaker::user)
        fail(Errc::precondition, "last turn of a chat request must be from the user");
    if (sampling.max_tokens < 1) fail(Errc::precondition, "max_tokens must be >= 1");
    if (sampling.temperature < 0.0) fail(Errc::precondition, "temperature must be >= 0");
}

std::string to_string(BackendKind kind) {
    return kind == BackendKind::remote_openai_compatible ? "remote-openai-compatible"
                                                         : "scripted-mock";
}

BackendKind backend_kind_from_string(const std::string& s) {
    if (s == "remote-openai-compatible") return BackendKind::remote_openai_compatible;
    if (s == "scripted-mock") return BackendKind::scripted_mock;
    fail(Errc::invalid_config, "unknown backend kind: " + s);
}

void BackendDescriptor::validate() const {
    if (id.empty()) fail(Errc::invalid_config, "backend id must be non-empty");
    if (kind == BackendKind::remote_openai_compatible && (!endpoint || endpoint->empty()))
        fail(Errc::invalid_config, "remote backend '" + id + "' requires an endpoint");
    if (kind == BackendKind::scripted_mock && endpoint)
        fail(Errc::invalid_config, "mock backend '" + id + "' must not have an endpoint");
    if (retry.max_attempts < 1 || retry.backoff_ms < 1)
        fail(Errc::invalid_config, "backend '" + id + "' retry policy must be positive");
    if (kind == BackendKind::scripted_mock && mock_embedding_dim == 0)
        fail(Errc::invalid_config, "mock backend '" + id + "' needs a positive embedding dim");
}

// ---------------------------------------------------------------------------

std::string extract_marker(const std::string& prompt, const std::string& key) {
    const std::string open = "[" + key + ":";
    auto pos = prompt.find(open);
    if (pos == std::string::npos) return {};
    auto start = pos + open.size();
    auto end = prompt.find(']', start);
    if (end == std::string::npos) return {};
    return prompt.substr(start, end - start);
}

ScriptedMockBackend::ScriptedMockBackend(std::uint64_t seed, std::size_t embedding_dim,
                                         std::vector<MockRule> rules)
    : seed_(seed), embedding_dim_(embedding_dim), rules_(std::move(rules)) {
    if (embedding_dim_ == 0) fail(Errc::invalid_config, "mock embedding dimension must be positive");
}

std::string ScriptedMockBackend::complete(const ChatRequest& request) {
    std::string marker = extract_marker(request.system_prompt, "ROLE");
    if (marker.empty()) marker = "mock";
    const std::string task = extract_marker(request.system_prompt, "TASK");

    std::string joined;
    for (const auto& t : request.turns) {
        joined += t.text;
        joined += '\x1e';
    }

    std::string seed_bytes = to_hex(seed_);
    std::uint64_t h = fnv1a64(seed_bytes);
    h = fnv1a64(marker, h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(joined, h);
    const std::string digest = to_hex(h);

    for (const auto& rule : rules_) {
        if (!rule.role.empty() && rule.role != marker) continue;
        if (!rule.task.empty() && rule.task != task) continue;
        if (!rule.needle.empty() && joined.find(rule.needle) == std::string::npos) continue;
        if (rule.action == MockRule::Action::fail)
            fail(Errc::backend_unreachable, "scripted failure for role " + marker);
        std::string out = "[" + marker + "] " + rule.reply;
        if (rule.append_digest) out += " " + digest;
        return out;
    }
    return "[" + marker + "] " + digest;
}

EmbeddingVector ScriptedMockBackend::embed_one(const std::string& text) const {
    std::uint64_t state = fnv1a64(text, fnv1a64(to_hex(seed_)));
    EmbeddingVector v;
    v.values.resize(embedding_dim_);
    double norm_sq = 0.0;
    do {
        norm_sq = 0.0;
        for (auto& x : v.values) {
            // 53 random bits mapped to [-1, 1).
            double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
            x = 2.0 * u - 1.0;
            norm_sq += x * x;
        }
    } while (norm_sq == 0.0);
    const double norm = std::sqrt(norm_sq);
    for (auto& x : v.values) x /= norm;
    return v;
}

std::vector<EmbeddingVector> ScriptedMockBackend::embed(const std::vector<std::string>& texts) {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
}

// ---------------------------------------------------------------------------

OpenAICompatibleBackend::OpenAICompatibleBackend(BackendDescriptor descriptor)
    : descriptor_(std::move(descriptor)) {
    descriptor_.validate();
    const std::string& url = *descriptor_.endpoint;
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        fail(Errc::invalid_config, "endpoint must include a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        scheme_host_port_ = url;
        base_path_ = "";
    } else {
        scheme_host_port_ = url.substr(0, path_start);
        base_path_ = url.substr(path_start);
    }
    while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
}

std::string OpenAICompatibleBackend::post_json(const std::string& path, const std::string& body) {
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(120, 0);
    httplib::Headers headers;
    if (descriptor_.auth_token_env) {
        if (const char* token = std::getenv(descriptor_.auth_token_env->c_str()); token && *token)
            headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    auto res = client.Post(base_path_ + path, headers, body, "application/json");
    if (!res) {
        fail(Errc::backend_unreachable, "backend '" + descriptor_.id + "' unreachable: " +
                                            httplib::to_string(res.error()));
    }
    if (res->status == 429 || res->status >= 500) {
        fail(Errc::backend_unreachable, "backend '" + descriptor_.id + "' returned HTTP " +
                                            std::to_string(res->status));
    }
    if (res->status >= 400) {
        fail(Errc::invalid_argument, "backend '" + descriptor_.id + "' rejected request (HTTP " +
                                         std::to_string(res->status) + "): " + res->body);
    }
    return res->body;
}

std::string OpenAICompatibleBackend::complete(const ChatRequest& request) {
    json messages = json::array();
    if (!request.system_prompt.empty())
        messages.push_back({{"role", "system"}, {"content", request.system_prompt}});
    for (const auto& t : request.turns) {
        messages.push_back(
            {{"role", t.speaker == Speaker::user ? "user" : "assistant"}, {"content", t.text}});
    }
    json body = {{"model", descriptor_.chat_model},
                 {"messages", messages},
                 {"temperature", request.sampling.temperature},
                 {"max_tokens", request.sampling.max_tokens},
                 {"stream", false}};
    auto raw = post_json("/chat/completions", body.dump());
    json parsed = json::parse(raw, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("choices") || parsed["choices"].empty())
        fail(Errc::empty_response, "backend '" + descriptor_.id + "' returned no choices");
    const auto& message = parsed["choices"][0]["message"];
    if (!message.contains("content") || !message["content"].is_string())
        return {};
    return message["content"].get<std::string>();
}

std::vector<EmbeddingVector> OpenAICompatibleBackend::embed(const std::vector<std::string>& texts) {
    json body = {{"model", descriptor_.embedding_model}, {"input", texts}};
    auto raw = post_json("/embeddings", body.dump());
    json parsed = json::parse(raw, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("data"))
        fail(Errc::empty_response, "backend '" + descriptor_.id + "' returned no embeddings");
    std::vector<EmbeddingVector> out(texts.size());
    std::vector<bool> seen(texts.size(), false);
    std::size_t position = 0;
    for (const auto& item : parsed["data"]) {
        std::size_t index = item.contains("index") ? item["index"].get<std::size_t>() : position;
        ++position;
        if (index >= texts.size() || seen[index])
            fail(Errc::empty_response, "backend '" + descriptor_.id + "' returned a bad index");
        seen[index] = true;
        out[index].values = item.at("embedding").get<std::vector<double>>();
    }
    for (bool s : seen) {
        if (!s) fail(Errc::empty_response, "backend '" + descriptor_.id + "' omitted an embedding");
    }
    return out;
}

// ---------------------------------------------------------------------------

Gateway::Gateway(std::ptrdiff_t max_in_flight_remote)
    : remote_slots_(std::clamp<std::ptrdiff_t>(max_in_flight_remote, 1, kMaxInFlightCeiling)) {}

void Gateway::add_backend(const BackendDescriptor& descriptor) {
    descriptor.validate();
    std::shared_ptr<Backend> impl;
    if (descriptor.kind == BackendKind::scripted_mock) {
        impl = std::make_shared<ScriptedMockBackend>(descriptor.mock_seed,
                                                     descriptor.mock_embedding_dim);
    } else {
        impl = std::make_shared<OpenAICompatibleBackend>(descriptor);
    }
    add_backend(descriptor, std::move(impl));
}

void Gateway::add_backend(const BackendDescriptor& descriptor, std::shared_ptr<Backend> backend) {
    descriptor.validate();
    if (!backend) fail(Errc::invalid_argument, "null backend for '" + descriptor.id + "'");
    std::unique_lock lock(mutex_);
    Entry e{descriptor, std::move(backend), std::make_unique<std::atomic<std::uint64_t>>(0),
            std::make_unique<std::atomic<std::size_t>>(0)};
    if (!backends_.emplace(descriptor.id, std::move(e)).second)
        fail(Errc::invalid_config, "backend id registered twice: " + descriptor.id);
}

bool Gateway::has_backend(const std::string& id) const {
    std::shared_lock lock(mutex_);
    return backends_.count(id) != 0;
}

const Gateway::Entry& Gateway::entry(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = backends_.find(id);
    if (it == backends_.end()) fail(Errc::unknown_backend_id, "unknown backend id: " + id);
    // Entries are never erased, so the reference outlives the lock.
    return it->second;
}

std::uint64_t Gateway::attempt_count(const std::string& id) const {
    return entry(id).attempts->load();
}

template <typename Fn>
auto Gateway::with_retry(const Entry& e, Fn&& fn) -> decltype(fn()) {
    const int max_attempts = e.descriptor.retry.max_attempts;
    for (int attempt = 1;; ++attempt) {
        e.attempts->fetch_add(1);
        try {
            if (e.backend->is_remote()) {
                remote_slots_.acquire();
                struct Release {
                    std::counting_semaphore<kMaxInFlightCeiling>& s;
                    ~Release() { s.release(); }
                } release{remote_slots_};
                return fn();
            }
            return fn();
        } catch (const Error& err) {
            if (err.code() != Errc::backend_unreachable) throw;
            if (attempt >= max_attempts) {
                fail(Errc::backend_unreachable,
                     "backend '" + e.descriptor.id + "' failed after " +
                         std::to_string(attempt) + " attempt(s): " + err.what());
            }
        }
        std::this_thread::sleep_for(
            std::chrono::milliseconds(static_cast<long long>(e.descriptor.retry.backoff_ms) * attempt));
    }
}

ChatResponse Gateway::complete(const ChatRequest& request) {
    request.validate();
    const Entry& e = entry(request.backend_id);
    auto start = std::chrono::steady_clock::now();
    std::string text = with_retry(e, [&] { return e.backend->complete(request); });
    if (trim(text).empty())
        fail(Errc::empty_response, "backend '" + request.backend_id + "' returned an empty response");
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);
    return ChatResponse{std::move(text), request.backend_id, elapsed.count()};
}

std::vector<EmbeddingVector> Gateway::embed(const std::string& backend_id,
                                            const std::vector<std::string>& texts) {
    if (texts.empty()) fail(Errc::precondition, "embed requires at least one text");
    for (const auto& t : texts) {
        if (t.empty()) fail(Errc::precondition, "embed texts must be non-empty");
    }
    const Entry& e = entry(backend_id);
    auto vectors = with_retry(e, [&] { return e.backend->embed(texts); });
    if (vectors.size() != texts.size())
        fail(Errc::dimension_mismatch, "backend '" + backend_id + "' returned wrong vector count");
    for (const auto& v : vectors) {
        if (v.dimension() == 0)
            fail(Errc::dimension_mismatch, "backend '" + backend_id + "' returned an empty vector");
        std::size_t expected = 0;
        if (!e.embedding_dim->compare_exchange_strong(expected, v.dimension()) &&
            expected != v.dimension()) {
            fail(Errc::dimension_mismatch,
                 "backend '" + backend_id + "' produced dimension " + std::to_string(v.dimension()) +
                     ", expected " + std::to_string(expected));
        }
    }
    return vectors;
}

}  // namespace ram2c
