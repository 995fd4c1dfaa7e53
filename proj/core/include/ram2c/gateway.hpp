#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <shared_mutex>
#include <string>
#include <vector>

namespace ram2c {

enum class Speaker { user, assistant };

struct Turn {
    Speaker speaker = Speaker::user;
    std::string text;
};

struct Sampling {
    double temperature = 0.7;
    int max_tokens = 1024;
};

/// Generation calls sample; voting and assessment calls run greedy so
/// verdicts stay stable across repeats.
inline constexpr double kGenerationTemperature = 0.7;
inline constexpr double kAssessmentTemperature = 0.0;

struct ChatRequest {
    std::string system_prompt;
    std::vector<Turn> turns;
    Sampling sampling;
    std::string backend_id;

    /// Throws Errc::precondition unless turns is non-empty, ends with a user
    /// turn, and max_tokens >= 1.
    void validate() const;
};

struct ChatResponse {
    std::string text;
    std::string backend_id;
    std::int64_t latency_ms = 0;
};

struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dimension() const noexcept { return values.size(); }
    bool operator==(const EmbeddingVector&) const = default;
};

enum class BackendKind { remote_openai_compatible, scripted_mock };

std::string to_string(BackendKind kind);
BackendKind backend_kind_from_string(const std::string& s);

struct RetryPolicy {
    int max_attempts = 3;
    int backoff_ms = 250;
};

struct BackendDescriptor {
    std::string id;
    BackendKind kind = BackendKind::scripted_mock;
    std::optional<std::string> endpoint;
    std::optional<std::string> auth_token_env;
    RetryPolicy retry;
    std::string chat_model;
    std::string embedding_model;
    std::uint64_t mock_seed = 0;
    std::size_t mock_embedding_dim = 64;

    void validate() const;
};

/// One chat/embedding provider. Implementations throw ram2c::Error with
/// Errc::backend_unreachable for transient failures; the gateway retries
/// those and nothing else.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string complete(const ChatRequest& request) = 0;
    virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
    virtual bool is_remote() const { return false; }
};

// ---------------------------------------------------------------------------
// Scripted mock
// ---------------------------------------------------------------------------

/// A scripted reply. A rule fires when every non-empty selector matches:
/// `role` equals the role marker exactly, `task` equals the task marker
/// exactly, and `needle` occurs in the concatenated turn texts.
struct MockRule {
    enum class Action { reply, fail };

    std::string role;
    std::string task;
    std::string needle;
    Action action = Action::reply;
    std::string reply;
    bool append_digest = true;
};

/// Deterministic offline backend.
///
/// The system prompt carries `[ROLE:<marker>]` and optionally `[TASK:<name>]`.
/// A completion is `"[<marker>] "` followed by the first matching rule's reply
/// and a 16-hex digest of (seed, marker, turn texts). Embeddings are unit-norm
/// vectors derived from a digest of the text.
class ScriptedMockBackend final : public Backend {
public:
    ScriptedMockBackend(std::uint64_t seed, std::size_t embedding_dim,
                        std::vector<MockRule> rules = {});

    std::string complete(const ChatRequest& request) override;
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;

    std::size_t embedding_dim() const noexcept { return embedding_dim_; }

    EmbeddingVector embed_one(const std::string& text) const;

private:
    std::uint64_t seed_;
    std::size_t embedding_dim_;
    std::vector<MockRule> rules_;
};

/// Extracts the value of a `[KEY:value]` marker from a prompt; empty if absent.
std::string extract_marker(const std::string& prompt, const std::string& key);

// ---------------------------------------------------------------------------
// OpenAI-compatible remote backend
// ---------------------------------------------------------------------------

class OpenAICompatibleBackend final : public Backend {
public:
    explicit OpenAICompatibleBackend(BackendDescriptor descriptor);

    std::string complete(const ChatRequest& request) override;
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
    bool is_remote() const override { return true; }

private:
    std::string post_json(const std::string& path, const std::string& body);

    BackendDescriptor descriptor_;
    std::string scheme_host_port_;
    std::string base_path_;
};

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

/// Registry of backends with retry, attempt accounting, and a bound on
/// in-flight remote requests. Safe for concurrent callers.
class Gateway {
public:
    static constexpr std::ptrdiff_t kMaxInFlightCeiling = 1024;

    explicit Gateway(std::ptrdiff_t max_in_flight_remote = 8);

    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    /// Registers a backend built from the descriptor (mock or remote).
    void add_backend(const BackendDescriptor& descriptor);
    /// Registers a caller-supplied implementation under the descriptor's id.
    void add_backend(const BackendDescriptor& descriptor, std::shared_ptr<Backend> backend);

    bool has_backend(const std::string& id) const;

    ChatResponse complete(const ChatRequest& request);
    std::vector<EmbeddingVector> embed(const std::string& backend_id,
                                       const std::vector<std::string>& texts);

    /// Total backend invocations (including retries) made against `id`.
    std::uint64_t attempt_count(const std::string& id) const;

private:
    struct Entry {
        BackendDescriptor descriptor;
        std::shared_ptr<Backend> backend;
        std::unique_ptr<std::atomic<std::uint64_t>> attempts;
        std::unique_ptr<std::atomic<std::size_t>> embedding_dim;
    };

    const Entry& entry(const std::string& id) const;

    template <typename Fn>
    auto with_retry(const Entry& e, Fn&& fn) -> decltype(fn());

    mutable std::shared_mutex mutex_;
    std::map<std::string, Entry> backends_;
    std::counting_semaphore<kMaxInFlightCeiling> remote_slots_;
};

}  // namespace ram2c
