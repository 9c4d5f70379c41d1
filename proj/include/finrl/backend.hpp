#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace finrl {

/// Wire request for any text-generation or judging backend.
struct GenerationRequest {
    std::string prompt;
    double temperature = 0.0;
    int max_tokens = 1024;
};

struct GenerationResponse {
    std::string text;
};

std::string to_wire(const GenerationRequest& request);
GenerationRequest request_from_wire(const std::string& body);
std::string to_wire(const GenerationResponse& response);
GenerationResponse response_from_wire(const std::string& body);

/// A model reachable by prompt. Implementations must be safe to call from
/// several threads at once; failures are reported as BackendError.
class TextBackend {
public:
    virtual ~TextBackend() = default;
    virtual GenerationResponse generate(const GenerationRequest& request) = 0;
    virtual std::string id() const = 0;
};

/// Local deterministic backend driven by a callback. A callback returning
/// nullopt is reported as a backend failure.
class MockBackend : public TextBackend {
public:
    using Responder = std::function<std::optional<std::string>(const GenerationRequest&)>;

    MockBackend(std::string id, Responder responder);

    /// Exact-prompt lookup; unknown prompts fail.
    static std::unique_ptr<MockBackend> from_table(std::string id, std::map<std::string, std::string> table);

    GenerationResponse generate(const GenerationRequest& request) override;
    std::string id() const override { return id_; }
    int calls() const;

private:
    std::string id_;
    Responder responder_;
    mutable std::mutex mu_;
    int calls_ = 0;
};

/// Replays recorded replies per prompt, in recording order. Running out of
/// recorded replies for a prompt is a backend failure.
class ReplayBackend : public TextBackend {
public:
    explicit ReplayBackend(std::string id) : id_(std::move(id)) {}

    void record(const std::string& prompt, std::string reply);
    GenerationResponse generate(const GenerationRequest& request) override;
    std::string id() const override { return id_; }

private:
    std::string id_;
    std::mutex mu_;
    std::map<std::string, std::vector<std::string>> replies_;
    std::map<std::string, std::size_t> cursor_;
};

/// POSTs the wire request as JSON to `<base_url>/generate`. The bearer token,
/// if any, is read from the environment variable named by `token_env`.
class HttpBackend : public TextBackend {
public:
    HttpBackend(std::string id, std::string base_url, std::string token_env = "FINRL_BACKEND_TOKEN",
                std::chrono::seconds timeout = std::chrono::seconds(120));

    GenerationResponse generate(const GenerationRequest& request) override;
    std::string id() const override { return id_; }

private:
    std::string id_;
    std::string base_url_;
    std::string token_env_;
    std::chrono::seconds timeout_;
};

struct RetryPolicy {
    int retries = 3;
    std::chrono::milliseconds backoff{200};  // doubled after every failed attempt
};

/// Up to 1 + retries attempts; rethrows the last BackendError.
GenerationResponse generate_with_retries(TextBackend& backend, const GenerationRequest& request,
                                         const RetryPolicy& policy);

/// Runs fn(0..n-1) on at most `concurrency` threads. Each index runs exactly
/// once; the first exception is rethrown after all workers stop.
void parallel_for(std::size_t n, int concurrency, const std::function<void(std::size_t)>& fn);

}  // namespace finrl
