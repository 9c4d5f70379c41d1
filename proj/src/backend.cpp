#include "finrl/backend.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "finrl/error.hpp"

namespace finrl {

using json = nlohmann::json;

std::string to_wire(const GenerationRequest& request) {
    return json{{"prompt", request.prompt}, {"temperature", request.temperature}, {"max_tokens", request.max_tokens}}
        .dump();
}

GenerationRequest request_from_wire(const std::string& body) {
    try {
        const json j = json::parse(body);
        GenerationRequest r;
        r.prompt = j.at("prompt").get<std::string>();
        r.temperature = j.value("temperature", 0.0);
        r.max_tokens = j.value("max_tokens", 1024);
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad generation request: ") + e.what());
    }
}

std::string to_wire(const GenerationResponse& response) { return json{{"text", response.text}}.dump(); }

GenerationResponse response_from_wire(const std::string& body) {
    try {
        return {json::parse(body).at("text").get<std::string>()};
    } catch (const json::exception& e) {
        throw BackendError(std::string("bad generation response: ") + e.what());
    }
}

MockBackend::MockBackend(std::string id, Responder responder) : id_(std::move(id)), responder_(std::move(responder)) {}

std::unique_ptr<MockBackend> MockBackend::from_table(std::string id, std::map<std::string, std::string> table) {
    return std::make_unique<MockBackend>(
        std::move(id), [table = std::move(table)](const GenerationRequest& r) -> std::optional<std::string> {
            auto it = table.find(r.prompt);
            if (it == table.end()) return std::nullopt;
            return it->second;
        });
}

GenerationResponse MockBackend::generate(const GenerationRequest& request) {
    {
        std::lock_guard lock(mu_);
        ++calls_;
    }
    auto text = responder_(request);
    if (!text) throw BackendError("mock backend '" + id_ + "' has no response for this prompt");
    return {std::move(*text)};
}

int MockBackend::calls() const {
    std::lock_guard lock(mu_);
    return calls_;
}

void ReplayBackend::record(const std::string& prompt, std::string reply) {
    std::lock_guard lock(mu_);
    replies_[prompt].push_back(std::move(reply));
}

GenerationResponse ReplayBackend::generate(const GenerationRequest& request) {
    std::lock_guard lock(mu_);
    auto it = replies_.find(request.prompt);
    std::size_t& cursor = cursor_[request.prompt];
    if (it == replies_.end() || cursor >= it->second.size()) {
        throw BackendError("replay backend '" + id_ + "' exhausted for prompt");
    }
    return {it->second[cursor++]};
}

HttpBackend::HttpBackend(std::string id, std::string base_url, std::string token_env, std::chrono::seconds timeout)
    : id_(std::move(id)), base_url_(std::move(base_url)), token_env_(std::move(token_env)), timeout_(timeout) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

GenerationResponse HttpBackend::generate(const GenerationRequest& request) {
    httplib::Client client(base_url_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    httplib::Headers headers;
    if (const char* token = std::getenv(token_env_.c_str()); token != nullptr && *token != '\0') {
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    auto res = client.Post("/generate", headers, to_wire(request), "application/json");
    if (!res) {
        throw BackendError("backend '" + id_ + "' unreachable: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw BackendError("backend '" + id_ + "' returned HTTP " + std::to_string(res->status));
    }
    return response_from_wire(res->body);
}

GenerationResponse generate_with_retries(TextBackend& backend, const GenerationRequest& request,
                                         const RetryPolicy& policy) {
    auto delay = policy.backoff;
    for (int attempt = 0;; ++attempt) {
        try {
            return backend.generate(request);
        } catch (const BackendError&) {
            if (attempt >= policy.retries) throw;
        }
        if (delay.count() > 0) std::this_thread::sleep_for(delay);
        delay *= 2;
    }
}

void parallel_for(std::size_t n, int concurrency, const std::function<void(std::size_t)>& fn) {
    const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, concurrency)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mu;
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n && !failed; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(error_mu);
                        if (!error) error = std::current_exception();
                        failed = true;
                    }
                }
            });
        }
    }
    if (error) std::rethrow_exception(error);
}

}  // namespace finrl
