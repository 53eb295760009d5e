#include "kgdx/linker.hpp"
#include "kgdx/llm_gateway.hpp"

#include <httplib.h>

namespace kgdx {

namespace {

struct Url {
    std::string base;  // scheme://host[:port]
    std::string path;
};

Url split_url(const std::string& url) {
    const auto scheme = url.find("://");
    const auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (scheme == std::string::npos) {
        throw Error(ErrorCode::invalid_argument, "endpoint must be an absolute URL: " + url);
    }
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

Json post_json(const std::string& endpoint, const Json& body, int timeout_ms,
               const std::string& credential = {}) {
    const auto url = split_url(endpoint);
    httplib::Client client(url.base);
    const auto timeout = std::chrono::milliseconds(timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!credential.empty()) headers.emplace("Authorization", "Bearer " + credential);
    auto res = client.Post(url.path, headers, body.dump(), "application/json");
    if (!res) {
        throw Error(ErrorCode::gateway,
                    "request to " + endpoint + " failed: " + httplib::to_string(res.error()), true);
    }
    if (res->status >= 500 || res->status == 429) {
        throw Error(ErrorCode::gateway,
                    "endpoint " + endpoint + " returned status " + std::to_string(res->status), true);
    }
    if (res->status != 200) {
        throw Error(ErrorCode::gateway,
                    "endpoint " + endpoint + " returned status " + std::to_string(res->status));
    }
    try {
        return Json::parse(res->body);
    } catch (const Json::exception& e) {
        throw ParseError(std::string("non-JSON reply from ") + endpoint + ": " + e.what(), res->body);
    }
}

} // namespace

HttpChatProvider::HttpChatProvider(ProviderConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) {
        throw Error(ErrorCode::invalid_argument, "http_chat provider requires an endpoint");
    }
}

std::string HttpChatProvider::complete(TemplateId, const std::vector<ChatMessage>& messages) {
    Json body = {{"messages", Json::array()}};
    for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    const auto reply = post_json(config_.endpoint, body, config_.timeout_ms, config_.credential);
    auto it = reply.find("content");
    if (it == reply.end() || !it->is_string()) {
        throw ParseError("chat reply lacks a string 'content' field", reply.dump());
    }
    return it->get<std::string>();
}

HttpEmbeddingProvider::HttpEmbeddingProvider(std::string endpoint, std::size_t dimension,
                                             int timeout_ms)
    : endpoint_(std::move(endpoint)), dimension_(dimension), timeout_ms_(timeout_ms) {
    if (dimension_ == 0) throw Error(ErrorCode::invalid_argument, "embedding dimension must be positive");
    split_url(endpoint_);
}

Vector HttpEmbeddingProvider::embed(const std::string& text) const { return embed_batch({text}).at(0); }

std::vector<Vector> HttpEmbeddingProvider::embed_batch(const std::vector<std::string>& texts) const {
    std::vector<std::string> pending;
    {
        std::lock_guard lock(mutex_);
        for (const auto& t : texts) {
            if (!cache_.count(t) &&
                std::find(pending.begin(), pending.end(), t) == pending.end()) {
                pending.push_back(t);
            }
        }
    }
    if (!pending.empty()) {
        const auto reply = post_json(endpoint_, {{"texts", pending}}, timeout_ms_);
        const auto vectors = reply.at("vectors").get<std::vector<Vector>>();
        if (vectors.size() != pending.size()) {
            throw Error(ErrorCode::gateway, "embedding endpoint returned " +
                                                std::to_string(vectors.size()) + " vectors for " +
                                                std::to_string(pending.size()) + " texts");
        }
        std::lock_guard lock(mutex_);
        for (std::size_t i = 0; i < pending.size(); ++i) {
            if (vectors[i].size() != dimension_) {
                throw Error(ErrorCode::gateway, "embedding endpoint returned dimension " +
                                                    std::to_string(vectors[i].size()) + ", expected " +
                                                    std::to_string(dimension_));
            }
            cache_.emplace(pending[i], vectors[i]);
        }
    }
    std::lock_guard lock(mutex_);
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(cache_.at(t));
    return out;
}

std::shared_ptr<EmbeddingProvider> make_embedding_provider(const Json& config) {
    const auto kind = config.value("provider", std::string("mock"));
    const auto dimension = config.value("dimension", std::size_t{256});
    if (kind == "mock") {
        return std::make_shared<MockEmbeddingProvider>(dimension,
                                                       config.value("seed", std::uint64_t{0x6b676478ULL}));
    }
    if (kind == "http") {
        return std::make_shared<HttpEmbeddingProvider>(config.value("endpoint", ""), dimension,
                                                       config.value("timeout_ms", 30000));
    }
    throw Error(ErrorCode::invalid_argument, "unknown embedding.provider '" + kind + "'");
}

} // namespace kgdx
