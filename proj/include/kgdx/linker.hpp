#pragma once

#include "kgdx/kg_store.hpp"

#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace kgdx {

using Vector = std::vector<double>;

double cosine_similarity(const Vector& a, const Vector& b);

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string name() const = 0;
    virtual std::size_t dimension() const = 0;
    // Same input, same vector.
    virtual Vector embed(const std::string& text) const = 0;
    virtual std::vector<Vector> embed_batch(const std::vector<std::string>& texts) const;
};

// Offline provider. Each token of the normalized text seeds a splitmix64
// stream expanded to `dimension` components; the token vectors are summed and
// L2-normalized. Texts equal after normalize_text() embed identically, and
// texts sharing most tokens score high cosine.
class MockEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit MockEmbeddingProvider(std::size_t dimension = 256, std::uint64_t seed = 0x6b67'6478ULL);

    std::string name() const override { return "mock"; }
    std::size_t dimension() const override { return dimension_; }
    Vector embed(const std::string& text) const override;

private:
    std::size_t dimension_;
    std::uint64_t seed_;
};

// POSTs {"texts":[...]} to the endpoint and reads {"vectors":[[...]]}.
// Responses are memoized so repeated texts map to identical vectors.
class HttpEmbeddingProvider final : public EmbeddingProvider {
public:
    HttpEmbeddingProvider(std::string endpoint, std::size_t dimension, int timeout_ms = 30000);

    std::string name() const override { return "http"; }
    std::size_t dimension() const override { return dimension_; }
    Vector embed(const std::string& text) const override;
    std::vector<Vector> embed_batch(const std::vector<std::string>& texts) const override;

private:
    std::string endpoint_;
    std::size_t dimension_;
    int timeout_ms_;
    mutable std::mutex mutex_;
    mutable std::unordered_map<std::string, Vector> cache_;
};

// {"provider": "mock"|"http", "dimension", "seed", "endpoint", "timeout_ms"}
std::shared_ptr<EmbeddingProvider> make_embedding_provider(const Json& config);

struct LinkerConfig {
    double epsilon_s = 0.80;
};

void validate(const LinkerConfig& config);

struct LinkResult {
    std::string mention;
    std::optional<std::string> matched;
    double similarity = -1.0;

    bool operator==(const LinkResult&) const = default;
};

struct LinkAllResult {
    std::vector<LinkResult> results;
    // Distinct matched ids in first-seen order.
    std::vector<std::string> matched;
};

struct IndexHit {
    std::string id;
    double similarity = -1.0;
};

// Exact cosine search over a fixed entity set. Immutable once built.
class SimilarityIndex {
public:
    SimilarityIndex(std::shared_ptr<const EmbeddingProvider> provider,
                    std::vector<std::pair<std::string, Vector>> entries);

    bool empty() const { return ids_.empty(); }
    std::size_t size() const { return ids_.size(); }
    const EmbeddingProvider& provider() const { return *provider_; }
    std::shared_ptr<const EmbeddingProvider> provider_ptr() const { return provider_; }

    // Highest cosine; ties go to the smallest id. Empty index → similarity -1.
    IndexHit nearest(const Vector& query) const;
    // Unit vector stored for `id`, or nullptr.
    const Vector* vector_of(const std::string& id) const;
    const std::vector<std::string>& ids() const { return ids_; }

private:
    std::shared_ptr<const EmbeddingProvider> provider_;
    std::vector<std::string> ids_;  // ascending
    std::vector<Vector> unit_vectors_;
};

// Entities lacking a stored embedding are embedded by name. A stored
// embedding of the wrong dimension is an error.
SimilarityIndex build_index(const KnowledgeGraph& graph,
                            std::shared_ptr<const EmbeddingProvider> provider,
                            std::optional<EntityKind> kind_filter = {});

LinkResult link(const std::string& mention, const SimilarityIndex& index, const LinkerConfig& config);
LinkAllResult link_all(const std::vector<std::string>& mentions, const SimilarityIndex& index,
                       const LinkerConfig& config);

} // namespace kgdx
