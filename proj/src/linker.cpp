#include "kgdx/linker.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kgdx {

double cosine_similarity(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::invalid_argument, "cosine over vectors of different dimension");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<Vector> EmbeddingProvider::embed_batch(const std::vector<std::string>& texts) const {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed(t));
    return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Vector unit(Vector v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n > 0.0) {
        for (double& x : v) x /= n;
    }
    return v;
}

} // namespace

MockEmbeddingProvider::MockEmbeddingProvider(std::size_t dimension, std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {
    if (dimension_ == 0) throw Error(ErrorCode::invalid_argument, "embedding dimension must be positive");
}

Vector MockEmbeddingProvider::embed(const std::string& text) const {
    // Sum of one pseudo-random direction per token, so texts sharing most of
    // their words land close together.
    const std::string normalized = normalize_text(text);
    std::vector<std::string_view> tokens;
    for (std::size_t pos = 0; pos <= normalized.size();) {
        const auto end = std::min(normalized.find(' ', pos), normalized.size());
        tokens.push_back(std::string_view(normalized).substr(pos, end - pos));
        pos = end + 1;
    }
    Vector v(dimension_, 0.0);
    for (auto token : tokens) {
        std::uint64_t state = fnv1a(token, seed_);
        for (auto& x : v) {
            // Uniform in [-1, 1).
            x += static_cast<double>(splitmix64(state) >> 11) * (2.0 / 9007199254740992.0) - 1.0;
        }
    }
    return unit(std::move(v));
}

void validate(const LinkerConfig& config) {
    if (!(config.epsilon_s >= 0.0 && config.epsilon_s <= 1.0)) {
        throw Error(ErrorCode::invalid_argument, "epsilon_s must lie in [0,1]");
    }
}

SimilarityIndex::SimilarityIndex(std::shared_ptr<const EmbeddingProvider> provider,
                                 std::vector<std::pair<std::string, Vector>> entries)
    : provider_(std::move(provider)) {
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [id, v] : entries) {
        if (v.size() != provider_->dimension()) {
            throw Error(ErrorCode::invalid_argument,
                        "embedding of '" + id + "' has dimension " + std::to_string(v.size()) +
                            ", provider '" + provider_->name() + "' uses " +
                            std::to_string(provider_->dimension()));
        }
        ids_.push_back(std::move(id));
        unit_vectors_.push_back(unit(std::move(v)));
    }
}

IndexHit SimilarityIndex::nearest(const Vector& query) const {
    IndexHit best;
    if (ids_.empty()) return best;
    const Vector q = unit(query);
    bool have = false;
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        const double s = std::inner_product(q.begin(), q.end(), unit_vectors_[i].begin(), 0.0);
        // ids_ ascending, so strict comparison keeps the smallest id on ties.
        if (!have || s > best.similarity) {
            best = {ids_[i], s};
            have = true;
        }
    }
    return best;
}

const Vector* SimilarityIndex::vector_of(const std::string& id) const {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) return nullptr;
    return &unit_vectors_[static_cast<std::size_t>(it - ids_.begin())];
}

SimilarityIndex build_index(const KnowledgeGraph& graph,
                            std::shared_ptr<const EmbeddingProvider> provider,
                            std::optional<EntityKind> kind_filter) {
    std::vector<std::pair<std::string, Vector>> entries;
    std::vector<std::size_t> missing;
    std::vector<std::string> missing_names;
    for (const auto& e : graph.entities()) {
        if (kind_filter && e.kind != *kind_filter) continue;
        if (e.embedding) {
            entries.emplace_back(e.id, *e.embedding);
        } else {
            missing.push_back(entries.size());
            missing_names.push_back(e.name);
            entries.emplace_back(e.id, Vector{});
        }
    }
    if (!missing.empty()) {
        auto vectors = provider->embed_batch(missing_names);
        for (std::size_t i = 0; i < missing.size(); ++i) {
            entries[missing[i]].second = std::move(vectors.at(i));
        }
    }
    return SimilarityIndex(std::move(provider), std::move(entries));
}

LinkResult link(const std::string& mention, const SimilarityIndex& index, const LinkerConfig& config) {
    LinkResult result{mention, std::nullopt, -1.0};
    if (index.empty()) return result;
    const auto hit = index.nearest(index.provider().embed(mention));
    result.similarity = hit.similarity;
    if (hit.similarity >= config.epsilon_s) result.matched = hit.id;
    return result;
}

LinkAllResult link_all(const std::vector<std::string>& mentions, const SimilarityIndex& index,
                       const LinkerConfig& config) {
    LinkAllResult out;
    for (const auto& m : mentions) {
        auto r = link(m, index, config);
        if (r.matched &&
            std::find(out.matched.begin(), out.matched.end(), *r.matched) == out.matched.end()) {
            out.matched.push_back(*r.matched);
        }
        out.results.push_back(std::move(r));
    }
    return out;
}

} // namespace kgdx
