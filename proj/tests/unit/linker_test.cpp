#include "kgdx/linker.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace kgdx;
using namespace kgdx::test;

TEST_CASE("mock embeddings are deterministic unit vectors") {
    MockEmbeddingProvider p;
    const auto a = p.embed("eye pain");
    CHECK(a.size() == 256);
    CHECK(a == p.embed("eye pain"));
    CHECK(a == p.embed("  Eye-PAIN "));
    double n = 0.0;
    for (double x : a) n += x * x;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(MockEmbeddingProvider(256, 7).embed("eye pain") != a);
    CHECK_THROWS_AS(MockEmbeddingProvider(0), Error);
}

TEST_CASE("mock embeddings reward shared tokens") {
    MockEmbeddingProvider p;
    const auto base = p.embed("acute angle closure glaucoma has_symptom eye pain");
    const auto near = p.embed("acute angle closure glaucoma has_symptom severe eye pain");
    const auto far = p.embed("common cold has_symptom runny nose");
    CHECK(cosine_similarity(base, near) >= 0.90);
    CHECK(cosine_similarity(base, far) < 0.5);
}

TEST_CASE("cosine rejects mismatched dimensions and handles zero vectors") {
    CHECK_THROWS_AS(cosine_similarity({1.0, 0.0}, {1.0}), Error);
    CHECK(cosine_similarity({0.0, 0.0}, {1.0, 0.0}) == 0.0);
}

TEST_CASE("embedding provider factory") {
    CHECK(make_embedding_provider(Json{{"provider", "mock"}})->dimension() == 256);
    CHECK(make_embedding_provider(Json{{"provider", "mock"}, {"dimension", 64}})->dimension() == 64);
    CHECK_THROWS_AS(make_embedding_provider(Json{{"provider", "psychic"}}), Error);
}

TEST_CASE("linking matches exact names and respects the threshold") {
    const auto g = fixture_graph();
    auto provider = std::make_shared<MockEmbeddingProvider>();
    const auto index = build_index(g, provider, EntityKind::symptom);
    CHECK(index.size() == 16);

    const auto hit = link("Eye Pain", index, {});
    REQUIRE(hit.matched);
    CHECK(*hit.matched == "s-eyepain");
    CHECK(hit.similarity == doctest::Approx(1.0).epsilon(1e-12));

    const auto miss = link("medication overuse", index, {});
    CHECK_FALSE(miss.matched);
    CHECK(miss.similarity < 0.8);

    const auto loose = link("medication overuse", index, LinkerConfig{0.0});
    CHECK(loose.matched);
}

TEST_CASE("link_all keeps one entry per mention and distinct matches in order") {
    const auto g = fixture_graph();
    const auto index = build_index(g, std::make_shared<MockEmbeddingProvider>(), EntityKind::symptom);
    const auto all = link_all({"fever", "cough", "Fever", "zebra stripes"}, index, {});
    CHECK(all.results.size() == 4);
    CHECK(all.matched == std::vector<std::string>{"s-fever", "s-cough"});
    CHECK_FALSE(all.results[3].matched);
}

TEST_CASE("empty index never matches") {
    const SimilarityIndex index(std::make_shared<MockEmbeddingProvider>(), {});
    const auto r = link("anything", index, {});
    CHECK_FALSE(r.matched);
    CHECK(r.similarity == -1.0);
}

TEST_CASE("stored embeddings must match the provider dimension") {
    auto g = tiny_graph();
    auto e = make_entity("s-emb", "embedded", EntityKind::symptom);
    e.embedding = std::vector<double>(3, 1.0);
    g.add_entity(e);
    CHECK_THROWS_AS(build_index(g, std::make_shared<MockEmbeddingProvider>(), EntityKind::symptom), Error);
}

TEST_CASE("ties go to the smallest id") {
    auto provider = std::make_shared<MockEmbeddingProvider>();
    const auto v = provider->embed("same");
    const SimilarityIndex index(provider, {{"b", v}, {"a", v}, {"c", v}});
    const auto r = link("same", index, {});
    REQUIRE(r.matched);
    CHECK(*r.matched == "a");
}

TEST_CASE("linker agrees with the brute-force oracle") {
    std::mt19937_64 rng(5);
    auto provider = std::make_shared<MockEmbeddingProvider>();
    std::vector<std::pair<std::string, std::string>> entities;
    KnowledgeGraph g;
    for (int i = 0; i < 200; ++i) {
        const auto id = "e" + std::to_string(1000 + i);
        const auto name = random_name(rng);
        entities.emplace_back(id, name);
        g.add_entity(make_entity(id, name, EntityKind::symptom));
    }
    const auto index = build_index(g, provider, EntityKind::symptom);
    for (int q = 0; q < 60; ++q) {
        const auto mention = q % 2 ? entities[static_cast<std::size_t>(q)].second + " " + random_name(rng, 1, 1)
                                   : random_name(rng);
        const auto expected = oracle_link(mention, entities, *provider, 0.8);
        const auto got = link(mention, index, LinkerConfig{0.8});
        CHECK(got.matched == expected.id);
        CHECK(got.similarity == expected.similarity);
    }
}
