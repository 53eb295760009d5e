#include "kgdx/graph_store.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace kgdx;
using namespace kgdx::test;

TEST_CASE("timestamps round-trip through RFC 3339") {
    const auto t = parse_rfc3339("2026-03-02T09:00:00Z");
    CHECK(format_rfc3339(t) == "2026-03-02T09:00:00Z");
    CHECK(parse_rfc3339("2026-03-02T10:00:00+01:00") == t);
    CHECK_THROWS_AS(parse_rfc3339("2026-13-02T09:00:00Z"), Error);
    CHECK_THROWS_AS(parse_rfc3339("yesterday"), Error);
}

TEST_CASE("manual clock advances by its step on every read") {
    ManualClock clock(parse_rfc3339("2026-01-01T00:00:00Z"), std::chrono::seconds{2});
    const auto a = clock.now();
    const auto b = clock.now();
    CHECK(b - a == std::chrono::seconds{2});
    clock.advance(std::chrono::hours{1});
    CHECK(clock.now() - b == std::chrono::seconds{3602});
}

TEST_CASE("normalize_text folds case and punctuation") {
    CHECK(normalize_text("  Tension-Type   Headache! ") == "tension type headache");
    CHECK(normalize_text("COVID 19") == "covid 19");
    CHECK(normalize_text("") == "");
}

TEST_CASE("triple keys parse and print") {
    const auto k = TripleKey::parse("d-a|has_symptom|s-a");
    CHECK(k.subject == "d-a");
    CHECK(k.relation == "has_symptom");
    CHECK(k.object == "s-a");
    CHECK(k.str() == "d-a|has_symptom|s-a");
    CHECK_THROWS_AS(TripleKey::parse("only|two"), Error);
}

TEST_CASE("graph rejects dangling, duplicate and malformed records") {
    auto g = tiny_graph();
    CHECK_THROWS_AS(g.add_entity(make_entity("d-a", "again", EntityKind::disease)), Error);
    CHECK_THROWS_AS(g.add_triple(make_triple("d-a", "has_symptom", "missing")), Error);
    CHECK_THROWS_AS(g.add_triple(make_triple("d-a", "has_symptom", "s-a")), Error);
    CHECK_THROWS_AS(g.add_entity(make_entity("s-z", "z", EntityKind::symptom, 3)), Error);
    CHECK_THROWS_AS(g.add_entity(make_entity("d-z", "z", EntityKind::disease, 11)), Error);
    CHECK(g.adjacency_consistent());
}

TEST_CASE("lookups by id, name and kind") {
    const auto g = tiny_graph();
    CHECK(g.entity("d-a").name == "alpha fever");
    REQUIRE(g.find_by_name("Alpha  FEVER") != nullptr);
    CHECK(g.find_by_name("alpha fever")->id == "d-a");
    CHECK(g.find_by_name("gamma") == nullptr);
    CHECK_THROWS_AS(g.entity("nope"), Error);
    CHECK(g.entities_of_kind(EntityKind::disease).size() == 2);
    const auto hop = g.one_hop_neighbors("d-a", EntityKind::symptom);
    REQUIRE(hop.size() == 2);
    CHECK(hop[0].entity.id == "s-a");
    CHECK(hop[1].entity.id == "s-shared");
    CHECK(g.neighbor_ids("s-shared") == std::vector<std::string>{"d-a", "d-b"});
    REQUIRE(g.edge_between("d-a", "dr-x"));
    CHECK(g.edge_between("d-a", "dr-x")->str() == "dr-x|treats|d-a");
    CHECK_FALSE(g.edge_between("d-b", "dr-x"));
}

TEST_CASE("shortest paths are undirected and lexicographically smallest") {
    KnowledgeGraph g;
    for (auto id : {"a", "b", "c", "d", "e"}) g.add_entity(make_entity(id, id, EntityKind::other));
    g.add_triple(make_triple("a", "r", "c"));
    g.add_triple(make_triple("c", "r", "d"));
    g.add_triple(make_triple("b", "r", "a"));
    g.add_triple(make_triple("d", "r", "b"));
    CHECK(g.shortest_path_distance("a", "d") == 2u);
    const auto p = g.shortest_path("a", "d");
    REQUIRE(p);
    CHECK(*p == std::vector<std::string>{"a", "b", "d"});
    CHECK_FALSE(g.shortest_path_distance("a", "e"));
    CHECK_FALSE(g.shortest_path("a", "e"));
    CHECK(g.shortest_path_distance("a", "a") == 0u);
}

TEST_CASE("BFS distances agree with the all-pairs oracle on random graphs") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 40; ++i) {
        const auto c = random_case(rng);
        const DistanceOracle oracle(c.graph);
        for (const auto& src : c.graph.entities()) {
            const auto dist = c.graph.distances_from(src.id);
            for (const auto& dst : c.graph.entities()) {
                const auto expected = oracle.distance(src.id, dst.id);
                auto it = dist.find(dst.id);
                if (expected) {
                    REQUIRE(it != dist.end());
                    CHECK(it->second == *expected);
                } else {
                    CHECK(it == dist.end());
                }
            }
        }
    }
}

TEST_CASE("merge is all-or-nothing and idempotent") {
    auto g = tiny_graph();
    const auto before = g;
    MergeBatch batch;
    batch.entities.push_back(make_entity("s-new", "new sign", EntityKind::symptom));
    batch.triples.push_back(make_triple("d-a", "has_symptom", "s-new"));
    batch.triples.push_back(make_triple("d-a", "has_symptom", "s-a"));
    batch.triples.push_back(make_triple("d-a", "has_symptom", "s-new"));

    const auto at = parse_rfc3339("2026-04-01T00:00:00Z");
    const auto diff = g.merge(batch, at);
    CHECK(diff.added.size() == 1);
    CHECK(diff.skipped.size() == 2);
    CHECK(diff.added_entities.size() == 1);
    REQUIRE(g.find_triple(TripleKey{"d-a", "has_symptom", "s-new"}));
    CHECK(g.find_triple(TripleKey{"d-a", "has_symptom", "s-new"})->created_at == at);

    const auto again = g.merge(batch, at);
    CHECK(again.added.empty());
    CHECK(again.added_entities.empty());

    MergeBatch bad;
    bad.triples.push_back(make_triple("d-a", "has_symptom", "s-b"));
    bad.triples.push_back(make_triple("d-a", "has_symptom", "ghost"));
    const auto snapshot = g;
    CHECK_THROWS_AS(g.merge(bad), Error);
    CHECK(g == snapshot);
    CHECK_FALSE(before == g);
}

TEST_CASE("usage counts bump once per distinct key and never shrink") {
    auto g = tiny_graph();
    const TripleKey k{"d-a", "has_symptom", "s-a"};
    const std::vector<TripleKey> keys{k, k, TripleKey{"x", "y", "z"}};
    g.record_usage(keys);
    CHECK(g.find_triple(k)->usage_count == 2);
    g.set_usage_count(k, 5);
    CHECK(g.find_triple(k)->usage_count == 5);
    CHECK_THROWS_AS(g.set_usage_count(k, 4), Error);
}

TEST_CASE("import and export round-trip the fixture graph") {
    const auto g = fixture_graph();
    CHECK(g.entities().size() == 35);
    CHECK(g.triples().size() == 49);
    std::stringstream nodes, edges;
    export_graph(g, nodes, edges);
    const auto back = import_graph(nodes, edges);
    CHECK(back == g);
    CHECK(back.adjacency_consistent());
}

TEST_CASE("import errors name the offending line") {
    std::stringstream nodes(R"({"id":"a","name":"a","kind":"symptom"}
{"id":"b","name":"b","kind":"mystery"}
)");
    std::stringstream edges;
    try {
        import_graph(nodes, edges);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("graph store journals updates and replays them on open") {
    TempDir tmp;
    const auto dir = tmp / "kg";
    GraphStore::create(dir, tiny_graph());
    {
        auto store = GraphStore::open(dir);
        MergeBatch batch;
        batch.entities.push_back(make_entity("s-new", "new sign", EntityKind::symptom));
        batch.triples.push_back(make_triple("d-b", "has_symptom", "s-new", 0));
        store->merge(batch, parse_rfc3339("2026-04-01T00:00:00Z"));
        const std::vector<TripleKey> used{{"d-a", "has_symptom", "s-a"}};
        store->record_usage(used);
        CHECK(store->version() == 2);
    }
    auto reopened = GraphStore::open(dir);
    const auto g = reopened->snapshot();
    CHECK(g->contains("s-new"));
    CHECK(g->find_triple(TripleKey{"d-a", "has_symptom", "s-a"})->usage_count == 2);

    const auto expected = *g;
    reopened->compact();
    auto compacted = GraphStore::open(dir);
    CHECK(*compacted->snapshot() == expected);
}

TEST_CASE("failed updates leave the live graph untouched") {
    GraphStore store(tiny_graph());
    const auto before = store.snapshot();
    CHECK_THROWS(store.update([](KnowledgeGraph& g) {
        g.add_entity(make_entity("s-tmp", "tmp", EntityKind::symptom));
        throw Error(ErrorCode::invalid_state, "abort");
    }));
    CHECK(*store.snapshot() == *before);
    CHECK(store.version() == 0);
}

TEST_CASE("snapshots are isolated from later writes") {
    GraphStore store(tiny_graph());
    const auto old = store.snapshot();
    store.update([](KnowledgeGraph& g) { g.add_entity(make_entity("s-tmp", "tmp", EntityKind::symptom)); });
    CHECK_FALSE(old->contains("s-tmp"));
    CHECK(store.snapshot()->contains("s-tmp"));
}

TEST_CASE("a corrupted store journal is reported with its record number") {
    TempDir tmp;
    const auto dir = tmp / "kg";
    GraphStore::create(dir, tiny_graph());
    {
        std::ofstream out(dir / "journal.jsonl", std::ios::app);
        out << "{not json\n";
    }
    try {
        GraphStore::open(dir);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::io);
        CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }
}
